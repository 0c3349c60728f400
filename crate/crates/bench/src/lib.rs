//! Deterministic fixtures shared by the benchmarks.

use amod_core::agent::{ActorCritic, ModelConfig};
use amod_core::env::{EnvConfig, SimState};
use amod_core::scenario::{generate_synthetic_city, sample_demand, DemandMatrix, SynthCityParams};
use amod_core::seed::rng_from;
use amod_core::City;

/// Desk-scale city with exactly `nodes` stations.
pub fn city(nodes: usize, seed: u64) -> City {
    let mut p = SynthCityParams::desk_scale();
    p.node_range = [nodes, nodes];
    p.fleet_range = [10 * nodes as u32, 10 * nodes as u32];
    generate_synthetic_city(&p, seed).expect("bench city")
}

/// One matching instance: demand, prices, costs and idle counts at `t`.
pub struct MatchingInput {
    pub n: usize,
    pub demand: DemandMatrix,
    pub price: Vec<f64>,
    pub cost: Vec<f64>,
    pub idle: Vec<u32>,
}

pub fn matching_input(city: &City, t: usize, seed: u64) -> MatchingInput {
    let n = city.num_stations;
    let demand = sample_demand(city, t, &mut rng_from(&[seed]));
    let per = city.fleet_size / n as u32;
    MatchingInput {
        n,
        demand,
        price: city.price.at_step(t).to_vec(),
        cost: city.cost.at_step(t).to_vec(),
        idle: vec![per; n],
    }
}

/// Idle vehicles piled on station 0, desired spread evenly.
pub fn rebalance_input(n: usize, vehicles: u32) -> (Vec<u32>, Vec<u32>) {
    let mut idle = vec![0; n];
    idle[0] = vehicles;
    let desired = (0..n as u32)
        .map(|i| vehicles / n as u32 + u32::from(i < vehicles % n as u32))
        .collect();
    (idle, desired)
}

pub fn model(hidden: usize) -> ActorCritic {
    ActorCritic::new(
        ModelConfig {
            feature_width: EnvConfig::default().feature_width(),
            hidden,
        },
        0,
    )
}

/// State of a fresh episode, for the planners.
pub fn start_state(city: &City, seed: u64) -> SimState {
    let (env, _) = amod_core::env::Env::new(city, EnvConfig::default(), seed);
    env.state().clone()
}
