//! The fleet rebalancing MDP.
//!
//! A step runs, in order: delivery of arriving vehicles, demand sampling,
//! profit-maximizing matching, conversion of the policy's desired
//! distribution into integral target counts, minimum-cost rebalancing, and
//! the clock advance. The reward is the matching profit minus the
//! rebalancing cost.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowopt::{self, Matching, Rebalancing};
use crate::scenario::{sample_demand, City, DemandMatrix};
use crate::seed::rng_from;

/// Default look-ahead of the projected-availability features.
pub const DEFAULT_HORIZON: usize = 6;

/// Tolerance on `Σ a_i = 1`.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Vehicle `k` starts at station `k mod N`.
    #[default]
    Uniform,
    /// Proportional to outbound demand rate at `t = 0`, largest remainder.
    ProportionalToDemand,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub horizon: usize,
    pub placement: Placement,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            horizon: DEFAULT_HORIZON,
            placement: Placement::Uniform,
        }
    }
}

impl EnvConfig {
    /// Width of the node feature matrix for this configuration.
    pub fn feature_width(&self) -> usize {
        feature_width(self.horizon)
    }
}

/// Node features: idle, `H + 1` projections, out/in demand, mean price and
/// cost, previous action, previous reward, previous done flag, clock.
pub fn feature_width(horizon: usize) -> usize {
    horizon + 10
}

/// A point on the probability simplex over stations.
#[derive(Clone, Debug, PartialEq)]
pub struct DesiredDistribution(Vec<f64>);

impl DesiredDistribution {
    pub fn new(a: Vec<f64>) -> Result<Self> {
        if let Some(i) = a.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Precondition(format!("component {i} is {}", a[i])));
        }
        let sum: f64 = a.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Precondition(format!("components sum to {sum}")));
        }
        Ok(DesiredDistribution(a))
    }

    pub fn uniform(n: usize) -> Self {
        DesiredDistribution(vec![1.0 / n as f64; n])
    }

    /// Normalizes nonnegative weights; all-zero weights give the uniform point.
    pub fn from_weights(w: &[f64]) -> Result<Self> {
        let sum: f64 = w.iter().sum();
        if !(sum.is_finite()) || w.iter().any(|&v| v < 0.0) {
            return Err(Error::Precondition("weights must be finite and nonnegative".into()));
        }
        if sum == 0.0 {
            return Ok(Self::uniform(w.len()));
        }
        Ok(DesiredDistribution(w.iter().map(|v| v / sum).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Desired vehicle counts `⌊a_i · Σ m⌋`; never exceeds the idle total.
pub fn desired_counts(a: &DesiredDistribution, idle: &[u32]) -> Vec<u32> {
    let total: u64 = idle.iter().map(|&m| m as u64).sum();
    let counts: Vec<u32> = a
        .as_slice()
        .iter()
        .map(|&ai| (ai * total as f64).floor() as u32)
        .collect();
    debug_assert!(counts.iter().map(|&c| c as u64).sum::<u64>() <= total);
    counts
}

/// A vehicle on the move.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Trip {
    pub dest: usize,
    pub arrival: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub t: usize,
    pub idle: Vec<u32>,
    pub in_transit: Vec<Trip>,
    /// Demand for every step of the episode, drawn at reset from the
    /// episode's demand stream. Demand does not depend on actions, so
    /// drawing it up front is equivalent to drawing it step by step.
    pub demand: Vec<DemandMatrix>,
    pub prev_action: Vec<f64>,
    pub prev_reward: f64,
    pub prev_done: bool,
}

impl SimState {
    pub fn vehicles(&self) -> u64 {
        self.idle.iter().map(|&m| m as u64).sum::<u64>() + self.in_transit.len() as u64
    }

    /// Idle count at each station for `t' = t ..= t + horizon`, assuming no
    /// further departures. Result is indexed `[k][i]` with `t' = t + k`.
    pub fn project_availability(&self, horizon: usize) -> Vec<Vec<u32>> {
        let n = self.idle.len();
        let mut arrivals = vec![vec![0u32; n]; horizon + 1];
        for trip in &self.in_transit {
            let k = trip.arrival - self.t;
            if k <= horizon {
                arrivals[k][trip.dest] += 1;
            }
        }
        let mut out = Vec::with_capacity(horizon + 1);
        let mut current = self.idle.clone();
        out.push(current.clone());
        for step in arrivals.iter().skip(1) {
            for (c, a) in current.iter_mut().zip(step) {
                *c += a;
            }
            out.push(current.clone());
        }
        out
    }
}

/// Policy input: adjacency plus per-node feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub num_nodes: usize,
    pub num_features: usize,
    /// Row-major `N x N`, 1.0 where an edge `i -> j` exists.
    pub adjacency: Vec<f64>,
    /// Row-major `N x F`.
    pub features: Vec<f64>,
    /// Raw outbound request counts at the current step.
    pub outbound_demand: Vec<f64>,
    pub t: usize,
}

impl Observation {
    pub fn feature(&self, node: usize, f: usize) -> f64 {
        self.features[node * self.num_features + f]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepInfo {
    pub served: u32,
    pub requests: u32,
    pub matching_profit: f64,
    pub rebalancing_cost: f64,
    pub rebalanced: u32,
}

/// Everything a step decided, for auditing the solvers against their constraints.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDetail {
    pub demand: DemandMatrix,
    pub idle_before_matching: Vec<u32>,
    pub matching: Matching,
    pub idle_after_matching: Vec<u32>,
    pub desired: Vec<u32>,
    pub rebalancing: Rebalancing,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
    pub detail: StepDetail,
}

/// A decision for one step.
#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Distribution(DesiredDistribution),
    /// Explicit post-matching target counts, for planners that compute them directly.
    Targets(Vec<u32>),
}

/// One city's simulator.
pub struct Env<'c> {
    city: &'c City,
    cfg: EnvConfig,
    state: SimState,
    price_scale: f64,
}

impl<'c> Env<'c> {
    /// Creates the environment and resets it with `seed`.
    pub fn new(city: &'c City, cfg: EnvConfig, seed: u64) -> (Self, Observation) {
        let n = city.num_stations;
        let mut env = Env {
            city,
            cfg,
            state: SimState {
                t: 0,
                idle: vec![0; n],
                in_transit: Vec::new(),
                demand: Vec::new(),
                prev_action: vec![0.0; n],
                prev_reward: 0.0,
                prev_done: false,
            },
            price_scale: city.price_scale(),
        };
        let obs = env.reset(seed);
        (env, obs)
    }

    pub fn city(&self) -> &'c City {
        self.city
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.t >= self.city.episode_length
    }

    /// Starts a new episode: `t = 0`, fleet placed, history features zeroed.
    pub fn reset(&mut self, seed: u64) -> Observation {
        let city = self.city;
        let n = city.num_stations;
        let m = city.fleet_size as usize;
        let mut idle = vec![0u32; n];
        match self.cfg.placement {
            Placement::Uniform => {
                for k in 0..m {
                    idle[k % n] += 1;
                }
            }
            Placement::ProportionalToDemand => {
                let w: Vec<f64> = (0..n)
                    .map(|i| (0..n).map(|j| city.demand_rate.get(i, j, 0)).sum())
                    .collect();
                let total: f64 = w.iter().sum();
                if total <= 0.0 {
                    for k in 0..m {
                        idle[k % n] += 1;
                    }
                } else {
                    let exact: Vec<f64> = w.iter().map(|x| x / total * m as f64).collect();
                    for (c, e) in idle.iter_mut().zip(&exact) {
                        *c = e.floor() as u32;
                    }
                    let mut left = m - idle.iter().map(|&c| c as usize).sum::<usize>();
                    let mut order: Vec<usize> = (0..n).collect();
                    order.sort_by(|&a, &b| {
                        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
                        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
                    });
                    for &i in order.iter().cycle() {
                        if left == 0 {
                            break;
                        }
                        idle[i] += 1;
                        left -= 1;
                    }
                }
            }
        }
        let mut rng = rng_from(&[seed, 0xDE4A_4D]);
        let demand = (0..city.episode_length)
            .map(|t| sample_demand(city, t, &mut rng))
            .collect();
        self.state = SimState {
            t: 0,
            idle,
            in_transit: Vec::new(),
            demand,
            prev_action: vec![0.0; n],
            prev_reward: 0.0,
            prev_done: false,
        };
        self.observation()
    }

    /// Demand at `t`; zero past the end of the episode.
    pub fn demand_at(&self, t: usize) -> DemandMatrix {
        self.state
            .demand
            .get(t)
            .cloned()
            .unwrap_or_else(|| DemandMatrix::zeros(self.city.num_stations))
    }

    fn deliver_arrivals(&mut self) {
        let t = self.state.t;
        let idle = &mut self.state.idle;
        self.state.in_transit.retain(|trip| {
            if trip.arrival <= t {
                idle[trip.dest] += 1;
                false
            } else {
                true
            }
        });
    }

    fn check_conservation(&self) -> Result<()> {
        let v = self.state.vehicles();
        if v != self.city.fleet_size as u64 {
            return Err(Error::Simulation(format!(
                "vehicle conservation broken at t={}: {v} vehicles, fleet {}",
                self.state.t, self.city.fleet_size
            )));
        }
        Ok(())
    }

    /// Advances one step with a desired idle-vehicle distribution.
    pub fn step(&mut self, a: &DesiredDistribution) -> Result<StepResult> {
        self.step_action(&Action::Distribution(a.clone()))
    }

    pub fn step_action(&mut self, action: &Action) -> Result<StepResult> {
        let step = self.state.t;
        if self.is_done() {
            return Err(Error::Precondition(format!("step called on terminal state (t={step})")));
        }
        let city = self.city;
        let n = city.num_stations;
        let t = step;

        // (1) arrivals, (2) demand
        self.deliver_arrivals();
        let demand = self.state.demand[t].clone();
        let price = city.price.at_step(t);
        let cost = city.cost.at_step(t);

        // (3) matching
        let idle_before = self.state.idle.clone();
        let matching = flowopt::solve_matching(n, &demand.counts, price, cost, &idle_before)?;
        flowopt::check_matching(n, &demand.counts, &idle_before, &matching)?;
        for i in 0..n {
            for j in 0..n {
                let x = matching.flows[i * n + j];
                if x > 0 {
                    self.state.idle[i] -= x;
                    let arrival = t + city.travel_time.get(i, j, t) as usize;
                    self.state
                        .in_transit
                        .extend(std::iter::repeat_n(Trip { dest: j, arrival }, x as usize));
                }
            }
        }

        // (4) desired counts
        let idle_after = self.state.idle.clone();
        let (desired, action_vec) = match action {
            Action::Distribution(a) => {
                if a.len() != n {
                    return Err(Error::InvalidAction {
                        step,
                        reason: format!("{} components for {n} stations", a.len()),
                    });
                }
                (desired_counts(a, &idle_after), a.as_slice().to_vec())
            }
            Action::Targets(targets) => {
                let have: u64 = idle_after.iter().map(|&v| v as u64).sum();
                let want: u64 = targets.iter().map(|&v| v as u64).sum();
                if targets.len() != n || want > have {
                    return Err(Error::InvalidAction {
                        step,
                        reason: format!("targets {targets:?} infeasible for idle {idle_after:?}"),
                    });
                }
                let a = if have == 0 {
                    vec![1.0 / n as f64; n]
                } else {
                    targets.iter().map(|&v| v as f64 / have as f64).collect()
                };
                (targets.clone(), a)
            }
        };

        // (5) rebalancing
        let rebalancing = flowopt::solve_rebalance(n, &idle_after, &desired, cost)?;
        flowopt::check_rebalance(n, &idle_after, &desired, &rebalancing)?;
        for i in 0..n {
            for j in 0..n {
                let y = rebalancing.flows[i * n + j];
                if y > 0 {
                    self.state.idle[i] -= y;
                    let arrival = t + city.travel_time.get(i, j, t) as usize;
                    self.state
                        .in_transit
                        .extend(std::iter::repeat_n(Trip { dest: j, arrival }, y as usize));
                }
            }
        }

        // (6) reward
        let info = StepInfo {
            served: matching.served(),
            requests: demand.total(),
            matching_profit: matching.profit,
            rebalancing_cost: rebalancing.cost,
            rebalanced: rebalancing.moved(),
        };
        let reward = info.matching_profit - info.rebalancing_cost;

        // (7) clock; arrivals due at the new step are delivered right away so
        // that observations show them as idle
        self.state.t += 1;
        let done = self.state.t == city.episode_length;
        self.deliver_arrivals();
        self.check_conservation()?;
        debug_assert!(self.state.in_transit.iter().all(|trip| trip.arrival > self.state.t));

        self.state.prev_action = action_vec;
        self.state.prev_reward = reward;
        self.state.prev_done = done;

        // (8) observation
        Ok(StepResult {
            observation: self.observation(),
            reward,
            done,
            info,
            detail: StepDetail {
                demand,
                idle_before_matching: idle_before,
                matching,
                idle_after_matching: idle_after,
                desired,
                rebalancing,
            },
        })
    }

    /// Features for the current state.
    pub fn observation(&self) -> Observation {
        let city = self.city;
        let n = city.num_stations;
        let h = self.cfg.horizon;
        let f = feature_width(h);
        let st = &self.state;
        let share = (city.fleet_size as f64 / n as f64).max(1.0);
        let reward_scale = (city.fleet_size as f64 * self.price_scale).max(1e-9);
        let tt = st.t.min(city.episode_length - 1);
        let demand = self.demand_at(st.t);
        let projection = st.project_availability(h);
        let clock = st.t as f64 / city.episode_length as f64;

        let mut features = vec![0.0; n * f];
        let mut outbound_demand = vec![0.0; n];
        for i in 0..n {
            let row = &mut features[i * f..(i + 1) * f];
            row[0] = st.idle[i] as f64 / share;
            for k in 0..=h {
                row[1 + k] = projection[k][i] as f64 / share;
            }
            let out = demand.outbound(i) as f64;
            outbound_demand[i] = out;
            row[h + 2] = out / share;
            row[h + 3] = demand.inbound(i) as f64 / share;
            if out > 0.0 {
                let (mut p, mut c) = (0.0, 0.0);
                for j in 0..n {
                    let d = demand.get(i, j) as f64;
                    p += d * city.price.get(i, j, tt);
                    c += d * city.cost.get(i, j, tt);
                }
                row[h + 4] = p / out / self.price_scale;
                row[h + 5] = c / out / self.price_scale;
            }
            row[h + 6] = st.prev_action[i] * n as f64;
            row[h + 7] = st.prev_reward / reward_scale;
            row[h + 8] = if st.prev_done { 1.0 } else { 0.0 };
            row[h + 9] = clock;
        }
        Observation {
            num_nodes: n,
            num_features: f,
            adjacency: city.adjacency.iter().map(|&e| if e { 1.0 } else { 0.0 }).collect(),
            features,
            outbound_demand,
            t: st.t,
        }
    }

    /// Carries the previous-step history features of another episode into
    /// this one; used by recurrent policies across the episodes of a trial.
    pub fn set_history(&mut self, action: Vec<f64>, reward: f64, done: bool) -> Observation {
        self.state.prev_action = action;
        self.state.prev_reward = reward;
        self.state.prev_done = done;
        self.observation()
    }
}

/// Anything that maps observations to actions.
pub trait Policy {
    fn act(&mut self, env: &Env<'_>, obs: &Observation) -> Result<Action>;
}

impl<F> Policy for F
where
    F: FnMut(&Observation) -> DesiredDistribution,
{
    fn act(&mut self, _env: &Env<'_>, obs: &Observation) -> Result<Action> {
        Ok(Action::Distribution(self(obs)))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub observations: Vec<Observation>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub infos: Vec<StepInfo>,
}

#[derive(Serialize)]
struct TrajectoryLine<'a> {
    t: usize,
    action: &'a [f64],
    reward: f64,
    served: u32,
    reb_cost: f64,
}

impl Trajectory {
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// One JSON object per step: `t`, `action`, `reward`, `served`, `reb_cost`.
    pub fn write_jsonl(&self, mut out: impl Write) -> Result<()> {
        for (t, ((a, r), info)) in self.actions.iter().zip(&self.rewards).zip(&self.infos).enumerate() {
            let line = TrajectoryLine {
                t,
                action: a,
                reward: *r,
                served: info.served,
                reb_cost: info.rebalancing_cost,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Runs one full episode of `policy` on `city`.
pub fn run_episode(
    policy: &mut dyn Policy,
    city: &City,
    cfg: EnvConfig,
    seed: u64,
) -> Result<Trajectory> {
    let (mut env, obs) = Env::new(city, cfg, seed);
    drive(policy, &mut env, obs)
}

/// Runs consecutive episodes on one city, one per seed, carrying the
/// previous action, reward and done flag across episode boundaries.
/// Policies that keep internal state keep it for the whole trial.
pub fn run_trial(
    policy: &mut dyn Policy,
    city: &City,
    cfg: EnvConfig,
    seeds: &[u64],
) -> Result<Vec<Trajectory>> {
    let Some((&first, rest)) = seeds.split_first() else {
        return Ok(Vec::new());
    };
    let (mut env, obs) = Env::new(city, cfg, first);
    let mut out = vec![drive(policy, &mut env, obs)?];
    for &seed in rest {
        let st = env.state();
        let (action, reward, done) = (st.prev_action.clone(), st.prev_reward, st.prev_done);
        env.reset(seed);
        let obs = env.set_history(action, reward, done);
        out.push(drive(policy, &mut env, obs)?);
    }
    Ok(out)
}

fn drive(policy: &mut dyn Policy, env: &mut Env<'_>, mut obs: Observation) -> Result<Trajectory> {
    let mut traj = Trajectory::default();
    while !env.is_done() {
        let step = env.state().t;
        let action = policy.act(env, &obs)?;
        if let Action::Distribution(a) = &action {
            // re-validate: callers can build distributions without `new`
            DesiredDistribution::new(a.as_slice().to_vec())
                .map_err(|e| Error::InvalidAction { step, reason: e.to_string() })?;
        }
        let res = env.step_action(&action).map_err(|e| match e {
            Error::Precondition(reason) => Error::InvalidAction { step, reason },
            other => other,
        })?;
        traj.observations.push(obs);
        traj.actions.push(env.state().prev_action.clone());
        traj.rewards.push(res.reward);
        traj.infos.push(res.info);
        obs = res.observation;
    }
    traj.observations.push(obs);
    Ok(traj)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::scenario::{DemandModel, OdSeries};
    use rand::{Rng, SeedableRng};

    /// Two stations, unit travel times, one request `0 -> 1` per step at
    /// `t = 0` with margin 1.
    pub(crate) fn two_node_city(fleet: u32) -> City {
        let steps = 3;
        let mut demand = OdSeries::filled(2, steps, 0.0);
        demand.set(0, 1, 0, 1.0);
        City {
            id: "two".into(),
            num_stations: 2,
            adjacency: vec![true; 4],
            travel_time: OdSeries::filled(2, steps, 1),
            price: OdSeries::from_fn(2, steps, |i, j, _| if i == j { 0.0 } else { 2.0 }),
            cost: OdSeries::from_fn(2, steps, |i, j, _| if i == j { 0.0 } else { 1.0 }),
            demand_rate: demand,
            fleet_size: fleet,
            episode_length: steps,
            step_minutes: 3.0,
            demand_model: DemandModel::Deterministic,
        }
    }

    #[test]
    fn uniform_placement_round_robin() {
        let mut city = two_node_city(10);
        city.num_stations = 5;
        city.adjacency = vec![true; 25];
        for s in [&mut city.price, &mut city.cost, &mut city.demand_rate] {
            *s = OdSeries::filled(5, 3, 0.0);
        }
        city.travel_time = OdSeries::filled(5, 3, 1);
        let (env, obs) = Env::new(&city, EnvConfig::default(), 0);
        assert_eq!(env.state().idle, vec![2; 5]);
        assert_eq!(env.state().vehicles(), 10);
        assert!(env.state().in_transit.is_empty());
        assert_eq!(obs.num_features, feature_width(DEFAULT_HORIZON));
        // placeholder history is zero
        for i in 0..5 {
            assert_eq!(obs.feature(i, DEFAULT_HORIZON + 6), 0.0);
            assert_eq!(obs.feature(i, DEFAULT_HORIZON + 7), 0.0);
            assert_eq!(obs.feature(i, DEFAULT_HORIZON + 8), 0.0);
        }
    }

    #[test]
    fn proportional_placement_sums_to_fleet() {
        let city = crate::scenario::generate_synthetic_city(
            &crate::scenario::SynthCityParams::desk_scale(),
            4,
        )
        .unwrap();
        let cfg = EnvConfig {
            placement: Placement::ProportionalToDemand,
            ..Default::default()
        };
        let (env, _) = Env::new(&city, cfg, 1);
        assert_eq!(env.state().vehicles(), city.fleet_size as u64);
    }

    #[test]
    fn reset_is_deterministic() {
        let city = crate::scenario::generate_synthetic_city(
            &crate::scenario::SynthCityParams::desk_scale(),
            8,
        )
        .unwrap();
        let (_, a) = Env::new(&city, EnvConfig::default(), 42);
        let (_, b) = Env::new(&city, EnvConfig::default(), 42);
        assert_eq!(a, b);
    }

    #[test]
    fn desired_counts_examples() {
        let a = DesiredDistribution::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(desired_counts(&a, &[3, 0]), vec![1, 1]);
        let a = DesiredDistribution::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(desired_counts(&a, &[1, 4, 2]), vec![7, 0, 0]);
    }

    #[test]
    fn desired_counts_never_exceed_idle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100_000 {
            let n = rng.random_range(1..=8);
            let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let a = DesiredDistribution::from_weights(&w).unwrap();
            let idle: Vec<u32> = (0..n).map(|_| rng.random_range(0..50)).collect();
            let sum: u32 = desired_counts(&a, &idle).iter().sum();
            assert!(sum <= idle.iter().sum::<u32>());
        }
    }

    #[test]
    fn invalid_distribution_rejected() {
        assert!(DesiredDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(DesiredDistribution::new(vec![1.5, -0.5]).is_err());
        assert!(DesiredDistribution::new(vec![f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn no_demand_keep_put_is_idle() {
        let mut city = two_node_city(4);
        city.demand_rate = OdSeries::filled(2, 3, 0.0);
        let (mut env, _) = Env::new(&city, EnvConfig::default(), 0);
        let a = DesiredDistribution::from_weights(&[2.0, 2.0]).unwrap();
        let res = env.step(&a).unwrap();
        assert_eq!(res.reward, 0.0);
        assert_eq!(res.info.rebalanced, 0);
        assert_eq!(env.state().idle, vec![2, 2]);
    }

    #[test]
    fn single_request_hand_simulation() {
        // one idle vehicle at station 0, one request 0 -> 1 with margin 1
        let mut city = two_node_city(1);
        city.travel_time = OdSeries::filled(2, 3, 2);
        let (mut env, _) = Env::new(&city, EnvConfig::default(), 0);
        assert_eq!(env.state().idle, vec![1, 0]);
        let keep = DesiredDistribution::new(vec![1.0, 0.0]).unwrap();
        let res = env.step(&keep).unwrap();
        assert_eq!(res.reward, 1.0);
        assert_eq!(res.info.served, 1);
        assert_eq!(env.state().idle, vec![0, 0]);
        assert_eq!(env.state().in_transit, vec![Trip { dest: 1, arrival: 2 }]);
        // the vehicle shows up in the projection two steps ahead
        let proj = env.state().project_availability(3);
        assert_eq!(proj[0], vec![0, 0]);
        assert_eq!(proj[1], vec![0, 1]);
        assert_eq!(proj[3], vec![0, 1]);
    }

    #[test]
    fn step_after_done_is_error() {
        let city = two_node_city(2);
        let (mut env, _) = Env::new(&city, EnvConfig::default(), 0);
        let a = DesiredDistribution::uniform(2);
        for _ in 0..3 {
            env.step(&a).unwrap();
        }
        assert!(env.is_done());
        assert!(env.step(&a).is_err());
    }

    #[test]
    fn projection_constant_without_trips() {
        let city = two_node_city(3);
        let (env, _) = Env::new(&city, EnvConfig::default(), 0);
        let proj = env.state().project_availability(4);
        assert!(proj.iter().all(|p| p == &env.state().idle));
    }

    #[test]
    fn episode_length_and_determinism() {
        let city = crate::scenario::generate_synthetic_city(
            &crate::scenario::SynthCityParams::desk_scale(),
            2,
        )
        .unwrap();
        let n = city.num_stations;
        let run = || {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
            let mut policy = move |_: &Observation| {
                let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                DesiredDistribution::from_weights(&w).unwrap()
            };
            run_episode(&mut policy, &city, EnvConfig::default(), 9).unwrap()
        };
        let a = run();
        assert_eq!(a.rewards.len(), city.episode_length);
        assert_eq!(a.observations.len(), city.episode_length + 1);
        assert_eq!(a, run());
        let mut buf = Vec::new();
        a.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), city.episode_length);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for key in ["t", "action", "reward", "served", "reb_cost"] {
            assert!(first.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn invalid_policy_output_names_the_step() {
        let city = two_node_city(2);
        let mut calls = 0;
        let mut policy = |_: &Observation| {
            calls += 1;
            if calls == 2 {
                DesiredDistribution(vec![0.7, 0.7])
            } else {
                DesiredDistribution::uniform(2)
            }
        };
        let err = run_episode(&mut policy, &city, EnvConfig::default(), 0).unwrap_err();
        assert!(matches!(err, Error::InvalidAction { step: 1, .. }), "{err}");
    }
}
