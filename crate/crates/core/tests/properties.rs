use amod_core::agent::{ActorCritic, ModelConfig};
use amod_core::env::{desired_counts, DesiredDistribution, Env, EnvConfig};
use amod_core::flowopt::{check_matching, check_rebalance, solve_matching, solve_rebalance};
use amod_core::scenario::{apply_disturbance, generate_synthetic_city, Disturbance, DisturbanceKind, SynthCityParams};
use amod_core::City;
use proptest::prelude::*;

fn city(seed: u64, lo: usize, hi: usize) -> City {
    let mut p = SynthCityParams::desk_scale();
    p.node_range = [lo, hi];
    generate_synthetic_city(&p, seed).unwrap()
}

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n).prop_map(|mut w| {
        if w.iter().sum::<f64>() == 0.0 {
            w[0] = 1.0;
        }
        w
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scenario_json_roundtrip(seed in 0u64..10_000) {
        let c = city(seed, 2, 8);
        prop_assert_eq!(City::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn desired_counts_never_exceed_idle(
        w in weights(6),
        idle in prop::collection::vec(0u32..50, 6),
    ) {
        let a = DesiredDistribution::from_weights(&w).unwrap();
        let d = desired_counts(&a, &idle);
        let total: u32 = idle.iter().sum();
        prop_assert!(d.iter().sum::<u32>() <= total);
        for (x, ai) in d.iter().zip(a.as_slice()) {
            prop_assert!((*x as f64) <= ai * total as f64);
            prop_assert!((*x as f64) > ai * total as f64 - 1.0);
        }
    }

    #[test]
    fn unit_disturbances_are_identity(seed in 0u64..1000, kind in 0usize..3, target in 0usize..2) {
        let c = city(seed, 3, 6);
        let kind = [DisturbanceKind::SpecialEvent, DisturbanceKind::PriceChange, DisturbanceKind::Congestion][kind];
        let mut d = Disturbance::new(kind, vec![target], 1.0);
        d.secondary_multiplier = Some(1.0);
        prop_assert_eq!(apply_disturbance(&c, &d).unwrap(), c);
    }

    #[test]
    fn episodes_keep_invariants(seed in 0u64..1000, actions in prop::collection::vec(weights(5), 20)) {
        let c = city(seed, 5, 5);
        let (mut env, _) = Env::new(&c, EnvConfig::default(), seed);
        let mut t = 0;
        while !env.is_done() {
            let a = DesiredDistribution::from_weights(&actions[t % actions.len()]).unwrap();
            let res = env.step(&a).unwrap();
            let d = &res.detail;
            let n = c.num_stations;
            prop_assert!(check_matching(n, &d.demand.counts, &d.idle_before_matching, &d.matching).is_ok());
            prop_assert!(check_rebalance(n, &d.idle_after_matching, &d.desired, &d.rebalancing).is_ok());
            prop_assert_eq!(res.reward, d.matching.profit - d.rebalancing.cost);
            prop_assert_eq!(env.state().vehicles(), c.fleet_size as u64);
            t += 1;
        }
        prop_assert_eq!(t, c.episode_length);
    }

    /// One more idle vehicle never lowers matching profit.
    #[test]
    fn matching_profit_monotone_in_supply(
        seed in 0u64..1000,
        idle in prop::collection::vec(0u32..6, 4),
        extra in 0usize..4,
    ) {
        let c = city(seed, 4, 4);
        let (env, _) = Env::new(&c, EnvConfig::default(), seed);
        let demand = env.demand_at(0);
        let (p, k) = (c.price.at_step(0), c.cost.at_step(0));
        let base = solve_matching(4, &demand.counts, p, k, &idle).unwrap();
        let mut more = idle.clone();
        more[extra] += 1;
        let bigger = solve_matching(4, &demand.counts, p, k, &more).unwrap();
        prop_assert!(bigger.profit >= base.profit - 1e-9);
    }

    /// Halving the desired counts never raises rebalancing cost.
    #[test]
    fn rebalance_cost_monotone_in_targets(
        seed in 0u64..1000,
        idle in prop::collection::vec(0u32..6, 4),
        w in weights(4),
    ) {
        let c = city(seed, 4, 4);
        let cost = c.cost.at_step(0);
        let a = DesiredDistribution::from_weights(&w).unwrap();
        let desired = desired_counts(&a, &idle);
        let full = solve_rebalance(4, &idle, &desired, cost).unwrap();
        let relaxed: Vec<u32> = desired.iter().map(|d| d / 2).collect();
        let half = solve_rebalance(4, &idle, &relaxed, cost).unwrap();
        prop_assert!(half.cost <= full.cost + 1e-9);
    }
}

#[test]
fn checkpoint_roundtrip_preserves_policy() {
    let c = city(3, 5, 5);
    let cfg = EnvConfig::default();
    let model = ActorCritic::new(
        ModelConfig {
            feature_width: cfg.feature_width(),
            hidden: 12,
        },
        9,
    );
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path).unwrap();
    let back = ActorCritic::load(&path).unwrap();
    let (_, obs) = Env::new(&c, cfg, 0);
    let h = model.zero_hidden(5, 0);
    assert_eq!(
        model.policy_forward(&obs, &h).unwrap(),
        back.policy_forward(&obs, &h).unwrap()
    );
    assert!(ActorCritic::load_for(&path, cfg.feature_width() + 1).is_err());
}
