//! Policy evaluation over seed lists, with the trial protocol for
//! recurrent meta-trained models.

use std::path::Path;
use std::sync::Arc;

use amod_core::agent::{
    ActionMode, ActorCritic, EqualDistribution, MpcForecast, MpcOracle, RandomPolicy,
    RecurrentPolicy, TrainingMode,
};
use amod_core::env::{run_episode, run_trial, EnvConfig, Policy, Trajectory};
use amod_core::scenario::{apply_disturbance, Disturbance};
use amod_core::seed::derive_seed;
use amod_core::City;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::metrics::{cosine_alignment, MeanStd};
use crate::output::{write_csv, write_json};

const TRIAL_STREAM: u64 = 0x7E1A;

#[derive(Clone, Debug)]
pub enum PolicyKind {
    Random,
    Ed,
    MpcOracle { horizon: usize },
    MpcForecast { horizon: usize },
    Model(Arc<ActorCritic>),
}

#[derive(Clone, Debug)]
pub struct PolicySpec {
    pub name: String,
    pub kind: PolicyKind,
}

impl PolicySpec {
    pub fn new(name: impl Into<String>, kind: PolicyKind) -> Self {
        PolicySpec {
            name: name.into(),
            kind,
        }
    }

    pub fn model(name: impl Into<String>, model: ActorCritic) -> Self {
        PolicySpec::new(name, PolicyKind::Model(Arc::new(model)))
    }

    /// Meta-trained models are evaluated with whole trials.
    pub fn uses_trials(&self) -> bool {
        match &self.kind {
            PolicyKind::Model(m) => m.mode.is_some_and(TrainingMode::is_recurrent_across_episodes),
            _ => false,
        }
    }

    fn build(&self, seed: u64, mode: ActionMode) -> Box<dyn Policy> {
        match &self.kind {
            PolicyKind::Random => Box::new(RandomPolicy::new(seed)),
            PolicyKind::Ed => Box::new(EqualDistribution),
            PolicyKind::MpcOracle { horizon } => Box::new(MpcOracle { horizon: *horizon }),
            PolicyKind::MpcForecast { horizon } => Box::new(MpcForecast { horizon: *horizon }),
            PolicyKind::Model(m) => Box::new(RecurrentPolicy::new(
                (**m).clone(),
                mode,
                self.uses_trials(),
                seed,
            )),
        }
    }
}

/// Parses a comma-separated policy list. Names are `random`, `ed`,
/// `mpc-oracle`, `mpc-forecast`, `model` (the `--checkpoint` file) and
/// `LABEL=PATH` for any other checkpoint.
pub fn parse_policies(list: &str, checkpoint: Option<&Path>, mpc_horizon: usize) -> Result<Vec<PolicySpec>> {
    let mut out: Vec<PolicySpec> = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let spec = match name {
            "random" => PolicySpec::new(name, PolicyKind::Random),
            "ed" => PolicySpec::new(name, PolicyKind::Ed),
            "mpc-oracle" => PolicySpec::new(name, PolicyKind::MpcOracle { horizon: mpc_horizon }),
            "mpc-forecast" => PolicySpec::new(name, PolicyKind::MpcForecast { horizon: mpc_horizon }),
            "model" => {
                let path = checkpoint
                    .ok_or_else(|| CliError::config("policy `model` needs --checkpoint"))?;
                PolicySpec::model(name, load_model(path)?)
            }
            _ => match name.split_once('=') {
                Some((label, path)) if !label.is_empty() => {
                    PolicySpec::model(label, load_model(Path::new(path))?)
                }
                _ => return Err(CliError::config(format!("unknown policy {name:?}"))),
            },
        };
        if out.iter().any(|p| p.name == spec.name) {
            return Err(CliError::config(format!("policy {} listed twice", spec.name)));
        }
        out.push(spec);
    }
    if out.is_empty() {
        return Err(CliError::config("no policy given"));
    }
    Ok(out)
}

pub fn load_model(path: &Path) -> Result<ActorCritic> {
    if !path.is_file() {
        return Err(CliError::config(format!("checkpoint {} does not exist", path.display())));
    }
    ActorCritic::load(path).map_err(|e| CliError::config(format!("checkpoint {}: {e}", path.display())))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalConfig {
    pub env: EnvConfig,
    pub seeds: Vec<u64>,
    /// Trial length for meta-trained models.
    pub episodes_per_trial: usize,
    pub action_mode: ActionMode,
}

impl EvalConfig {
    pub fn new(env: EnvConfig, seeds: Vec<u64>) -> Self {
        EvalConfig {
            env,
            seeds,
            episodes_per_trial: 10,
            action_mode: ActionMode::Mean,
        }
    }
}

/// Episode seeds of one evaluation trial; the last one is `seed` itself so
/// the scored episode sees the same requests as a single-episode run.
pub fn trial_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut s: Vec<u64> = (0..n.saturating_sub(1))
        .map(|k| derive_seed(&[seed, TRIAL_STREAM, k as u64]))
        .collect();
    s.push(seed);
    s
}

/// Scored episode of one (policy, seed) cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedRow {
    pub policy: String,
    pub seed: u64,
    pub reward: f64,
    pub served: u32,
    pub requests: u32,
    pub rebalancing_cost: f64,
    pub rebalanced: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeRow {
    pub policy: String,
    pub seed: u64,
    pub episode: usize,
    pub reward: f64,
    pub served: u32,
    pub requests: u32,
    pub rebalancing_cost: f64,
    pub rebalanced: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlignmentRow {
    pub policy: String,
    pub seed: u64,
    pub episode: usize,
    pub t: usize,
    pub alignment: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub policy: String,
    pub seeds: usize,
    pub reward: MeanStd,
    pub served: MeanStd,
    pub requests: MeanStd,
    pub rebalancing_cost: MeanStd,
    pub rebalanced: MeanStd,
}

/// Per-policy aggregates in order of first appearance.
pub fn aggregate(rows: &[SeedRow]) -> Vec<Aggregate> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.policy.as_str()) {
            names.push(&r.policy);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let rs: Vec<&SeedRow> = rows.iter().filter(|r| r.policy == name).collect();
            let stat = |f: &dyn Fn(&SeedRow) -> f64| MeanStd::of(rs.iter().map(|r| f(r)));
            Aggregate {
                policy: name.to_string(),
                seeds: rs.len(),
                reward: stat(&|r| r.reward),
                served: stat(&|r| r.served as f64),
                requests: stat(&|r| r.requests as f64),
                rebalancing_cost: stat(&|r| r.rebalancing_cost),
                rebalanced: stat(&|r| r.rebalanced as f64),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub city: String,
    pub disturbances: Vec<Disturbance>,
    pub config: EvalConfig,
    pub rows: Vec<SeedRow>,
    pub aggregates: Vec<Aggregate>,
    pub episodes: Vec<EpisodeRow>,
    #[serde(skip)]
    pub alignment: Vec<AlignmentRow>,
}

#[derive(Serialize)]
struct ReportCsvRow<'a> {
    policy: &'a str,
    row: &'a str,
    seed: Option<u64>,
    reward: f64,
    served: f64,
    requests: f64,
    rebalancing_cost: f64,
    rebalanced: f64,
}

impl EvalReport {
    pub fn aggregate_for(&self, policy: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.policy == policy)
    }

    pub fn rows_for<'a>(&'a self, policy: &'a str) -> impl Iterator<Item = &'a SeedRow> + 'a {
        self.rows.iter().filter(move |r| r.policy == policy)
    }

    /// Mean alignment of each episode index of a policy, over seeds and steps.
    pub fn alignment_by_episode(&self, policy: &str) -> Vec<f64> {
        let mut acc: Vec<(f64, usize)> = Vec::new();
        for a in self.alignment.iter().filter(|a| a.policy == policy) {
            if acc.len() <= a.episode {
                acc.resize(a.episode + 1, (0.0, 0));
            }
            acc[a.episode].0 += a.alignment;
            acc[a.episode].1 += 1;
        }
        acc.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
    }

    /// Aggregates agree with a recomputation from the per-seed rows.
    pub fn is_consistent(&self) -> bool {
        aggregate(&self.rows) == self.aggregates
    }

    /// Writes `report.json`, `report.csv`, `episodes.csv` and `alignment.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("report.json"), self)?;
        let mut table = Vec::new();
        for agg in &self.aggregates {
            for r in self.rows_for(&agg.policy) {
                table.push(ReportCsvRow {
                    policy: &r.policy,
                    row: "seed",
                    seed: Some(r.seed),
                    reward: r.reward,
                    served: r.served as f64,
                    requests: r.requests as f64,
                    rebalancing_cost: r.rebalancing_cost,
                    rebalanced: r.rebalanced as f64,
                });
            }
            for (row, pick) in [("mean", true), ("std", false)] {
                let v = |s: MeanStd| if pick { s.mean } else { s.std };
                table.push(ReportCsvRow {
                    policy: &agg.policy,
                    row,
                    seed: None,
                    reward: v(agg.reward),
                    served: v(agg.served),
                    requests: v(agg.requests),
                    rebalancing_cost: v(agg.rebalancing_cost),
                    rebalanced: v(agg.rebalanced),
                });
            }
        }
        write_csv(&dir.join("report.csv"), &table)?;
        write_csv(&dir.join("episodes.csv"), &self.episodes)?;
        write_csv(&dir.join("alignment.csv"), &self.alignment)
    }
}

struct Cell {
    row: SeedRow,
    episodes: Vec<EpisodeRow>,
    alignment: Vec<AlignmentRow>,
}

fn totals(t: &Trajectory) -> (u32, u32, f64, u32) {
    t.infos.iter().fold((0, 0, 0.0, 0), |(s, q, c, m), i| {
        (s + i.served, q + i.requests, c + i.rebalancing_cost, m + i.rebalanced)
    })
}

fn eval_cell(city: &City, spec: &PolicySpec, seed: u64, cfg: &EvalConfig) -> Result<Cell> {
    let mut policy = spec.build(seed, cfg.action_mode);
    let trajs = if spec.uses_trials() {
        run_trial(policy.as_mut(), city, cfg.env, &trial_seeds(seed, cfg.episodes_per_trial))?
    } else {
        vec![run_episode(policy.as_mut(), city, cfg.env, seed)?]
    };
    let mut episodes = Vec::with_capacity(trajs.len());
    let mut alignment = Vec::new();
    for (e, traj) in trajs.iter().enumerate() {
        let (served, requests, rebalancing_cost, rebalanced) = totals(traj);
        episodes.push(EpisodeRow {
            policy: spec.name.clone(),
            seed,
            episode: e,
            reward: traj.total_reward(),
            served,
            requests,
            rebalancing_cost,
            rebalanced,
        });
        for (t, a) in traj.actions.iter().enumerate() {
            alignment.push(AlignmentRow {
                policy: spec.name.clone(),
                seed,
                episode: e,
                t,
                alignment: cosine_alignment(a, &traj.observations[t].outbound_demand)?,
            });
        }
    }
    let last = episodes.last().expect("at least one episode");
    let row = SeedRow {
        policy: spec.name.clone(),
        seed,
        reward: last.reward,
        served: last.served,
        requests: last.requests,
        rebalancing_cost: last.rebalancing_cost,
        rebalanced: last.rebalanced,
    };
    Ok(Cell {
        row,
        episodes,
        alignment,
    })
}

fn check(city: &City, policies: &[PolicySpec], cfg: &EvalConfig) -> Result<()> {
    if cfg.seeds.is_empty() {
        return Err(CliError::config("seed list is empty"));
    }
    if cfg.episodes_per_trial == 0 {
        return Err(CliError::config("a trial needs at least one episode"));
    }
    if policies.is_empty() {
        return Err(CliError::config("no policy given"));
    }
    loading_city(city)?;
    for p in policies {
        if let PolicyKind::Model(m) = &p.kind {
            if m.config.feature_width != cfg.env.feature_width() {
                return Err(CliError::config(format!(
                    "checkpoint {} expects {} node features, the environment produces {}",
                    p.name,
                    m.config.feature_width,
                    cfg.env.feature_width()
                )));
            }
        }
    }
    Ok(())
}

fn loading_city(city: &City) -> Result<()> {
    city.validate()
        .map_err(|e| CliError::config(format!("scenario {}: {e}", city.id)))
}

/// Evaluates every policy on every seed. Cells run in parallel and are
/// assembled in (policy, seed) order.
pub fn run_eval(city: &City, policies: &[PolicySpec], cfg: &EvalConfig) -> Result<EvalReport> {
    check(city, policies, cfg)?;
    let cells: Vec<(&PolicySpec, u64)> = policies
        .iter()
        .flat_map(|p| cfg.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let done = cells
        .par_iter()
        .map(|&(p, s)| eval_cell(city, p, s, cfg))
        .collect::<Result<Vec<Cell>>>()?;
    let mut rows = Vec::with_capacity(done.len());
    let mut episodes = Vec::new();
    let mut alignment = Vec::new();
    for c in done {
        rows.push(c.row);
        episodes.extend(c.episodes);
        alignment.extend(c.alignment);
    }
    Ok(EvalReport {
        city: city.id.clone(),
        disturbances: Vec::new(),
        config: cfg.clone(),
        aggregates: aggregate(&rows),
        rows,
        episodes,
        alignment,
    })
}

/// Applies `disturbances` in order and returns the disturbed copy.
pub fn disturbed_city(city: &City, disturbances: &[Disturbance]) -> Result<City> {
    let mut out = city.clone();
    for d in disturbances {
        out = apply_disturbance(&out, d)
            .map_err(|e| CliError::config(format!("disturbance on {}: {e}", city.id)))?;
    }
    Ok(out)
}

/// Evaluates every policy on the disturbed city with identical seeds.
pub fn run_disturbance(
    city: &City,
    disturbances: &[Disturbance],
    policies: &[PolicySpec],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let disturbed = disturbed_city(city, disturbances)?;
    let mut report = run_eval(&disturbed, policies, cfg)?;
    report.disturbances = disturbances.to_vec();
    Ok(report)
}
