//! Held-out reward as a function of the number of meta-training tasks.

use std::path::Path;

use amod_core::agent::{meta_train, TrainConfig, TrialLog};
use amod_core::seed::rng_from;
use amod_core::City;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::eval::{run_eval, EvalConfig, PolicySpec};
use crate::metrics::MeanStd;
use crate::output::{write_csv, write_json};

const SHUFFLE_STREAM: u64 = 0x5417;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SensitivityConfig {
    /// Strictly ascending pool sizes.
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub episodes_per_trial: usize,
    /// Master seeds; each gets its own task order and training run.
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

/// One row per (pool size, seed). The reward is the final-episode trial
/// reward averaged over held-out tasks and evaluation seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SensitivityRow {
    pub pool_size: usize,
    pub seed: u64,
    pub tasks: String,
    pub reward_mean: f64,
    pub reward_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SensitivityLogRow {
    pub pool_size: usize,
    pub seed: u64,
    pub trial: usize,
    pub task: String,
    pub episodes: usize,
    pub mean_reward: f64,
    pub final_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub config: SensitivityConfig,
    pub eval_tasks: Vec<String>,
    pub rows: Vec<SensitivityRow>,
    #[serde(skip)]
    pub log: Vec<SensitivityLogRow>,
}

impl SensitivityReport {
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("report.json"), self)?;
        write_csv(&dir.join("report.csv"), &self.rows)?;
        write_csv(&dir.join("training_log.csv"), &self.log)
    }
}

/// Task index lists for each size: prefixes of one shuffle of `0..available`.
pub fn nested_pools(available: usize, sizes: &[usize], master_seed: u64) -> Result<Vec<Vec<usize>>> {
    if sizes.is_empty() {
        return Err(CliError::config("no pool sizes given"));
    }
    if sizes[0] == 0 || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::config(format!("pool sizes {sizes:?} must be positive and ascending")));
    }
    let largest = *sizes.last().unwrap();
    if largest > available {
        return Err(CliError::config(format!(
            "pool size {largest} exceeds the {available} available tasks"
        )));
    }
    let mut order: Vec<usize> = (0..available).collect();
    order.shuffle(&mut rng_from(&[master_seed, SHUFFLE_STREAM]));
    Ok(sizes.iter().map(|&k| order[..k].to_vec()).collect())
}

struct CellOut {
    row: SensitivityRow,
    log: Vec<SensitivityLogRow>,
}

fn run_cell(pool: &[City], tasks: &[usize], held_out: &[City], seed: u64, cfg: &SensitivityConfig) -> Result<CellOut> {
    let cities: Vec<City> = tasks.iter().map(|&i| pool[i].clone()).collect();
    let out = meta_train(&cities, cfg.trials, cfg.episodes_per_trial, &cfg.train, seed, None)?;
    let spec = PolicySpec::model("meta", out.model);
    let mut rewards = Vec::new();
    for city in held_out {
        let report = run_eval(city, std::slice::from_ref(&spec), &cfg.eval)?;
        rewards.extend(report.rows.iter().map(|r| r.reward));
    }
    let stat = MeanStd::of(rewards);
    let log = out
        .trials
        .iter()
        .map(|t: &TrialLog| SensitivityLogRow {
            pool_size: tasks.len(),
            seed,
            trial: t.trial,
            task: t.task.clone(),
            episodes: t.episodes,
            mean_reward: t.mean_reward,
            final_reward: t.final_reward,
            policy_loss: t.policy_loss,
            value_loss: t.value_loss,
        })
        .collect();
    let ids: Vec<&str> = cities.iter().map(|c| c.id.as_str()).collect();
    Ok(CellOut {
        row: SensitivityRow {
            pool_size: tasks.len(),
            seed,
            tasks: ids.join(";"),
            reward_mean: stat.mean,
            reward_std: stat.std,
        },
        log,
    })
}

/// Trains one meta-learner per (pool size, seed) and scores it on `held_out`.
pub fn run_sensitivity(pool: &[City], held_out: &[City], cfg: &SensitivityConfig) -> Result<SensitivityReport> {
    if cfg.seeds.is_empty() || cfg.eval.seeds.is_empty() {
        return Err(CliError::config("seed list is empty"));
    }
    if held_out.is_empty() {
        return Err(CliError::config("no held-out tasks given"));
    }
    let mut cells = Vec::new();
    for &seed in &cfg.seeds {
        for tasks in nested_pools(pool.len(), &cfg.sizes, seed)? {
            cells.push((tasks, seed));
        }
    }
    let mut done = cells
        .par_iter()
        .map(|(tasks, seed)| run_cell(pool, tasks, held_out, *seed, cfg))
        .collect::<Result<Vec<_>>>()?;
    // rows ordered by pool size, then seed
    done.sort_by_key(|c| (c.row.pool_size, cfg.seeds.iter().position(|&s| s == c.row.seed)));
    let mut rows = Vec::with_capacity(done.len());
    let mut log = Vec::new();
    for c in done {
        rows.push(c.row);
        log.extend(c.log);
    }
    Ok(SensitivityReport {
        config: cfg.clone(),
        eval_tasks: held_out.iter().map(|c| c.id.clone()).collect(),
        rows,
        log,
    })
}
