//! Subcommands and their flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use amod_core::agent::{
    fine_tune, meta_train, train_standard, ActionMode, TrainConfig, TrainOutput, TrainingMode,
    DEFAULT_HIDDEN,
};
use amod_core::env::{EnvConfig, DEFAULT_HORIZON};
use amod_core::scenario::{load_disturbances, Disturbance};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{loading, CliError, Result};
use crate::eval::{parse_policies, run_disturbance, run_eval, EvalConfig, PolicyKind};
use crate::output::{ensure_dir, write_csv, write_json};
use crate::sensitivity::{run_sensitivity, SensitivityConfig};
use crate::source::{load_city, load_pool, parse_seeds, parse_sizes};

/// Checkpoint file name inside a training output directory.
pub const MODEL_FILE: &str = "model.ckpt";

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SeedList(pub Vec<u64>);

impl FromStr for SeedList {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        parse_seeds(s).map(SeedList)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SizeList(pub Vec<usize>);

impl FromStr for SizeList {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        parse_sizes(s).map(SizeList)
    }
}

#[derive(Parser, Debug)]
#[command(name = "amod", version, about = "Fleet rebalancing experiments on city scenarios")]
pub struct ExperimentConfig {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a single-city, multi-city zero-shot or fine-tuned agent.
    Train(TrainArgs),
    /// Meta-train a recurrent agent over a task pool.
    MetaTrain(MetaTrainArgs),
    /// Evaluate policies on one scenario.
    Eval(EvalArgs),
    /// Evaluate policies on a disturbed scenario.
    Disturb(EvalArgs),
    /// Held-out reward against the number of meta-training tasks.
    Sensitivity(SensitivityArgs),
    /// Check a scenario file and optional disturbances.
    ValidateScenario(ValidateArgs),
    /// Write a synthetic pool as scenario files.
    Generate(GenerateArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct HyperArgs {
    /// Lookahead steps of the availability projection features.
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    pub horizon: usize,
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    pub hidden: usize,
    #[arg(long, default_value_t = 3e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.0)]
    pub entropy: f64,
    #[arg(long, default_value_t = 0.97)]
    pub gamma: f64,
    /// Returns span the whole trial; one update per trial.
    #[arg(long)]
    pub trial_returns: bool,
}

impl HyperArgs {
    pub fn train_config(&self) -> Result<TrainConfig> {
        if self.hidden == 0 || !(self.lr > 0.0) || !(0.0..=1.0).contains(&self.gamma) || self.entropy < 0.0 {
            return Err(CliError::config("hyperparameters out of range"));
        }
        let mut cfg = TrainConfig {
            hidden: self.hidden,
            env: EnvConfig {
                horizon: self.horizon,
                ..EnvConfig::default()
            },
            ..TrainConfig::default()
        };
        cfg.a2c.adam.lr = self.lr;
        cfg.a2c.entropy_coef = self.entropy;
        cfg.a2c.gamma = self.gamma;
        cfg.a2c.trial_returns = self.trial_returns;
        Ok(cfg)
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    Single,
    ZeroShot,
    FineTune,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = TrainMode::Single)]
    pub mode: TrainMode,
    /// Training city (single and fine-tune).
    #[arg(long)]
    pub scenario: Option<String>,
    /// Training cities (zero-shot).
    #[arg(long)]
    pub pool: Option<String>,
    /// Model to adapt (fine-tune).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct MetaTrainArgs {
    #[arg(long)]
    pub pool: String,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 10)]
    pub episodes_per_trial: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ActionArg {
    Mean,
    Sample,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub scenario: String,
    /// Comma-separated: random, ed, mpc-oracle, mpc-forecast, model, LABEL=PATH.
    #[arg(long, default_value = "ed")]
    pub policy: String,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Seeds such as `0,1,2` or `0..10`.
    #[arg(long)]
    pub seeds: SeedList,
    /// Trial length for meta-trained models.
    #[arg(long, default_value_t = 10)]
    pub episodes_per_trial: usize,
    /// JSON list of disturbances applied in order.
    #[arg(long)]
    pub disturbance: Option<PathBuf>,
    /// Feature horizon; taken from the checkpoints when omitted.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long, default_value_t = 6)]
    pub mpc_horizon: usize,
    #[arg(long, value_enum, default_value_t = ActionArg::Mean)]
    pub action_mode: ActionArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SensitivityArgs {
    #[arg(long)]
    pub pool: String,
    /// Held-out evaluation tasks.
    #[arg(long)]
    pub eval_pool: String,
    /// Ascending pool sizes such as `1,2,4,8`.
    #[arg(long)]
    pub sizes: SizeList,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 10)]
    pub episodes_per_trial: usize,
    #[arg(long)]
    pub seeds: SeedList,
    #[arg(long, default_value = "0")]
    pub eval_seeds: SeedList,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ValidateArgs {
    #[arg(long)]
    pub scenario: String,
    #[arg(long)]
    pub disturbance: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct GenerateArgs {
    /// `synthetic:COUNT:SEED[:MIN-MAX]`.
    #[arg(long)]
    pub pool: String,
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs one subcommand; returns the lines to print on success.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    match &cfg.command {
        Command::Train(a) => train(a),
        Command::MetaTrain(a) => meta(a),
        Command::Eval(a) => eval(a, false),
        Command::Disturb(a) => eval(a, true),
        Command::Sensitivity(a) => sensitivity(a),
        Command::ValidateScenario(a) => validate(a),
        Command::Generate(a) => generate(a),
    }
}

fn read_disturbances(path: &Path) -> Result<Vec<Disturbance>> {
    if !path.is_file() {
        return Err(CliError::config(format!("disturbance file {} does not exist", path.display())));
    }
    loading(&path.display().to_string(), load_disturbances(path))
}

fn save_training(out: &Path, args: &impl Serialize, run: &TrainOutput, cfg: &TrainConfig) -> Result<Vec<String>> {
    ensure_dir(out)?;
    let model_path = out.join(MODEL_FILE);
    run.model.save(&model_path)?;
    // meta-training logs one row per trial, the other modes one per episode
    if run.model.mode == Some(TrainingMode::MetaRl) {
        write_csv(&out.join("training_log.csv"), &run.trials)?;
    } else {
        write_csv(&out.join("training_log.csv"), &run.episodes)?;
    }
    #[derive(Serialize)]
    struct Saved<'a, A> {
        args: &'a A,
        train: &'a TrainConfig,
        updates: u64,
    }
    write_json(
        &out.join("config.json"),
        &Saved {
            args,
            train: cfg,
            updates: run.model.updates,
        },
    )?;
    let n = run.episodes.len();
    let tail = &run.episodes[n.saturating_sub(100)..];
    let mean = tail.iter().map(|e| e.reward).sum::<f64>() / tail.len().max(1) as f64;
    Ok(vec![
        format!("trained {n} episodes, {} updates", run.model.updates),
        format!("mean reward of last {} episodes: {mean:.3}", tail.len()),
        format!("checkpoint: {}", model_path.display()),
    ])
}

fn train(a: &TrainArgs) -> Result<Vec<String>> {
    let mut cfg = a.hyper.train_config()?;
    if a.episodes == 0 {
        return Err(CliError::config("--episodes must be positive"));
    }
    let need_scenario = || {
        a.scenario
            .as_deref()
            .ok_or_else(|| CliError::config("this mode needs --scenario"))
    };
    let run = match a.mode {
        TrainMode::Single => {
            let city = load_city(need_scenario()?)?;
            train_standard(TrainingMode::SingleCity, &[city], a.episodes, &cfg, a.seed, None)?
        }
        TrainMode::ZeroShot => {
            let pool = load_pool(a.pool.as_deref().ok_or_else(|| CliError::config("zero-shot needs --pool"))?)?;
            train_standard(TrainingMode::MultiCityZeroShot, &pool, a.episodes, &cfg, a.seed, None)?
        }
        TrainMode::FineTune => {
            let city = load_city(need_scenario()?)?;
            let path = a
                .checkpoint
                .as_deref()
                .ok_or_else(|| CliError::config("fine-tune needs --checkpoint"))?;
            let base = crate::eval::load_model(path)?;
            if base.config.feature_width != cfg.env.feature_width() {
                return Err(CliError::config(format!(
                    "checkpoint expects {} node features, --horizon {} gives {}",
                    base.config.feature_width,
                    cfg.env.horizon,
                    cfg.env.feature_width()
                )));
            }
            cfg.hidden = base.config.hidden;
            fine_tune(&base, &city, a.episodes, &cfg, a.seed)?
        }
    };
    save_training(&a.out, a, &run, &cfg)
}

fn meta(a: &MetaTrainArgs) -> Result<Vec<String>> {
    let cfg = a.hyper.train_config()?;
    if a.episodes_per_trial == 0 {
        return Err(CliError::config("--episodes-per-trial must be positive"));
    }
    let pool = load_pool(&a.pool)?;
    let run = meta_train(&pool, a.trials, a.episodes_per_trial, &cfg, a.seed, None)?;
    save_training(&a.out, a, &run, &cfg)
}

fn eval(a: &EvalArgs, disturbed: bool) -> Result<Vec<String>> {
    let city = load_city(&a.scenario)?;
    let disturbances = match (&a.disturbance, disturbed) {
        (Some(p), _) => read_disturbances(p)?,
        (None, true) => return Err(CliError::config("disturb needs --disturbance")),
        (None, false) => Vec::new(),
    };
    let policies = parse_policies(&a.policy, a.checkpoint.as_deref(), a.mpc_horizon)?;
    let model_width = policies.iter().find_map(|p| match &p.kind {
        PolicyKind::Model(m) => Some(m.config.feature_width),
        _ => None,
    });
    let horizon = match (a.horizon, model_width) {
        (Some(h), _) => h,
        (None, Some(w)) => w
            .checked_sub(amod_core::env::feature_width(0))
            .ok_or_else(|| CliError::config(format!("checkpoint feature width {w} is too small")))?,
        (None, None) => DEFAULT_HORIZON,
    };
    let mut cfg = EvalConfig::new(
        EnvConfig {
            horizon,
            ..EnvConfig::default()
        },
        a.seeds.0.clone(),
    );
    cfg.episodes_per_trial = a.episodes_per_trial;
    cfg.action_mode = match a.action_mode {
        ActionArg::Mean => ActionMode::Mean,
        ActionArg::Sample => ActionMode::Sample,
    };
    let report = if disturbances.is_empty() {
        run_eval(&city, &policies, &cfg)?
    } else {
        run_disturbance(&city, &disturbances, &policies, &cfg)?
    };
    ensure_dir(&a.out)?;
    report.write(&a.out)?;
    Ok(report
        .aggregates
        .iter()
        .map(|g| {
            format!(
                "{:<16} reward {:>10.3} ± {:<8.3} served {:>8.1} reb. cost {:>8.3}",
                g.policy, g.reward.mean, g.reward.std, g.served.mean, g.rebalancing_cost.mean
            )
        })
        .collect())
}

fn sensitivity(a: &SensitivityArgs) -> Result<Vec<String>> {
    let train = a.hyper.train_config()?;
    let pool = load_pool(&a.pool)?;
    let held_out = load_pool(&a.eval_pool)?;
    let mut eval = EvalConfig::new(train.env, a.eval_seeds.0.clone());
    eval.episodes_per_trial = a.episodes_per_trial;
    let cfg = SensitivityConfig {
        sizes: a.sizes.0.clone(),
        trials: a.trials,
        episodes_per_trial: a.episodes_per_trial,
        seeds: a.seeds.0.clone(),
        train,
        eval,
    };
    let report = run_sensitivity(&pool, &held_out, &cfg)?;
    ensure_dir(&a.out)?;
    report.write(&a.out)?;
    Ok(report
        .rows
        .iter()
        .map(|r| format!("tasks {:>3} seed {:>4} reward {:.3} ± {:.3}", r.pool_size, r.seed, r.reward_mean, r.reward_std))
        .collect())
}

fn validate(a: &ValidateArgs) -> Result<Vec<String>> {
    let city = load_city(&a.scenario)?;
    let mut lines = vec![format!(
        "{}: {} stations, fleet {}, {} steps of {} min, strongly connected",
        city.id, city.num_stations, city.fleet_size, city.episode_length, city.step_minutes
    )];
    if let Some(p) = &a.disturbance {
        let ds = read_disturbances(p)?;
        crate::eval::disturbed_city(&city, &ds)?;
        lines.push(format!("{} disturbances valid", ds.len()));
    }
    Ok(lines)
}

fn generate(a: &GenerateArgs) -> Result<Vec<String>> {
    if !a.pool.starts_with("synthetic:") {
        return Err(CliError::config("generate takes a synthetic pool such as synthetic:COUNT:SEED"));
    }
    let pool = load_pool(&a.pool)?;
    ensure_dir(&a.out)?;
    pool.iter()
        .map(|c| {
            let path = a.out.join(format!("{}.json", c.id));
            c.save(&path)?;
            Ok(path.display().to_string())
        })
        .collect()
}
