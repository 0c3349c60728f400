//! Single-city, multi-city, fine-tuning and meta-training loops.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::a2c::{A2cConfig, A2cLosses, Learner, RolloutBuffer};
use super::model::{ActorCritic, HiddenBank, ModelConfig, TrainingMode, DEFAULT_HIDDEN};
use crate::env::{DesiredDistribution, Env, EnvConfig};
use crate::error::{Error, Result};
use crate::neural::{dirichlet, Graph, Var};
use crate::scenario::City;
use crate::seed::{derive_seed, rng_from, Rng};

const TASK_STREAM: u64 = 0x7A5C;
const ACTION_STREAM: u64 = 0xAC71;
const EPISODE_STREAM: u64 = 0xE915;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: usize,
    pub env: EnvConfig,
    pub a2c: A2cConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: DEFAULT_HIDDEN,
            env: EnvConfig::default(),
            a2c: A2cConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            feature_width: self.env.feature_width(),
            hidden: self.hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeLog {
    /// Running episode index over the whole run.
    pub episode: usize,
    pub trial: usize,
    pub task: String,
    pub reward: f64,
    /// Losses of the update that closed this episode, if one did.
    pub policy_loss: Option<f64>,
    pub value_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialLog {
    pub trial: usize,
    pub task: String,
    pub episodes: usize,
    pub mean_reward: f64,
    pub first_reward: f64,
    pub final_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: ActorCritic,
    pub episodes: Vec<EpisodeLog>,
    pub trials: Vec<TrialLog>,
}

/// Instrumentation points of the training loops.
#[derive(Clone, Debug, PartialEq)]
pub enum HookEvent {
    EpisodeStart {
        trial: usize,
        episode: usize,
        /// Hidden bank about to be fed to the first step.
        hidden_norm: f64,
        hidden_trial: u64,
    },
    EpisodeEnd {
        trial: usize,
        episode: usize,
        reward: f64,
    },
}

pub type Hook<'a> = &'a mut dyn FnMut(&HookEvent);

struct Runner<'h> {
    learner: Learner,
    env_cfg: EnvConfig,
    seed: u64,
    actions: Rng,
    episodes: Vec<EpisodeLog>,
    trials: Vec<TrialLog>,
    hook: Option<Hook<'h>>,
}

impl Runner<'_> {
    fn emit(&mut self, e: HookEvent) {
        if let Some(h) = self.hook.as_mut() {
            h(&e);
        }
    }

    /// Runs `n` episodes of one trial on `city`. With `carry`, hidden state and
    /// history features cross episode boundaries; otherwise both restart.
    fn trial(&mut self, city: &City, trial: usize, n: usize, carry: bool) -> Result<()> {
        let nodes = city.num_stations;
        let trial_returns = carry && self.learner.cfg.trial_returns;
        let mut hidden = self.learner.model.zero_hidden(nodes, trial as u64);
        let mut history: Option<(Vec<f64>, f64, bool)> = None;
        let mut g = Graph::new();
        let mut buf = RolloutBuffer::default();
        let mut live: Option<(Var, Var)> = None;
        let mut rewards = Vec::with_capacity(n);
        let mut loss_sum = A2cLosses::default();
        let mut updates = 0usize;

        for ep in 0..n {
            if !carry {
                hidden = self.learner.model.zero_hidden(nodes, trial as u64);
                history = None;
                live = None;
            }
            self.emit(HookEvent::EpisodeStart {
                trial,
                episode: ep,
                hidden_norm: hidden.norm(),
                hidden_trial: hidden.trial,
            });
            let ep_seed = derive_seed(&[self.seed, EPISODE_STREAM, trial as u64, ep as u64]);
            let (mut env, mut obs) = Env::new(city, self.env_cfg, ep_seed);
            if let Some((a, r, d)) = history.take() {
                obs = env.set_history(a, r, d);
            }
            let (mut ah, mut ch) = match live {
                Some(v) => v,
                None => (g.input(hidden.actor.clone()), g.input(hidden.critic.clone())),
            };
            let mut total = 0.0;
            while !env.is_done() {
                let v = self.learner.model.forward_graph(&mut g, &obs, ah, ch)?;
                let alpha = g.value(v.alpha).data.clone();
                let a = dirichlet::sample(&alpha, &mut self.actions)?;
                let lp = dirichlet::log_prob_var(&mut g, v.alpha, &a)?;
                let ent = if self.learner.cfg.entropy_coef != 0.0 {
                    Some(dirichlet::entropy_var(&mut g, v.alpha)?)
                } else {
                    None
                };
                let res = env.step(&DesiredDistribution::from_weights(&a)?)?;
                buf.push(lp, v.value, ent, res.reward, res.done);
                total += res.reward;
                ah = v.actor_hidden;
                ch = v.critic_hidden;
                obs = res.observation;
            }
            hidden = HiddenBank {
                actor: g.value(ah).clone(),
                critic: g.value(ch).clone(),
                trial: trial as u64,
            };
            let st = env.state();
            history = Some((st.prev_action.clone(), st.prev_reward, st.prev_done));
            self.learner.scaler.observe(&city.id, total);
            rewards.push(total);

            let mut log = EpisodeLog {
                episode: self.episodes.len(),
                trial,
                task: city.id.clone(),
                reward: total,
                policy_loss: None,
                value_loss: None,
            };
            if !trial_returns || ep + 1 == n {
                let scale = if self.learner.cfg.scale_rewards {
                    self.learner.scaler.scale(&city.id)
                } else {
                    1.0
                };
                let l = self.learner.update(&mut g, &buf, scale)?;
                log.policy_loss = Some(l.policy);
                log.value_loss = Some(l.value);
                loss_sum.policy += l.policy;
                loss_sum.value += l.value;
                updates += 1;
                g = Graph::new();
                buf = RolloutBuffer::default();
                live = None;
            } else {
                live = Some((ah, ch));
            }
            self.episodes.push(log);
            self.emit(HookEvent::EpisodeEnd {
                trial,
                episode: ep,
                reward: total,
            });
        }
        let k = updates.max(1) as f64;
        self.trials.push(TrialLog {
            trial,
            task: city.id.clone(),
            episodes: n,
            mean_reward: rewards.iter().sum::<f64>() / n as f64,
            first_reward: rewards[0],
            final_reward: rewards[n - 1],
            policy_loss: loss_sum.policy / k,
            value_loss: loss_sum.value / k,
        });
        Ok(())
    }
}

fn check_pool(pool: &[City]) -> Result<()> {
    if pool.is_empty() {
        return Err(Error::Precondition("task pool is empty".into()));
    }
    Ok(())
}

fn runner<'h>(model: ActorCritic, cfg: &TrainConfig, seed: u64, hook: Option<Hook<'h>>) -> Result<Runner<'h>> {
    if model.config.feature_width != cfg.env.feature_width() {
        return Err(Error::Dimension(format!(
            "model expects {} features per node, environment provides {}",
            model.config.feature_width,
            cfg.env.feature_width()
        )));
    }
    Ok(Runner {
        learner: Learner::new(model, cfg.a2c),
        env_cfg: cfg.env,
        seed,
        actions: rng_from(&[seed, ACTION_STREAM]),
        episodes: Vec::new(),
        trials: Vec::new(),
        hook,
    })
}

impl Runner<'_> {
    fn finish(self, mode: TrainingMode) -> TrainOutput {
        let mut model = self.learner.model;
        model.mode = Some(mode);
        TrainOutput {
            model,
            episodes: self.episodes,
            trials: self.trials,
        }
    }
}

/// Meta-training from freshly initialized parameters.
pub fn meta_train(
    pool: &[City],
    trials: usize,
    episodes_per_trial: usize,
    cfg: &TrainConfig,
    seed: u64,
    hook: Option<Hook<'_>>,
) -> Result<TrainOutput> {
    let model = ActorCritic::new(cfg.model_config(), seed);
    meta_train_from(model, pool, trials, episodes_per_trial, cfg, seed, hook)
}

/// Trials of `episodes_per_trial` episodes on tasks drawn uniformly from
/// `pool`. Hidden state is zeroed at each trial start and carried across the
/// trial's episodes together with the previous action, reward and done flag.
pub fn meta_train_from(
    model: ActorCritic,
    pool: &[City],
    trials: usize,
    episodes_per_trial: usize,
    cfg: &TrainConfig,
    seed: u64,
    hook: Option<Hook<'_>>,
) -> Result<TrainOutput> {
    check_pool(pool)?;
    if episodes_per_trial < 1 {
        return Err(Error::Precondition("a trial needs at least one episode".into()));
    }
    let mut tasks = rng_from(&[seed, TASK_STREAM]);
    let mut r = runner(model, cfg, seed, hook)?;
    for trial in 0..trials {
        let city = &pool[tasks.random_range(0..pool.len())];
        r.trial(city, trial, episodes_per_trial, true)?;
    }
    Ok(r.finish(TrainingMode::MetaRl))
}

/// Non-meta training with hidden state reset every episode and one update
/// per episode. `SingleCity` takes exactly one task; `MultiCityZeroShot`
/// draws a task uniformly each episode.
pub fn train_standard(
    mode: TrainingMode,
    tasks: &[City],
    episodes: usize,
    cfg: &TrainConfig,
    seed: u64,
    hook: Option<Hook<'_>>,
) -> Result<TrainOutput> {
    match mode {
        TrainingMode::SingleCity if tasks.len() != 1 => {
            return Err(Error::Precondition(format!(
                "single-city training takes one task, got {}",
                tasks.len()
            )))
        }
        TrainingMode::MultiCityZeroShot => check_pool(tasks)?,
        TrainingMode::FineTune | TrainingMode::MetaRl => {
            return Err(Error::Precondition(format!("{mode:?} is not a standard training mode")))
        }
        _ => {}
    }
    let model = ActorCritic::new(cfg.model_config(), seed);
    let mut picker = rng_from(&[seed, TASK_STREAM]);
    let mut r = runner(model, cfg, seed, hook)?;
    for ep in 0..episodes {
        let city = &tasks[picker.random_range(0..tasks.len())];
        r.trial(city, ep, 1, false)?;
    }
    Ok(r.finish(mode))
}

/// Adapts a copy of `model` to `city` with `n` episodes and one update per
/// episode. Optimizer moments start from zero.
pub fn fine_tune(model: &ActorCritic, city: &City, n: usize, cfg: &TrainConfig, seed: u64) -> Result<TrainOutput> {
    if n < 1 {
        return Err(Error::Precondition("fine-tuning needs at least one episode".into()));
    }
    let mut r = runner(model.clone(), cfg, seed, None)?;
    for ep in 0..n {
        r.trial(city, ep, 1, false)?;
    }
    Ok(r.finish(TrainingMode::FineTune))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Graph;
    use crate::scenario::{generate_synthetic_city, SynthCityParams};

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            hidden: 8,
            ..TrainConfig::default()
        }
    }

    fn pool(k: usize) -> Vec<City> {
        (0..k)
            .map(|s| {
                let mut p = SynthCityParams::desk_scale();
                p.episode_length = 6;
                generate_synthetic_city(&p, 100 + s as u64).unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_trials_is_identity() {
        let cfg = small_cfg();
        let model = ActorCritic::new(cfg.model_config(), 1);
        let out = meta_train_from(model.clone(), &pool(2), 0, 3, &cfg, 1, None).unwrap();
        assert_eq!(out.model.actor.params.values, model.actor.params.values);
        assert_eq!(out.model.critic.params.values, model.critic.params.values);
        assert_eq!(out.model.updates, 0);
    }

    #[test]
    fn hidden_reset_at_trial_start_and_carried_within() {
        let mut events = Vec::new();
        let mut hook = |e: &HookEvent| events.push(e.clone());
        meta_train(&pool(2), 3, 3, &small_cfg(), 2, Some(&mut hook)).unwrap();
        let starts: Vec<_> = events
            .iter()
            .filter_map(|e| match e {
                HookEvent::EpisodeStart {
                    trial,
                    episode,
                    hidden_norm,
                    hidden_trial,
                } => Some((*trial, *episode, *hidden_norm, *hidden_trial)),
                _ => None,
            })
            .collect();
        assert_eq!(starts.len(), 9);
        for (trial, episode, norm, owner) in starts {
            assert_eq!(owner, trial as u64);
            if episode == 0 {
                assert_eq!(norm, 0.0);
            } else {
                assert!(norm > 0.0);
            }
        }
    }

    #[test]
    fn standard_training_resets_every_episode() {
        let mut norms = Vec::new();
        let mut hook = |e: &HookEvent| {
            if let HookEvent::EpisodeStart { hidden_norm, .. } = e {
                norms.push(*hidden_norm);
            }
        };
        train_standard(TrainingMode::MultiCityZeroShot, &pool(2), 4, &small_cfg(), 3, Some(&mut hook))
            .unwrap();
        assert_eq!(norms, vec![0.0; 4]);
    }

    #[test]
    fn deterministic_in_seed() {
        let p = pool(1);
        let a = train_standard(TrainingMode::SingleCity, &p, 3, &small_cfg(), 4, None).unwrap();
        let b = train_standard(TrainingMode::SingleCity, &p, 3, &small_cfg(), 4, None).unwrap();
        assert_eq!(a.model.actor.params.values, b.model.actor.params.values);
        assert_eq!(a.model.critic.params.values, b.model.critic.params.values);
        assert_eq!(a.episodes, b.episodes);
        let c = train_standard(TrainingMode::SingleCity, &p, 3, &small_cfg(), 5, None).unwrap();
        assert_ne!(a.model.actor.params.values, c.model.actor.params.values);
    }

    #[test]
    fn mode_and_pool_checks() {
        let p = pool(2);
        let cfg = small_cfg();
        assert!(train_standard(TrainingMode::SingleCity, &p, 1, &cfg, 0, None).is_err());
        assert!(train_standard(TrainingMode::MetaRl, &p, 1, &cfg, 0, None).is_err());
        assert!(train_standard(TrainingMode::MultiCityZeroShot, &[], 1, &cfg, 0, None).is_err());
        assert!(meta_train(&[], 1, 1, &cfg, 0, None).is_err());
        assert!(meta_train(&p, 1, 0, &cfg, 0, None).is_err());
    }

    #[test]
    fn fine_tune_bookkeeping() {
        let p = pool(2);
        let cfg = small_cfg();
        let base = train_standard(TrainingMode::MultiCityZeroShot, &p, 2, &cfg, 6, None).unwrap().model;
        let snapshot = base.clone();
        assert!(fine_tune(&base, &p[0], 0, &cfg, 7).is_err());
        let tuned = fine_tune(&base, &p[0], 1, &cfg, 7).unwrap().model;
        assert_eq!(tuned.updates, base.updates + 1);
        assert_eq!(tuned.mode, Some(TrainingMode::FineTune));
        assert_eq!(base.actor.params.values, snapshot.actor.params.values);
        assert_ne!(tuned.actor.params.values, base.actor.params.values);
        let again = fine_tune(&base, &p[0], 1, &cfg, 7).unwrap().model;
        assert_eq!(again.actor.params.values, tuned.actor.params.values);
    }

    #[test]
    fn trial_returns_update_once_per_trial() {
        let mut cfg = small_cfg();
        cfg.a2c.trial_returns = true;
        let out = meta_train(&pool(2), 2, 3, &cfg, 8, None).unwrap();
        assert_eq!(out.model.updates, 2);
        let closed: Vec<bool> = out.episodes.iter().map(|e| e.policy_loss.is_some()).collect();
        assert_eq!(closed, vec![false, false, true, false, false, true]);
        let per_episode = meta_train(&pool(2), 2, 3, &small_cfg(), 8, None).unwrap();
        assert_eq!(per_episode.model.updates, 6);
    }

    /// One update on a real rollout reaches every parameter tensor.
    #[test]
    fn every_parameter_receives_gradient() {
        let p = pool(1);
        let cfg = small_cfg();
        let model = ActorCritic::new(cfg.model_config(), 9);
        let city = &p[0];
        let (mut env, mut obs) = Env::new(city, cfg.env, 1);
        let mut g = Graph::new();
        let mut ah = g.input(model.zero_hidden(city.num_stations, 0).actor);
        let mut ch = g.input(model.zero_hidden(city.num_stations, 0).critic);
        let mut buf = RolloutBuffer::default();
        let mut rng = rng_from(&[1]);
        while !env.is_done() {
            let v = model.forward_graph(&mut g, &obs, ah, ch).unwrap();
            let a = dirichlet::sample(&g.value(v.alpha).data.clone(), &mut rng).unwrap();
            let lp = dirichlet::log_prob_var(&mut g, v.alpha, &a).unwrap();
            let res = env.step(&DesiredDistribution::from_weights(&a).unwrap()).unwrap();
            buf.push(lp, v.value, None, res.reward, res.done);
            ah = v.actor_hidden;
            ch = v.critic_hidden;
            obs = res.observation;
        }
        assert!(buf.rewards.iter().any(|&r| r != 0.0));
        let mut learner = Learner::new(model, cfg.a2c);
        learner.update(&mut g, &buf, 1.0).unwrap();
        for ps in [&learner.model.actor.params, &learner.model.critic.params] {
            for (name, grad) in ps.names.iter().zip(&ps.grads) {
                assert!(grad.norm_sq() > 0.0, "{name} has zero gradient");
            }
        }
    }
}
