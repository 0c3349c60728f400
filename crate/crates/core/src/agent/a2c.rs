//! Advantage actor-critic losses and updates.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::model::ActorCritic;
use crate::error::{Error, Result};
use crate::neural::{AdamConfig, AdamState, Graph, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct A2cConfig {
    pub gamma: f64,
    pub adam: AdamConfig,
    /// Global L2 norm bound applied to each network's gradient.
    pub grad_clip: f64,
    pub entropy_coef: f64,
    /// Compute returns across episode boundaries and update once per trial.
    pub trial_returns: bool,
    /// Divide rewards by the per-city running mean absolute episode reward.
    pub scale_rewards: bool,
}

impl Default for A2cConfig {
    fn default() -> Self {
        A2cConfig {
            gamma: 0.97,
            adam: AdamConfig::default(),
            grad_clip: 10.0,
            entropy_coef: 0.0,
            trial_returns: false,
            scale_rewards: true,
        }
    }
}

/// Steps recorded on one graph. Rewards are raw currency.
#[derive(Clone, Debug, Default)]
pub struct RolloutBuffer {
    pub log_probs: Vec<Var>,
    pub values: Vec<Var>,
    pub entropies: Vec<Var>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
}

impl RolloutBuffer {
    pub fn push(&mut self, log_prob: Var, value: Var, entropy: Option<Var>, reward: f64, done: bool) {
        self.log_probs.push(log_prob);
        self.values.push(value);
        self.entropies.extend(entropy);
        self.rewards.push(reward);
        self.dones.push(done);
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// `R_t = r_t + γ R_{t+1}`, restarting after every `done` when `reset_at_done`.
pub fn discounted_returns(rewards: &[f64], dones: &[bool], gamma: f64, reset_at_done: bool) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        if reset_at_done && dones[t] {
            acc = 0.0;
        }
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct A2cLosses {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
}

/// Builds `-Σ A_t log π(a_t) + Σ (R_t - V_t)² - β Σ H_t` on `g`, with the
/// advantages held constant. `reward_scale` divides every reward first.
pub fn a2c_loss(
    g: &mut Graph,
    buf: &RolloutBuffer,
    cfg: &A2cConfig,
    reward_scale: f64,
) -> Result<(Var, A2cLosses)> {
    if buf.is_empty() {
        return Err(Error::Precondition("empty rollout buffer".into()));
    }
    if buf.log_probs.len() != buf.len() || buf.values.len() != buf.len() || buf.dones.len() != buf.len()
    {
        return Err(Error::Dimension("rollout buffer columns differ in length".into()));
    }
    let rewards: Vec<f64> = buf.rewards.iter().map(|r| r / reward_scale).collect();
    let returns = discounted_returns(&rewards, &buf.dones, cfg.gamma, !cfg.trial_returns);
    let mut terms = Vec::with_capacity(2 * buf.len());
    let mut losses = A2cLosses::default();
    for t in 0..buf.len() {
        let v = g.value(buf.values[t]).item();
        let adv = returns[t] - v;
        let lp = g.value(buf.log_probs[t]).item();
        losses.policy -= adv * lp;
        losses.value += adv * adv;
        terms.push(g.scale(buf.log_probs[t], -adv));
        let d = g.add_scalar(buf.values[t], -returns[t]);
        terms.push(g.mul(d, d)?);
    }
    if cfg.entropy_coef != 0.0 {
        for &h in &buf.entropies {
            losses.entropy += g.value(h).item();
            terms.push(g.scale(h, -cfg.entropy_coef));
        }
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    Ok((total, losses))
}

/// Running mean of absolute episode reward per city.
#[derive(Clone, Debug, Default)]
pub struct RewardScaler {
    stats: HashMap<String, (f64, u64)>,
}

impl RewardScaler {
    pub fn observe(&mut self, city: &str, episode_reward: f64) {
        let e = self.stats.entry(city.to_string()).or_insert((0.0, 0));
        e.0 += episode_reward.abs();
        e.1 += 1;
    }

    /// Current scale; 1 until a nonzero reward has been seen.
    pub fn scale(&self, city: &str) -> f64 {
        match self.stats.get(city) {
            Some(&(sum, n)) if sum > 0.0 => sum / n as f64,
            _ => 1.0,
        }
    }
}

/// Model plus one optimizer per network.
#[derive(Clone, Debug)]
pub struct Learner {
    pub model: ActorCritic,
    pub cfg: A2cConfig,
    actor_opt: AdamState,
    critic_opt: AdamState,
    pub scaler: RewardScaler,
}

impl Learner {
    pub fn new(model: ActorCritic, cfg: A2cConfig) -> Self {
        let actor_opt = AdamState::new(cfg.adam, &model.actor.params);
        let critic_opt = AdamState::new(cfg.adam, &model.critic.params);
        Learner {
            model,
            cfg,
            actor_opt,
            critic_opt,
            scaler: RewardScaler::default(),
        }
    }

    /// One A2C update from `buf`: backward, clip, one Adam step per network.
    pub fn update(&mut self, g: &mut Graph, buf: &RolloutBuffer, reward_scale: f64) -> Result<A2cLosses> {
        let (loss, losses) = a2c_loss(g, buf, &self.cfg, reward_scale)?;
        let grads = g.backward(loss)?;
        let m = &mut self.model;
        m.actor.params.zero_grad();
        m.critic.params.zero_grad();
        m.actor.params.accumulate(&grads);
        m.critic.params.accumulate(&grads);
        m.actor.params.clip_grad_norm(self.cfg.grad_clip);
        m.critic.params.clip_grad_norm(self.cfg.grad_clip);
        self.actor_opt.update(&mut m.actor.params)?;
        self.critic_opt.update(&mut m.critic.params)?;
        m.updates += 1;
        Ok(losses)
    }
}
