//! Controllers usable with [`run_episode`](crate::env::run_episode) and
//! [`run_trial`](crate::env::run_trial).

use serde::{Deserialize, Serialize};

use super::model::{ActorCritic, HiddenBank};
use crate::env::{Action, DesiredDistribution, Env, Observation, Policy};
use crate::error::Result;
use crate::flowopt::{solve_mpc_forecast, solve_mpc_oracle};
use crate::neural::dirichlet;
use crate::seed::{rng_from, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Desired distribution drawn from `Dir(1, ..., 1)` every step.
    Random,
    /// Equal share of idle vehicles at every station.
    Ed,
}

pub struct RandomPolicy {
    rng: Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy {
            rng: rng_from(&[seed, 0x4A4D]),
        }
    }

    pub fn draw(&mut self, n: usize) -> Result<DesiredDistribution> {
        DesiredDistribution::from_weights(&dirichlet::sample(&vec![1.0; n], &mut self.rng)?)
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, _env: &Env<'_>, obs: &Observation) -> Result<Action> {
        Ok(Action::Distribution(self.draw(obs.num_nodes)?))
    }
}

pub struct EqualDistribution;

impl Policy for EqualDistribution {
    fn act(&mut self, _env: &Env<'_>, obs: &Observation) -> Result<Action> {
        Ok(Action::Distribution(DesiredDistribution::uniform(obs.num_nodes)))
    }
}

pub fn baseline_policy(kind: BaselineKind, seed: u64) -> Box<dyn Policy> {
    match kind {
        BaselineKind::Random => Box::new(RandomPolicy::new(seed)),
        BaselineKind::Ed => Box::new(EqualDistribution),
    }
}

/// Receding-horizon planner that knows the realized future requests.
pub struct MpcOracle {
    pub horizon: usize,
}

impl Policy for MpcOracle {
    fn act(&mut self, env: &Env<'_>, _obs: &Observation) -> Result<Action> {
        let st = env.state();
        let plan = solve_mpc_oracle(env.city(), st, self.horizon, &st.demand[st.t..])?;
        Ok(Action::Targets(plan.targets))
    }
}

/// Receding-horizon planner using the demand rates as forecast.
pub struct MpcForecast {
    pub horizon: usize,
}

impl Policy for MpcForecast {
    fn act(&mut self, env: &Env<'_>, _obs: &Observation) -> Result<Action> {
        let plan = solve_mpc_forecast(env.city(), env.state(), self.horizon)?;
        Ok(Action::Targets(plan.targets))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    /// Dirichlet mean `α / Σα`.
    Mean,
    /// A draw from `Dir(α)`.
    Sample,
}

/// A trained actor-critic driving the environment.
///
/// With `carry_hidden`, hidden state persists until [`begin_trial`]
/// (the meta-RL protocol); otherwise it restarts at every episode's first step.
///
/// [`begin_trial`]: RecurrentPolicy::begin_trial
pub struct RecurrentPolicy {
    pub model: ActorCritic,
    pub mode: ActionMode,
    pub carry_hidden: bool,
    hidden: Option<HiddenBank>,
    trial: u64,
    rng: Rng,
}

impl RecurrentPolicy {
    pub fn new(model: ActorCritic, mode: ActionMode, carry_hidden: bool, seed: u64) -> Self {
        RecurrentPolicy {
            model,
            mode,
            carry_hidden,
            hidden: None,
            trial: 0,
            rng: rng_from(&[seed, 0x9E11]),
        }
    }

    /// Zeroes the hidden state.
    pub fn begin_trial(&mut self) {
        self.hidden = None;
        self.trial += 1;
    }

    pub fn hidden(&self) -> Option<&HiddenBank> {
        self.hidden.as_ref()
    }
}

impl Policy for RecurrentPolicy {
    fn act(&mut self, _env: &Env<'_>, obs: &Observation) -> Result<Action> {
        if obs.t == 0 && !self.carry_hidden {
            self.hidden = None;
        }
        let hidden = match self.hidden.take() {
            Some(h) if h.nodes() == obs.num_nodes => h,
            _ => self.model.zero_hidden(obs.num_nodes, self.trial),
        };
        let out = self.model.policy_forward(obs, &hidden)?;
        self.hidden = Some(out.hidden);
        let a = match self.mode {
            ActionMode::Mean => dirichlet::mean(&out.alpha),
            ActionMode::Sample => dirichlet::sample(&out.alpha, &mut self.rng)?,
        };
        Ok(Action::Distribution(DesiredDistribution::from_weights(&a)?))
    }
}
