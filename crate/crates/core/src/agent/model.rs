//! Recurrent graph-network actor and critic.
//!
//! Each network encodes node features with an affine layer and ReLU,
//! updates a per-node GRU hidden state, sums the updated embeddings of every
//! sender into each receiver (self-loops included) and decodes the pooled
//! embedding concatenated with the node's own. The actor turns the decoder
//! output into Dirichlet concentrations; the critic sums it over nodes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::Observation;
use crate::error::{Error, Result};
use crate::neural::{checkpoint, Graph, GruCell, Linear, ParamSet, Tensor, Var};
use crate::seed::{rng_from, Rng};

pub const DEFAULT_HIDDEN: usize = 256;

/// Lower bound added to the Softplus output so concentrations stay positive.
pub const ALPHA_FLOOR: f64 = 1e-3;

const ACTOR_TAG: u32 = 0;
const CRITIC_TAG: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub feature_width: usize,
    pub hidden: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    SingleCity,
    MultiCityZeroShot,
    FineTune,
    MetaRl,
}

impl TrainingMode {
    /// Whether evaluation should carry hidden state across the episodes of a trial.
    pub fn is_recurrent_across_episodes(self) -> bool {
        self == TrainingMode::MetaRl
    }
}

/// One of the two networks.
#[derive(Clone, Debug)]
pub struct Network {
    pub params: ParamSet,
    encoder: Linear,
    gru: GruCell,
    decoder: Linear,
}

impl Network {
    fn new(tag: u32, prefix: &str, cfg: ModelConfig, rng: &mut Rng) -> Self {
        let mut params = ParamSet::new(tag);
        let h = cfg.hidden;
        let encoder = Linear::new(&mut params, &format!("{prefix}.encoder"), cfg.feature_width, h, rng);
        let gru = GruCell::new(&mut params, &format!("{prefix}.gru"), h, h, rng);
        let decoder = Linear::new(&mut params, &format!("{prefix}.decoder"), 2 * h, 1, rng);
        Network {
            params,
            encoder,
            gru,
            decoder,
        }
    }

    /// Returns the per-node decoder output (`N x 1`) and the new hidden state.
    fn forward(&self, g: &mut Graph, x: Var, pool: Var, h: Var) -> Result<(Var, Var)> {
        let e = self.encoder.forward(g, &self.params, x)?;
        let e = g.relu(e);
        let h_next = self.gru.forward(g, &self.params, e, h)?;
        let pooled = g.matmul(pool, h_next)?;
        let z = g.concat_cols(pooled, h_next)?;
        let out = self.decoder.forward(g, &self.params, z)?;
        Ok((out, h_next))
    }
}

/// Per-node hidden states of both networks.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenBank {
    pub actor: Tensor,
    pub critic: Tensor,
    /// Which trial these states belong to.
    pub trial: u64,
}

impl HiddenBank {
    pub fn zeros(nodes: usize, hidden: usize, trial: u64) -> Self {
        HiddenBank {
            actor: Tensor::zeros(nodes, hidden),
            critic: Tensor::zeros(nodes, hidden),
            trial,
        }
    }

    pub fn nodes(&self) -> usize {
        self.actor.rows
    }

    pub fn norm(&self) -> f64 {
        (self.actor.norm_sq() + self.critic.norm_sq()).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    pub alpha: Vec<f64>,
    pub value: f64,
    pub hidden: HiddenBank,
}

/// Graph handles of one forward step.
#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    /// `N x 1` concentrations.
    pub alpha: Var,
    /// `1 x 1` state value.
    pub value: Var,
    pub actor_hidden: Var,
    pub critic_hidden: Var,
}

#[derive(Clone, Debug)]
pub struct ActorCritic {
    pub config: ModelConfig,
    pub actor: Network,
    pub critic: Network,
    /// Optimizer steps applied so far.
    pub updates: u64,
    /// How the parameters were last trained, if at all.
    pub mode: Option<TrainingMode>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config: ModelConfig,
    updates: u64,
    mode: Option<TrainingMode>,
}

/// `(A + I)ᵀ`: row `i` selects the senders into receiver `i`.
pub fn pooling_matrix(obs: &Observation) -> Tensor {
    let n = obs.num_nodes;
    let mut p = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j || obs.adjacency[j * n + i] != 0.0 {
                p.data[i * n + j] = 1.0;
            }
        }
    }
    p
}

impl ActorCritic {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = rng_from(&[seed, 0x1417]);
        let actor = Network::new(ACTOR_TAG, "actor", config, &mut rng);
        let critic = Network::new(CRITIC_TAG, "critic", config, &mut rng);
        ActorCritic {
            config,
            actor,
            critic,
            updates: 0,
            mode: None,
        }
    }

    pub fn num_params(&self) -> usize {
        self.actor.params.num_scalars() + self.critic.params.num_scalars()
    }

    pub fn zero_hidden(&self, nodes: usize, trial: u64) -> HiddenBank {
        HiddenBank::zeros(nodes, self.config.hidden, trial)
    }

    fn check_obs(&self, obs: &Observation) -> Result<()> {
        if obs.num_features != self.config.feature_width {
            return Err(Error::Dimension(format!(
                "observation has {} features per node, model expects {}",
                obs.num_features, self.config.feature_width
            )));
        }
        Ok(())
    }

    /// Records one step on `g`. `actor_h` and `critic_h` are `N x hidden`.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        obs: &Observation,
        actor_h: Var,
        critic_h: Var,
    ) -> Result<StepVars> {
        self.check_obs(obs)?;
        let n = obs.num_nodes;
        for h in [actor_h, critic_h] {
            if g.value(h).shape() != [n, self.config.hidden] {
                return Err(Error::Dimension(format!(
                    "hidden state shape {:?} does not match {n} nodes x {} hidden",
                    g.value(h).shape(),
                    self.config.hidden
                )));
            }
        }
        let x = g.input(Tensor::from_vec(n, obs.num_features, obs.features.clone()));
        let pool = g.input(pooling_matrix(obs));
        let (a, actor_hidden) = self.actor.forward(g, x, pool, actor_h)?;
        let a = g.softplus(a);
        let alpha = g.add_scalar(a, ALPHA_FLOOR);
        let (c, critic_hidden) = self.critic.forward(g, x, pool, critic_h)?;
        let value = g.sum(c);
        Ok(StepVars {
            alpha,
            value,
            actor_hidden,
            critic_hidden,
        })
    }

    /// Concentrations, value and next hidden state; `hidden` is not modified.
    pub fn policy_forward(&self, obs: &Observation, hidden: &HiddenBank) -> Result<PolicyOutput> {
        if hidden.nodes() != obs.num_nodes {
            return Err(Error::Dimension(format!(
                "hidden bank has {} nodes, observation has {}",
                hidden.nodes(),
                obs.num_nodes
            )));
        }
        let mut g = Graph::new();
        let ah = g.input(hidden.actor.clone());
        let ch = g.input(hidden.critic.clone());
        let v = self.forward_graph(&mut g, obs, ah, ch)?;
        Ok(PolicyOutput {
            alpha: g.value(v.alpha).data.clone(),
            value: g.value(v.value).item(),
            hidden: HiddenBank {
                actor: g.value(v.actor_hidden).clone(),
                critic: g.value(v.critic_hidden).clone(),
                trial: hidden.trial,
            },
        })
    }

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        [&self.actor.params, &self.critic.params]
            .into_iter()
            .flat_map(|ps| ps.names.iter().cloned().zip(ps.values.iter().cloned()))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = CheckpointMeta {
            config: self.config,
            updates: self.updates,
            mode: self.mode,
        };
        checkpoint::save(path, &self.named_tensors(), serde_json::to_value(meta)?)
    }

    /// Loads a checkpoint; the architecture comes from its manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let manifest = checkpoint::load_manifest(path)?;
        let meta: CheckpointMeta = serde_json::from_value(manifest.meta)
            .map_err(|e| Error::Checkpoint(format!("bad manifest metadata: {e}")))?;
        let mut model = ActorCritic::new(meta.config, 0);
        model.updates = meta.updates;
        model.mode = meta.mode;
        let mut tensors = checkpoint::load(path)?;
        let critic = tensors.split_off(model.actor.params.len().min(tensors.len()));
        model.actor.params.load_values(tensors)?;
        model.critic.params.load_values(critic)?;
        Ok(model)
    }

    /// Loads a checkpoint and checks it fits observations of `feature_width`.
    pub fn load_for(path: &Path, feature_width: usize) -> Result<Self> {
        let model = Self::load(path)?;
        if model.config.feature_width != feature_width {
            return Err(Error::Dimension(format!(
                "checkpoint expects {} features per node, scenario provides {feature_width}",
                model.config.feature_width
            )));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Env, EnvConfig};
    use crate::scenario::{generate_synthetic_city, SynthCityParams};
    use rand::seq::SliceRandom;
    use rand::Rng as _;

    fn random_obs(n: usize, f: usize, seed: u64) -> Observation {
        let mut rng = rng_from(&[seed]);
        let mut adjacency: Vec<f64> = (0..n * n).map(|_| f64::from(rng.random_bool(0.4) as u8)).collect();
        for i in 0..n {
            adjacency[i * n + i] = 1.0;
        }
        Observation {
            num_nodes: n,
            num_features: f,
            adjacency,
            features: (0..n * f).map(|_| rng.random_range(-2.0..2.0)).collect(),
            outbound_demand: vec![0.0; n],
            t: 0,
        }
    }

    fn cfg() -> ModelConfig {
        ModelConfig {
            feature_width: 5,
            hidden: 8,
        }
    }

    #[test]
    fn identity_adjacency_pools_to_self() {
        let mut obs = random_obs(4, 5, 1);
        obs.adjacency = (0..16).map(|k| if k % 5 == 0 { 1.0 } else { 0.0 }).collect();
        let p = pooling_matrix(&obs);
        assert_eq!(p.data, obs.adjacency);
    }

    #[test]
    fn pooling_sums_senders_into_receivers() {
        // single directed edge 0 -> 1
        let mut obs = random_obs(2, 5, 2);
        obs.adjacency = vec![0.0, 1.0, 0.0, 0.0];
        let p = pooling_matrix(&obs);
        assert_eq!(p.data, vec![1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn permutation_equivariance() {
        let model = ActorCritic::new(cfg(), 3);
        let n = 6;
        let obs = random_obs(n, 5, 4);
        let mut hidden = model.zero_hidden(n, 0);
        hidden.actor = Tensor::uniform(n, 8, 0.5, &mut rng_from(&[5]));
        hidden.critic = Tensor::uniform(n, 8, 0.5, &mut rng_from(&[6]));
        let base = model.policy_forward(&obs, &hidden).unwrap();

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng_from(&[7]));
        // new node k is old node perm[k]
        let mut pobs = obs.clone();
        let mut ph = hidden.clone();
        for k in 0..n {
            for l in 0..n {
                pobs.adjacency[k * n + l] = obs.adjacency[perm[k] * n + perm[l]];
            }
            for f in 0..5 {
                pobs.features[k * 5 + f] = obs.features[perm[k] * 5 + f];
            }
            for c in 0..8 {
                ph.actor.data[k * 8 + c] = hidden.actor.data[perm[k] * 8 + c];
                ph.critic.data[k * 8 + c] = hidden.critic.data[perm[k] * 8 + c];
            }
        }
        let out = model.policy_forward(&pobs, &ph).unwrap();
        for k in 0..n {
            assert!((out.alpha[k] - base.alpha[perm[k]]).abs() < 1e-12);
        }
        assert!((out.value - base.value).abs() < 1e-10);
    }

    #[test]
    fn alpha_respects_floor_and_inputs_untouched() {
        let model = ActorCritic::new(cfg(), 8);
        for seed in 0..50 {
            let mut obs = random_obs(5, 5, seed);
            obs.features.iter_mut().for_each(|x| *x *= 100.0);
            let hidden = model.zero_hidden(5, 0);
            let out = model.policy_forward(&obs, &hidden).unwrap();
            assert!(out.alpha.iter().all(|&a| a >= ALPHA_FLOOR));
            assert_eq!(hidden, model.zero_hidden(5, 0));
        }
    }

    #[test]
    fn same_parameters_run_on_any_city_size() {
        let model = ActorCritic::new(cfg(), 9);
        let shapes: Vec<_> = model.actor.params.values.iter().map(Tensor::shape).collect();
        for n in [2, 7, 30] {
            let obs = random_obs(n, 5, n as u64);
            let out = model.policy_forward(&obs, &model.zero_hidden(n, 0)).unwrap();
            assert_eq!(out.alpha.len(), n);
        }
        let after: Vec<_> = model.actor.params.values.iter().map(Tensor::shape).collect();
        assert_eq!(shapes, after);
    }

    #[test]
    fn mismatches_rejected() {
        let model = ActorCritic::new(cfg(), 10);
        let obs = random_obs(4, 5, 11);
        assert!(model.policy_forward(&obs, &model.zero_hidden(3, 0)).is_err());
        let wide = random_obs(4, 6, 12);
        assert!(model.policy_forward(&wide, &model.zero_hidden(4, 0)).is_err());
    }

    #[test]
    fn actor_and_critic_share_nothing() {
        let model = ActorCritic::new(cfg(), 13);
        assert_ne!(model.actor.params.tag(), model.critic.params.tag());
        assert!(model.actor.params.names.iter().all(|n| n.starts_with("actor.")));
        assert!(model.critic.params.names.iter().all(|n| n.starts_with("critic.")));
    }

    #[test]
    fn checkpoint_roundtrip_and_width_check() {
        let city = generate_synthetic_city(&SynthCityParams::desk_scale(), 1).unwrap();
        let env_cfg = EnvConfig::default();
        let mut model = ActorCritic::new(
            ModelConfig {
                feature_width: env_cfg.feature_width(),
                hidden: 4,
            },
            14,
        );
        model.updates = 7;
        model.mode = Some(TrainingMode::MetaRl);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.ckpt");
        model.save(&p).unwrap();
        let back = ActorCritic::load_for(&p, env_cfg.feature_width()).unwrap();
        assert_eq!(back.updates, 7);
        assert_eq!(back.mode, Some(TrainingMode::MetaRl));
        assert_eq!(back.actor.params.values, model.actor.params.values);
        assert_eq!(back.critic.params.values, model.critic.params.values);
        let (_, obs) = Env::new(&city, env_cfg, 0);
        let h = model.zero_hidden(obs.num_nodes, 0);
        assert_eq!(
            model.policy_forward(&obs, &h).unwrap(),
            back.policy_forward(&obs, &h).unwrap()
        );
        assert!(ActorCritic::load_for(&p, env_cfg.feature_width() + 1).is_err());
    }
}
