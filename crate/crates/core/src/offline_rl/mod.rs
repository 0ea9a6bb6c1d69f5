//! Offline agents trained from a fixed [`TransitionSet`]: TD3+BC, IQL and behavior cloning.
//!
//! Every agent z-scores states with dataset statistics, uses ReLU MLPs, and
//! exposes a deterministic policy `center + scale · tanh(net(s))` for evaluation.

pub mod bc;
pub mod common;
pub mod iql;
pub mod td3bc;


use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, NetRecord};
use crate::dataset::TransitionSet;
use crate::envs::make_env;
use crate::error::{Error, Result};
use crate::nn::MlpParams;
use crate::stats::Normalizer;

pub use bc::train_bc;
pub use common::{Batch, PreparedData, Squash};
pub use iql::train_iql;
pub use td3bc::train_td3bc;

pub const AGENT_FORMAT: &str = "orl-impute/agent/v1";

/// Gradient steps per training run. Sized so a full multi-seed grid fits on one core.
pub const DEFAULT_TRAINING_STEPS: usize = 5_000;
/// Hidden widths of every actor, critic and value network.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Td3bc,
    Iql,
    Bc,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Td3bc => "td3bc",
            Algorithm::Iql => "iql",
            Algorithm::Bc => "bc",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Algorithm::Td3bc => "TD3BC",
            Algorithm::Iql => "IQL",
            Algorithm::Bc => "BC",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['+', '-', '_'], "").as_str() {
            "td3bc" => Ok(Algorithm::Td3bc),
            "iql" => Ok(Algorithm::Iql),
            "bc" => Ok(Algorithm::Bc),
            _ => Err(Error::invalid(format!("unknown algorithm `{s}`; expected td3bc, iql or bc"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Td3bcParams {
    pub alpha: f64,
    pub policy_noise: f64,
    pub noise_clip: f64,
    pub policy_delay: usize,
}

impl Default for Td3bcParams {
    fn default() -> Self {
        Self {
            alpha: 2.5,
            policy_noise: 0.2,
            noise_clip: 0.5,
            policy_delay: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IqlParams {
    /// Expectile used for the value regression.
    pub expectile: f64,
    /// Inverse temperature of the advantage weights.
    pub beta: f64,
    /// Upper clip on `exp(beta · A)`.
    pub max_weight: f64,
    /// Cosine-decay the actor learning rate to zero over training.
    pub actor_cosine_decay: bool,
}

impl Default for IqlParams {
    fn default() -> Self {
        Self {
            expectile: 0.7,
            beta: 3.0,
            max_weight: 100.0,
            actor_cosine_decay: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub algorithm: Algorithm,
    pub gamma: f64,
    pub training_steps: usize,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Polyak coefficient for target networks.
    pub tau: f64,
    pub hidden_sizes: Vec<usize>,
    pub td3bc: Td3bcParams,
    pub iql: IqlParams,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self::new(Algorithm::Td3bc)
    }
}

impl AgentConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            gamma: 0.99,
            training_steps: DEFAULT_TRAINING_STEPS,
            batch_size: 256,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            tau: 0.005,
            hidden_sizes: DEFAULT_HIDDEN.to_vec(),
            td3bc: Td3bcParams::default(),
            iql: IqlParams::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if self.training_steps == 0 || self.batch_size == 0 {
            return Err(Error::invalid("training_steps and batch_size must be positive"));
        }
        if !positive(self.actor_lr) || !positive(self.critic_lr) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::invalid(format!("polyak tau must lie in (0, 1), got {}", self.tau)));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::invalid("hidden sizes must be positive"));
        }
        let t = &self.td3bc;
        if t.alpha < 0.0 || t.policy_noise < 0.0 || t.noise_clip < 0.0 || t.policy_delay == 0 {
            return Err(Error::invalid("invalid TD3+BC parameters"));
        }
        let q = &self.iql;
        if !(q.expectile > 0.0 && q.expectile < 1.0) {
            return Err(Error::invalid(format!("IQL expectile must lie in (0, 1), got {}", q.expectile)));
        }
        if !positive(q.beta) || !positive(q.max_weight) {
            return Err(Error::invalid("IQL beta and max_weight must be positive"));
        }
        Ok(())
    }

    pub(crate) fn layer_sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut v = vec![input];
        v.extend(&self.hidden_sizes);
        v.push(output);
        v
    }
}

/// One row of the training log; fields are present only when that update ran.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critic_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actor_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_loss: Option<f64>,
    /// TD3+BC adaptive weight `alpha / mean|Q|`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_abs_q: Option<f64>,
}

/// A trained agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentArtifact {
    pub env_id: String,
    pub config: AgentConfig,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub state_norm: Normalizer,
    pub policy: MlpParams,
    /// State-independent log-std of the IQL Gaussian policy.
    pub policy_log_std: Option<Vec<f64>>,
    pub critics: Vec<MlpParams>,
    pub value: Option<MlpParams>,
    pub log: Vec<StepLog>,
}

impl AgentArtifact {
    pub fn squash(&self) -> Squash {
        Squash::new(&self.action_low, &self.action_high)
    }

    /// Deterministic actions for a batch of raw (unnormalized) states.
    pub fn act_batch(&self, states: &Array2<f64>) -> Result<Array2<f64>> {
        if states.ncols() != self.state_dim {
            return Err(Error::shape(format!(
                "policy expects state dim {}, got {}",
                self.state_dim,
                states.ncols()
            )));
        }
        let z = self.policy.forward(self.state_norm.apply(states.view()).view())?;
        Ok(self.squash().forward(&z).0)
    }
}

/// Deterministic evaluation action for one state.
pub fn policy_act(artifact: &AgentArtifact, state: &[f64]) -> Result<Vec<f64>> {
    if state.len() != artifact.state_dim {
        return Err(Error::shape(format!(
            "policy expects state dim {}, got {}",
            artifact.state_dim,
            state.len()
        )));
    }
    let mut z = vec![0.0; state.len()];
    artifact.state_norm.apply_row(state, &mut z);
    let x = Array2::from_shape_vec((1, z.len()), z).expect("one row");
    let out = artifact.policy.forward(x.view())?;
    let (a, _) = artifact.squash().forward(&out);
    Ok(a.row(0).to_vec())
}

/// Trains the algorithm named in `cfg.algorithm`.
pub fn train_agent(data: &TransitionSet, cfg: &AgentConfig) -> Result<AgentArtifact> {
    match cfg.algorithm {
        Algorithm::Td3bc => train_td3bc(data, cfg),
        Algorithm::Iql => train_iql(data, cfg),
        Algorithm::Bc => train_bc(data, cfg),
    }
}

/// Shared prologue: validates config and data, returns the tensors and the action box.
pub(crate) fn prepare(
    data: &TransitionSet,
    cfg: &AgentConfig,
    needs_rewards: bool,
) -> Result<(PreparedData, Vec<f64>, Vec<f64>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("cannot train an agent on an empty dataset"));
    }
    if needs_rewards {
        data.require_labeled(cfg.algorithm.label())?;
    }
    let spec = make_env(&data.env_id)?;
    data.validate_against(&spec)?;
    let prepared = PreparedData::new(data)?;
    Ok((prepared, spec.action_low, spec.action_high))
}

#[derive(Debug, Serialize, Deserialize)]
struct AgentHeader {
    format: String,
    env_id: String,
    algorithm: Algorithm,
    config: AgentConfig,
    state_dim: usize,
    action_dim: usize,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
    state_norm: Normalizer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    policy_log_std: Option<Vec<f64>>,
    log: Vec<StepLog>,
}

pub fn save_agent(agent: &AgentArtifact, path: impl AsRef<Path>) -> Result<()> {
    let header = AgentHeader {
        format: AGENT_FORMAT.into(),
        env_id: agent.env_id.clone(),
        algorithm: agent.config.algorithm,
        config: agent.config.clone(),
        state_dim: agent.state_dim,
        action_dim: agent.action_dim,
        action_low: agent.action_low.clone(),
        action_high: agent.action_high.clone(),
        state_norm: agent.state_norm.clone(),
        policy_log_std: agent.policy_log_std.clone(),
        log: agent.log.clone(),
    };
    let mut nets = vec![NetRecord::new("policy", &agent.policy)];
    for (i, c) in agent.critics.iter().enumerate() {
        nets.push(NetRecord::new(format!("critic{}", i + 1), c));
    }
    if let Some(v) = &agent.value {
        nets.push(NetRecord::new("value", v));
    }
    let out = BufWriter::new(File::create(path.as_ref())?);
    checkpoint::write_envelope(out, &header, &nets)
}

pub fn load_agent(path: impl AsRef<Path>) -> Result<AgentArtifact> {
    let input = BufReader::new(File::open(path.as_ref())?);
    let (h, nets): (AgentHeader, _) = checkpoint::read_envelope(input)?;
    checkpoint::check_format(&h.format, AGENT_FORMAT)?;
    let policy = checkpoint::take_net(&nets, "policy")?;
    if policy.input_dim() != h.state_dim || policy.output_dim() != h.action_dim {
        return Err(Error::validation("policy network dimensions do not match the header"));
    }
    let mut critics = Vec::new();
    for i in 1.. {
        match nets.iter().find(|n| n.net == format!("critic{i}")) {
            Some(rec) => critics.push(rec.to_params()?),
            None => break,
        }
    }
    let value = match nets.iter().find(|n| n.net == "value") {
        Some(rec) => Some(rec.to_params()?),
        None => None,
    };
    Ok(AgentArtifact {
        env_id: h.env_id,
        config: h.config,
        state_dim: h.state_dim,
        action_dim: h.action_dim,
        action_low: h.action_low,
        action_high: h.action_high,
        state_norm: h.state_norm,
        policy,
        policy_log_std: h.policy_log_std,
        critics,
        value,
        log: h.log,
    })
}
