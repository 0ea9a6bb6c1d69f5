//! Policy evaluation and multi-seed aggregation into normalized scores.
//!
//! The primary metric is the full undiscounted episode return. Alongside it each
//! episode records the mean reward over its final `tail_window` steps, reported
//! both raw and normalized per transition.

use serde::{Deserialize, Serialize};

use crate::envs::{normalized_score, run_episode, EnvSpec};
use crate::error::{Error, Result};
use crate::offline_rl::{policy_act, AgentArtifact};
use crate::seeds::{derive_seed, stream};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalProtocol {
    pub n_episodes: usize,
    /// Requested horizon; the effective one is capped by the environment.
    pub episode_steps: usize,
    pub n_seeds: usize,
    pub tail_window: usize,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            n_episodes: 10,
            episode_steps: 1000,
            n_seeds: 5,
            tail_window: 10,
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.n_episodes == 0 || self.episode_steps == 0 || self.n_seeds == 0 || self.tail_window == 0 {
            return Err(Error::invalid("evaluation protocol counts must be positive"));
        }
        if self.tail_window > self.episode_steps {
            return Err(Error::invalid(format!(
                "tail_window {} exceeds episode_steps {}",
                self.tail_window, self.episode_steps
            )));
        }
        Ok(())
    }

    pub fn effective_steps(&self, spec: &EnvSpec) -> usize {
        self.episode_steps.min(spec.max_episode_steps)
    }
}

/// Evaluation of one policy under one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub env_id: String,
    pub algorithm: String,
    pub arm: String,
    pub seed: u64,
    pub episode_returns: Vec<f64>,
    pub episode_lengths: Vec<usize>,
    /// Mean reward over the last `tail_window` steps of each episode.
    pub tail_mean_rewards: Vec<f64>,
}

impl SeedResult {
    pub fn with_arm(mut self, arm: impl Into<String>) -> Self {
        self.arm = arm.into();
        self
    }

    pub fn mean_return(&self) -> f64 {
        stats::mean(&self.episode_returns)
    }

    pub fn mean_tail_reward(&self) -> f64 {
        stats::mean(&self.tail_mean_rewards)
    }
}

/// Rolls out `policy` for `protocol.n_episodes` episodes; episode `i` resets from
/// `derive_seed(seed, EVAL, i)`.
pub fn evaluate_with<P>(spec: &EnvSpec, protocol: &EvalProtocol, seed: u64, mut policy: P) -> Result<SeedResult>
where
    P: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    protocol.validate()?;
    let horizon = protocol.effective_steps(spec);
    let mut out = SeedResult {
        env_id: spec.env_id.clone(),
        algorithm: String::new(),
        arm: String::new(),
        seed,
        episode_returns: Vec::with_capacity(protocol.n_episodes),
        episode_lengths: Vec::with_capacity(protocol.n_episodes),
        tail_mean_rewards: Vec::with_capacity(protocol.n_episodes),
    };
    for ep in 0..protocol.n_episodes {
        let rec = run_episode(spec, derive_seed(seed, stream::EVAL, ep as u64), horizon, &mut policy)?;
        let tail = &rec.rewards[rec.len().saturating_sub(protocol.tail_window)..];
        out.episode_returns.push(rec.total_return());
        out.episode_lengths.push(rec.len());
        out.tail_mean_rewards.push(stats::mean(tail));
    }
    Ok(out)
}

/// Evaluates the deterministic policy of `artifact` on `spec`.
pub fn evaluate_policy(spec: &EnvSpec, artifact: &AgentArtifact, protocol: &EvalProtocol, seed: u64) -> Result<SeedResult> {
    if artifact.env_id != spec.env_id || artifact.state_dim != spec.state_dim || artifact.action_dim != spec.action_dim {
        return Err(Error::validation(format!(
            "agent for `{}` ({}→{}) cannot act in `{}` ({}→{})",
            artifact.env_id, artifact.state_dim, artifact.action_dim, spec.env_id, spec.state_dim, spec.action_dim
        )));
    }
    let mut res = evaluate_with(spec, protocol, seed, |s| policy_act(artifact, s))?;
    res.algorithm = artifact.config.algorithm.as_str().to_string();
    Ok(res)
}

/// Across-seed summary for one (env, algorithm, arm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub env_id: String,
    pub algorithm: String,
    pub arm: String,
    pub protocol: EvalProtocol,
    pub effective_episode_steps: usize,
    pub per_seed: Vec<SeedResult>,
    /// Across-seed mean of per-seed mean episode returns.
    pub mean_return: f64,
    pub normalized_score: f64,
    /// Population std of the per-seed normalized scores.
    pub score_std_across_seeds: f64,
    pub mean_tail_reward: f64,
    /// Tail mean reward scaled to a full horizon and normalized like a return.
    pub tail_normalized_score: f64,
}

impl EvalReport {
    pub fn label(&self) -> String {
        format!("{}/{}/{}", self.env_id, self.arm, self.algorithm)
    }
}

/// Folds per-seed results into an [`EvalReport`]. Inputs must share env, algorithm and arm.
pub fn aggregate_seeds(results: &[SeedResult], spec: &EnvSpec, protocol: &EvalProtocol) -> Result<EvalReport> {
    let first = results
        .first()
        .ok_or_else(|| Error::invalid("cannot aggregate zero seed results"))?;
    if let Some(bad) = results
        .iter()
        .find(|r| r.env_id != first.env_id || r.algorithm != first.algorithm || r.arm != first.arm)
    {
        return Err(Error::validation(format!(
            "mixed inputs: {}/{}/{} and {}/{}/{}",
            first.env_id, first.arm, first.algorithm, bad.env_id, bad.arm, bad.algorithm
        )));
    }
    if first.env_id != spec.env_id {
        return Err(Error::validation(format!(
            "results are for `{}` but the spec is `{}`",
            first.env_id, spec.env_id
        )));
    }
    if results.iter().any(|r| r.episode_returns.is_empty()) {
        return Err(Error::validation("a seed result has no episodes"));
    }
    let per_seed_returns: Vec<f64> = results.iter().map(SeedResult::mean_return).collect();
    let per_seed_scores: Vec<f64> = per_seed_returns.iter().map(|&r| normalized_score(spec, r)).collect();
    let mean_return = stats::mean(&per_seed_returns);
    let mean_tail_reward = stats::mean(&results.iter().map(SeedResult::mean_tail_reward).collect::<Vec<_>>());
    let horizon = protocol.effective_steps(spec);
    Ok(EvalReport {
        env_id: first.env_id.clone(),
        algorithm: first.algorithm.clone(),
        arm: first.arm.clone(),
        protocol: *protocol,
        effective_episode_steps: horizon,
        per_seed: results.to_vec(),
        mean_return,
        normalized_score: normalized_score(spec, mean_return),
        score_std_across_seeds: stats::std_dev(&per_seed_scores),
        mean_tail_reward,
        tail_normalized_score: normalized_score(spec, mean_tail_reward * horizon as f64),
    })
}
