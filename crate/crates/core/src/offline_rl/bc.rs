//! Behavior cloning: regress the squashed deterministic actor onto dataset actions.

use ndarray::Array2;

use super::common::{divergence, Batch, Squash};
use super::{prepare, AgentArtifact, AgentConfig, StepLog};
use crate::dataset::TransitionSet;
use crate::error::Result;
use crate::nn::{AdamConfig, AdamState, Gradients, MlpParams};
use crate::seeds::{self, derive_seed};

/// Mean over batch and action dims of `(π(s) − a)²`, with gradients for `policy`.
pub fn bc_loss_and_grads(policy: &MlpParams, squash: &Squash, batch: &Batch) -> Result<(f64, Gradients)> {
    let trace = policy.forward_trace(batch.states.view())?;
    let (pi, tanh_z) = squash.forward(trace.output());
    let diff: Array2<f64> = &pi - &batch.actions;
    let count = diff.len() as f64;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;
    let d_action = diff.mapv(|d| 2.0 * d / count);
    let dz = squash.backward(&tanh_z, &d_action);
    Ok((loss, policy.backward(&trace, dz.view())?.grads))
}

/// Trains a deterministic policy by mean-squared action regression. Rewards are ignored.
pub fn train_bc(data: &TransitionSet, cfg: &AgentConfig) -> Result<AgentArtifact> {
    let (prepared, low, high) = prepare(data, cfg, false)?;
    let state_dim = prepared.states.ncols();
    let action_dim = prepared.actions.ncols();
    let squash = Squash::new(&low, &high);

    let mut policy = MlpParams::init(&cfg.layer_sizes(state_dim, action_dim), derive_seed(cfg.seed, 1, 0))?;
    let mut adam = AdamState::new(&policy, AdamConfig::with_lr(cfg.actor_lr));
    let mut rng = seeds::rng(derive_seed(cfg.seed, 1, 99));
    let mut log = Vec::with_capacity(cfg.training_steps);

    for step in 0..cfg.training_steps {
        let batch = prepared.sample(cfg.batch_size, &mut rng);
        let (loss, grads) = bc_loss_and_grads(&policy, &squash, &batch)?;
        if !loss.is_finite() {
            return Err(divergence("bc", step, format!("actor loss is {loss}")));
        }
        adam.step(&mut policy, &grads).map_err(|e| divergence("bc", step, e.to_string()))?;
        log.push(StepLog {
            actor_loss: Some(loss),
            ..StepLog::default()
        });
    }

    Ok(AgentArtifact {
        env_id: data.env_id.clone(),
        config: cfg.clone(),
        state_dim,
        action_dim,
        action_low: low,
        action_high: high,
        state_norm: prepared.norm,
        policy,
        policy_log_std: None,
        critics: Vec::new(),
        value: None,
        log,
    })
}
