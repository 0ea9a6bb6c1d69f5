//! TD3+BC: twin clipped double-Q critics with target-policy smoothing, delayed
//! actor updates, and an actor objective `−λ·mean Q(s, π(s)) + mean (π(s) − a)²`
//! where `λ = alpha / mean|Q|` is recomputed on every batch and held constant
//! for the gradient.

use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::common::{as_column, column, divergence, state_action, Batch, Squash};
use super::{prepare, AgentArtifact, AgentConfig, StepLog, Td3bcParams};
use crate::dataset::TransitionSet;
use crate::error::Result;
use crate::nn::{mse_loss, AdamConfig, AdamState, Gradients, MlpParams};
use crate::seeds::{self, derive_seed};

/// Guards `alpha / mean|Q|` against an all-zero critic.
const MIN_MEAN_ABS_Q: f64 = 1e-8;

/// Target-policy smoothing noise `clip(N(0, σ·scale), ±c·scale)` for a batch.
pub fn smoothing_noise<R: Rng>(rng: &mut R, rows: usize, squash: &Squash, p: &Td3bcParams) -> Array2<f64> {
    let mut noise = Array2::zeros((rows, squash.scale.len()));
    for mut row in noise.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            let sc = squash.scale[j];
            let n: f64 = StandardNormal.sample(rng);
            *v = (n * p.policy_noise * sc).clamp(-p.noise_clip * sc, p.noise_clip * sc);
        }
    }
    noise
}

/// `r + γ·(1 − done)·min(Q1'(s′, a′), Q2'(s′, a′))` with `a′ = clip(π'(s′) + noise)`.
pub fn critic_targets(
    target_actor: &MlpParams,
    target_critics: [&MlpParams; 2],
    squash: &Squash,
    batch: &Batch,
    noise: &Array2<f64>,
    gamma: f64,
) -> Result<Vec<f64>> {
    let (mut next_a, _) = squash.forward(&target_actor.forward(batch.next_states.view())?);
    next_a += noise;
    for mut row in next_a.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            let (lo, hi) = (squash.center[j] - squash.scale[j], squash.center[j] + squash.scale[j]);
            *v = v.clamp(lo, hi);
        }
    }
    let sa = state_action(batch.next_states.view(), next_a.view());
    let q1 = target_critics[0].forward(sa.view())?;
    let q2 = target_critics[1].forward(sa.view())?;
    Ok((0..batch.len())
        .map(|i| batch.rewards[i] + gamma * batch.not_done[i] * q1[[i, 0]].min(q2[[i, 0]]))
        .collect())
}

/// MSE of `critic(sa)` against fixed `targets`.
pub fn critic_loss_and_grads(critic: &MlpParams, sa: &Array2<f64>, targets: &[f64]) -> Result<(f64, Gradients)> {
    let trace = critic.forward_trace(sa.view())?;
    let (loss, g) = mse_loss(&column(trace.output()), targets)?;
    Ok((loss, critic.backward(&trace, as_column(g).view())?.grads))
}

#[derive(Debug, Clone)]
pub struct ActorUpdate {
    pub loss: f64,
    pub grads: Gradients,
    pub lambda: f64,
    pub mean_abs_q: f64,
}

/// Actor objective and its gradient. `lambda` overrides the adaptive weight (used
/// to hold it fixed when checking gradients).
pub fn actor_loss_and_grads(
    actor: &MlpParams,
    critic: &MlpParams,
    squash: &Squash,
    batch: &Batch,
    alpha: f64,
    lambda: Option<f64>,
) -> Result<ActorUpdate> {
    let b = batch.len() as f64;
    let state_dim = batch.states.ncols();
    let trace = actor.forward_trace(batch.states.view())?;
    let (pi, tanh_z) = squash.forward(trace.output());
    let sa = state_action(batch.states.view(), pi.view());
    let q_trace = critic.forward_trace(sa.view())?;
    let q = column(q_trace.output());
    let mean_abs_q = q.iter().map(|v| v.abs()).sum::<f64>() / b;
    let lambda = lambda.unwrap_or_else(|| alpha / mean_abs_q.max(MIN_MEAN_ABS_Q));

    let diff: Array2<f64> = &pi - &batch.actions;
    let count = diff.len() as f64;
    let bc = diff.iter().map(|d| d * d).sum::<f64>() / count;
    let loss = -lambda * q.iter().sum::<f64>() / b + bc;

    let dq = Array2::from_elem((batch.len(), 1), -lambda / b);
    let q_back = critic.backward(&q_trace, dq.view())?;
    let mut d_action = q_back.input_grad.slice(s![.., state_dim..]).to_owned();
    d_action.zip_mut_with(&diff, |g, &d| *g += 2.0 * d / count);
    let dz = squash.backward(&tanh_z, &d_action);
    Ok(ActorUpdate {
        loss,
        grads: actor.backward(&trace, dz.view())?.grads,
        lambda,
        mean_abs_q,
    })
}

/// Trains TD3+BC on a fully labeled dataset.
pub fn train_td3bc(data: &TransitionSet, cfg: &AgentConfig) -> Result<AgentArtifact> {
    let (prepared, low, high) = prepare(data, cfg, true)?;
    let state_dim = prepared.states.ncols();
    let action_dim = prepared.actions.ncols();
    let squash = Squash::new(&low, &high);
    let p = &cfg.td3bc;

    let critic_sizes = cfg.layer_sizes(state_dim + action_dim, 1);
    let mut actor = MlpParams::init(&cfg.layer_sizes(state_dim, action_dim), derive_seed(cfg.seed, 2, 0))?;
    let mut critic1 = MlpParams::init(&critic_sizes, derive_seed(cfg.seed, 2, 1))?;
    let mut critic2 = MlpParams::init(&critic_sizes, derive_seed(cfg.seed, 2, 2))?;
    let mut actor_t = actor.clone();
    let mut critic1_t = critic1.clone();
    let mut critic2_t = critic2.clone();
    let mut actor_opt = AdamState::new(&actor, AdamConfig::with_lr(cfg.actor_lr));
    let mut critic1_opt = AdamState::new(&critic1, AdamConfig::with_lr(cfg.critic_lr));
    let mut critic2_opt = AdamState::new(&critic2, AdamConfig::with_lr(cfg.critic_lr));
    let mut rng = seeds::rng(derive_seed(cfg.seed, 2, 99));

    let mut log = Vec::with_capacity(cfg.training_steps);
    for step in 0..cfg.training_steps {
        let batch = prepared.sample(cfg.batch_size, &mut rng);
        let noise = smoothing_noise(&mut rng, batch.len(), &squash, p);
        let targets = critic_targets(&actor_t, [&critic1_t, &critic2_t], &squash, &batch, &noise, cfg.gamma)?;
        let sa = state_action(batch.states.view(), batch.actions.view());
        let (l1, g1) = critic_loss_and_grads(&critic1, &sa, &targets)?;
        let (l2, g2) = critic_loss_and_grads(&critic2, &sa, &targets)?;
        let critic_loss = l1 + l2;
        if !critic_loss.is_finite() {
            return Err(divergence("td3bc", step, format!("critic loss is {critic_loss}")));
        }
        critic1_opt.step(&mut critic1, &g1).map_err(|e| divergence("td3bc", step, e.to_string()))?;
        critic2_opt.step(&mut critic2, &g2).map_err(|e| divergence("td3bc", step, e.to_string()))?;
        let mut entry = StepLog {
            critic_loss: Some(critic_loss),
            ..StepLog::default()
        };

        if (step + 1) % p.policy_delay == 0 {
            let upd = actor_loss_and_grads(&actor, &critic1, &squash, &batch, p.alpha, None)?;
            if !upd.loss.is_finite() {
                return Err(divergence("td3bc", step, format!("actor loss is {}", upd.loss)));
            }
            actor_opt.step(&mut actor, &upd.grads).map_err(|e| divergence("td3bc", step, e.to_string()))?;
            actor_t.soft_update_from(&actor, cfg.tau);
            critic1_t.soft_update_from(&critic1, cfg.tau);
            critic2_t.soft_update_from(&critic2, cfg.tau);
            entry.actor_loss = Some(upd.loss);
            entry.lambda = Some(upd.lambda);
            entry.mean_abs_q = Some(upd.mean_abs_q);
        }
        log.push(entry);
    }

    Ok(AgentArtifact {
        env_id: data.env_id.clone(),
        config: cfg.clone(),
        state_dim,
        action_dim,
        action_low: low,
        action_high: high,
        state_norm: prepared.norm,
        policy: actor,
        policy_log_std: None,
        critics: vec![critic1, critic2],
        value: None,
        log,
    })
}
