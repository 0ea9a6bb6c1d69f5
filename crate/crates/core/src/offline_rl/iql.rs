//! Implicit Q-learning. Each step fits `V` by expectile regression onto the
//! minimum of the target critics, extracts the policy with advantage-weighted
//! regression, then regresses both critics toward `r + γ·(1 − done)·V(s′)`.
//! The actor is a Gaussian with mean `center + scale · tanh(net(s))` and a
//! state-independent log-std; evaluation uses the mean.

use std::f64::consts::PI;

use ndarray::Array2;

use super::common::{as_column, column, divergence, state_action, Batch, Squash};
use super::td3bc::critic_loss_and_grads;
use super::{prepare, AgentArtifact, AgentConfig, StepLog};
use crate::dataset::TransitionSet;
use crate::error::{Error, Result};
use crate::nn::{adam_update_slice, expectile_loss, AdamConfig, AdamState, Gradients, MlpParams};
use crate::seeds::{self, derive_seed};

pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// `min(Q1(s, a), Q2(s, a))` for the dataset pairs of `batch`.
pub fn min_q(critics: [&MlpParams; 2], batch: &Batch) -> Result<Vec<f64>> {
    let sa = state_action(batch.states.view(), batch.actions.view());
    let q1 = critics[0].forward(sa.view())?;
    let q2 = critics[1].forward(sa.view())?;
    Ok(q1.column(0).iter().zip(q2.column(0)).map(|(a, b)| a.min(*b)).collect())
}

/// Expectile regression of `V(s)` onto fixed `q` values.
pub fn value_loss_and_grads(value: &MlpParams, states: &Array2<f64>, q: &[f64], expectile: f64) -> Result<(f64, Gradients)> {
    let trace = value.forward_trace(states.view())?;
    let (loss, g) = expectile_loss(&column(trace.output()), q, expectile)?;
    Ok((loss, value.backward(&trace, as_column(g).view())?.grads))
}

/// Advantage weights `min(exp(beta · A), max_weight)`.
pub fn awr_weights(advantages: &[f64], beta: f64, max_weight: f64) -> Vec<f64> {
    advantages.iter().map(|a| (beta * a).exp().min(max_weight)).collect()
}

/// `r + γ·(1 − done)·V(s′)`.
pub fn q_targets(value: &MlpParams, batch: &Batch, gamma: f64) -> Result<Vec<f64>> {
    let v_next = value.forward(batch.next_states.view())?;
    Ok((0..batch.len())
        .map(|i| batch.rewards[i] + gamma * batch.not_done[i] * v_next[[i, 0]])
        .collect())
}

/// Diagonal Gaussian log-density of `a` under mean `mu` and per-dim `log_std`.
pub fn gaussian_log_prob(a: &[f64], mu: &[f64], log_std: &[f64]) -> f64 {
    a.iter()
        .zip(mu)
        .zip(log_std)
        .map(|((a, m), ls)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

#[derive(Debug, Clone)]
pub struct AwrUpdate {
    pub loss: f64,
    pub grads: Gradients,
    pub log_std_grad: Vec<f64>,
}

/// Weighted negative log-likelihood `−mean_b w_b · log π(a_b | s_b)`.
pub fn awr_loss_and_grads(
    policy: &MlpParams,
    log_std: &[f64],
    squash: &Squash,
    batch: &Batch,
    weights: &[f64],
) -> Result<AwrUpdate> {
    if weights.len() != batch.len() || log_std.len() != batch.actions.ncols() {
        return Err(Error::shape("advantage weights or log-std do not match the batch"));
    }
    let b = batch.len() as f64;
    let trace = policy.forward_trace(batch.states.view())?;
    let (mu, tanh_z) = squash.forward(trace.output());
    let inv_var: Vec<f64> = log_std.iter().map(|ls| (-2.0 * ls).exp()).collect();

    let mut loss = 0.0;
    let mut d_mu = Array2::zeros(mu.raw_dim());
    let mut log_std_grad = vec![0.0; log_std.len()];
    for (i, w) in weights.iter().enumerate() {
        let a = batch.actions.row(i).to_vec();
        let m = mu.row(i).to_vec();
        loss -= w * gaussian_log_prob(&a, &m, log_std);
        for j in 0..log_std.len() {
            let diff = a[j] - m[j];
            d_mu[[i, j]] = -w * diff * inv_var[j] / b;
            log_std_grad[j] -= w * (diff * diff * inv_var[j] - 1.0) / b;
        }
    }
    let dz = squash.backward(&tanh_z, &d_mu);
    Ok(AwrUpdate {
        loss: loss / b,
        grads: policy.backward(&trace, dz.view())?.grads,
        log_std_grad,
    })
}

/// Actor learning rate at `step` of `total` under cosine decay to zero.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    0.5 * base * (1.0 + (PI * step as f64 / total as f64).cos())
}

/// Trains IQL on a fully labeled dataset.
pub fn train_iql(data: &TransitionSet, cfg: &AgentConfig) -> Result<AgentArtifact> {
    let (prepared, low, high) = prepare(data, cfg, true)?;
    let state_dim = prepared.states.ncols();
    let action_dim = prepared.actions.ncols();
    let squash = Squash::new(&low, &high);
    let p = &cfg.iql;

    let critic_sizes = cfg.layer_sizes(state_dim + action_dim, 1);
    let mut policy = MlpParams::init(&cfg.layer_sizes(state_dim, action_dim), derive_seed(cfg.seed, 3, 0))?;
    let mut critic1 = MlpParams::init(&critic_sizes, derive_seed(cfg.seed, 3, 1))?;
    let mut critic2 = MlpParams::init(&critic_sizes, derive_seed(cfg.seed, 3, 2))?;
    let mut value = MlpParams::init(&cfg.layer_sizes(state_dim, 1), derive_seed(cfg.seed, 3, 3))?;
    let mut critic1_t = critic1.clone();
    let mut critic2_t = critic2.clone();
    let mut log_std = vec![0.0; action_dim];
    let (mut ls_m, mut ls_v) = (vec![0.0; action_dim], vec![0.0; action_dim]);

    let mut policy_opt = AdamState::new(&policy, AdamConfig::with_lr(cfg.actor_lr));
    let mut critic1_opt = AdamState::new(&critic1, AdamConfig::with_lr(cfg.critic_lr));
    let mut critic2_opt = AdamState::new(&critic2, AdamConfig::with_lr(cfg.critic_lr));
    let mut value_opt = AdamState::new(&value, AdamConfig::with_lr(cfg.critic_lr));
    let mut rng = seeds::rng(derive_seed(cfg.seed, 3, 99));
    let fail = |step: usize| move |e: Error| divergence("iql", step, e.to_string());

    let mut log = Vec::with_capacity(cfg.training_steps);
    for step in 0..cfg.training_steps {
        let batch = prepared.sample(cfg.batch_size, &mut rng);

        let q = min_q([&critic1_t, &critic2_t], &batch)?;
        let (value_loss, gv) = value_loss_and_grads(&value, &batch.states, &q, p.expectile)?;
        if !value_loss.is_finite() {
            return Err(divergence("iql", step, format!("value loss is {value_loss}")));
        }
        value_opt.step(&mut value, &gv).map_err(fail(step))?;

        let v = column(&value.forward(batch.states.view())?);
        let adv: Vec<f64> = q.iter().zip(&v).map(|(q, v)| q - v).collect();
        let weights = awr_weights(&adv, p.beta, p.max_weight);
        let upd = awr_loss_and_grads(&policy, &log_std, &squash, &batch, &weights)?;
        if !upd.loss.is_finite() {
            return Err(divergence("iql", step, format!("actor loss is {}", upd.loss)));
        }
        if p.actor_cosine_decay {
            policy_opt.config.lr = cosine_lr(cfg.actor_lr, step, cfg.training_steps);
        }
        policy_opt.step(&mut policy, &upd.grads).map_err(fail(step))?;
        adam_update_slice(
            &mut log_std,
            &upd.log_std_grad,
            &mut ls_m,
            &mut ls_v,
            &policy_opt.config,
            policy_opt.step_count,
        );
        log_std.iter_mut().for_each(|ls| *ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX));

        let targets = q_targets(&value, &batch, cfg.gamma)?;
        let sa = state_action(batch.states.view(), batch.actions.view());
        let (l1, g1) = critic_loss_and_grads(&critic1, &sa, &targets)?;
        let (l2, g2) = critic_loss_and_grads(&critic2, &sa, &targets)?;
        let critic_loss = l1 + l2;
        if !critic_loss.is_finite() {
            return Err(divergence("iql", step, format!("critic loss is {critic_loss}")));
        }
        critic1_opt.step(&mut critic1, &g1).map_err(fail(step))?;
        critic2_opt.step(&mut critic2, &g2).map_err(fail(step))?;
        critic1_t.soft_update_from(&critic1, cfg.tau);
        critic2_t.soft_update_from(&critic2, cfg.tau);

        log.push(StepLog {
            critic_loss: Some(critic_loss),
            actor_loss: Some(upd.loss),
            value_loss: Some(value_loss),
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
        policy_log_std: Some(log_std),
        critics: vec![critic1, critic2],
        value: Some(value),
        log,
    })
}
