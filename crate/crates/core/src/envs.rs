//! Analytic continuous-control environments and D4RL-style score normalization.
//!
//! Two environments are provided:
//!
//! * `pointmass-v0`: a 2-D double integrator. State `(x, y, vx, vy)`, action is an
//!   acceleration in `[-1, 1]²`, `dt = 0.05`, velocity clipped to `[-2, 2]`, goal at
//!   `(1, 1)`. Reward `−‖p − goal‖ − 0.01‖a‖²`; the episode terminates once the
//!   next position is within `0.05` of the goal.
//! * `pendulum-v0`: torque-limited swing-up. State `(cos θ, sin θ, θ̇)`, torque in
//!   `[-2, 2]`, `g = 10`, `m = l = 1`, `dt = 0.05`, `θ̇` clipped to `[-8, 8]`.
//!   Reward `−(norm(θ)² + 0.1 θ̇² + 0.001 u²)`, never terminates early.
//!
//! Rewards depend on `(state, action)` only. Everything is a pure function; the
//! only randomness is the explicit seed passed to [`env_reset`].

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

pub const POINTMASS_ID: &str = "pointmass-v0";
pub const PENDULUM_ID: &str = "pendulum-v0";
pub const ENV_IDS: [&str; 2] = [POINTMASS_ID, PENDULUM_ID];

pub const POINTMASS_GOAL: [f64; 2] = [1.0, 1.0];
pub const POINTMASS_DT: f64 = 0.05;
pub const POINTMASS_MAX_SPEED: f64 = 2.0;
pub const POINTMASS_GOAL_RADIUS: f64 = 0.05;
pub const POINTMASS_ACTION_COST: f64 = 0.01;

pub const PENDULUM_DT: f64 = 0.05;
pub const PENDULUM_G: f64 = 10.0;
pub const PENDULUM_MASS: f64 = 1.0;
pub const PENDULUM_LENGTH: f64 = 1.0;
pub const PENDULUM_MAX_SPEED: f64 = 8.0;

/// Normalization anchors: mean undiscounted return over 100 episodes of the
/// uniform-random policy and of the scripted expert, episode `i` reset with
/// `derive_seed(ANCHOR_SEED, stream::EPISODE, i)` and behavior noise seeded by
/// `derive_seed(ANCHOR_SEED, stream::BEHAVIOR, i)`. Regenerated by
/// `cargo test -p orl-impute --test anchors -- --ignored --nocapture`.
pub const ANCHOR_SEED: u64 = 20_240_101;
pub const ANCHOR_EPISODES: usize = 100;
pub const POINTMASS_RANDOM_RETURN: f64 = -430.0340704852095;
pub const POINTMASS_EXPERT_RETURN: f64 = -44.6256796041313;
pub const PENDULUM_RANDOM_RETURN: f64 = -1283.109097060567;
pub const PENDULUM_EXPERT_RETURN: f64 = -167.73195780382758;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    PointMass,
    Pendulum,
}

/// Static description of an environment: the `(S, A, γ)` part of the MDP plus
/// normalization anchors. Dynamics, reward and `d₀` live in [`env_step`] and [`env_reset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub env_id: String,
    pub kind: EnvKind,
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub max_episode_steps: usize,
    pub random_return: f64,
    pub expert_return: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub fn make_env(env_id: &str) -> Result<EnvSpec> {
    match env_id {
        POINTMASS_ID => Ok(EnvSpec {
            env_id: env_id.to_string(),
            kind: EnvKind::PointMass,
            state_dim: 4,
            action_dim: 2,
            action_low: vec![-1.0, -1.0],
            action_high: vec![1.0, 1.0],
            max_episode_steps: 200,
            random_return: POINTMASS_RANDOM_RETURN,
            expert_return: POINTMASS_EXPERT_RETURN,
            gamma: 0.99,
        }),
        PENDULUM_ID => Ok(EnvSpec {
            env_id: env_id.to_string(),
            kind: EnvKind::Pendulum,
            state_dim: 3,
            action_dim: 1,
            action_low: vec![-2.0],
            action_high: vec![2.0],
            max_episode_steps: 200,
            random_return: PENDULUM_RANDOM_RETURN,
            expert_return: PENDULUM_EXPERT_RETURN,
            gamma: 0.99,
        }),
        other => Err(Error::NotFound {
            id: other.to_string(),
            valid: ENV_IDS.join(", "),
        }),
    }
}

impl EnvSpec {
    pub fn clip_action(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(&a, (&lo, &hi))| a.clamp(lo, hi))
            .collect()
    }

    /// Midpoint and half-width of the action box.
    pub fn action_center_scale(&self) -> (Vec<f64>, Vec<f64>) {
        let center = self
            .action_low
            .iter()
            .zip(&self.action_high)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect();
        let scale = self
            .action_low
            .iter()
            .zip(&self.action_high)
            .map(|(lo, hi)| 0.5 * (hi - lo))
            .collect();
        (center, scale)
    }

    pub fn sample_uniform_action<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.action_low
            .iter()
            .zip(&self.action_high)
            .map(|(&lo, &hi)| rng.random_range(lo..=hi))
            .collect()
    }
}

/// Draws `s₀ ~ d₀` from the seed alone.
pub fn env_reset(spec: &EnvSpec, seed: u64) -> Vec<f64> {
    let mut rng = seeds::rng(seed);
    match spec.kind {
        EnvKind::PointMass => {
            let x = rng.random_range(-1.0..=1.0);
            let y = rng.random_range(-1.0..=1.0);
            vec![x, y, 0.0, 0.0]
        }
        EnvKind::Pendulum => {
            let theta: f64 = rng.random_range(-PI..=PI);
            let theta_dot = rng.random_range(-1.0..=1.0);
            vec![theta.cos(), theta.sin(), theta_dot]
        }
    }
}

/// Applies the clipped action to `state`. The reward is computed from `(state, action)`.
pub fn env_step(spec: &EnvSpec, state: &[f64], action: &[f64]) -> Result<StepResult> {
    if state.len() != spec.state_dim || action.len() != spec.action_dim {
        return Err(Error::shape(format!(
            "{} expects state dim {} and action dim {}, got {} and {}",
            spec.env_id,
            spec.state_dim,
            spec.action_dim,
            state.len(),
            action.len()
        )));
    }
    if state.iter().chain(action).any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite state or action passed to {}",
            spec.env_id
        )));
    }
    let a = spec.clip_action(action);
    Ok(match spec.kind {
        EnvKind::PointMass => pointmass_step(state, &a),
        EnvKind::Pendulum => pendulum_step(state, &a),
    })
}

/// `100 · (raw − random) / (expert − random)`.
pub fn normalized_score(spec: &EnvSpec, raw_return: f64) -> f64 {
    100.0 * (raw_return - spec.random_return) / (spec.expert_return - spec.random_return)
}

pub fn pointmass_reward(state: &[f64], action: &[f64]) -> f64 {
    let dx = state[0] - POINTMASS_GOAL[0];
    let dy = state[1] - POINTMASS_GOAL[1];
    let dist = (dx * dx + dy * dy).sqrt();
    let a2 = action.iter().map(|a| a * a).sum::<f64>();
    -dist - POINTMASS_ACTION_COST * a2
}

fn pointmass_step(state: &[f64], a: &[f64]) -> StepResult {
    let reward = pointmass_reward(state, a);
    let vx = (state[2] + a[0] * POINTMASS_DT).clamp(-POINTMASS_MAX_SPEED, POINTMASS_MAX_SPEED);
    let vy = (state[3] + a[1] * POINTMASS_DT).clamp(-POINTMASS_MAX_SPEED, POINTMASS_MAX_SPEED);
    let x = state[0] + vx * POINTMASS_DT;
    let y = state[1] + vy * POINTMASS_DT;
    let dist = ((x - POINTMASS_GOAL[0]).powi(2) + (y - POINTMASS_GOAL[1]).powi(2)).sqrt();
    StepResult {
        next_state: vec![x, y, vx, vy],
        reward,
        done: dist < POINTMASS_GOAL_RADIUS,
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn angle_normalize(theta: f64) -> f64 {
    (theta + PI).rem_euclid(2.0 * PI) - PI
}

pub fn pendulum_angle(state: &[f64]) -> f64 {
    state[1].atan2(state[0])
}

pub fn pendulum_reward(state: &[f64], action: &[f64]) -> f64 {
    let th = angle_normalize(pendulum_angle(state));
    let thdot = state[2];
    let u = action[0];
    -(th * th + 0.1 * thdot * thdot + 0.001 * u * u)
}

/// Angular acceleration for angle `theta` (0 = upright) under torque `u`.
pub fn pendulum_accel(theta: f64, u: f64) -> f64 {
    3.0 * PENDULUM_G / (2.0 * PENDULUM_LENGTH) * theta.sin()
        + 3.0 / (PENDULUM_MASS * PENDULUM_LENGTH * PENDULUM_LENGTH) * u
}

fn pendulum_step(state: &[f64], a: &[f64]) -> StepResult {
    let reward = pendulum_reward(state, a);
    let th = pendulum_angle(state);
    let thdot = state[2];
    let new_thdot = (thdot + pendulum_accel(th, a[0]) * PENDULUM_DT)
        .clamp(-PENDULUM_MAX_SPEED, PENDULUM_MAX_SPEED);
    let new_th = th + new_thdot * PENDULUM_DT;
    StepResult {
        next_state: vec![new_th.cos(), new_th.sin(), new_thdot],
        reward,
        done: false,
    }
}

/// Outcome of one rollout driven by [`run_episode`].
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub states: Vec<Vec<f64>>,
    /// Clipped actions actually applied.
    pub actions: Vec<Vec<f64>>,
    pub next_states: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    /// True when the environment signalled termination on the last step.
    pub terminated: bool,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn total_return(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Rolls `policy` from `env_reset(spec, reset_seed)` until termination or `horizon` steps.
pub fn run_episode<P>(spec: &EnvSpec, reset_seed: u64, horizon: usize, mut policy: P) -> Result<EpisodeRecord>
where
    P: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut state = env_reset(spec, reset_seed);
    let mut rec = EpisodeRecord {
        states: Vec::with_capacity(horizon),
        actions: Vec::with_capacity(horizon),
        next_states: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        terminated: false,
    };
    for _ in 0..horizon {
        let action = spec.clip_action(&policy(&state)?);
        let step = env_step(spec, &state, &action)?;
        rec.states.push(state);
        rec.actions.push(action);
        rec.next_states.push(step.next_state.clone());
        rec.rewards.push(step.reward);
        state = step.next_state;
        if step.done {
            rec.terminated = true;
            break;
        }
    }
    Ok(rec)
}
