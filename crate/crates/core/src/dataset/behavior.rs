//! Scripted behavior policies used to emulate datasets of different quality.
//!
//! The expert is a PD controller on pointmass and an energy-shaping swing-up with
//! a PD catch near upright on the pendulum. Lower tiers corrupt it with noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::envs::{angle_normalize, pendulum_angle, EnvKind, EnvSpec, PENDULUM_G, PENDULUM_LENGTH, POINTMASS_GOAL};

pub const POINTMASS_KP: f64 = 2.0;
pub const POINTMASS_KD: f64 = 1.0;

pub const PENDULUM_CATCH_KP: f64 = 10.0;
pub const PENDULUM_CATCH_KD: f64 = 2.0;
pub const PENDULUM_CATCH_ANGLE: f64 = 0.5;
pub const PENDULUM_SWING_GAIN: f64 = 1.0;

/// Gaussian noise std for the `medium` behavior, as a fraction of the action half-range.
pub const MEDIUM_NOISE: f64 = 0.3;
/// Probability of a uniform-random action step in the `medium` behavior.
pub const MEDIUM_RANDOM_PROB: f64 = 0.2;
/// Gaussian noise std for the noisy-expert slice of `medium_replay`.
pub const NOISY_EXPERT_NOISE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Behavior {
    Random,
    Expert,
    /// Expert plus Gaussian noise of std `noise · half_range`, replaced by a
    /// uniform-random action with probability `random_prob`.
    Noisy { noise: f64, random_prob: f64 },
}

impl Behavior {
    pub fn medium() -> Self {
        Behavior::Noisy {
            noise: MEDIUM_NOISE,
            random_prob: MEDIUM_RANDOM_PROB,
        }
    }

    pub fn noisy_expert() -> Self {
        Behavior::Noisy {
            noise: NOISY_EXPERT_NOISE,
            random_prob: 0.0,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Behavior::Random => "uniform-random".to_string(),
            Behavior::Expert => "scripted-expert".to_string(),
            Behavior::Noisy { noise, random_prob } => {
                format!("scripted-expert+gaussian({noise})+random({random_prob})")
            }
        }
    }

    /// Action for `state`, clipped to the action box.
    pub fn act<R: Rng>(&self, spec: &EnvSpec, state: &[f64], rng: &mut R) -> Vec<f64> {
        match *self {
            Behavior::Random => spec.sample_uniform_action(rng),
            Behavior::Expert => expert_action(spec, state),
            Behavior::Noisy { noise, random_prob } => {
                // Both draws happen every step so the RNG stream does not depend on branch outcomes.
                let coin: f64 = rng.random();
                let uniform = spec.sample_uniform_action(rng);
                let (_, scale) = spec.action_center_scale();
                let mut a = expert_action(spec, state);
                for (ai, s) in a.iter_mut().zip(&scale) {
                    let n = Normal::new(0.0, noise * s).expect("noise std is finite and non-negative");
                    *ai += n.sample(rng);
                }
                if coin < random_prob {
                    uniform
                } else {
                    spec.clip_action(&a)
                }
            }
        }
    }
}

pub fn expert_action(spec: &EnvSpec, state: &[f64]) -> Vec<f64> {
    match spec.kind {
        EnvKind::PointMass => {
            let a = [
                POINTMASS_KP * (POINTMASS_GOAL[0] - state[0]) - POINTMASS_KD * state[2],
                POINTMASS_KP * (POINTMASS_GOAL[1] - state[1]) - POINTMASS_KD * state[3],
            ];
            spec.clip_action(&a)
        }
        EnvKind::Pendulum => {
            let th = angle_normalize(pendulum_angle(state));
            let thdot = state[2];
            let u = if th.abs() < PENDULUM_CATCH_ANGLE {
                -(PENDULUM_CATCH_KP * th + PENDULUM_CATCH_KD * thdot)
            } else {
                // Pump energy toward the upright-at-rest level; dE/dt = 3·u·θ̇.
                let k = 3.0 * PENDULUM_G / (2.0 * PENDULUM_LENGTH);
                let energy = 0.5 * thdot * thdot + k * th.cos();
                PENDULUM_SWING_GAIN * (k - energy) * thdot
            };
            spec.clip_action(&[u])
        }
    }
}

/// Mean undiscounted returns `(random, expert)` over [`ANCHOR_EPISODES`] episodes,
/// the recipe behind the normalization constants in [`crate::envs`].
pub fn anchor_returns(spec: &EnvSpec) -> crate::error::Result<(f64, f64)> {
    use crate::envs::{run_episode, ANCHOR_EPISODES, ANCHOR_SEED};
    use crate::seeds::{derive_seed, rng, stream};

    let mean_return = |behavior: Behavior| -> crate::error::Result<f64> {
        let mut total = 0.0;
        for i in 0..ANCHOR_EPISODES as u64 {
            let mut r = rng(derive_seed(ANCHOR_SEED, stream::BEHAVIOR, i));
            let ep = run_episode(
                spec,
                derive_seed(ANCHOR_SEED, stream::EPISODE, i),
                spec.max_episode_steps,
                |s| Ok(behavior.act(spec, s, &mut r)),
            )?;
            total += ep.total_return();
        }
        Ok(total / ANCHOR_EPISODES as f64)
    };
    Ok((mean_return(Behavior::Random)?, mean_return(Behavior::Expert)?))
}
