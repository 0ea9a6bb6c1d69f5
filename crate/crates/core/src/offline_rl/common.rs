//! Pieces shared by the agents: dataset tensors, minibatch sampling and the squashed actor head.

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::dataset::TransitionSet;
use crate::error::{Error, Result};
use crate::stats::Normalizer;

/// Floor on per-feature state std used for agent input normalization.
pub const STATE_STD_FLOOR: f64 = 1e-3;

/// A dataset laid out as dense matrices with normalized states.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub next_states: Array2<f64>,
    /// Zero for reward-free transitions; only read by reward-consuming agents.
    pub rewards: Vec<f64>,
    pub not_done: Vec<f64>,
    pub norm: Normalizer,
}

impl PreparedData {
    pub fn new(data: &TransitionSet) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::invalid("cannot train an agent on an empty dataset"));
        }
        let n = data.len();
        let sd = data.transitions[0].state.len();
        let ad = data.transitions[0].action.len();
        let mut states = Array2::zeros((n, sd));
        let mut actions = Array2::zeros((n, ad));
        let mut next_states = Array2::zeros((n, sd));
        let mut rewards = Vec::with_capacity(n);
        let mut not_done = Vec::with_capacity(n);
        for (i, t) in data.transitions.iter().enumerate() {
            if t.state.len() != sd || t.next_state.len() != sd || t.action.len() != ad {
                return Err(Error::validation(format!("transition {i} has inconsistent dimensions")));
            }
            for j in 0..sd {
                states[[i, j]] = t.state[j];
                next_states[[i, j]] = t.next_state[j];
            }
            for j in 0..ad {
                actions[[i, j]] = t.action[j];
            }
            rewards.push(t.reward.unwrap_or(0.0));
            not_done.push(if t.done { 0.0 } else { 1.0 });
        }
        let norm = Normalizer::fit(states.view(), STATE_STD_FLOOR)?;
        let states = norm.apply(states.view());
        let next_states = norm.apply(next_states.view());
        Ok(Self {
            states,
            actions,
            next_states,
            rewards,
            not_done,
            norm,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Uniform minibatch with replacement.
    pub fn sample<R: Rng>(&self, batch_size: usize, rng: &mut R) -> Batch {
        let idx: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..self.len())).collect();
        self.gather(&idx)
    }

    pub fn gather(&self, idx: &[usize]) -> Batch {
        Batch {
            states: self.states.select(Axis(0), idx),
            actions: self.actions.select(Axis(0), idx),
            next_states: self.next_states.select(Axis(0), idx),
            rewards: idx.iter().map(|&i| self.rewards[i]).collect(),
            not_done: idx.iter().map(|&i| self.not_done[i]).collect(),
        }
    }
}

/// A minibatch; states are already normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub next_states: Array2<f64>,
    pub rewards: Vec<f64>,
    pub not_done: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// `[states | actions]` critic input.
pub fn state_action(states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Array2<f64> {
    concatenate![Axis(1), states, actions]
}

/// Maps raw actor outputs into the action box: `center + scale · tanh(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Squash {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Squash {
    pub fn new(low: &[f64], high: &[f64]) -> Self {
        Self {
            center: low.iter().zip(high).map(|(l, h)| 0.5 * (l + h)).collect(),
            scale: low.iter().zip(high).map(|(l, h)| 0.5 * (h - l)).collect(),
        }
    }

    /// Returns the squashed actions and `tanh(z)` (needed for the backward pass).
    pub fn forward(&self, z: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let t = z.mapv(f64::tanh);
        let mut a = t.clone();
        for mut row in a.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.center[j] + self.scale[j] * *v;
            }
        }
        (a, t)
    }

    /// Chain rule through the squash: `dL/dz = dL/da · scale · (1 − tanh²)`.
    pub fn backward(&self, tanh_z: &Array2<f64>, d_action: &Array2<f64>) -> Array2<f64> {
        let mut dz = d_action.clone();
        for (mut row, trow) in dz.rows_mut().into_iter().zip(tanh_z.rows()) {
            for (j, v) in row.iter_mut().enumerate() {
                *v *= self.scale[j] * (1.0 - trow[j] * trow[j]);
            }
        }
        dz
    }
}

/// Column-0 values of a `(B, 1)` network output.
pub fn column(out: &Array2<f64>) -> Vec<f64> {
    out.column(0).to_vec()
}

pub fn as_column(values: Vec<f64>) -> Array2<f64> {
    let n = values.len();
    Array2::from_shape_vec((n, 1), values).expect("one column")
}

pub fn divergence(what: &str, step: usize, detail: impl Into<String>) -> Error {
    Error::Divergence {
        what: what.to_string(),
        unit: "step",
        index: step,
        detail: detail.into(),
    }
}
