//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use super::mlp::{Gradients, MlpParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates for one [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Gradients,
    pub second_moment: Gradients,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(params: &MlpParams, config: AdamConfig) -> Self {
        Self {
            first_moment: Gradients::zeros_like(params),
            second_moment: Gradients::zeros_like(params),
            step_count: 0,
            config,
        }
    }

    /// In-place variant of [`adam_step`], used by the training loops.
    pub fn step(&mut self, params: &mut MlpParams, grads: &Gradients) -> Result<()> {
        if !grads.is_congruent_with(params)
            || !self.first_moment.is_congruent_with(params)
            || !self.second_moment.is_congruent_with(params)
        {
            return Err(Error::shape(
                "parameters, gradients and optimizer moments are not shape-congruent",
            ));
        }
        for (l, (w, b)) in grads.weights.iter().zip(&grads.biases).enumerate() {
            if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient entry in layer {l}"
                )));
            }
        }
        self.step_count += 1;
        let t = self.step_count;
        let cfg = self.config;
        for l in 0..params.num_layers() {
            adam_update_slice(
                params.weights[l].as_slice_mut().expect("standard layout"),
                grads.weights[l].as_standard_layout().as_slice().expect("standard layout"),
                self.first_moment.weights[l].as_slice_mut().expect("standard layout"),
                self.second_moment.weights[l].as_slice_mut().expect("standard layout"),
                &cfg,
                t,
            );
            adam_update_slice(
                params.biases[l].as_slice_mut().expect("standard layout"),
                grads.biases[l].as_slice().expect("standard layout"),
                self.first_moment.biases[l].as_slice_mut().expect("standard layout"),
                self.second_moment.biases[l].as_slice_mut().expect("standard layout"),
                &cfg,
                t,
            );
        }
        Ok(())
    }
}

/// One Adam update. Returns fresh parameters and state; the inputs are not modified.
pub fn adam_step(
    params: &MlpParams,
    grads: &Gradients,
    state: &AdamState,
) -> Result<(MlpParams, AdamState)> {
    let mut p = params.clone();
    let mut s = state.clone();
    s.step(&mut p, grads)?;
    Ok((p, s))
}

/// Adam recurrence over flat slices; `t` is the 1-based step index.
pub fn adam_update_slice(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    cfg: &AdamConfig,
    t: u64,
) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::mlp::mlp_init;

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let p = mlp_init(&[3, 4, 2], 1).unwrap();
        let s = AdamState::new(&p, AdamConfig::default());
        let g = Gradients::zeros_like(&p);
        let (p2, s2) = adam_step(&p, &g, &s).unwrap();
        assert_eq!(p, p2);
        assert_eq!(s2.step_count, 1);
        assert_eq!(s.step_count, 0);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let p = mlp_init(&[3, 2], 1).unwrap();
        let cfg = AdamConfig::with_lr(1e-3);
        let s = AdamState::new(&p, cfg);
        let mut g = Gradients::zeros_like(&p);
        g.weights[0] = ndarray::Array2::from_shape_fn((2, 3), |(i, j)| (i as f64 - 0.5) * (j as f64 + 1.0));
        g.biases[0] = ndarray::array![0.3, -2.0];
        let (p2, _) = adam_step(&p, &g, &s).unwrap();
        for ((new, old), gi) in p2.flatten().iter().zip(p.flatten()).zip(g.flatten()) {
            let expect = -cfg.lr * gi / (gi.abs() + cfg.epsilon);
            assert!((new - old - expect).abs() < 1e-6);
            assert!(((new - old) + cfg.lr * gi.signum()).abs() < 1e-6);
        }
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let p = mlp_init(&[3, 4, 2], 1).unwrap();
        let s = AdamState::new(&p, AdamConfig::default());
        let mut g = Gradients::zeros_like(&p);
        g.biases[1][0] = f64::NAN;
        let err = adam_step(&p, &g, &s).unwrap_err();
        match err {
            Error::Numeric(msg) => assert!(msg.contains("layer 1"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn incongruent_shapes_are_rejected() {
        let p = mlp_init(&[3, 4, 2], 1).unwrap();
        let q = mlp_init(&[3, 5, 2], 1).unwrap();
        let s = AdamState::new(&p, AdamConfig::default());
        assert!(matches!(
            adam_step(&p, &Gradients::zeros_like(&q), &s),
            Err(Error::Shape(_))
        ));
    }
}
