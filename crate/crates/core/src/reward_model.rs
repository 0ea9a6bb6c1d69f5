//! Supervised reward model `f(s, a; θ)` and dataset imputation.
//!
//! The model regresses raw rewards from the concatenated `(state, action)`
//! vector by minimizing the batch-mean squared error with Adam. Inputs are
//! z-scored with statistics of the labeled set; targets are left on their
//! original scale so imputed rewards can be consumed directly by the critics.
//!
//! Imputation keeps every labeled transition untouched and fills the reward of
//! each unlabeled one with the model prediction, producing the union dataset the
//! offline agents train on.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, NetRecord};
use crate::dataset::{Provenance, Transition, TransitionSet};
use crate::envs::make_env;
use crate::error::{Error, Result};
use crate::nn::{mse_loss, AdamConfig, AdamState, MlpParams};
use crate::seeds::{self, derive_seed};
use crate::stats::{self, Normalizer};

pub const REWARD_MODEL_FORMAT: &str = "orl-impute/reward-model/v1";
pub const INPUT_STD_FLOOR: f64 = 1e-6;
const PREDICT_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardModelConfig {
    pub hidden_sizes: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub input_normalization: bool,
}

impl Default for RewardModelConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![256, 256],
            epochs: 300,
            learning_rate: 1e-4,
            batch_size: 256,
            seed: 0,
            input_normalization: true,
        }
    }
}

impl RewardModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("reward model needs epochs >= 1 and batch_size >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("reward model learning rate must be positive"));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::invalid("hidden sizes must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    pub env_id: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub params: MlpParams,
    pub norm_stats: Normalizer,
    pub config: RewardModelConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Mean training loss of each epoch, averaged over its minibatches weighted by size.
    pub epoch_losses: Vec<f64>,
}

impl TrainingLog {
    /// Trailing moving average over `window` epochs ending at `epoch` (1-based).
    pub fn smoothed(&self, epoch: usize, window: usize) -> f64 {
        let end = epoch.min(self.epoch_losses.len());
        let start = end.saturating_sub(window);
        stats::mean(&self.epoch_losses[start..end])
    }
}

fn concat_inputs(transitions: &[Transition], state_dim: usize, action_dim: usize) -> Array2<f64> {
    let mut x = Array2::zeros((transitions.len(), state_dim + action_dim));
    for (mut row, t) in x.rows_mut().into_iter().zip(transitions) {
        for (j, v) in t.state.iter().chain(&t.action).enumerate() {
            row[j] = *v;
        }
    }
    x
}

/// Fits the reward model on a fully labeled set.
pub fn train_reward_model(
    labeled: &TransitionSet,
    cfg: &RewardModelConfig,
) -> Result<(RewardModel, TrainingLog)> {
    cfg.validate()?;
    if labeled.is_empty() {
        return Err(Error::invalid("cannot train a reward model on zero transitions"));
    }
    labeled.require_labeled("reward model training")?;
    let state_dim = labeled.transitions[0].state.len();
    let action_dim = labeled.transitions[0].action.len();
    let in_dim = state_dim + action_dim;

    let raw = concat_inputs(&labeled.transitions, state_dim, action_dim);
    let norm_stats = if cfg.input_normalization {
        Normalizer::fit(raw.view(), INPUT_STD_FLOOR)?
    } else {
        Normalizer::identity(in_dim)
    };
    let x = norm_stats.apply(raw.view());
    let y: Vec<f64> = labeled.transitions.iter().map(|t| t.reward.expect("checked")).collect();

    let mut sizes = vec![in_dim];
    sizes.extend(&cfg.hidden_sizes);
    sizes.push(1);
    let mut params = MlpParams::init(&sizes, derive_seed(cfg.seed, 0, 0))?;
    let mut adam = AdamState::new(&params, AdamConfig::with_lr(cfg.learning_rate));
    let mut rng = seeds::rng(derive_seed(cfg.seed, 0, 1));

    let n = x.nrows();
    let batch = cfg.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = TrainingLog::default();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let xb = x.select(ndarray::Axis(0), chunk);
            let yb: Vec<f64> = chunk.iter().map(|&i| y[i]).collect();
            let trace = params.forward_trace(xb.view())?;
            let pred = trace.output().column(0).to_vec();
            let (loss, grad) = mse_loss(&pred, &yb)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    what: "reward model".into(),
                    unit: "epoch",
                    index: epoch,
                    detail: format!("training loss is {loss}"),
                });
            }
            epoch_loss += loss * chunk.len() as f64;
            let g = Array2::from_shape_vec((chunk.len(), 1), grad).expect("one column");
            let back = params.backward(&trace, g.view())?;
            adam.step(&mut params, &back.grads).map_err(|e| Error::Divergence {
                what: "reward model".into(),
                unit: "epoch",
                index: epoch,
                detail: e.to_string(),
            })?;
        }
        log.epoch_losses.push(epoch_loss / n as f64);
    }

    Ok((
        RewardModel {
            env_id: labeled.env_id.clone(),
            state_dim,
            action_dim,
            params,
            norm_stats,
            config: cfg.clone(),
        },
        log,
    ))
}

impl RewardModel {
    /// Normalized model inputs for a batch of `(state, action)` rows.
    pub fn model_inputs(&self, raw: &Array2<f64>) -> Result<Array2<f64>> {
        if raw.ncols() != self.state_dim + self.action_dim {
            return Err(Error::shape(format!(
                "reward model expects {} input features, got {}",
                self.state_dim + self.action_dim,
                raw.ncols()
            )));
        }
        Ok(self.norm_stats.apply(raw.view()))
    }

    /// Predictions for raw `(state ‖ action)` rows.
    pub fn predict_raw(&self, raw: &Array2<f64>) -> Result<Vec<f64>> {
        let x = self.model_inputs(raw)?;
        let mut out = Vec::with_capacity(x.nrows());
        let mut start = 0;
        while start < x.nrows() {
            let end = (start + PREDICT_CHUNK).min(x.nrows());
            let y = self.params.forward(x.slice(s![start..end, ..]))?;
            out.extend(y.column(0).iter());
            start = end;
        }
        Ok(out)
    }

    pub fn predict_batch(&self, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<Vec<f64>> {
        if states.len() != actions.len() {
            return Err(Error::shape("states and actions must have equal counts"));
        }
        let mut raw = Array2::zeros((states.len(), self.state_dim + self.action_dim));
        for (i, (s, a)) in states.iter().zip(actions).enumerate() {
            self.check_dims(s, a)?;
            for (j, v) in s.iter().chain(a).enumerate() {
                raw[[i, j]] = *v;
            }
        }
        self.predict_raw(&raw)
    }

    fn check_dims(&self, state: &[f64], action: &[f64]) -> Result<()> {
        if state.len() != self.state_dim || action.len() != self.action_dim {
            return Err(Error::shape(format!(
                "reward model expects state dim {} and action dim {}, got {} and {}",
                self.state_dim,
                self.action_dim,
                state.len(),
                action.len()
            )));
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        format!(
            "mlp{:?} epochs={} lr={} batch={} seed={} norm={}",
            self.params.layer_sizes,
            self.config.epochs,
            self.config.learning_rate,
            self.config.batch_size,
            self.config.seed,
            self.config.input_normalization
        )
    }
}

/// `f(state, action)` for a single pair.
pub fn predict_reward(model: &RewardModel, state: &[f64], action: &[f64]) -> Result<f64> {
    model.check_dims(state, action)?;
    Ok(model.predict_batch(&[state.to_vec()], &[action.to_vec()])?[0])
}

/// Labeled transitions unchanged plus unlabeled ones with predicted rewards.
///
/// When both inputs carry source indices (as produced by
/// [`crate::dataset::split_labels`]) the output follows source order; otherwise
/// it is the labeled records followed by the imputed ones.
pub fn build_imputed_dataset(
    labeled: &TransitionSet,
    unlabeled: &TransitionSet,
    model: &RewardModel,
) -> Result<TransitionSet> {
    if labeled.env_id != unlabeled.env_id || labeled.env_id != model.env_id {
        return Err(Error::validation(format!(
            "environment mismatch: labeled `{}`, unlabeled `{}`, model `{}`",
            labeled.env_id, unlabeled.env_id, model.env_id
        )));
    }
    labeled.require_labeled("imputation (labeled side)")?;
    if let Some(i) = unlabeled.transitions.iter().position(|t| t.reward.is_some()) {
        return Err(Error::invalid(format!(
            "unlabeled transition {i} already carries a reward"
        )));
    }
    if unlabeled.is_empty() {
        return Ok(labeled.clone());
    }

    let states: Vec<Vec<f64>> = unlabeled.transitions.iter().map(|t| t.state.clone()).collect();
    let actions: Vec<Vec<f64>> = unlabeled.transitions.iter().map(|t| t.action.clone()).collect();
    let predicted = model.predict_batch(&states, &actions)?;
    let imputed: Vec<Transition> = unlabeled
        .transitions
        .iter()
        .zip(predicted)
        .map(|(t, r)| Transition {
            reward: Some(r),
            imputed: true,
            ..t.clone()
        })
        .collect();

    let (transitions, source_indices) = match (
        &labeled.provenance.source_indices,
        &unlabeled.provenance.source_indices,
    ) {
        (Some(li), Some(ui)) if li.len() == labeled.len() && ui.len() == unlabeled.len() => {
            let mut merged: Vec<(usize, Transition)> = li
                .iter()
                .copied()
                .zip(labeled.transitions.iter().cloned())
                .chain(ui.iter().copied().zip(imputed))
                .collect();
            merged.sort_by_key(|(i, _)| *i);
            let (idx, ts): (Vec<usize>, Vec<Transition>) = merged.into_iter().unzip();
            (ts, Some(idx))
        }
        _ => {
            let mut ts = labeled.transitions.clone();
            ts.extend(imputed);
            (ts, None)
        }
    };

    Ok(TransitionSet {
        env_id: labeled.env_id.clone(),
        tier: labeled.tier,
        transitions,
        provenance: Provenance {
            source_indices,
            reward_model: Some(model.describe()),
            ..labeled.provenance.clone()
        },
    })
}

/// Agreement between imputed and ground-truth rewards on a holdout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationReport {
    pub n: usize,
    pub mse: f64,
    pub mae: f64,
    pub pearson: f64,
    /// Set when either side had zero variance; `pearson` is then reported as 0.
    pub correlation_degenerate: bool,
    pub reward_variance: f64,
}

impl ImputationReport {
    pub fn from_pairs(predicted: &[f64], truth: &[f64]) -> Result<Self> {
        if predicted.is_empty() {
            return Err(Error::invalid("imputation report needs a non-empty holdout"));
        }
        if predicted.len() != truth.len() {
            return Err(Error::shape("prediction and truth lengths differ"));
        }
        let n = predicted.len() as f64;
        let mse = predicted.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
        let mae = predicted.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
        let (pearson, correlation_degenerate) = stats::pearson(predicted, truth);
        let sd = stats::std_dev(truth);
        Ok(Self {
            n: predicted.len(),
            mse,
            mae,
            pearson,
            correlation_degenerate,
            reward_variance: sd * sd,
        })
    }
}

pub fn imputation_report(model: &RewardModel, holdout: &TransitionSet) -> Result<ImputationReport> {
    if holdout.is_empty() {
        return Err(Error::invalid("imputation report needs a non-empty holdout"));
    }
    holdout.require_labeled("imputation report holdout")?;
    let states: Vec<Vec<f64>> = holdout.transitions.iter().map(|t| t.state.clone()).collect();
    let actions: Vec<Vec<f64>> = holdout.transitions.iter().map(|t| t.action.clone()).collect();
    let predicted = model.predict_batch(&states, &actions)?;
    let truth: Vec<f64> = holdout.transitions.iter().map(|t| t.reward.expect("checked")).collect();
    ImputationReport::from_pairs(&predicted, &truth)
}

#[derive(Debug, Serialize, Deserialize)]
struct RewardModelHeader {
    format: String,
    env_id: String,
    state_dim: usize,
    action_dim: usize,
    config: RewardModelConfig,
    norm_stats: Normalizer,
}

pub fn save_reward_model(model: &RewardModel, path: impl AsRef<Path>) -> Result<()> {
    let header = RewardModelHeader {
        format: REWARD_MODEL_FORMAT.into(),
        env_id: model.env_id.clone(),
        state_dim: model.state_dim,
        action_dim: model.action_dim,
        config: model.config.clone(),
        norm_stats: model.norm_stats.clone(),
    };
    let out = BufWriter::new(File::create(path.as_ref())?);
    checkpoint::write_envelope(out, &header, &[NetRecord::new("reward", &model.params)])
}

pub fn load_reward_model(path: impl AsRef<Path>) -> Result<RewardModel> {
    let input = BufReader::new(File::open(path.as_ref())?);
    let (header, nets): (RewardModelHeader, _) = checkpoint::read_envelope(input)?;
    checkpoint::check_format(&header.format, REWARD_MODEL_FORMAT)?;
    let spec = make_env(&header.env_id).map_err(|e| Error::validation(e.to_string()))?;
    let params = checkpoint::take_net(&nets, "reward")?;
    let in_dim = header.state_dim + header.action_dim;
    if header.state_dim != spec.state_dim
        || header.action_dim != spec.action_dim
        || params.input_dim() != in_dim
        || params.output_dim() != 1
        || header.norm_stats.dim() != in_dim
    {
        return Err(Error::validation("reward model checkpoint dimensions are inconsistent"));
    }
    Ok(RewardModel {
        env_id: header.env_id,
        state_dim: header.state_dim,
        action_dim: header.action_dim,
        params,
        norm_stats: header.norm_stats,
        config: header.config,
    })
}
