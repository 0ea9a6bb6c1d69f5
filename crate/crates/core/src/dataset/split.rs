use rand::seq::index;

use super::{Provenance, TransitionSet};
use crate::error::{Error, Result};
use crate::seeds;

/// A dataset partitioned into reward-labeled and reward-free transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub labeled: TransitionSet,
    pub unlabeled: TransitionSet,
    pub label_fraction: f64,
    pub split_seed: u64,
}

impl SplitDataset {
    pub fn labeled_indices(&self) -> &[usize] {
        self.labeled.provenance.source_indices.as_deref().unwrap_or(&[])
    }

    pub fn unlabeled_indices(&self) -> &[usize] {
        self.unlabeled.provenance.source_indices.as_deref().unwrap_or(&[])
    }
}

/// Keeps rewards on `round(fraction · N)` transitions chosen uniformly without
/// replacement and strips them from the rest. Both sides stay in source order.
pub fn split_labels(data: &TransitionSet, fraction: f64, seed: u64) -> Result<SplitDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "label fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let n = data.len();
    let k = (fraction * n as f64).round() as usize;
    if k == 0 {
        return Err(Error::invalid(format!(
            "label fraction {fraction} of {n} transitions rounds to zero labeled samples"
        )));
    }
    data.require_labeled("split_labels")?;

    let mut chosen = vec![false; n];
    let mut rng = seeds::rng(seed);
    for i in index::sample(&mut rng, n, k) {
        chosen[i] = true;
    }

    let mut labeled = Vec::with_capacity(k);
    let mut unlabeled = Vec::with_capacity(n - k);
    let mut labeled_idx = Vec::with_capacity(k);
    let mut unlabeled_idx = Vec::with_capacity(n - k);
    for (i, t) in data.transitions.iter().enumerate() {
        if chosen[i] {
            labeled.push(t.clone());
            labeled_idx.push(i);
        } else {
            let mut u = t.clone();
            u.reward = None;
            unlabeled.push(u);
            unlabeled_idx.push(i);
        }
    }

    let side = |transitions, indices| TransitionSet {
        env_id: data.env_id.clone(),
        tier: data.tier,
        transitions,
        provenance: Provenance {
            source_indices: Some(indices),
            label_fraction: Some(fraction),
            split_seed: Some(seed),
            ..data.provenance.clone()
        },
    };
    Ok(SplitDataset {
        labeled: side(labeled, labeled_idx),
        unlabeled: side(unlabeled, unlabeled_idx),
        label_fraction: fraction,
        split_seed: seed,
    })
}
