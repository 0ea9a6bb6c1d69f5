//! Offline datasets: tiered generation, labeled/unlabeled splitting and JSON-lines persistence.

pub mod behavior;
mod generate;
mod io;
mod split;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::envs::EnvSpec;
use crate::error::{Error, Result};

pub use generate::generate_dataset;
pub use io::{load_dataset, read_dataset, save_dataset, write_dataset, DatasetHeader, DATASET_FORMAT};
pub use split::{split_labels, SplitDataset};

/// One `(s, a, s′, r?, done)` sample.
///
/// `timeout` marks an episode cut by the horizon rather than by termination;
/// TD targets keep bootstrapping through it. `imputed` marks rewards written by
/// a reward model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
    pub done: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    pub timeout: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    pub imputed: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    MediumReplay,
    Medium,
    MediumExpert,
    Expert,
    Random,
}

impl Tier {
    pub const ALL: [Tier; 5] = [
        Tier::MediumReplay,
        Tier::Medium,
        Tier::MediumExpert,
        Tier::Expert,
        Tier::Random,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Tier::MediumReplay => "medium_replay",
            Tier::Medium => "medium",
            Tier::MediumExpert => "medium_expert",
            Tier::Expert => "expert",
            Tier::Random => "random",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Tier::ALL
            .into_iter()
            .find(|t| t.as_str() == norm)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown tier `{s}`; expected one of medium_replay, medium, medium_expert, expert, random"
                ))
            })
    }
}

/// Where a [`TransitionSet`] came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub behavior: String,
    /// Index of each record in the dataset it was split from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_indices: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_seed: Option<u64>,
    /// Set when some rewards were imputed; describes the reward model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_model: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSet {
    pub env_id: String,
    pub tier: Tier,
    pub transitions: Vec<Transition>,
    pub provenance: Provenance,
}

impl TransitionSet {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn all_labeled(&self) -> bool {
        self.transitions.iter().all(|t| t.reward.is_some())
    }

    pub fn all_unlabeled(&self) -> bool {
        self.transitions.iter().all(|t| t.reward.is_none())
    }

    pub fn count_labeled(&self) -> usize {
        self.transitions.iter().filter(|t| t.reward.is_some()).count()
    }

    /// Errors unless every transition carries a reward; `what` names the consumer.
    pub fn require_labeled(&self, what: &str) -> Result<()> {
        match self.transitions.iter().position(|t| t.reward.is_none()) {
            None => Ok(()),
            Some(i) => Err(Error::invalid(format!(
                "{what} needs every reward present, but transition {i} has none; impute rewards first"
            ))),
        }
    }

    /// Checks dimensions against `spec` and finiteness of rewards.
    pub fn validate_against(&self, spec: &EnvSpec) -> Result<()> {
        if self.env_id != spec.env_id {
            return Err(Error::validation(format!(
                "dataset is for `{}`, environment is `{}`",
                self.env_id, spec.env_id
            )));
        }
        for (i, t) in self.transitions.iter().enumerate() {
            if t.state.len() != spec.state_dim
                || t.next_state.len() != spec.state_dim
                || t.action.len() != spec.action_dim
            {
                return Err(Error::validation(format!(
                    "record {i} has dims state {}/next {}/action {}, `{}` needs {}/{}/{}",
                    t.state.len(),
                    t.next_state.len(),
                    t.action.len(),
                    spec.env_id,
                    spec.state_dim,
                    spec.state_dim,
                    spec.action_dim
                )));
            }
            if let Some(r) = t.reward {
                if !r.is_finite() {
                    return Err(Error::validation(format!("record {i} has non-finite reward")));
                }
            }
        }
        Ok(())
    }

    /// Undiscounted returns of every complete episode (ended by `done` or
    /// `timeout`); a trailing partial episode is dropped. Unlabeled rewards count as 0.
    pub fn episode_returns(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut acc = 0.0;
        for t in &self.transitions {
            acc += t.reward.unwrap_or(0.0);
            if t.done || t.timeout {
                out.push(acc);
                acc = 0.0;
            }
        }
        out
    }
}
