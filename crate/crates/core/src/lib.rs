//! Reward-model imputation for offline reinforcement learning.
//!
//! A small reward model is fitted on the labeled fraction of a dataset, used to
//! impute rewards for the remaining transitions, and offline agents (TD3+BC,
//! IQL, BC) are trained and evaluated on the resulting datasets.

pub mod checkpoint;
pub mod dataset;
pub mod envs;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod nn;
pub mod offline_rl;
pub mod report;
pub mod reward_model;
pub mod seeds;
pub mod stats;

pub use error::{Error, Result};
