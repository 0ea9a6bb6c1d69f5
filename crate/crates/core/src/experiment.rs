//! End-to-end experiment: generate → split → reward model → impute → train every
//! arm → evaluate → aggregate, with every intermediate artifact persisted.
//!
//! Stage seeds come from `derive_path(master_seed, stream, [seed_index, ..])`.
//! The dataset is generated once; the split, reward model, agents and
//! evaluation episodes are redrawn for each of the `protocol.n_seeds` repeats.
//! Agents for the same algorithm and repeat share an init seed across arms, so
//! arms differ only in their training data.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{generate_dataset, load_dataset, save_dataset, split_labels, Tier, TransitionSet};
use crate::envs::{make_env, EnvSpec, POINTMASS_ID};
use crate::error::{Error, Result};
use crate::eval::{aggregate_seeds, evaluate_policy, EvalProtocol, EvalReport, SeedResult};
use crate::offline_rl::{save_agent, train_agent, AgentConfig, Algorithm};
use crate::reward_model::{build_imputed_dataset, save_reward_model, train_reward_model, ImputationReport, RewardModelConfig};
use crate::seeds::{derive_path, derive_seed, stream};

pub const BASELINE: &str = "baseline";
pub const FRACTION_ONLY: &str = "fraction_only";
pub const FRACTION_IMPUTED: &str = "fraction_imputed";

/// Arm name for a sweep point other than the main label fraction.
pub fn sweep_arm(fraction: f64) -> String {
    format!("{FRACTION_ONLY}@{fraction}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env_id: String,
    pub tier: Tier,
    pub dataset_size: usize,
    /// Load this dataset instead of generating one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_path: Option<PathBuf>,
    pub label_fraction: f64,
    /// Extra fractions for a fraction-only sweep.
    pub label_fractions: Vec<f64>,
    /// Reward-consuming algorithms run on every arm.
    pub algorithms: Vec<Algorithm>,
    /// Also run behavior cloning on the baseline arm.
    pub include_bc: bool,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Write split and imputed datasets for every repeat.
    pub persist_datasets: bool,
    pub reward_model: RewardModelConfig,
    pub td3bc: AgentConfig,
    pub iql: AgentConfig,
    pub bc: AgentConfig,
    pub protocol: EvalProtocol,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env_id: POINTMASS_ID.into(),
            tier: Tier::Medium,
            dataset_size: 100_000,
            dataset_path: None,
            label_fraction: 0.01,
            label_fractions: Vec::new(),
            algorithms: vec![Algorithm::Td3bc, Algorithm::Iql],
            include_bc: true,
            master_seed: 0,
            output_dir: PathBuf::from("runs"),
            persist_datasets: true,
            reward_model: RewardModelConfig::default(),
            td3bc: AgentConfig::new(Algorithm::Td3bc),
            iql: AgentConfig::new(Algorithm::Iql),
            bc: AgentConfig::new(Algorithm::Bc),
            protocol: EvalProtocol::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.td3bc.algorithm = Algorithm::Td3bc;
        cfg.iql.algorithm = Algorithm::Iql;
        cfg.bc.algorithm = Algorithm::Bc;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path.as_ref())?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn agent_config(&self, alg: Algorithm) -> &AgentConfig {
        match alg {
            Algorithm::Td3bc => &self.td3bc,
            Algorithm::Iql => &self.iql,
            Algorithm::Bc => &self.bc,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        make_env(&self.env_id).map_err(|e| Error::Config(e.to_string()))?;
        if self.dataset_size == 0 && self.dataset_path.is_none() {
            return cfg_err("dataset_size must be positive".into());
        }
        let in_range = |f: f64| f > 0.0 && f <= 1.0;
        if !in_range(self.label_fraction) {
            return cfg_err(format!("label_fraction must lie in (0, 1], got {}", self.label_fraction));
        }
        for (i, f) in self.label_fractions.iter().enumerate() {
            if !in_range(*f) {
                return cfg_err(format!("label_fractions[{i}] = {f} is outside (0, 1]"));
            }
            if self.label_fractions[..i].contains(f) {
                return cfg_err(format!("label_fractions lists {f} twice"));
            }
        }
        if self.algorithms.is_empty() {
            return cfg_err("at least one algorithm is required".into());
        }
        for (i, a) in self.algorithms.iter().enumerate() {
            if *a == Algorithm::Bc {
                return cfg_err("bc runs on the baseline arm only; use include_bc".into());
            }
            if self.algorithms[..i].contains(a) {
                return cfg_err(format!("algorithm {a} listed twice"));
            }
        }
        for (name, c) in [("td3bc", &self.td3bc), ("iql", &self.iql), ("bc", &self.bc)] {
            c.validate().map_err(|e| Error::Config(format!("[{name}] {e}")))?;
        }
        self.reward_model.validate().map_err(|e| Error::Config(format!("[reward_model] {e}")))?;
        self.protocol.validate().map_err(|e| Error::Config(format!("[protocol] {e}")))?;
        Ok(())
    }

    /// Fraction-only sweep points that are not the main label fraction.
    pub fn sweep_fractions(&self) -> Vec<f64> {
        self.label_fractions
            .iter()
            .copied()
            .filter(|f| *f != self.label_fraction)
            .collect()
    }

    /// Every (arm, algorithm) pair this config produces, in report order.
    pub fn arms(&self) -> Vec<(String, Algorithm)> {
        let mut out: Vec<(String, Algorithm)> = self.algorithms.iter().map(|a| (BASELINE.to_string(), *a)).collect();
        if self.include_bc {
            out.push((BASELINE.into(), Algorithm::Bc));
        }
        for arm in [FRACTION_ONLY, FRACTION_IMPUTED] {
            out.extend(self.algorithms.iter().map(|a| (arm.to_string(), *a)));
        }
        for f in self.sweep_fractions() {
            out.extend(self.algorithms.iter().map(|a| (sweep_arm(f), *a)));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputationDiagnostics {
    pub seed_index: usize,
    pub n_labeled: usize,
    /// Imputed versus ground-truth rewards on the unlabeled part; absent when nothing was imputed.
    pub holdout: Option<ImputationReport>,
    pub final_training_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub reports: Vec<EvalReport>,
    pub imputation: Vec<ImputationDiagnostics>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
    /// Kept out of `results.json` so reruns compare byte-for-byte; see `timings.json`.
    #[serde(skip)]
    pub timings: Vec<StageTiming>,
}

impl ExperimentResult {
    pub fn report(&self, arm: &str, alg: Algorithm) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.arm == arm && r.algorithm == alg.as_str())
    }

    pub fn score(&self, arm: &str, alg: Algorithm) -> Option<f64> {
        self.report(arm, alg).map(|r| r.normalized_score)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            record: None,
            detail: e.to_string(),
        })
    }
}

#[derive(Debug, Serialize)]
struct FailureManifest<'a> {
    stage: &'a str,
    error: String,
    artifacts: &'a [String],
}

struct Run<'a> {
    out: PathBuf,
    artifacts: Vec<String>,
    timings: Vec<StageTiming>,
    progress: &'a mut dyn FnMut(&str),
}

impl Run<'_> {
    /// Runs `f` as `stage`, timing it and tagging any error with the stage name.
    fn stage<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        (self.progress)(stage);
        let start = Instant::now();
        let res = f(self);
        self.timings.push(StageTiming {
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        res.map_err(|e| match e {
            Error::Stage { .. } => e,
            other => Error::Stage {
                stage: stage.to_string(),
                source: Box::new(other),
            },
        })
    }

    fn path(&mut self, rel: String) -> Result<PathBuf> {
        let p = self.out.join(&rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        self.artifacts.push(rel);
        Ok(p)
    }

    fn write_text(&mut self, rel: &str, text: &str) -> Result<()> {
        let p = self.path(rel.to_string())?;
        let mut f = fs::File::create(p)?;
        f.write_all(text.as_bytes())?;
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(std::io::Error::from)?;
        self.write_text(rel, &(text + "\n"))
    }
}

fn file_stem(arm: &str) -> String {
    arm.replace('@', "_at_")
}

/// Runs the full pipeline without progress output.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with(cfg, &mut |_| {})
}

/// Runs the full pipeline, calling `progress` with each stage name as it starts.
///
/// On failure a `failure.json` manifest naming the stage is written next to
/// whatever artifacts were already persisted.
pub fn run_experiment_with(cfg: &ExperimentConfig, progress: &mut dyn FnMut(&str)) -> Result<ExperimentResult> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir)?;
    let failure_path = cfg.output_dir.join("failure.json");
    if failure_path.exists() {
        fs::remove_file(&failure_path)?;
    }
    let mut run = Run {
        out: cfg.output_dir.clone(),
        artifacts: Vec::new(),
        timings: Vec::new(),
        progress,
    };
    let mut current = String::from("setup");
    match pipeline(cfg, &mut run, &mut current) {
        Ok(result) => Ok(result),
        Err(e) => {
            let stage = match &e {
                Error::Stage { stage, .. } => stage.clone(),
                _ => current,
            };
            let manifest = FailureManifest {
                stage: &stage,
                error: e.to_string(),
                artifacts: &run.artifacts,
            };
            if let Ok(text) = serde_json::to_string_pretty(&manifest) {
                let _ = fs::write(&failure_path, text + "\n");
            }
            Err(e)
        }
    }
}

fn pipeline(cfg: &ExperimentConfig, run: &mut Run<'_>, current: &mut String) -> Result<ExperimentResult> {
    let spec = make_env(&cfg.env_id)?;
    let master = cfg.master_seed;
    run.write_text("config.resolved.toml", &cfg.to_toml()?)?;

    *current = "generate".into();
    let data = run.stage("generate", |run| {
        let data = match &cfg.dataset_path {
            Some(p) => load_dataset(p)?,
            None => generate_dataset(&spec, cfg.tier, cfg.dataset_size, derive_seed(master, stream::DATASET, 0))?,
        };
        data.validate_against(&spec)?;
        data.require_labeled("the baseline arm")?;
        let p = run.path("dataset.jsonl".into())?;
        save_dataset(&data, p)?;
        Ok(data)
    })?;

    let arms = cfg.arms();
    let mut per_arm: Vec<Vec<SeedResult>> = vec![Vec::new(); arms.len()];
    let mut imputation = Vec::new();

    for k in 0..cfg.protocol.n_seeds {
        let ki = k as u64;
        let split_seed = derive_path(master, stream::SPLIT, &[ki]);
        let eval_seed = derive_path(master, stream::EVAL, &[ki]);

        *current = format!("split[{k}]");
        let split = run.stage(&format!("split[{k}]"), |run| {
            let split = split_labels(&data, cfg.label_fraction, split_seed)?;
            if cfg.persist_datasets {
                let p = run.path(format!("seed{k}/labeled.jsonl"))?;
                save_dataset(&split.labeled, p)?;
            }
            Ok(split)
        })?;

        *current = format!("reward_model[{k}]");
        let (model, log) = run.stage(&format!("reward_model[{k}]"), |run| {
            let mut rm_cfg = cfg.reward_model.clone();
            rm_cfg.seed = derive_path(master, stream::REWARD_MODEL, &[ki]);
            let (model, log) = train_reward_model(&split.labeled, &rm_cfg)?;
            let p = run.path(format!("seed{k}/reward_model.jsonl"))?;
            save_reward_model(&model, p)?;
            Ok((model, log))
        })?;

        *current = format!("impute[{k}]");
        let imputed = run.stage(&format!("impute[{k}]"), |run| {
            let imputed = build_imputed_dataset(&split.labeled, &split.unlabeled, &model)?;
            if cfg.persist_datasets {
                let p = run.path(format!("seed{k}/imputed.jsonl"))?;
                save_dataset(&imputed, p)?;
            }
            Ok(imputed)
        })?;
        let idx = split.unlabeled_indices();
        let holdout = if idx.is_empty() {
            None
        } else {
            let pred: Vec<f64> = idx.iter().map(|&i| imputed.transitions[i].reward.unwrap_or(f64::NAN)).collect();
            let truth: Vec<f64> = idx.iter().map(|&i| data.transitions[i].reward.unwrap_or(f64::NAN)).collect();
            Some(ImputationReport::from_pairs(&pred, &truth)?)
        };
        imputation.push(ImputationDiagnostics {
            seed_index: k,
            n_labeled: split.labeled.len(),
            holdout,
            final_training_loss: log.epoch_losses.last().copied().unwrap_or(f64::NAN),
        });

        let mut sweep_sets: Vec<(f64, TransitionSet)> = Vec::new();
        for f in cfg.sweep_fractions() {
            *current = format!("split@{f}[{k}]");
            let set = run.stage(&format!("split@{f}[{k}]"), |run| {
                let s = split_labels(&data, f, split_seed)?;
                if cfg.persist_datasets {
                    let p = run.path(format!("seed{k}/labeled_{f}.jsonl"))?;
                    save_dataset(&s.labeled, p)?;
                }
                Ok(s.labeled)
            })?;
            sweep_sets.push((f, set));
        }

        for (slot, (arm, alg)) in arms.iter().enumerate() {
            let train_set: &TransitionSet = match arm.as_str() {
                BASELINE => &data,
                FRACTION_ONLY => &split.labeled,
                FRACTION_IMPUTED => &imputed,
                other => {
                    let (_, set) = sweep_sets
                        .iter()
                        .find(|(f, _)| sweep_arm(*f) == other)
                        .ok_or_else(|| Error::invalid(format!("unknown arm {other}")))?;
                    set
                }
            };
            let mut agent_cfg = cfg.agent_config(*alg).clone();
            agent_cfg.seed = derive_path(master, stream::AGENT, &[ki, *alg as u64]);
            let stage = format!("train_agent[{arm}/{alg}/{k}]");
            *current = stage.clone();
            let agent = run.stage(&stage, |run| {
                let agent = train_agent(train_set, &agent_cfg)?;
                let p = run.path(format!("agents/{}_{alg}_seed{k}.jsonl", file_stem(arm)))?;
                save_agent(&agent, p)?;
                Ok(agent)
            })?;
            let stage = format!("evaluate[{arm}/{alg}/{k}]");
            *current = stage.clone();
            let res = run.stage(&stage, |_| evaluate_policy(&spec, &agent, &cfg.protocol, eval_seed))?;
            per_arm[slot].push(res.with_arm(arm.clone()));
        }
    }

    *current = "aggregate".into();
    let reports = run.stage("aggregate", |_| {
        per_arm
            .iter()
            .map(|seeds| aggregate_seeds(seeds, &spec, &cfg.protocol))
            .collect::<Result<Vec<_>>>()
    })?;

    *current = "persist".into();
    run.stage("persist", |run| {
        for r in &reports {
            run.write_json(&format!("reports/{}_{}.json", file_stem(&r.arm), r.algorithm), r)?;
        }
        Ok(())
    })?;
    let mut result = ExperimentResult {
        config: cfg.clone(),
        reports,
        imputation,
        artifacts: Vec::new(),
        timings: Vec::new(),
    };
    run.stage("persist", |run| {
        if let Ok(table) = crate::report::emit_report(std::slice::from_ref(&result), crate::report::ReportFormat::Csv) {
            run.write_text("table.csv", &table)?;
        }
        run.artifacts.push("results.json".into());
        Ok(())
    })?;
    result.artifacts = run.artifacts.clone();
    let text = serde_json::to_string_pretty(&result).map_err(std::io::Error::from)?;
    fs::write(run.out.join("results.json"), text + "\n")?;
    result.timings = std::mem::take(&mut run.timings);
    let timings = serde_json::to_string_pretty(&result.timings).map_err(std::io::Error::from)?;
    fs::write(run.out.join("timings.json"), timings + "\n")?;
    Ok(result)
}

/// Evaluation helper used by the CLI: scores one agent over `protocol.n_seeds` seeds.
pub fn evaluate_agent(
    spec: &EnvSpec,
    agent: &crate::offline_rl::AgentArtifact,
    protocol: &EvalProtocol,
    master_seed: u64,
    arm: &str,
) -> Result<EvalReport> {
    let seeds = (0..protocol.n_seeds)
        .map(|k| {
            evaluate_policy(spec, agent, protocol, derive_path(master_seed, stream::EVAL, &[k as u64]))
                .map(|r| r.with_arm(arm))
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate_seeds(&seeds, spec, protocol)
}
