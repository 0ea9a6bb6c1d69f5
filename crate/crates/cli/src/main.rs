use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use orl_impute::dataset::{generate_dataset, load_dataset, save_dataset, split_labels, Tier};
use orl_impute::envs::make_env;
use orl_impute::experiment::{evaluate_agent, run_experiment_with, ExperimentConfig, ExperimentResult};
use orl_impute::offline_rl::{load_agent, save_agent, train_agent, Algorithm};
use orl_impute::report::{emit_report, ReportFormat};
use orl_impute::reward_model::{
    build_imputed_dataset, imputation_report, load_reward_model, save_reward_model, train_reward_model,
};
use orl_impute::seeds::{derive_seed, stream};

/// Reward imputation for offline RL: datasets, reward models, agents and experiments.
#[derive(Parser)]
#[command(name = "orl-impute", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a tiered dataset.
    GenData(GenData),
    /// Split a dataset and fit a reward model on its labeled part.
    TrainRm(TrainRm),
    /// Fill in missing rewards with a trained reward model.
    Impute(Impute),
    /// Train an offline agent on a fully labeled (or, for bc, any) dataset.
    TrainAgent(TrainAgent),
    /// Evaluate an agent checkpoint.
    Eval(Eval),
    /// Run the full baseline / fraction-only / imputed experiment.
    RunExperiment(RunExperiment),
    /// Render saved experiment results.
    Report(Report),
}

#[derive(Args)]
struct ConfigArg {
    /// TOML experiment config; its sections supply defaults for this stage.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading config {}", p.display())),
            None => Ok(ExperimentConfig::default()),
        }
    }
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    env: String,
    #[arg(long)]
    tier: Tier,
    #[arg(long, default_value_t = 100_000)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainRm {
    #[command(flatten)]
    config: ConfigArg,
    /// Fully labeled dataset to split.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for labeled.jsonl, unlabeled.jsonl and reward_model.jsonl.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Impute {
    #[arg(long)]
    labeled: PathBuf,
    #[arg(long)]
    unlabeled: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainAgent {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    algo: Algorithm,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overrides the configured number of gradient steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Eval {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    agent: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Arm label recorded in the report.
    #[arg(long, default_value = "adhoc")]
    arm: String,
    /// Write the JSON report here instead of printing a summary only.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunExperiment {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    tier: Option<Tier>,
    #[arg(long)]
    fraction: Option<f64>,
    /// Restrict the reward-consuming algorithms (repeatable).
    #[arg(long)]
    algo: Vec<Algorithm>,
    #[arg(long, default_value = "table")]
    format: ReportFormat,
}

#[derive(Args)]
struct Report {
    /// One or more results.json files; each becomes a table row.
    #[arg(long, num_args = 1.., required = true)]
    results: Vec<PathBuf>,
    #[arg(long, default_value = "table")]
    format: ReportFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_or_print(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn gen_data(a: GenData) -> Result<()> {
    let spec = make_env(&a.env)?;
    let data = generate_dataset(&spec, a.tier, a.size, derive_seed(a.seed, stream::DATASET, 0))?;
    save_dataset(&data, &a.out)?;
    let returns = data.episode_returns();
    let mean = returns.iter().sum::<f64>() / returns.len().max(1) as f64;
    println!(
        "wrote {} transitions ({} episodes, mean normalized score {:.2}) to {}",
        data.len(),
        returns.len(),
        orl_impute::envs::normalized_score(&spec, mean),
        a.out.display()
    );
    Ok(())
}

fn train_rm(a: TrainRm) -> Result<()> {
    let cfg = a.config.load()?;
    let data = load_dataset(&a.data)?;
    let split = split_labels(&data, a.fraction, a.seed)?;
    let mut rm_cfg = cfg.reward_model.clone();
    rm_cfg.seed = a.seed;
    let (model, log) = train_reward_model(&split.labeled, &rm_cfg)?;
    fs::create_dir_all(&a.out)?;
    save_dataset(&split.labeled, a.out.join("labeled.jsonl"))?;
    save_dataset(&split.unlabeled, a.out.join("unlabeled.jsonl"))?;
    save_reward_model(&model, a.out.join("reward_model.jsonl"))?;
    println!(
        "{} labeled / {} unlabeled; final training loss {:.6}",
        split.labeled.len(),
        split.unlabeled.len(),
        log.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    let idx = split.unlabeled_indices();
    if !idx.is_empty() {
        let mut holdout = data.clone();
        holdout.transitions = idx.iter().map(|&i| data.transitions[i].clone()).collect();
        let r = imputation_report(&model, &holdout)?;
        println!("holdout: pearson {:.4}, mse {:.6}, reward variance {:.6}", r.pearson, r.mse, r.reward_variance);
    }
    Ok(())
}

fn impute(a: Impute) -> Result<()> {
    let labeled = load_dataset(&a.labeled)?;
    let unlabeled = load_dataset(&a.unlabeled)?;
    let model = load_reward_model(&a.model)?;
    let imputed = build_imputed_dataset(&labeled, &unlabeled, &model)?;
    save_dataset(&imputed, &a.out)?;
    println!(
        "wrote {} transitions ({} imputed) to {}",
        imputed.len(),
        imputed.transitions.iter().filter(|t| t.imputed).count(),
        a.out.display()
    );
    Ok(())
}

fn train_agent_cmd(a: TrainAgent) -> Result<()> {
    let cfg = a.config.load()?;
    let data = load_dataset(&a.data)?;
    let mut agent_cfg = cfg.agent_config(a.algo).clone();
    agent_cfg.seed = a.seed;
    if let Some(s) = a.steps {
        agent_cfg.training_steps = s;
    }
    let agent = train_agent(&data, &agent_cfg)?;
    save_agent(&agent, &a.out)?;
    println!("trained {} for {} steps; wrote {}", a.algo.label(), agent.log.len(), a.out.display());
    Ok(())
}

fn eval(a: Eval) -> Result<()> {
    let cfg = a.config.load()?;
    let agent = load_agent(&a.agent)?;
    let spec = make_env(&agent.env_id)?;
    let report = evaluate_agent(&spec, &agent, &cfg.protocol, a.seed, &a.arm)?;
    println!(
        "{} normalized score {:.2} ± {:.2} over {} seeds (tail metric {:.2})",
        report.label(),
        report.normalized_score,
        report.score_std_across_seeds,
        report.per_seed.len(),
        report.tail_normalized_score
    );
    if let Some(out) = &a.out {
        fs::write(out, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    Ok(())
}

fn run_experiment_cmd(a: RunExperiment) -> Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = a.out {
        cfg.output_dir = o;
    }
    if let Some(e) = a.env {
        cfg.env_id = e;
    }
    if let Some(t) = a.tier {
        cfg.tier = t;
    }
    if let Some(f) = a.fraction {
        cfg.label_fraction = f;
    }
    if !a.algo.is_empty() {
        cfg.algorithms = a.algo;
    }
    let result = run_experiment_with(&cfg, &mut |stage| eprintln!("[{}] {stage}", cfg.output_dir.display()))?;
    match emit_report(std::slice::from_ref(&result), a.format) {
        Ok(text) => print!("{text}"),
        Err(e) => eprintln!("report skipped: {e}"),
    }
    Ok(())
}

fn report(a: Report) -> Result<()> {
    let results = a
        .results
        .iter()
        .map(|p| ExperimentResult::load(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    if results.is_empty() {
        bail!("no results given");
    }
    let text = emit_report(&results, a.format)?;
    write_or_print(&text, a.out.as_deref())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::TrainRm(a) => train_rm(a),
        Command::Impute(a) => impute(a),
        Command::TrainAgent(a) => train_agent_cmd(a),
        Command::Eval(a) => eval(a),
        Command::RunExperiment(a) => run_experiment_cmd(a),
        Command::Report(a) => report(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
