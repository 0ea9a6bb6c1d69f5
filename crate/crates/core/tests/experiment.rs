use std::fs;
use std::path::Path;

use orl_impute::dataset::{load_dataset, split_labels, Tier};
use orl_impute::envs::PENDULUM_ID;
use orl_impute::experiment::{run_experiment, sweep_arm, ExperimentConfig, BASELINE, FRACTION_IMPUTED, FRACTION_ONLY};
use orl_impute::offline_rl::Algorithm;
use orl_impute::report::{emit_report, ReportFormat};
use orl_impute::Error;

fn tiny(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        dataset_size: 1500,
        label_fraction: 0.05,
        output_dir: out.to_path_buf(),
        master_seed: 7,
        ..ExperimentConfig::default()
    };
    cfg.reward_model.epochs = 3;
    cfg.reward_model.hidden_sizes = vec![16, 16];
    for agent in [&mut cfg.td3bc, &mut cfg.iql, &mut cfg.bc] {
        agent.training_steps = 12;
        agent.hidden_sizes = vec![8, 8];
        agent.batch_size = 16;
    }
    cfg.protocol.n_seeds = 2;
    cfg.protocol.n_episodes = 2;
    cfg
}

fn read_reports(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir.join("reports"))
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.push(("table.csv".into(), fs::read(dir.join("table.csv")).unwrap()));
    files.push(("results.json".into(), fs::read(dir.join("results.json")).unwrap()));
    files.sort();
    files
}

#[test]
fn default_arms_produce_seven_reports_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let res = run_experiment(&cfg).unwrap();
    let got: Vec<(String, String)> = res.reports.iter().map(|r| (r.arm.clone(), r.algorithm.clone())).collect();
    let want: Vec<(String, String)> = [
        (BASELINE, "td3bc"),
        (BASELINE, "iql"),
        (BASELINE, "bc"),
        (FRACTION_ONLY, "td3bc"),
        (FRACTION_ONLY, "iql"),
        (FRACTION_IMPUTED, "td3bc"),
        (FRACTION_IMPUTED, "iql"),
    ]
    .iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect();
    assert_eq!(got, want);
    for r in &res.reports {
        assert_eq!(r.per_seed.len(), 2);
        assert!(r.per_seed.iter().all(|s| s.episode_returns.len() == 2));
    }
    for rel in &res.artifacts {
        assert!(dir.path().join(rel).exists(), "{rel}");
    }
    for f in ["config.resolved.toml", "timings.json", "results.json", "table.csv", "dataset.jsonl"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert!(dir.path().join("agents/fraction_imputed_iql_seed1.jsonl").exists());
    assert!(!dir.path().join("failure.json").exists());
    assert_eq!(res.imputation.len(), 2);
    assert!(res.imputation.iter().all(|d| d.n_labeled == 75 && d.holdout.as_ref().unwrap().n == 1425));

    let resolved = ExperimentConfig::load(dir.path().join("config.resolved.toml")).unwrap();
    assert_eq!(resolved, cfg);
    let reloaded = orl_impute::experiment::ExperimentResult::load(dir.path().join("results.json")).unwrap();
    assert_eq!(reloaded.reports, res.reports);
    assert!(emit_report(&[reloaded], ReportFormat::Table).is_ok());
}

#[test]
fn imputed_arm_keeps_labeled_subset_of_fraction_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.protocol.n_seeds = 1;
    cfg.algorithms = vec![Algorithm::Td3bc];
    cfg.include_bc = false;
    run_experiment(&cfg).unwrap();
    let full = load_dataset(dir.path().join("dataset.jsonl")).unwrap();
    let labeled = load_dataset(dir.path().join("seed0/labeled.jsonl")).unwrap();
    let imputed = load_dataset(dir.path().join("seed0/imputed.jsonl")).unwrap();
    assert_eq!(imputed.len(), full.len());
    let idx = labeled.provenance.source_indices.clone().unwrap();
    for (t, &i) in labeled.transitions.iter().zip(&idx) {
        assert_eq!(&imputed.transitions[i], t);
        assert_eq!(t.reward, full.transitions[i].reward);
    }
    assert_eq!(imputed.transitions.iter().filter(|t| t.imputed).count(), full.len() - labeled.len());
}

#[test]
fn full_label_fraction_makes_fraction_only_equal_baseline_input() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.label_fraction = 1.0;
    cfg.protocol.n_seeds = 1;
    let res = run_experiment(&cfg).unwrap();
    let full = load_dataset(dir.path().join("dataset.jsonl")).unwrap();
    let labeled = load_dataset(dir.path().join("seed0/labeled.jsonl")).unwrap();
    assert_eq!(labeled.transitions, full.transitions);
    assert_eq!(split_labels(&full, 1.0, 3).unwrap().unlabeled.len(), 0);
    assert!(res.imputation[0].holdout.is_none());
    for alg in [Algorithm::Td3bc, Algorithm::Iql] {
        assert_eq!(
            res.report(BASELINE, alg).unwrap().per_seed[0].episode_returns,
            res.report(FRACTION_ONLY, alg).unwrap().per_seed[0].episode_returns
        );
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.env_id = PENDULUM_ID.into();
    cfg.protocol.n_seeds = 1;
    run_experiment(&cfg).unwrap();
    let first = read_reports(dir.path());
    let first_agent = fs::read(dir.path().join("agents/fraction_imputed_td3bc_seed0.jsonl")).unwrap();
    run_experiment(&cfg).unwrap();
    assert_eq!(read_reports(dir.path()), first);
    assert_eq!(fs::read(dir.path().join("agents/fraction_imputed_td3bc_seed0.jsonl")).unwrap(), first_agent);

    cfg.master_seed += 1;
    let other = tempfile::tempdir().unwrap();
    cfg.output_dir = other.path().to_path_buf();
    run_experiment(&cfg).unwrap();
    assert_ne!(
        fs::read(other.path().join("dataset.jsonl")).unwrap(),
        fs::read(dir.path().join("dataset.jsonl")).unwrap()
    );
}

#[test]
fn sweep_adds_fraction_only_arms_and_plotdata() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.protocol.n_seeds = 1;
    cfg.label_fractions = vec![0.05, 0.2];
    cfg.algorithms = vec![Algorithm::Td3bc];
    let res = run_experiment(&cfg).unwrap();
    assert!(res.report(&sweep_arm(0.2), Algorithm::Td3bc).is_some());
    assert!(res.report(&sweep_arm(0.05), Algorithm::Td3bc).is_none());
    let plot = emit_report(&[res], ReportFormat::Plotdata).unwrap();
    assert_eq!(plot.lines().count(), 1 + 4);
    assert!(plot.contains(",fraction_only,td3bc,0.2,"));
}

#[test]
fn stage_failure_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.dataset_path = Some(dir.path().join("missing.jsonl"));
    let err = run_experiment(&cfg).unwrap_err();
    assert!(matches!(&err, Error::Stage { stage, .. } if stage == "generate"), "{err}");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("failure.json")).unwrap()).unwrap();
    assert_eq!(manifest["stage"], "generate");
    assert_eq!(manifest["artifacts"][0], "config.resolved.toml");
}

#[test]
fn divergence_names_the_failing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.protocol.n_seeds = 1;
    cfg.td3bc.training_steps = 5;
    let data_path = dir.path().join("exploding.jsonl");
    let mut data = orl_impute::dataset::generate_dataset(
        &orl_impute::envs::make_env(&cfg.env_id).unwrap(),
        Tier::Medium,
        300,
        1,
    )
    .unwrap();
    for t in &mut data.transitions {
        t.reward = Some(1e300);
    }
    orl_impute::dataset::save_dataset(&data, &data_path).unwrap();
    cfg.dataset_path = Some(data_path);
    let err = run_experiment(&cfg).unwrap_err();
    match &err {
        Error::Stage { stage, source } => {
            assert_eq!(stage, "reward_model[0]");
            assert!(matches!(**source, Error::Divergence { .. }));
        }
        other => panic!("unexpected {other}"),
    }
    assert!(dir.path().join("failure.json").exists());
    assert!(dir.path().join("seed0/labeled.jsonl").exists());
    assert!(!dir.path().join("seed0/reward_model.jsonl").exists());
}

#[test]
fn config_parsing_and_validation() {
    let cfg = ExperimentConfig::from_toml(
        r#"
        env_id = "pendulum-v0"
        tier = "medium_replay"
        label_fractions = [0.01, 0.05]
        master_seed = 3

        [iql]
        expectile = 0.8

        [td3bc]
        training_steps = 10

        [protocol]
        n_seeds = 2
        "#,
    );
    assert!(cfg.is_err(), "expectile belongs under [iql.iql]");

    let cfg = ExperimentConfig::from_toml(
        r#"
        env_id = "pendulum-v0"
        tier = "medium_replay"
        label_fractions = [0.01, 0.05]

        [iql]
        training_steps = 10
        [iql.iql]
        expectile = 0.8
        "#,
    )
    .unwrap();
    assert_eq!(cfg.tier, Tier::MediumReplay);
    assert_eq!(cfg.iql.algorithm, Algorithm::Iql);
    assert_eq!(cfg.iql.iql.expectile, 0.8);
    assert_eq!(cfg.iql.training_steps, 10);
    assert_eq!(cfg.td3bc.algorithm, Algorithm::Td3bc);
    cfg.validate().unwrap();
    assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);

    let mut bad = cfg.clone();
    bad.label_fractions = vec![0.05, 0.05];
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    let mut bad = cfg.clone();
    bad.label_fraction = 0.0;
    assert!(bad.validate().is_err());
    let mut bad = cfg.clone();
    bad.env_id = "cartpole".into();
    assert!(bad.validate().is_err());
    assert!(ExperimentConfig::from_toml("unknown_key = 1").is_err());
}
