//! Rendering experiment results: a results table with baseline, fraction-only and
//! imputed column groups, its CSV form, and long-format plot data for sweeps.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::experiment::{ExperimentResult, BASELINE, FRACTION_IMPUTED, FRACTION_ONLY};
use crate::offline_rl::Algorithm;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
    Plotdata,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            "plotdata" => Ok(ReportFormat::Plotdata),
            _ => Err(Error::invalid(format!("unknown report format `{s}`; expected table, csv or plotdata"))),
        }
    }
}

/// The seven score columns, in table order.
pub const COLUMNS: [(&str, Algorithm); 7] = [
    (BASELINE, Algorithm::Td3bc),
    (BASELINE, Algorithm::Iql),
    (BASELINE, Algorithm::Bc),
    (FRACTION_ONLY, Algorithm::Td3bc),
    (FRACTION_ONLY, Algorithm::Iql),
    (FRACTION_IMPUTED, Algorithm::Td3bc),
    (FRACTION_IMPUTED, Algorithm::Iql),
];

fn row_label(r: &ExperimentResult) -> String {
    format!("{} {}", r.config.env_id, r.config.tier)
}

/// `0.01` → `1%`, `0.125` → `12.5%`.
pub fn percent(fraction: f64) -> String {
    let s = format!("{:.4}", fraction * 100.0);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    format!("{s}%")
}

/// Score matrix for the table layouts; errors list every missing column.
fn score_rows(results: &[ExperimentResult]) -> Result<Vec<(String, [f64; 7])>> {
    if results.is_empty() {
        return Err(Error::invalid("no results to report"));
    }
    let mut missing = Vec::new();
    let mut rows = Vec::new();
    for r in results {
        let mut scores = [0.0; 7];
        for (slot, (arm, alg)) in COLUMNS.iter().enumerate() {
            match r.score(arm, *alg) {
                Some(s) => scores[slot] = s,
                None => missing.push(format!("{}: {arm}/{alg}", row_label(r))),
            }
        }
        rows.push((row_label(r), scores));
    }
    if !missing.is_empty() {
        return Err(Error::validation(format!("incomplete result; missing arms: {}", missing.join(", "))));
    }
    Ok(rows)
}

/// Column-wise mean of the score rows.
pub fn column_average(rows: &[[f64; 7]]) -> [f64; 7] {
    let mut avg = [0.0; 7];
    for row in rows {
        for (a, v) in avg.iter_mut().zip(row) {
            *a += v;
        }
    }
    avg.map(|a| a / rows.len() as f64)
}

pub fn emit_report(results: &[ExperimentResult], format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Table => table(results),
        ReportFormat::Csv => csv(results),
        ReportFormat::Plotdata => plotdata(results),
    }
}

fn table(results: &[ExperimentResult]) -> Result<String> {
    let rows = score_rows(results)?;
    let frac = results[0].config.label_fraction;
    if results.iter().any(|r| r.config.label_fraction != frac) {
        return Err(Error::validation("results use different label fractions"));
    }
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max("Environment".len()).max("Average".len());
    let p = percent(frac);
    let mut out = String::new();
    let groups = [("Baseline (100%)".to_string(), 3), (p.clone(), 2), (format!("{p} + Imputed"), 2)];
    let _ = write!(out, "{:width$}", "");
    for (name, n) in &groups {
        let _ = write!(out, " | {:<w$}", name, w = n * 8 - 1);
    }
    out.push('\n');
    let _ = write!(out, "{:width$}", "Environment");
    for (i, (_, alg)) in COLUMNS.iter().enumerate() {
        let sep = if i == 0 || i == 3 || i == 5 { " | " } else { " " };
        let _ = write!(out, "{sep}{:>7}", alg.label());
    }
    out.push('\n');
    let rule = "-".repeat(width + 3 * 3 + 7 * 8 - 4);
    out.push_str(&rule);
    out.push('\n');
    let push_row = |out: &mut String, label: &str, scores: &[f64; 7]| {
        let _ = write!(out, "{label:width$}");
        for (i, s) in scores.iter().enumerate() {
            let sep = if i == 0 || i == 3 || i == 5 { " | " } else { " " };
            let _ = write!(out, "{sep}{s:>7.2}");
        }
        out.push('\n');
    };
    for (label, scores) in &rows {
        push_row(&mut out, label, scores);
    }
    if rows.len() > 1 {
        let avg = column_average(&rows.iter().map(|(_, s)| *s).collect::<Vec<_>>());
        out.push_str(&rule);
        out.push('\n');
        push_row(&mut out, "Average", &avg);
    }
    Ok(out)
}

fn csv(results: &[ExperimentResult]) -> Result<String> {
    let rows = score_rows(results)?;
    let mut out = String::from("environment,tier");
    for (arm, alg) in COLUMNS {
        let _ = write!(out, ",{arm}_{alg}");
    }
    out.push('\n');
    for (r, (_, scores)) in results.iter().zip(&rows) {
        let _ = write!(out, "{},{}", r.config.env_id, r.config.tier);
        for s in scores {
            let _ = write!(out, ",{s:.4}");
        }
        out.push('\n');
    }
    if rows.len() > 1 {
        out.push_str("average,");
        for s in column_average(&rows.iter().map(|(_, s)| *s).collect::<Vec<_>>()) {
            let _ = write!(out, ",{s:.4}");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Long format, one line per point: fraction-only scores at every swept
/// fraction, plus the baseline (at 1.0) and imputed (at the label fraction)
/// reference points, each as its own series per algorithm.
fn plotdata(results: &[ExperimentResult]) -> Result<String> {
    if results.is_empty() {
        return Err(Error::invalid("no results to report"));
    }
    let mut out = String::from("environment,tier,series,algorithm,label_fraction,score,score_std\n");
    for r in results {
        let cfg = &r.config;
        let mut fractions = vec![cfg.label_fraction];
        fractions.extend(cfg.sweep_fractions());
        fractions.sort_by(f64::total_cmp);
        let mut missing = Vec::new();
        for alg in &cfg.algorithms {
            let mut points: Vec<(&str, f64, String)> = vec![(BASELINE, 1.0, BASELINE.to_string())];
            for &f in &fractions {
                let arm = if f == cfg.label_fraction {
                    FRACTION_ONLY.to_string()
                } else {
                    crate::experiment::sweep_arm(f)
                };
                points.push((FRACTION_ONLY, f, arm));
            }
            points.push((FRACTION_IMPUTED, cfg.label_fraction, FRACTION_IMPUTED.to_string()));
            for (series, f, arm) in points {
                match r.report(&arm, *alg) {
                    Some(rep) => {
                        let _ = writeln!(
                            out,
                            "{},{},{series},{alg},{f},{:.4},{:.4}",
                            cfg.env_id, cfg.tier, rep.normalized_score, rep.score_std_across_seeds
                        );
                    }
                    None => missing.push(format!("{arm}/{alg}")),
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::validation(format!(
                "incomplete result for {}; missing arms: {}",
                row_label(r),
                missing.join(", ")
            )));
        }
    }
    Ok(out)
}
