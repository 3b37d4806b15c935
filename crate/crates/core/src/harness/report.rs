use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::analysis::{
    axis_pairs, interval_table, tradeoff_summary, IntervalTable, TradeoffSummary, AUC_METHOD,
};
use crate::harness::record::{write_records, RunRecord};
use crate::harness::run::{ExperimentOutput, QueryFailure};

pub const RUNS_FILE: &str = "runs.csv";
pub const BASELINE_FILE: &str = "baseline.csv";
pub const ORACLE_FILE: &str = "oracle.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const INTERVALS_FILE: &str = "intervals.csv";
pub const FAILURES_FILE: &str = "failures.json";
pub const SAMPLES_FILE: &str = "samples.jsonl";
pub const PLOT_DIR: &str = "plotdata";

const U_MAX_SCOPE: &str = "per query: maximum single-sample utility over every run of this invocation \
     (alpha sweep, deterministic baseline, oracle reference); comparisons across invocations need a \
     rerun over the union";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hashes: Vec<String>,
    pub seeds: Vec<u64>,
    pub retrievers: Vec<String>,
    pub generators: Vec<String>,
    pub alphas: Vec<f64>,
    pub u_max_scope: String,
}

impl Provenance {
    pub fn from_records(records: &[RunRecord]) -> Self {
        let set = |f: &dyn Fn(&RunRecord) -> String| -> Vec<String> {
            records
                .iter()
                .map(f)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        };
        let mut alphas: Vec<f64> = records.iter().filter_map(|r| r.alpha).collect();
        alphas.sort_by(f64::total_cmp);
        alphas.dedup();
        Self {
            config_hashes: set(&|r| r.config_hash.clone()),
            seeds: records
                .iter()
                .map(|r| r.seed)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
            retrievers: set(&|r| r.retriever.clone()),
            generators: set(&|r| r.generator.clone()),
            alphas,
            u_max_scope: U_MAX_SCOPE.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCounts {
    pub queries_skipped: usize,
    pub queries_failed: usize,
    pub expected_runs: usize,
    pub produced_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffError {
    pub x_name: String,
    pub y_name: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub provenance: Provenance,
    pub auc_method: String,
    pub tradeoffs: Vec<TradeoffSummary>,
    pub tradeoff_errors: Vec<TradeoffError>,
    pub intervals: Option<IntervalTable>,
    /// Queries whose utility was zero in every run.
    pub flagged_queries: Vec<String>,
    pub counts: Option<RunCounts>,
}

/// Tradeoff fits, interval table and provenance for a set of sweep records.
pub fn summarize(
    runs: &[RunRecord],
    baseline: &[RunRecord],
    counts: Option<RunCounts>,
) -> Result<Summary> {
    let mut tradeoffs = Vec::new();
    let mut tradeoff_errors = Vec::new();
    for (x, y, points) in axis_pairs(runs) {
        match tradeoff_summary(x, y, &points) {
            Ok(t) => tradeoffs.push(t),
            Err(e) => tradeoff_errors.push(TradeoffError {
                x_name: x.into(),
                y_name: y.into(),
                error: e.to_string(),
            }),
        }
    }
    let intervals = if baseline.is_empty() {
        None
    } else {
        Some(interval_table(runs, baseline)?)
    };
    let all: Vec<RunRecord> = runs.iter().chain(baseline).cloned().collect();
    let flagged_queries = all
        .iter()
        .filter(|r| r.eu_flagged)
        .map(|r| r.query_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    Ok(Summary {
        provenance: Provenance::from_records(&all),
        auc_method: AUC_METHOD.into(),
        tradeoffs,
        tradeoff_errors,
        intervals,
        flagged_queries,
        counts,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

pub fn write_intervals(path: &Path, table: &IntervalTable) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record([
        "lower",
        "upper",
        "mean_delta_eu",
        "run_count",
        "baseline_eu",
        "baseline_eu_raw",
    ])?;
    for row in &table.rows {
        writer.write_record([
            row.lower.to_string(),
            row.upper.to_string(),
            row.mean_delta_eu.map(|d| d.to_string()).unwrap_or_default(),
            row.run_count.to_string(),
            table.baseline_eu.to_string(),
            table.baseline_eu_raw.to_string(),
        ])?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?;
    write_file(path, &bytes)
}

/// Writes the tradeoff point clouds as two-column TSV files.
pub fn write_plot_data(
    dir: &Path,
    runs: &[RunRecord],
    table: Option<&IntervalTable>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (x, y, points) in axis_pairs(runs) {
        let mut text = format!("{x}\t{y}\n");
        for (px, py) in points {
            text.push_str(&format!("{px}\t{py}\n"));
        }
        write_file(&dir.join(format!("{x}__{y}.tsv")), text.as_bytes())?;
    }
    let mut text = String::from("alpha\teed_norm\teer_norm\teu_norm\n");
    for r in runs {
        if let Some(a) = r.alpha {
            text.push_str(&format!(
                "{a}\t{}\t{}\t{}\n",
                r.eed_norm, r.eer_norm, r.eu_norm
            ));
        }
    }
    write_file(&dir.join("alpha__metrics.tsv"), text.as_bytes())?;
    if let Some(table) = table {
        let mut text = String::from("interval_center\tmean_delta_eu\n");
        for row in &table.rows {
            if let Some(d) = row.mean_delta_eu {
                text.push_str(&format!("{}\t{d}\n", (row.lower + row.upper) / 2.0));
            }
        }
        write_file(&dir.join("interval__delta_eu.tsv"), text.as_bytes())?;
    }
    Ok(())
}

pub fn write_failures(path: &Path, failures: &[QueryFailure]) -> Result<()> {
    write_json(path, &failures)
}

/// Writes the analysis products for records already on disk or in memory.
pub fn emit_analysis(
    out_dir: &Path,
    runs: &[RunRecord],
    baseline: &[RunRecord],
    counts: Option<RunCounts>,
) -> Result<Summary> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let summary = summarize(runs, baseline, counts)?;
    write_json(&out_dir.join(SUMMARY_FILE), &summary)?;
    if let Some(table) = &summary.intervals {
        write_intervals(&out_dir.join(INTERVALS_FILE), table)?;
    }
    write_plot_data(&out_dir.join(PLOT_DIR), runs, summary.intervals.as_ref())?;
    Ok(summary)
}

/// Writes every artifact of an experiment into `out_dir`.
pub fn emit_reports(out_dir: &Path, output: &ExperimentOutput) -> Result<Summary> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_records(&out_dir.join(RUNS_FILE), &output.runs)?;
    write_records(&out_dir.join(BASELINE_FILE), &output.baseline)?;
    write_records(&out_dir.join(ORACLE_FILE), &output.oracle)?;
    write_failures(&out_dir.join(FAILURES_FILE), &output.failures)?;
    if !output.samples.is_empty() {
        let path = out_dir.join(SAMPLES_FILE);
        let mut bytes = Vec::new();
        for dump in &output.samples {
            serde_json::to_writer(&mut bytes, dump)?;
            bytes.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        write_file(&path, &bytes)?;
    }
    let counts = RunCounts {
        queries_skipped: output.skipped.len(),
        queries_failed: output.failures.len(),
        expected_runs: output.expected_runs,
        produced_runs: output.runs.len(),
    };
    emit_analysis(out_dir, &output.runs, &output.baseline, Some(counts))
}
