//! CSV outputs of a run directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::{aggregate, RoundRecord, RunConfig, RunOutput};
use crate::acquisition::StrategyKind;
use crate::error::{Error, Result};
use crate::surrogate::write_traces;

pub const RECORDS_FILE: &str = "records.csv";
pub const LEDGER_FILE: &str = "ledger.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const TRACE_METRICS_FILE: &str = "trace_metrics.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";

fn f6(v: f64) -> String {
    format!("{v:.6}")
}

fn opt6(v: Option<f64>) -> String {
    v.map(f6).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_records(records: &[RoundRecord], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "strategy", "seed", "round", "selected_ids", "cum_cost_h", "cum_gflops", "map50", "map5095",
    ])?;
    for r in records {
        w.write_record([
            r.strategy.to_string(),
            r.seed.to_string(),
            r.round.to_string(),
            r.selected.join(";"),
            f6(r.cum_cost_hours),
            f6(r.cum_overhead_gflops),
            f6(r.map50),
            f6(r.map5095),
        ])?;
    }
    finish(w, path)
}

#[derive(Deserialize)]
struct RecordRow {
    strategy: String,
    seed: u64,
    round: usize,
    selected_ids: String,
    cum_cost_h: f64,
    cum_gflops: f64,
    map50: f64,
    map5095: f64,
}

pub fn read_records(path: &Path) -> Result<Vec<RoundRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(text.as_bytes())
        .deserialize::<RecordRow>()
        .map(|row| {
            let row = row?;
            Ok(RoundRecord {
                round: row.round,
                seed: row.seed,
                strategy: row.strategy.parse::<StrategyKind>()?,
                selected: row
                    .selected_ids
                    .split(';')
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect(),
                cum_cost_hours: row.cum_cost_h,
                cum_overhead_gflops: row.cum_gflops,
                map50: row.map50,
                map5095: row.map5095,
            })
        })
        .collect()
}

/// Writes every output file of `output` into `dir`.
pub fn write_outputs(output: &RunOutput, cfg: &RunConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let records = output.records();
    write_records(&records, &dir.join(RECORDS_FILE))?;

    let path = dir.join(LEDGER_FILE);
    let mut w = writer(&path)?;
    w.write_record([
        "seed", "round", "selected_ids", "round_cost_h", "cum_cost_h", "round_gflops", "cum_gflops",
    ])?;
    for run in &output.runs {
        for e in run.ledger.entries() {
            w.write_record([
                run.seed.to_string(),
                e.round.to_string(),
                e.selected.join(";"),
                f6(e.round_cost_hours),
                f6(e.cumulative_cost_hours),
                f6(e.round_overhead_gflops),
                f6(e.cumulative_overhead_gflops),
            ])?;
        }
    }
    finish(w, &path)?;

    let path = dir.join(CURVES_FILE);
    let bounds = output.cost_bounds(cfg.run.rounds);
    let mut w = writer(&path)?;
    w.write_record([
        "strategy", "seed", "round", "cum_cost_h", "lower_bound_h", "upper_bound_h", "cum_gflops",
        "map50", "map5095",
    ])?;
    for r in &records {
        let (lo, hi) = match &bounds {
            Some((lo, hi)) => (Some(lo[r.round]), Some(hi[r.round])),
            None => (None, None),
        };
        w.write_record([
            r.strategy.to_string(),
            r.seed.to_string(),
            r.round.to_string(),
            f6(r.cum_cost_hours),
            opt6(lo),
            opt6(hi),
            f6(r.cum_overhead_gflops),
            f6(r.map50),
            f6(r.map5095),
        ])?;
    }
    finish(w, &path)?;

    let traces: BTreeMap<u64, _> = output
        .runs
        .iter()
        .map(|r| {
            let mut trace = r.trace.clone();
            if !cfg.surrogate.export_trace {
                for round in trace.rounds.values_mut() {
                    round.scores.clear();
                }
            }
            (r.seed, trace)
        })
        .collect();
    write_traces(&traces, &dir.join(TRACE_FILE), &dir.join(TRACE_METRICS_FILE))?;

    let path = dir.join(AGGREGATE_FILE);
    let mut w = writer(&path)?;
    w.write_record([
        "strategy", "round", "n_seeds", "map50_mean", "map50_se", "cum_cost_mean_h", "cum_cost_se_h",
        "cum_gflops_mean",
    ])?;
    for a in aggregate(&records) {
        w.write_record([
            a.strategy.to_string(),
            a.round.to_string(),
            a.n_seeds.to_string(),
            f6(a.map50_mean),
            opt6(a.map50_se),
            f6(a.cum_cost_mean),
            opt6(a.cum_cost_se),
            f6(a.cum_gflops_mean),
        ])?;
    }
    finish(w, &path)
}
