//! Annotation-cost and query-overhead accounting.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data_model::SequenceMeta;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AcquisitionMode {
    /// Whole sequences are labeled at their full cost.
    #[default]
    Sequential,
    /// Individual frames are labeled; only keyframes cost anything.
    Singular,
}

/// Keyframes of an `n`-frame sequence annotated every `rate` frames.
pub fn effective_frames(n: usize, rate: usize) -> usize {
    n.div_ceil(rate)
}

/// Hours charged for acquiring `frames_taken` keyframes of a sequence (in
/// singular mode) or the whole sequence (in sequential mode).
pub fn sequence_cost(
    meta: &SequenceMeta,
    n_frames: usize,
    mode: AcquisitionMode,
    interpolation_rate: usize,
    frames_taken: usize,
) -> Result<f64> {
    if interpolation_rate == 0 {
        return Err(Error::Domain("interpolation rate must be at least 1".into()));
    }
    match mode {
        AcquisitionMode::Sequential => Ok(meta.cost_hours),
        AcquisitionMode::Singular => {
            if frames_taken > n_frames {
                return Err(Error::Domain(format!(
                    "{frames_taken} frames taken from a {n_frames}-frame sequence"
                )));
            }
            Ok(frames_taken as f64 * cost_per_keyframe(meta.cost_hours, n_frames, interpolation_rate))
        }
    }
}

pub fn cost_per_keyframe(cost_hours: f64, n_frames: usize, rate: usize) -> f64 {
    cost_hours / effective_frames(n_frames, rate) as f64
}

/// Charge for labeling frame `frame_index` alone: keyframes (index a
/// multiple of `rate`) carry an equal share of the sequence cost, the
/// interpolated frames in between are free.
pub fn frame_charge(cost_hours: f64, n_frames: usize, rate: usize, frame_index: usize) -> f64 {
    if frame_index % rate == 0 {
        cost_per_keyframe(cost_hours, n_frames, rate)
    } else {
        0.0
    }
}

fn prefix_sums(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    values
        .into_iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

/// Cumulative cost of acquiring the cheapest (lower) or dearest (upper)
/// sequences first.
pub fn theoretical_cost_bounds(costs: &[f64], n_rounds: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n_rounds > costs.len() {
        return Err(Error::PoolExhausted {
            requested: n_rounds,
            available: costs.len(),
        });
    }
    let mut sorted = costs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lower = prefix_sums(sorted.iter().copied().take(n_rounds));
    let upper = prefix_sums(sorted.iter().rev().copied().take(n_rounds));
    Ok((lower, upper))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OverheadModel {
    /// Detector inference per frame.
    pub detector_gflops_per_frame: f64,
    /// Flow estimation per frame pair.
    pub flow_gflops_per_pair: f64,
}

impl Default for OverheadModel {
    fn default() -> Self {
        OverheadModel {
            detector_gflops_per_frame: 4.1,
            flow_gflops_per_pair: 30.54,
        }
    }
}

impl OverheadModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.detector_gflops_per_frame > 0.0 && self.flow_gflops_per_pair > 0.0) {
            return Err(Error::Domain("overhead rates must be positive".into()));
        }
        Ok(())
    }

    /// Cumulative GFLOPS of running the detector over the unlabeled pool
    /// once per round.
    pub fn inferential(&self, unlabeled_frames_per_round: &[u64]) -> Vec<f64> {
        prefix_sums(
            unlabeled_frames_per_round
                .iter()
                .map(|&f| self.detector_gflops_per_frame * f as f64),
        )
    }

    /// One-off GFLOPS of computing flow for the whole training pool.
    pub fn conformal(&self, total_train_frames: u64) -> f64 {
        self.flow_gflops_per_pair * total_train_frames as f64
    }

    /// Cumulative inference overhead when the pool shrinks shortest-first
    /// (lower) or longest-first (upper); each round pays for the frames
    /// still in the pool before its pick.
    pub fn bounds(&self, sequence_lengths: &[u64], n_rounds: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        if n_rounds > sequence_lengths.len() {
            return Err(Error::PoolExhausted {
                requested: n_rounds,
                available: sequence_lengths.len(),
            });
        }
        let mut sorted = sequence_lengths.to_vec();
        sorted.sort_unstable();
        let simulate = |order: &mut dyn Iterator<Item = u64>| {
            let mut remaining: u64 = sequence_lengths.iter().sum();
            let mut per_round = Vec::with_capacity(n_rounds);
            for removed in order.take(n_rounds) {
                per_round.push(remaining);
                remaining -= removed;
            }
            self.inferential(&per_round)
        };
        let lower = simulate(&mut sorted.iter().copied());
        let upper = simulate(&mut sorted.iter().rev().copied());
        Ok((lower, upper))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerEntry {
    pub round: usize,
    pub selected: Vec<String>,
    pub round_cost_hours: f64,
    pub cumulative_cost_hours: f64,
    pub round_overhead_gflops: f64,
    pub cumulative_overhead_gflops: f64,
}

/// Per-round annotation and overhead charges with running totals.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CostLedger {
    entries: Vec<LedgerEntry>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn charge(&mut self, round: usize, selected: Vec<String>, hours: f64, gflops: f64) {
        let (cum_h, cum_g) = self
            .entries
            .last()
            .map_or((0.0, 0.0), |e| (e.cumulative_cost_hours, e.cumulative_overhead_gflops));
        self.entries.push(LedgerEntry {
            round,
            selected,
            round_cost_hours: hours,
            cumulative_cost_hours: cum_h + hours,
            round_overhead_gflops: gflops,
            cumulative_overhead_gflops: cum_g + gflops,
        });
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn total_hours(&self) -> f64 {
        self.entries.last().map_or(0.0, |e| e.cumulative_cost_hours)
    }

    pub fn total_gflops(&self) -> f64 {
        self.entries.last().map_or(0.0, |e| e.cumulative_overhead_gflops)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["round", "selected_ids", "round_cost_h", "cum_cost_h", "round_gflops", "cum_gflops"])?;
        for e in &self.entries {
            w.write_record([
                e.round.to_string(),
                e.selected.join(";"),
                format!("{:.6}", e.round_cost_hours),
                format!("{:.6}", e.cumulative_cost_hours),
                format!("{:.6}", e.round_overhead_gflops),
                format!("{:.6}", e.cumulative_overhead_gflops),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
