//! Deterministic stand-in for a detector retrained every round.
//!
//! Detection quality for a target sequence grows with how well the labeled
//! set covers it in feature space:
//!
//! ```text
//! q = 1 - exp(-kappa * sum_s w_s * exp(-|f_s - f_t|^2 / (2 sigma^2)))
//! ```
//!
//! with `sigma` the median pairwise feature distance of the pool. Scores and
//! test predictions are `q` plus noise keyed by
//! `(noise_seed, round, sequence, frame)`. Features are computed from the
//! ground-truth labels, so the surrogate never touches flow statistics.
//!
//! Traces let real detector logs stand in for the surrogate.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data_model::{BoundingBox, Occlusion, PoolState, Sequence, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::rng::{hash_str, keyed_rng};

const SCORE_STREAM: u64 = 1;
const PREDICT_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateParams {
    /// Coverage saturation rate.
    pub kappa: f64,
    pub noise_seed: u64,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        SurrogateParams {
            kappa: 0.15,
            noise_seed: 0,
        }
    }
}

/// Per-sequence feature vectors and the similarity bandwidth of a pool.
#[derive(Debug, Clone)]
pub struct FeatureSpace {
    features: BTreeMap<String, Vec<f64>>,
    sigma: f64,
}

fn mean_boxes(seq: &Sequence) -> f64 {
    seq.total_boxes() as f64 / seq.len() as f64
}

/// Mean per-frame displacement of boxes matched by position in the label
/// file, in normalized units.
fn mean_label_motion(seq: &Sequence) -> f64 {
    let moved: f64 = seq
        .frames
        .windows(2)
        .map(|w| {
            w[0].boxes
                .iter()
                .zip(&w[1].boxes)
                .map(|(a, b)| (a.cx - b.cx).abs() + (a.cy - b.cy).abs())
                .sum::<f64>()
        })
        .sum();
    moved / seq.len() as f64
}

fn standardize(values: &mut [f64]) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    for v in values.iter_mut() {
        *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

impl FeatureSpace {
    /// Features: standardized mean box count, mean label motion and season
    /// ordinal, followed by a one-hot scene indicator.
    pub fn from_pool(pool: &PoolState) -> Result<Self> {
        let seqs: Vec<&Sequence> = pool.sequences.values().collect();
        if seqs.is_empty() {
            return Err(Error::Feature("empty pool".into()));
        }
        let mut boxes: Vec<f64> = seqs.iter().map(|s| mean_boxes(s)).collect();
        let mut motion: Vec<f64> = seqs.iter().map(|s| mean_label_motion(s)).collect();
        let mut season: Vec<f64> = seqs.iter().map(|s| s.meta.season.ordinal() as f64).collect();
        standardize(&mut boxes);
        standardize(&mut motion);
        standardize(&mut season);
        let mut scenes: Vec<u32> = seqs.iter().map(|s| s.meta.scene_id).collect();
        scenes.sort_unstable();
        scenes.dedup();

        let mut features = BTreeMap::new();
        for (i, s) in seqs.iter().enumerate() {
            let mut f = vec![boxes[i], motion[i], season[i]];
            f.extend(scenes.iter().map(|&sc| (sc == s.meta.scene_id) as u8 as f64));
            features.insert(s.id().to_string(), f);
        }

        let vectors: Vec<&Vec<f64>> = features.values().collect();
        let mut dists = Vec::new();
        for i in 0..vectors.len() {
            for j in i + 1..vectors.len() {
                dists.push(sq_dist(vectors[i], vectors[j]).sqrt());
            }
        }
        dists.sort_by(f64::total_cmp);
        let sigma = match dists.len() {
            0 => 1.0,
            n if n % 2 == 1 => dists[n / 2],
            n => 0.5 * (dists[n / 2 - 1] + dists[n / 2]),
        };
        Ok(FeatureSpace {
            features,
            sigma: if sigma > 0.0 { sigma } else { 1.0 },
        })
    }

    pub fn get(&self, id: &str) -> Result<&[f64]> {
        self.features
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Feature(format!("no features for `{id}`")))
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Surrogate state after training on `labeled` (id, weight) pairs; the
    /// weight is the labeled fraction of the sequence.
    pub fn state(
        &self,
        params: SurrogateParams,
        round: usize,
        labeled: &[(String, f64)],
    ) -> Result<SurrogateState> {
        let labeled_features = labeled
            .iter()
            .map(|(id, w)| Ok((self.get(id)?.to_vec(), *w)))
            .collect::<Result<_>>()?;
        Ok(SurrogateState {
            round,
            labeled_features,
            kappa: params.kappa,
            sigma: self.sigma,
            noise_seed: params.noise_seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateState {
    pub round: usize,
    pub labeled_features: Vec<(Vec<f64>, f64)>,
    pub kappa: f64,
    pub sigma: f64,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameScore {
    pub objectness: f64,
    pub pred_count: u32,
}

/// `1 - exp(-kappa * coverage)`.
pub fn quality_from_coverage(kappa: f64, coverage: f64) -> f64 {
    1.0 - (-kappa * coverage).exp()
}

impl SurrogateState {
    pub fn similarity(&self, a: &[f64], b: &[f64]) -> f64 {
        (-sq_dist(a, b) / (2.0 * self.sigma * self.sigma)).exp()
    }

    pub fn quality(&self, target: &[f64]) -> Result<f64> {
        if target.is_empty() {
            return Err(Error::Feature("empty feature vector".into()));
        }
        let mut coverage = 0.0;
        for (f, w) in &self.labeled_features {
            if f.len() != target.len() {
                return Err(Error::Feature(format!(
                    "feature length {} vs {}",
                    f.len(),
                    target.len()
                )));
            }
            coverage += w * self.similarity(f, target);
        }
        Ok(quality_from_coverage(self.kappa, coverage))
    }

    pub fn frame_scores(&self, seq: &Sequence, features: &[f64]) -> Result<Vec<FrameScore>> {
        let q = self.quality(features)?;
        Ok(frame_scores_at(q, self.noise_seed, self.round, seq))
    }

    pub fn predict_test(&self, seq: &Sequence, features: &[f64]) -> Result<Vec<Vec<(BoundingBox, f64)>>> {
        let q = self.quality(features)?;
        Ok(predict_at(q, self.noise_seed, self.round, seq))
    }
}

/// Per-frame objectness and predicted counts of a model of quality `q`.
pub fn frame_scores_at(q: f64, noise_seed: u64, round: usize, seq: &Sequence) -> Vec<FrameScore> {
    let seq_key = hash_str(seq.id());
    seq.frames
        .iter()
        .map(|frame| {
            let mut rng = keyed_rng(
                noise_seed,
                &[SCORE_STREAM, round as u64, seq_key, frame.frame_id as u64],
            );
            let eps: f64 = rng.random_range(-0.05..0.05);
            let eta: i64 = rng.random_range(-1..=1);
            let expected = (frame.boxes.len() as f64 * q).round() as i64;
            FrameScore {
                objectness: (q + eps).clamp(0.0, 1.0),
                pred_count: (expected + eta).max(0) as u32,
            }
        })
        .collect()
}

/// Per-frame detections of a model of quality `q`: jittered, partly dropped
/// ground truth plus low-confidence false positives.
pub fn predict_at(
    q: f64,
    noise_seed: u64,
    round: usize,
    seq: &Sequence,
) -> Vec<Vec<(BoundingBox, f64)>> {
    let seq_key = hash_str(seq.id());
    let miss = 1.0 - q;
    let jitter = Normal::new(0.0, 0.08 * miss).expect("non-negative sd");
    seq.frames
        .iter()
        .map(|frame| {
            let mut rng = keyed_rng(
                noise_seed,
                &[PREDICT_STREAM, round as u64, seq_key, frame.frame_id as u64],
            );
            let mut out = Vec::with_capacity(frame.boxes.len() + 1);
            for truth in &frame.boxes {
                let dropped = rng.random_bool((miss * 0.5).clamp(0.0, 1.0));
                let d: [f64; 4] = std::array::from_fn(|_| jitter.sample(&mut rng));
                let eps: f64 = rng.random_range(-0.05..0.05);
                if dropped {
                    continue;
                }
                let conf = (q + eps).clamp(0.05, 0.99);
                if d == [0.0; 4] {
                    out.push((truth.with_occlusion(Occlusion::Visible), conf));
                    continue;
                }
                let w = truth.w + d[2];
                let h = truth.h + d[3];
                let (cx, cy) = (truth.cx + d[0], truth.cy + d[1]);
                if let Some((b, _)) = BoundingBox::from_corners_clamped(
                    truth.class_id,
                    cx - w / 2.0,
                    cy - h / 2.0,
                    cx + w / 2.0,
                    cy + h / 2.0,
                ) {
                    out.push((b, conf));
                }
            }
            if rng.random_bool((0.3 * miss).clamp(0.0, 1.0)) {
                let w = rng.random_range(0.05..0.25);
                let h = rng.random_range(0.05..0.25);
                let cx = rng.random_range(w / 2.0..=1.0 - w / 2.0);
                let cy = rng.random_range(h / 2.0..=1.0 - h / 2.0);
                let class_id = rng.random_range(0..CLASS_NAMES.len() as u32);
                let conf = rng.random_range(0.05..=0.4);
                out.push((BoundingBox::new(class_id, cx, cy, w, h), conf));
            }
            out
        })
        .collect()
}

/// Switch scores: per-frame absolute change in predicted object count
/// between consecutive rounds.
pub fn switch_scores(prev: &[u32], curr: &[u32]) -> Result<Vec<f64>> {
    if prev.len() != curr.len() {
        return Err(Error::Shape(format!(
            "{} vs {} frames",
            prev.len(),
            curr.len()
        )));
    }
    Ok(prev
        .iter()
        .zip(curr)
        .map(|(&a, &b)| a.abs_diff(b) as f64)
        .collect())
}

/// One round of logged model output.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceRound {
    pub scores: BTreeMap<String, Vec<FrameScore>>,
    pub test_map50: Option<f64>,
    pub test_map5095: Option<f64>,
}

/// Logged model output per round for one seed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTrace {
    pub rounds: BTreeMap<usize, TraceRound>,
}

impl ScoreTrace {
    pub fn replay(&self, round: usize) -> Result<&TraceRound> {
        self.rounds
            .get(&round)
            .ok_or_else(|| Error::Trace(format!("trace has no round {round}")))
    }
}

#[derive(Serialize, Deserialize)]
struct TraceRow {
    seed: u64,
    round: usize,
    sequence_id: String,
    frame_id: u32,
    uncertainty: String,
    pred_count: u32,
}

#[derive(Serialize, Deserialize)]
struct TraceMetricRow {
    seed: u64,
    round: usize,
    map50: String,
    map5095: String,
}

fn parse_float(text: &str, what: &str) -> Result<f64> {
    text.trim()
        .parse()
        .map_err(|_| Error::Trace(format!("bad {what} `{text}`")))
}

/// Writes per-frame rows and per-round metric rows. Floats use the
/// shortest round-trip representation so a replay sees identical values.
pub fn write_traces(
    traces: &BTreeMap<u64, ScoreTrace>,
    frames_path: &Path,
    metrics_path: &Path,
) -> Result<()> {
    let mut frames = csv::Writer::from_path(frames_path)?;
    let mut metrics = csv::Writer::from_path(metrics_path)?;
    // header even when empty
    frames.write_record(["seed", "round", "sequence_id", "frame_id", "uncertainty", "pred_count"])?;
    metrics.write_record(["seed", "round", "map50", "map5095"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (&seed, trace) in traces {
        for (&round, tr) in &trace.rounds {
            for (id, scores) in &tr.scores {
                for (frame_id, s) in scores.iter().enumerate() {
                    frames.write_record([
                        seed.to_string(),
                        round.to_string(),
                        id.clone(),
                        frame_id.to_string(),
                        s.objectness.to_string(),
                        s.pred_count.to_string(),
                    ])?;
                }
            }
            metrics.write_record([
                seed.to_string(),
                round.to_string(),
                opt(tr.test_map50),
                opt(tr.test_map5095),
            ])?;
        }
    }
    frames.flush().map_err(|e| Error::io(frames_path, e))?;
    metrics.flush().map_err(|e| Error::io(metrics_path, e))
}

pub fn read_traces(frames_path: &Path, metrics_path: Option<&Path>) -> Result<BTreeMap<u64, ScoreTrace>> {
    let text = fs::read_to_string(frames_path).map_err(|e| Error::io(frames_path, e))?;
    let mut traces: BTreeMap<u64, ScoreTrace> = BTreeMap::new();
    for (line, row) in csv::Reader::from_reader(text.as_bytes())
        .deserialize::<TraceRow>()
        .enumerate()
    {
        let row = row.map_err(|e| Error::Trace(format!("row {}: {e}", line + 2)))?;
        let uncertainty = parse_float(&row.uncertainty, "uncertainty")?;
        if !(0.0..=1.0).contains(&uncertainty) {
            return Err(Error::Trace(format!("uncertainty {uncertainty} outside [0,1]")));
        }
        let frames = traces
            .entry(row.seed)
            .or_default()
            .rounds
            .entry(row.round)
            .or_default()
            .scores
            .entry(row.sequence_id.clone())
            .or_default();
        if row.frame_id as usize != frames.len() {
            return Err(Error::Trace(format!(
                "`{}` round {}: expected frame {}, found {}",
                row.sequence_id,
                row.round,
                frames.len(),
                row.frame_id
            )));
        }
        frames.push(FrameScore {
            objectness: uncertainty,
            pred_count: row.pred_count,
        });
    }
    if let Some(path) = metrics_path {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for row in csv::Reader::from_reader(text.as_bytes()).deserialize::<TraceMetricRow>() {
            let row = row.map_err(|e| Error::Trace(e.to_string()))?;
            let opt = |t: &str, what| {
                if t.trim().is_empty() {
                    Ok(None)
                } else {
                    parse_float(t, what).map(Some)
                }
            };
            let round = traces
                .entry(row.seed)
                .or_default()
                .rounds
                .entry(row.round)
                .or_default();
            round.test_map50 = opt(&row.map50, "map50")?;
            round.test_map5095 = opt(&row.map5095, "map5095")?;
        }
    }
    Ok(traces)
}
