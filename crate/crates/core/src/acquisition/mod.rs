//! Query strategies: each picks the next `b` unlabeled train sequences.
//!
//! Inferential strategies rank sequences by model output summarized per
//! sequence. Conformal strategies rank by pool statistics alone (length,
//! flow-proxy motion, estimated boxes) and refuse model scores. Ties are
//! always broken by ascending sequence id.

mod coreset;
mod gmm;
mod scores;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use coreset::{k_center_greedy, standardize_columns};
pub use gmm::{fit_gmm2, GmmFit, VARIANCE_FLOOR};
pub use scores::{entropy, least_confidence, margin, sequence_score};

use crate::data_model::PoolState;
use crate::error::{Error, Result};
use crate::rng::keyed_rng;

pub const GMM_MAX_ITER: usize = 200;
pub const GMM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Random,
    Entropy,
    LeastConfidence,
    Margin,
    FalseSwitch,
    GaussSwitch,
    Coreset,
    LeastFrame,
    MostFrame,
    MinMotion,
    MinMaxMotion,
    MinBoxes,
}

/// Where a strategy's query overhead comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverheadClass {
    None,
    /// Detector inference over the unlabeled pool every round.
    PerRound,
    /// Flow statistics over the training pool, once.
    FrontLoaded,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 12] = [
        StrategyKind::Random,
        StrategyKind::Entropy,
        StrategyKind::LeastConfidence,
        StrategyKind::Margin,
        StrategyKind::FalseSwitch,
        StrategyKind::GaussSwitch,
        StrategyKind::Coreset,
        StrategyKind::LeastFrame,
        StrategyKind::MostFrame,
        StrategyKind::MinMotion,
        StrategyKind::MinMaxMotion,
        StrategyKind::MinBoxes,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::Entropy => "entropy",
            StrategyKind::LeastConfidence => "least_confidence",
            StrategyKind::Margin => "margin",
            StrategyKind::FalseSwitch => "false_switch",
            StrategyKind::GaussSwitch => "gauss_switch",
            StrategyKind::Coreset => "coreset",
            StrategyKind::LeastFrame => "least_frame",
            StrategyKind::MostFrame => "most_frame",
            StrategyKind::MinMotion => "min_motion",
            StrategyKind::MinMaxMotion => "min_max_motion",
            StrategyKind::MinBoxes => "min_boxes",
        }
    }

    /// Uses only pool statistics.
    pub fn is_conformal(self) -> bool {
        matches!(
            self,
            StrategyKind::LeastFrame
                | StrategyKind::MostFrame
                | StrategyKind::MinMotion
                | StrategyKind::MinMaxMotion
                | StrategyKind::MinBoxes
        )
    }

    /// Needs model output on the unlabeled pool.
    pub fn is_inferential(self) -> bool {
        !self.is_conformal() && self != StrategyKind::Random
    }

    pub fn needs_flow(self) -> bool {
        matches!(
            self,
            StrategyKind::MinMotion | StrategyKind::MinMaxMotion | StrategyKind::MinBoxes
        )
    }

    pub fn is_switch(self) -> bool {
        matches!(self, StrategyKind::FalseSwitch | StrategyKind::GaussSwitch)
    }

    pub fn overhead(self) -> OverheadClass {
        if self.needs_flow() {
            OverheadClass::FrontLoaded
        } else if self.is_inferential() {
            OverheadClass::PerRound
        } else {
            OverheadClass::None
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown strategy kind `{s}`")))
    }
}

/// Which extreme min-max motion takes on odd rounds. The default follows
/// the even-min/odd-max rule, so the first acquisition round (round 1)
/// takes the maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParityPhase {
    #[default]
    MaxFirst,
    MinFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub parity_phase: ParityPhase,
}

fn default_batch() -> usize {
    1
}

impl StrategySpec {
    pub fn new(kind: StrategyKind) -> Self {
        StrategySpec {
            kind,
            batch_size: 1,
            parity_phase: ParityPhase::default(),
        }
    }
}

/// Model output handed to `select`.
#[derive(Debug, Clone, Copy)]
pub enum ScoreInput<'a> {
    None,
    /// One summarized score per unlabeled sequence.
    Scalar(&'a BTreeMap<String, f64>),
    /// One embedding per train sequence, labeled ones included.
    Embedding(&'a BTreeMap<String, Vec<f64>>),
}

impl ScoreInput<'_> {
    fn is_none(&self) -> bool {
        matches!(self, ScoreInput::None)
    }
}

/// Whether min-max motion takes the minimum at `round`.
pub fn min_max_takes_min(round: usize, phase: ParityPhase) -> bool {
    let even = round % 2 == 0;
    match phase {
        ParityPhase::MaxFirst => even,
        ParityPhase::MinFirst => !even,
    }
}

pub(crate) fn take_ranked(mut items: Vec<(String, f64)>, maximize: bool, b: usize) -> Vec<String> {
    items.sort_by(|(ia, va), (ib, vb)| {
        let by_value = if maximize { vb.total_cmp(va) } else { va.total_cmp(vb) };
        match by_value {
            Ordering::Equal => ia.cmp(ib),
            other => other,
        }
    });
    items.into_iter().take(b).map(|(id, _)| id).collect()
}

fn scalar_scores<'a>(
    kind: StrategyKind,
    input: ScoreInput<'a>,
    ids: &[&str],
) -> Result<Vec<(String, f64)>> {
    let ScoreInput::Scalar(map) = input else {
        return Err(Error::MissingScores(kind.to_string()));
    };
    ids.iter()
        .map(|&id| {
            map.get(id)
                .map(|&v| (id.to_string(), v))
                .ok_or_else(|| Error::MissingScores(format!("{kind}: no score for `{id}`")))
        })
        .collect()
}

fn pool_stat(pool: &PoolState, ids: &[&str], stat: impl Fn(&crate::data_model::Sequence) -> Option<f64>) -> Result<Vec<(String, f64)>> {
    ids.iter()
        .map(|&id| {
            let seq = &pool.sequences[id];
            stat(seq)
                .map(|v| (id.to_string(), v))
                .ok_or_else(|| Error::MissingStats(id.to_string()))
        })
        .collect()
}

/// Random draw of `b` ids from `ids`, keyed by seed and round.
pub fn random_pick(ids: &[&str], b: usize, rng_seed: u64, round: usize) -> Vec<String> {
    let mut sorted: Vec<&str> = ids.to_vec();
    sorted.sort_unstable();
    let mut rng = keyed_rng(rng_seed, &[0x7261_6e64, round as u64]);
    sorted.shuffle(&mut rng);
    sorted.into_iter().take(b).map(str::to_string).collect()
}

/// Picks the next `spec.batch_size` unlabeled sequences.
pub fn select(
    spec: &StrategySpec,
    pool: &PoolState,
    input: ScoreInput<'_>,
    round: usize,
    rng_seed: u64,
) -> Result<Vec<String>> {
    let b = spec.batch_size;
    if b == 0 {
        return Err(Error::Domain("batch size must be positive".into()));
    }
    if pool.unlabeled.len() < b {
        return Err(Error::PoolExhausted {
            requested: b,
            available: pool.unlabeled.len(),
        });
    }
    let kind = spec.kind;
    if (kind.is_conformal() || kind == StrategyKind::Random) && !input.is_none() {
        return Err(Error::ScoresNotAllowed(kind.to_string()));
    }
    let ids: Vec<&str> = pool.unlabeled.iter().map(String::as_str).collect();

    let picked = match kind {
        StrategyKind::Random => random_pick(&ids, b, rng_seed, round),
        StrategyKind::Entropy
        | StrategyKind::LeastConfidence
        | StrategyKind::Margin
        | StrategyKind::FalseSwitch => take_ranked(scalar_scores(kind, input, &ids)?, true, b),
        StrategyKind::GaussSwitch => gauss_pick(scalar_scores(kind, input, &ids)?, b, rng_seed, round),
        StrategyKind::Coreset => coreset_pick(pool, input, &ids, b)?,
        StrategyKind::LeastFrame => {
            take_ranked(pool_stat(pool, &ids, |s| Some(s.len() as f64))?, false, b)
        }
        StrategyKind::MostFrame => {
            take_ranked(pool_stat(pool, &ids, |s| Some(s.len() as f64))?, true, b)
        }
        StrategyKind::MinMotion => take_ranked(
            pool_stat(pool, &ids, |s| s.total_motion().map(|m| m as f64))?,
            false,
            b,
        ),
        StrategyKind::MinMaxMotion => take_ranked(
            pool_stat(pool, &ids, |s| s.total_motion().map(|m| m as f64))?,
            !min_max_takes_min(round, spec.parity_phase),
            b,
        ),
        StrategyKind::MinBoxes => take_ranked(
            pool_stat(pool, &ids, |s| s.total_box_estimate().map(|m| m as f64))?,
            false,
            b,
        ),
    };
    Ok(picked)
}

/// Samples from the mixture component with the larger switch mean; falls
/// back to the top switch scores when the fit is degenerate or the
/// component holds fewer than `b` sequences.
pub(crate) fn gauss_pick(scores: Vec<(String, f64)>, b: usize, rng_seed: u64, round: usize) -> Vec<String> {
    let values: Vec<f64> = scores.iter().map(|s| s.1).collect();
    let fit = match fit_gmm2(&values, GMM_MAX_ITER, GMM_TOL) {
        Ok(fit) if !fit.degenerate => fit,
        _ => return take_ranked(scores, true, b),
    };
    let upper = fit.upper_component();
    let members: Vec<&str> = scores
        .iter()
        .filter(|(_, v)| fit.responsibilities(*v)[upper] > 0.5)
        .map(|(id, _)| id.as_str())
        .collect();
    if members.len() < b {
        return take_ranked(scores, true, b);
    }
    random_pick(&members, b, rng_seed, round)
}

fn coreset_pick(pool: &PoolState, input: ScoreInput<'_>, ids: &[&str], b: usize) -> Result<Vec<String>> {
    let ScoreInput::Embedding(map) = input else {
        return Err(Error::MissingScores(StrategyKind::Coreset.to_string()));
    };
    let lookup = |id: &str| {
        map.get(id)
            .cloned()
            .ok_or_else(|| Error::MissingScores(format!("coreset: no embedding for `{id}`")))
    };
    // standardize over every train sequence of the pool
    let mut rows = Vec::with_capacity(pool.labeled.len() + ids.len());
    for id in pool.labeled.iter().map(String::as_str).chain(ids.iter().copied()) {
        rows.push(lookup(id)?);
    }
    if rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(Error::Feature("coreset embeddings differ in length".into()));
    }
    standardize_columns(&mut rows);
    let (centers, candidates) = rows.split_at(pool.labeled.len());
    let centers: Vec<&[f64]> = centers.iter().map(Vec::as_slice).collect();
    let candidates: Vec<&[f64]> = candidates.iter().map(Vec::as_slice).collect();
    Ok(k_center_greedy(&centers, &candidates, b)
        .into_iter()
        .map(|i| ids[i].to_string())
        .collect())
}
