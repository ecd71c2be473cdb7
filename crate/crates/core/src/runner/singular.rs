//! Frame-level acquisition: each round labels the `frames_per_round` most
//! informative unlabeled frames of the train split. Keyframes carry an
//! equal share of their sequence cost, interpolated frames are free.

use std::collections::{BTreeMap, BTreeSet};

use super::{evaluate, frame_uncertainty, overhead_for, scores_for, SeedContext, SeedRun};
use crate::acquisition::{gauss_pick, random_pick, take_ranked, StrategyKind};
use crate::costing::{effective_frames, frame_charge, sequence_cost, AcquisitionMode};
use crate::data_model::Split;
use crate::error::{Error, Result};
use crate::surrogate::{switch_scores, TraceRound};

/// `<sequence>:<frame>` with the frame zero-padded, so keys sort by
/// sequence id first and frame index second.
pub fn frame_key(id: &str, frame: usize) -> String {
    format!("{id}:{frame:06}")
}

fn parse_key(key: &str) -> (&str, usize) {
    let (id, frame) = key.rsplit_once(':').expect("built by frame_key");
    (id, frame.parse().expect("built by frame_key"))
}

pub(crate) fn run_singular(ctx: &SeedContext<'_>) -> SeedRun {
    let mut run = SeedRun::new(ctx.seed);
    run.error = singular_rounds(ctx, &mut run).err();
    run
}

fn singular_rounds(ctx: &SeedContext<'_>, out: &mut SeedRun) -> Result<()> {
    let cfg = ctx.cfg;
    let kind = cfg.strategy.kind;
    let rate = cfg.costing.interpolation_rate;
    let b = cfg.costing.frames_per_round;
    let mut pool = ctx.prepared.pool.clone();
    let train_frames = pool.train_frames();
    let test_ids: Vec<String> = pool.split(Split::Test).map(|s| s.id().to_string()).collect();
    let mut taken: BTreeMap<String, BTreeSet<usize>> =
        pool.unlabeled.iter().map(|id| (id.clone(), BTreeSet::new())).collect();
    let mut frame_scores: Option<Vec<(String, f64)>> = None;
    let mut prev_counts: Option<BTreeMap<String, Vec<u32>>> = None;

    for round in 0..=cfg.run.rounds {
        let unlabeled_before: u64 = taken
            .iter()
            .map(|(id, t)| (pool.sequences[id].len() - t.len()) as u64)
            .sum();
        let mut hours = 0.0;
        let selected = if round == 0 {
            let ids: Vec<&str> = pool.unlabeled.iter().map(String::as_str).collect();
            let seeds = random_pick(&ids, cfg.run.seed_sequences, ctx.seed, 0);
            for id in &seeds {
                let seq = &pool.sequences[id];
                let n = seq.len();
                hours += sequence_cost(&seq.meta, n, AcquisitionMode::Singular, rate, effective_frames(n, rate))?;
                taken.get_mut(id).expect("train id").extend(0..n);
            }
            seeds
        } else {
            let candidates: Vec<String> = taken
                .iter()
                .flat_map(|(id, t)| {
                    (0..pool.sequences[id].len())
                        .filter(|f| !t.contains(f))
                        .map(|f| frame_key(id, f))
                })
                .collect();
            if candidates.len() < b {
                return Err(Error::PoolExhausted {
                    requested: b,
                    available: candidates.len(),
                });
            }
            let picks = match (kind, frame_scores.take()) {
                (StrategyKind::GaussSwitch, Some(scores)) => gauss_pick(scores, b, ctx.seed, round),
                (_, Some(scores)) => take_ranked(scores, true, b),
                (_, None) => {
                    let refs: Vec<&str> = candidates.iter().map(String::as_str).collect();
                    random_pick(&refs, b, ctx.seed, round)
                }
            };
            for key in &picks {
                let (id, f) = parse_key(key);
                let seq = &pool.sequences[id];
                hours += frame_charge(seq.meta.cost_hours, seq.len(), rate, f);
                taken.get_mut(id).expect("train id").insert(f);
            }
            picks
        };
        let complete: Vec<String> = taken
            .iter()
            .filter(|(id, t)| t.len() == pool.sequences[*id].len() && pool.unlabeled.contains(*id))
            .map(|(id, _)| id.clone())
            .collect();
        for id in complete {
            pool.acquire(&id)?;
        }
        let gflops = overhead_for(kind, cfg, round, unlabeled_before, train_frames);
        out.ledger.charge(round, selected.clone(), hours, gflops);

        let weights: Vec<(String, f64)> = taken
            .iter()
            .filter(|(_, t)| !t.is_empty())
            .map(|(id, t)| (id.clone(), t.len() as f64 / pool.sequences[id].len() as f64))
            .collect();
        let state = ctx.prepared.features.state(ctx.params, round, &weights)?;
        let mut logged = TraceRound::default();

        if kind.is_inferential() && round < cfg.run.rounds {
            let open: Vec<&str> = taken
                .iter()
                .filter(|(id, t)| t.len() < pool.sequences[*id].len())
                .map(|(id, _)| id.as_str())
                .collect();
            let scores = scores_for(ctx, &state, round, &open, &mut out.scorer_calls)?;
            let mut per_frame = Vec::new();
            let switching = kind.is_switch();
            if !switching || prev_counts.is_some() {
                for &id in &open {
                    let s = &scores[id];
                    let values = if switching {
                        let curr: Vec<u32> = s.iter().map(|f| f.pred_count).collect();
                        let prev = prev_counts.as_ref().expect("checked").get(id).ok_or_else(|| {
                            Error::Trace(format!("no previous counts for `{id}`"))
                        })?;
                        switch_scores(prev, &curr)?
                    } else {
                        s.iter()
                            .map(|f| frame_uncertainty(kind, f.objectness))
                            .collect::<Result<_>>()?
                    };
                    for (f, v) in values.into_iter().enumerate() {
                        if !taken[id].contains(&f) {
                            per_frame.push((frame_key(id, f), v));
                        }
                    }
                }
                frame_scores = Some(per_frame);
            }
            if switching {
                prev_counts = Some(
                    open.iter()
                        .map(|&id| (id.to_string(), scores[id].iter().map(|f| f.pred_count).collect()))
                        .collect(),
                );
            }
            logged.scores = scores;
            if ctx.trace.is_none() {
                for id in &test_ids {
                    let seq = &pool.sequences[id];
                    let f = ctx.prepared.features.get(id)?;
                    logged.scores.insert(id.clone(), state.frame_scores(seq, f)?);
                }
            }
        }

        let map = evaluate(ctx, &state, round)?;
        logged.test_map50 = Some(map.map50);
        logged.test_map5095 = Some(map.map5095);
        out.trace.rounds.insert(round, logged);
        let entry = out.ledger.entries().last().expect("charged above");
        out.records.push(super::RoundRecord {
            round,
            seed: ctx.seed,
            strategy: kind,
            selected,
            cum_cost_hours: entry.cumulative_cost_hours,
            cum_overhead_gflops: entry.cumulative_overhead_gflops,
            map50: map.map50,
            map5095: map.map5095,
        });
    }
    Ok(())
}
