//! Experiment orchestration: seeding, the round loop, cost and overhead
//! ledgers, evaluation and multi-seed aggregation.

pub mod config;
mod output;
mod singular;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;

pub use config::{
    CostingSection, EvalSection, PoolSection, PoolSource, RunConfig, RunSection, SurrogateSection,
};
pub use output::{read_records, write_outputs, write_records};

use crate::acquisition::{
    entropy, least_confidence, margin, random_pick, select, sequence_score, OverheadClass,
    ScoreInput, StrategyKind, StrategySpec,
};
use crate::costing::{sequence_cost, theoretical_cost_bounds, AcquisitionMode, CostLedger};
use crate::data_model::{
    flow_cache_path, load_pool, LoadOptions, ParseOptions, PoolState, Sequence, Split,
    MANIFEST_FILE,
};
use crate::error::{Error, Result};
use crate::flowproxy::{self, FlowEngine};
use crate::metrics::{mean_ap, EvalFrame, MapSummary};
use crate::rng::keyed_seed;
use crate::surrogate::{
    read_traces, switch_scores, FeatureSpace, FrameScore, ScoreTrace, SurrogateParams,
    SurrogateState, TraceRound,
};
use crate::synth::generate_pool_with;

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub seed: u64,
    pub strategy: StrategyKind,
    pub selected: Vec<String>,
    pub cum_cost_hours: f64,
    pub cum_overhead_gflops: f64,
    pub map50: f64,
    pub map5095: f64,
}

/// A pool ready for experiments: flow statistics filled in where the
/// strategy needs them, rasters dropped.
#[derive(Debug, Clone)]
pub struct PreparedPool {
    pub pool: PoolState,
    pub features: FeatureSpace,
    /// Sequences whose flow statistics were computed while preparing.
    pub flow_computed: usize,
}

impl PreparedPool {
    pub fn new(mut pool: PoolState) -> Result<Self> {
        for seq in pool.sequences.values_mut() {
            seq.strip_rasters();
        }
        let features = FeatureSpace::from_pool(&pool)?;
        Ok(PreparedPool {
            pool,
            features,
            flow_computed: 0,
        })
    }

    pub fn train_costs(&self) -> Vec<f64> {
        self.pool.split(Split::Train).map(|s| s.meta.cost_hours).collect()
    }
}

/// Builds the pool described by `section`. With `with_flow`, every train
/// sequence gets flow statistics, from caches when present.
pub fn prepare_pool(section: &PoolSection, with_flow: bool) -> Result<PreparedPool> {
    section.validate()?;
    let engine = FlowEngine::new(section.flow);
    let pool = match section.source {
        PoolSource::Synthetic => {
            let mut gen = section.synthetic.clone();
            // labels and costs do not depend on rendering
            gen.render = with_flow;
            let (pool, _) = generate_pool_with(&gen, |seq| {
                if with_flow && seq.meta.split == Split::Train {
                    engine.ensure(seq)?;
                }
                seq.strip_rasters();
                Ok(())
            })?;
            pool
        }
        PoolSource::Focal => {
            let root = section.path.as_deref().expect("validated");
            let manifest = section
                .manifest
                .clone()
                .unwrap_or_else(|| root.join(MANIFEST_FILE));
            let opts = LoadOptions {
                parse: ParseOptions {
                    strict_classes: section.strict_classes,
                },
                load_rasters: with_flow,
                load_flow: with_flow,
            };
            let mut pool = load_pool(root, &manifest, opts)?;
            if with_flow {
                fill_flow(&mut pool, &engine, section.flow_cache.as_deref())?;
            }
            pool
        }
    };
    let mut prepared = PreparedPool::new(pool)?;
    prepared.flow_computed = engine.computed();
    Ok(prepared)
}

fn fill_flow(pool: &mut PoolState, engine: &FlowEngine, cache_root: Option<&Path>) -> Result<()> {
    let train: Vec<&mut Sequence> = pool
        .sequences
        .values_mut()
        .filter(|s| s.meta.split == Split::Train)
        .collect();
    train.into_par_iter().try_for_each(|seq| {
        if let Some(root) = cache_root {
            let cache = flow_cache_path(root, seq.meta.split, seq.id());
            if seq.motion_scores.is_none() && cache.is_file() {
                flowproxy::read_cache(&cache, seq)?;
            }
        }
        engine.ensure(seq)
    })
}

/// One seed of one strategy.
#[derive(Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub records: Vec<RoundRecord>,
    pub ledger: CostLedger,
    pub trace: ScoreTrace,
    /// Calls of the surrogate scorer made to drive acquisition.
    pub scorer_calls: usize,
    /// Set when the run stopped early; `ledger` holds the rounds completed.
    pub error: Option<Error>,
}

#[derive(Debug)]
pub struct RunOutput {
    pub strategy: StrategyKind,
    pub mode: AcquisitionMode,
    pub runs: Vec<SeedRun>,
    /// Sequences whose flow statistics were computed for this run.
    pub flow_computed: usize,
    /// Train-split annotation costs, for bound checks.
    pub train_costs: Vec<f64>,
    pub seed_sequences: usize,
    pub batch_size: usize,
}

impl RunOutput {
    pub fn records(&self) -> Vec<RoundRecord> {
        self.runs.iter().flat_map(|r| r.records.iter().cloned()).collect()
    }

    pub fn first_error(&self) -> Option<&Error> {
        self.runs.iter().find_map(|r| r.error.as_ref())
    }

    /// Fails with the first seed error, if any.
    pub fn into_result(mut self) -> Result<Self> {
        for run in &mut self.runs {
            if let Some(e) = run.error.take() {
                return Err(e);
            }
        }
        Ok(self)
    }

    /// Theoretical (lower, upper) cumulative cost after each round, for
    /// sequential runs.
    pub fn cost_bounds(&self, rounds: usize) -> Option<(Vec<f64>, Vec<f64>)> {
        if self.mode != AcquisitionMode::Sequential {
            return None;
        }
        let total = self.seed_sequences + rounds * self.batch_size;
        let (lo, hi) = theoretical_cost_bounds(&self.train_costs, total).ok()?;
        let at = |v: &[f64]| {
            (0..=rounds)
                .map(|r| v[self.seed_sequences + r * self.batch_size - 1])
                .collect()
        };
        Some((at(&lo), at(&hi)))
    }
}

/// Runs `cfg` end to end and returns every round record.
pub fn run_experiment(cfg: &RunConfig) -> Result<Vec<RoundRecord>> {
    let prepared = prepare_pool(&cfg.pool, cfg.strategy.kind.needs_flow())?;
    Ok(run_prepared(&prepared, cfg)?.into_result()?.records())
}

/// Runs every seed of `cfg` on an already prepared pool.
pub fn run_prepared(prepared: &PreparedPool, cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let kind = cfg.strategy.kind;
    if kind.needs_flow() {
        if let Some(seq) = prepared
            .pool
            .split(Split::Train)
            .find(|s| s.motion_scores.is_none() || s.box_estimates.is_none())
        {
            return Err(Error::MissingStats(seq.id().to_string()));
        }
    }
    check_budget(prepared, cfg)?;
    let traces = match &cfg.surrogate.trace {
        Some(path) => Some(read_traces(path, cfg.surrogate.trace_metrics.as_deref())?),
        None => None,
    };
    let runs = cfg
        .run
        .seeds
        .par_iter()
        .map(|&seed| {
            let trace = match &traces {
                Some(t) => match t.get(&seed) {
                    Some(t) => Some(t),
                    None => {
                        return SeedRun::failed(seed, Error::Trace(format!("trace has no seed {seed}")))
                    }
                },
                None => None,
            };
            let ctx = SeedContext {
                prepared,
                cfg,
                seed,
                trace,
                params: seed_params(cfg.surrogate.params(), seed),
            };
            match cfg.costing.mode {
                AcquisitionMode::Sequential => run_sequential(&ctx),
                AcquisitionMode::Singular => singular::run_singular(&ctx),
            }
        })
        .collect();
    Ok(RunOutput {
        strategy: kind,
        mode: cfg.costing.mode,
        runs,
        flow_computed: prepared.flow_computed,
        train_costs: prepared.train_costs(),
        seed_sequences: cfg.run.seed_sequences,
        batch_size: cfg.strategy.batch_size,
    })
}

fn check_budget(prepared: &PreparedPool, cfg: &RunConfig) -> Result<()> {
    let train = prepared.pool.unlabeled.len();
    let seeds = cfg.run.seed_sequences;
    let (need, have, unit) = match cfg.costing.mode {
        AcquisitionMode::Sequential => (seeds + cfg.run.rounds * cfg.strategy.batch_size, train, "sequences"),
        AcquisitionMode::Singular => {
            if seeds > train {
                return Err(Error::Config(format!(
                    "{seeds} seed sequences but only {train} train sequences"
                )));
            }
            let mut lengths: Vec<usize> = prepared.pool.split(Split::Train).map(Sequence::len).collect();
            lengths.sort_unstable();
            // worst case: the longest sequences are drawn as seeds
            let left: usize = lengths[..train - seeds].iter().sum();
            (cfg.run.rounds * cfg.costing.frames_per_round, left, "frames")
        }
    };
    if need > have {
        return Err(Error::Config(format!(
            "budget of {need} {unit} exceeds the {have} available in the train split"
        )));
    }
    Ok(())
}

/// Surrogate noise differs between seeds.
fn seed_params(params: SurrogateParams, seed: u64) -> SurrogateParams {
    SurrogateParams {
        noise_seed: keyed_seed(params.noise_seed, &[seed]),
        ..params
    }
}

pub(crate) struct SeedContext<'a> {
    pub prepared: &'a PreparedPool,
    pub cfg: &'a RunConfig,
    pub seed: u64,
    pub trace: Option<&'a ScoreTrace>,
    pub params: SurrogateParams,
}

impl SeedRun {
    pub(crate) fn new(seed: u64) -> Self {
        SeedRun {
            seed,
            records: Vec::new(),
            ledger: CostLedger::new(),
            trace: ScoreTrace::default(),
            scorer_calls: 0,
            error: None,
        }
    }

    fn failed(seed: u64, error: Error) -> Self {
        SeedRun {
            error: Some(error),
            ..SeedRun::new(seed)
        }
    }
}

pub(crate) fn overhead_for(
    kind: StrategyKind,
    cfg: &RunConfig,
    round: usize,
    unlabeled_frames: u64,
    train_frames: u64,
) -> f64 {
    let model = &cfg.costing.overhead;
    match kind.overhead() {
        OverheadClass::None => 0.0,
        OverheadClass::PerRound => model.inferential(&[unlabeled_frames])[0],
        OverheadClass::FrontLoaded if round == 0 => model.conformal(train_frames),
        OverheadClass::FrontLoaded => 0.0,
    }
}

/// Uncertainty of one frame under an uncertainty strategy.
pub(crate) fn frame_uncertainty(kind: StrategyKind, objectness: f64) -> Result<f64> {
    match kind {
        StrategyKind::Entropy => entropy(objectness),
        StrategyKind::LeastConfidence => least_confidence(objectness),
        StrategyKind::Margin => margin(objectness),
        other => Err(Error::Domain(format!("{other} has no per-frame uncertainty"))),
    }
}

/// Scores of `ids` at `round`, from the trace when replaying.
pub(crate) fn scores_for(
    ctx: &SeedContext<'_>,
    state: &SurrogateState,
    round: usize,
    ids: &[&str],
    calls: &mut usize,
) -> Result<BTreeMap<String, Vec<FrameScore>>> {
    let pool = &ctx.prepared.pool;
    match ctx.trace {
        Some(trace) => {
            let logged = trace.replay(round)?;
            ids.iter()
                .map(|&id| {
                    let scores = logged.scores.get(id).ok_or_else(|| {
                        Error::Trace(format!("round {round} has no scores for `{id}`"))
                    })?;
                    if scores.len() != pool.sequences[id].len() {
                        return Err(Error::Trace(format!(
                            "round {round}: `{id}` has {} scores for {} frames",
                            scores.len(),
                            pool.sequences[id].len()
                        )));
                    }
                    Ok((id.to_string(), scores.clone()))
                })
                .collect()
        }
        None => {
            *calls += ids.len();
            ids.par_iter()
                .map(|&id| {
                    let seq = &pool.sequences[id];
                    let f = ctx.prepared.features.get(id)?;
                    Ok((id.to_string(), state.frame_scores(seq, f)?))
                })
                .collect()
        }
    }
}

/// Test-split mAP of `state`, or the logged value when replaying.
pub(crate) fn evaluate(ctx: &SeedContext<'_>, state: &SurrogateState, round: usize) -> Result<MapSummary> {
    if let Some(trace) = ctx.trace {
        let logged = trace.replay(round)?;
        if let (Some(map50), Some(map5095)) = (logged.test_map50, logged.test_map5095) {
            return Ok(MapSummary { map50, map5095 });
        }
    }
    evaluate_state(ctx.prepared, state, &ctx.cfg.eval)
}

/// Test-split mAP of the surrogate predictions under `state`.
pub fn evaluate_state(prepared: &PreparedPool, state: &SurrogateState, eval: &EvalSection) -> Result<MapSummary> {
    let res = eval.reference_resolution as f64;
    let keep = |w: f64, h: f64| w * h * res * res >= eval.min_box_pixels;
    let tests: Vec<&Sequence> = prepared.pool.split(Split::Test).collect();
    let per_seq: Vec<Vec<EvalFrame>> = tests
        .par_iter()
        .map(|seq| {
            let preds = state.predict_test(seq, prepared.features.get(seq.id())?)?;
            Ok(seq
                .frames
                .iter()
                .zip(preds)
                .map(|(frame, p)| EvalFrame {
                    truths: frame.boxes.iter().filter(|b| keep(b.w, b.h)).copied().collect(),
                    predictions: p.into_iter().filter(|(b, _)| keep(b.w, b.h)).collect(),
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    mean_ap(&per_seq.into_iter().flatten().collect::<Vec<_>>())
}

fn sequence_inputs(
    kind: StrategyKind,
    scores: &BTreeMap<String, Vec<FrameScore>>,
    prev_counts: Option<&BTreeMap<String, Vec<u32>>>,
    unlabeled: &BTreeSet<String>,
) -> Result<Option<Input>> {
    let mean = |v: Vec<f64>| sequence_score(&v);
    match kind {
        StrategyKind::Entropy | StrategyKind::LeastConfidence | StrategyKind::Margin => {
            let mut out = BTreeMap::new();
            for id in unlabeled {
                let per_frame = scores[id]
                    .iter()
                    .map(|s| frame_uncertainty(kind, s.objectness))
                    .collect::<Result<Vec<_>>>()?;
                out.insert(id.clone(), mean(per_frame)?);
            }
            Ok(Some(Input::Scalar(out)))
        }
        StrategyKind::FalseSwitch | StrategyKind::GaussSwitch => {
            let Some(prev) = prev_counts else {
                return Ok(None);
            };
            let mut out = BTreeMap::new();
            for id in unlabeled {
                let curr: Vec<u32> = scores[id].iter().map(|s| s.pred_count).collect();
                let before = prev
                    .get(id)
                    .ok_or_else(|| Error::Trace(format!("no previous counts for `{id}`")))?;
                out.insert(id.clone(), mean(switch_scores(before, &curr)?)?);
            }
            Ok(Some(Input::Scalar(out)))
        }
        StrategyKind::Coreset => {
            let embeddings = scores
                .iter()
                .map(|(id, s)| {
                    let n = s.len() as f64;
                    let obj = s.iter().map(|f| f.objectness).sum::<f64>() / n;
                    let count = s.iter().map(|f| f.pred_count as f64).sum::<f64>() / n;
                    (id.clone(), vec![obj, count, n])
                })
                .collect();
            Ok(Some(Input::Embedding(embeddings)))
        }
        _ => Ok(None),
    }
}

pub(crate) enum Input {
    Scalar(BTreeMap<String, f64>),
    Embedding(BTreeMap<String, Vec<f64>>),
}

impl Input {
    fn as_score_input(&self) -> ScoreInput<'_> {
        match self {
            Input::Scalar(m) => ScoreInput::Scalar(m),
            Input::Embedding(m) => ScoreInput::Embedding(m),
        }
    }
}

fn run_sequential(ctx: &SeedContext<'_>) -> SeedRun {
    let mut run = SeedRun::new(ctx.seed);
    run.error = sequential_rounds(ctx, &mut run).err();
    run
}

fn sequential_rounds(ctx: &SeedContext<'_>, out: &mut SeedRun) -> Result<()> {
    let cfg = ctx.cfg;
    let spec = cfg.strategy;
    let kind = spec.kind;
    let mut pool = ctx.prepared.pool.clone();
    let train_frames = pool.train_frames();
    let test_ids: Vec<String> = pool.split(Split::Test).map(|s| s.id().to_string()).collect();
    let mut input: Option<Input> = None;
    let mut prev_counts: Option<BTreeMap<String, Vec<u32>>> = None;

    for round in 0..=cfg.run.rounds {
        let unlabeled_before = pool.unlabeled_frames();
        let selected = if round == 0 {
            let ids: Vec<&str> = pool.unlabeled.iter().map(String::as_str).collect();
            if ids.len() < cfg.run.seed_sequences {
                return Err(Error::PoolExhausted {
                    requested: cfg.run.seed_sequences,
                    available: ids.len(),
                });
            }
            random_pick(&ids, cfg.run.seed_sequences, ctx.seed, 0)
        } else {
            match &input {
                Some(i) => select(&spec, &pool, i.as_score_input(), round, ctx.seed)?,
                // first switch round: nothing to compare against yet
                None if kind.is_switch() => select(
                    &StrategySpec { kind: StrategyKind::Random, ..spec },
                    &pool,
                    ScoreInput::None,
                    round,
                    ctx.seed,
                )?,
                None => select(&spec, &pool, ScoreInput::None, round, ctx.seed)?,
            }
        };
        let mut hours = 0.0;
        for id in &selected {
            pool.acquire(id)?;
            let seq = &pool.sequences[id];
            hours += sequence_cost(
                &seq.meta,
                seq.len(),
                AcquisitionMode::Sequential,
                cfg.costing.interpolation_rate,
                seq.len(),
            )?;
        }
        let gflops = overhead_for(kind, cfg, round, unlabeled_before, train_frames);
        out.ledger.charge(round, selected.clone(), hours, gflops);

        let labeled: Vec<(String, f64)> = pool.labeled.iter().map(|id| (id.clone(), 1.0)).collect();
        let state = ctx.prepared.features.state(ctx.params, round, &labeled)?;
        let mut logged = TraceRound::default();

        if kind.is_inferential() && round < cfg.run.rounds {
            let mut ids: Vec<&str> = pool.unlabeled.iter().map(String::as_str).collect();
            if kind == StrategyKind::Coreset {
                ids.extend(pool.labeled.iter().map(String::as_str));
            }
            let scores = scores_for(ctx, &state, round, &ids, &mut out.scorer_calls)?;
            input = sequence_inputs(kind, &scores, prev_counts.as_ref(), &pool.unlabeled)?;
            if kind.is_switch() {
                prev_counts = Some(
                    pool.unlabeled
                        .iter()
                        .map(|id| (id.clone(), scores[id].iter().map(|s| s.pred_count).collect()))
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
        out.records.push(RoundRecord {
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

/// Per-round mean and standard error over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub strategy: StrategyKind,
    pub round: usize,
    pub n_seeds: usize,
    pub map50_mean: f64,
    /// `None` for a single seed.
    pub map50_se: Option<f64>,
    pub cum_cost_mean: f64,
    pub cum_cost_se: Option<f64>,
    pub cum_gflops_mean: f64,
}

/// Mean and standard error (sample standard deviation over `sqrt(n)`).
pub fn mean_se(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    if values.iter().all(|&v| v == values[0]) {
        return (values[0], (n > 1).then_some(0.0));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, Some((var / n as f64).sqrt()))
}

pub fn aggregate(records: &[RoundRecord]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(StrategyKind, usize), Vec<&RoundRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.strategy, r.round)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((strategy, round), rs)| {
            let col = |f: fn(&RoundRecord) -> f64| rs.iter().map(|r| f(r)).collect::<Vec<_>>();
            let (map50_mean, map50_se) = mean_se(&col(|r| r.map50));
            let (cum_cost_mean, cum_cost_se) = mean_se(&col(|r| r.cum_cost_hours));
            let (cum_gflops_mean, _) = mean_se(&col(|r| r.cum_overhead_gflops));
            AggregateRow {
                strategy,
                round,
                n_seeds: rs.len(),
                map50_mean,
                map50_se,
                cum_cost_mean,
                cum_cost_se,
                cum_gflops_mean,
            }
        })
        .collect()
}

/// Prepares the pool, runs every seed and writes outputs under
/// `<out_root>/<run.name>/`. A failing seed still gets its partial ledger
/// written before the error is returned.
pub fn execute(cfg: &RunConfig, out_root: &Path) -> Result<RunOutput> {
    let prepared = prepare_pool(&cfg.pool, cfg.strategy.kind.needs_flow())?;
    let output = run_prepared(&prepared, cfg)?;
    let dir = out_root.join(&cfg.run.name);
    write_outputs(&output, cfg, &dir)?;
    output.into_result()
}

#[cfg(test)]
mod tests;
