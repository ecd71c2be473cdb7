//! Command-line front end. Every command writes CSV; floats carry six
//! decimals. Exit codes: 1 runtime failure, 2 configuration, 3 invalid data.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::acquisition::StrategyKind;
use crate::costing::{theoretical_cost_bounds, OverheadModel};
use crate::data_model::{
    flow_cache_path, load_pool, write_pool, LoadOptions, PoolState, Sequence, Split, MANIFEST_FILE,
};
use crate::error::{Error, Result};
use crate::flowproxy::{self, FlowEngine, FlowParams};
use crate::metrics::{correlations, PerfCostCurve};
use crate::runner::{self, read_records, PoolSection, PoolSource, RunConfig};
use crate::synth::generate_pool;

#[derive(Debug, Parser)]
#[command(name = "seqal", version, about = "Cost-aware sequential active learning simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic pool in FOCAL layout.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment; outputs go to `<out>/<run.name>/`.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replace the configured seeds (repeatable).
        #[arg(long)]
        seed: Vec<u64>,
        /// Replace the configured strategy kind.
        #[arg(long)]
        strategy: Option<String>,
    },
    /// CAR and PAR sweeps over finished runs.
    Metrics {
        /// Run directory holding records.csv (repeatable).
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "")]
        car_budgets: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "")]
        par_budgets: Vec<String>,
        /// Output directory; defaults to the first run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Theoretical cost and overhead bounds of a pool's train split.
    Bounds {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        rounds: usize,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Correlation of annotation cost with sequence statistics.
    Analyze {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute flow-proxy statistics and write them as caches under `out`.
    Stats {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = FlowParams::default().threshold)]
        threshold: u8,
        #[arg(long, default_value_t = FlowParams::default().min_area)]
        min_area: u32,
    },
}

fn f6(v: f64) -> String {
    format!("{v:.6}")
}

fn opt6(v: Option<f64>) -> String {
    v.map(f6).unwrap_or_default()
}

fn parse_budgets(values: &[String], what: &str) -> Result<Vec<f64>> {
    values
        .iter()
        .map(|v| v.trim())
        .filter(|v| !v.is_empty())
        .map(|v| {
            v.parse::<f64>()
                .ok()
                .filter(|b| b.is_finite() && *b >= 0.0)
                .ok_or_else(|| Error::Config(format!("bad {what} budget `{v}`")))
        })
        .collect()
}

/// CSV sink: a file when `path` is given, stdout otherwise.
fn sink(path: Option<&Path>) -> Result<csv::Writer<Box<dyn Write>>> {
    let inner: Box<dyn Write> = match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            Box::new(fs::File::create(p).map_err(|e| Error::io(p, e))?)
        }
        None => Box::new(std::io::stdout()),
    };
    Ok(csv::Writer::from_writer(inner))
}

fn flush(mut w: csv::Writer<Box<dyn Write>>) -> Result<()> {
    w.flush().map_err(|e| Error::io("<output>", e))
}

fn open_pool(root: &Path, manifest: Option<&Path>, load_rasters: bool, load_flow: bool) -> Result<PoolState> {
    let manifest = manifest
        .map(Path::to_path_buf)
        .unwrap_or_else(|| root.join(MANIFEST_FILE));
    load_pool(
        root,
        &manifest,
        LoadOptions {
            load_rasters,
            load_flow,
            ..LoadOptions::default()
        },
    )
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { config, out } => gen(&config, &out),
        Command::Run {
            config,
            out,
            seed,
            strategy,
        } => run(&config, &out, seed, strategy),
        Command::Metrics {
            runs,
            car_budgets,
            par_budgets,
            out,
        } => metrics(&runs, &car_budgets, &par_budgets, out.as_deref()),
        Command::Bounds {
            pool,
            rounds,
            manifest,
            out,
        } => bounds(&pool, rounds, manifest.as_deref(), out.as_deref()),
        Command::Analyze { pool, manifest, out } => analyze(&pool, manifest.as_deref(), out.as_deref()),
        Command::Stats {
            pool,
            out,
            manifest,
            threshold,
            min_area,
        } => stats(&pool, &out, manifest.as_deref(), FlowParams { threshold, min_area }),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn gen(config: &Path, out: &Path) -> Result<()> {
    let section = PoolSection::from_file(config)?;
    if section.source != PoolSource::Synthetic {
        return Err(Error::Config("gen needs [pool] source = \"synthetic\"".into()));
    }
    let pool = generate_pool(&section.synthetic)?;
    write_pool(&pool, out)?;
    println!(
        "wrote {} sequences ({} train frames) to {}",
        pool.sequences.len(),
        pool.train_frames(),
        out.display()
    );
    Ok(())
}

fn run(config: &Path, out: &Path, seeds: Vec<u64>, strategy: Option<String>) -> Result<()> {
    let mut cfg = RunConfig::from_file(config)?;
    if !seeds.is_empty() {
        cfg.run.seeds = seeds;
    }
    if let Some(kind) = strategy {
        cfg.strategy.kind = kind.parse::<StrategyKind>()?;
    }
    cfg.validate()?;
    let output = runner::execute(&cfg, out)?;
    let records = output.records();
    let finals: Vec<_> = records.iter().filter(|r| r.round == cfg.run.rounds).collect();
    let mean = |f: fn(&runner::RoundRecord) -> f64| finals.iter().map(|r| f(r)).sum::<f64>() / finals.len() as f64;
    println!(
        "{}: {} seeds, final mean cost {:.6} h, mAP@50 {:.6}, overhead {:.6} GFLOPS -> {}",
        cfg.strategy.kind,
        output.runs.len(),
        mean(|r| r.cum_cost_hours),
        mean(|r| r.map50),
        mean(|r| r.cum_overhead_gflops),
        out.join(&cfg.run.name).display()
    );
    Ok(())
}

type CurveKey = (String, StrategyKind, u64);

fn metrics(runs: &[PathBuf], car: &[String], par: &[String], out: Option<&Path>) -> Result<()> {
    let car = parse_budgets(car, "CAR")?;
    let par = parse_budgets(par, "PAR")?;
    if let Some(b) = par.iter().find(|b| **b > 1.0) {
        return Err(Error::Config(format!("PAR budget {b} is above 1")));
    }
    let mut curves: BTreeMap<CurveKey, PerfCostCurve> = BTreeMap::new();
    for dir in runs {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        let mut by_seed: BTreeMap<(StrategyKind, u64), Vec<(usize, f64, f64)>> = BTreeMap::new();
        for r in read_records(&dir.join("records.csv"))? {
            by_seed
                .entry((r.strategy, r.seed))
                .or_default()
                .push((r.round, r.cum_cost_hours, r.map50));
        }
        for ((kind, seed), mut points) in by_seed {
            points.sort_by_key(|p| p.0);
            let curve = PerfCostCurve::from_rounds(points.into_iter().map(|(_, c, m)| (c, m)))?;
            curves.insert((name.clone(), kind, seed), curve);
        }
    }
    let out_dir = out.map(Path::to_path_buf).unwrap_or_else(|| runs[0].clone());
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let mut w = sink(Some(&out_dir.join("car.csv")))?;
    w.write_record(["run", "strategy", "seed", "budget", "car"])?;
    for ((run, kind, seed), curve) in &curves {
        for &b in &car {
            w.write_record([run.clone(), kind.to_string(), seed.to_string(), f6(b), f6(curve.car(b)?)])?;
        }
    }
    flush(w)?;

    let mut w = sink(Some(&out_dir.join("par.csv")))?;
    w.write_record(["run", "strategy", "seed", "budget", "par", "truncated"])?;
    for ((run, kind, seed), curve) in &curves {
        for &b in &par {
            let r = curve.par(b)?;
            w.write_record([
                run.clone(),
                kind.to_string(),
                seed.to_string(),
                f6(b),
                f6(r.value),
                r.truncated.to_string(),
            ])?;
        }
    }
    flush(w)
}

fn bounds(root: &Path, rounds: usize, manifest: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let pool = open_pool(root, manifest, false, false)?;
    let train: Vec<&Sequence> = pool.split(Split::Train).collect();
    let costs: Vec<f64> = train.iter().map(|s| s.meta.cost_hours).collect();
    let lengths: Vec<u64> = train.iter().map(|s| s.len() as u64).collect();
    let (lo, hi) = theoretical_cost_bounds(&costs, rounds)?;
    let (glo, ghi) = OverheadModel::default().bounds(&lengths, rounds)?;
    let mut w = sink(out)?;
    w.write_record(["round", "lower_cost_h", "upper_cost_h", "lower_gflops", "upper_gflops"])?;
    for i in 0..rounds {
        w.write_record([(i + 1).to_string(), f6(lo[i]), f6(hi[i]), f6(glo[i]), f6(ghi[i])])?;
    }
    flush(w)
}

fn analyze(root: &Path, manifest: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let mut pool = open_pool(root, manifest, true, true)?;
    let engine = FlowEngine::new(FlowParams::default());
    let mut have_flow = true;
    for seq in pool.sequences.values_mut() {
        if seq.motion_scores.is_none() && !seq.has_rasters() {
            have_flow = false;
            continue;
        }
        engine.ensure(seq)?;
        seq.strip_rasters();
    }
    let seqs: Vec<&Sequence> = pool.sequences.values().collect();
    let cost: Vec<f64> = seqs.iter().map(|s| s.meta.cost_hours).collect();
    let column = |f: &dyn Fn(&Sequence) -> f64| seqs.iter().map(|s| f(s)).collect::<Vec<f64>>();
    let mut variables: Vec<(&str, Vec<f64>)> = vec![
        ("frames", column(&|s| s.len() as f64)),
        ("total_boxes", column(&|s| s.total_boxes() as f64)),
        ("occluded_boxes", column(&|s| s.occluded_boxes() as f64)),
    ];
    if have_flow {
        variables.push((
            "mean_motion",
            column(&|s| s.total_motion().unwrap_or(0) as f64 / s.len() as f64),
        ));
        variables.push((
            "mean_box_estimate",
            column(&|s| s.total_box_estimate().unwrap_or(0) as f64 / s.len() as f64),
        ));
    } else {
        eprintln!("warning: no rasters or flow caches; motion statistics skipped");
    }
    variables.push(("season", column(&|s| s.meta.season.ordinal() as f64)));
    variables.push(("time_of_day", column(&|s| s.meta.time_of_day.ordinal() as f64)));

    let mut w = sink(out)?;
    w.write_record(["variable", "n", "pearson", "spearman", "kendall"])?;
    for (name, values) in variables {
        let c = correlations(&cost, &values)?;
        w.write_record([
            name.to_string(),
            values.len().to_string(),
            opt6(c.pearson),
            opt6(c.spearman),
            opt6(c.kendall),
        ])?;
    }
    flush(w)
}

fn stats(root: &Path, out: &Path, manifest: Option<&Path>, params: FlowParams) -> Result<()> {
    let mut pool = open_pool(root, manifest, true, false)?;
    let engine = FlowEngine::new(params);
    let mut written = 0;
    for seq in pool.sequences.values_mut() {
        if !seq.has_rasters() {
            if seq.meta.split == Split::Train {
                let frame = seq.frames.iter().find(|f| f.raster.is_none()).map_or(0, |f| f.frame_id);
                return Err(Error::MissingRaster {
                    sequence: seq.id().to_string(),
                    frame,
                });
            }
            continue;
        }
        engine.ensure(seq)?;
        let path = flow_cache_path(out, seq.meta.split, seq.id());
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        flowproxy::write_cache(&path, seq)?;
        seq.strip_rasters();
        written += 1;
    }
    println!("wrote flow statistics for {written} sequences to {}", out.display());
    Ok(())
}
