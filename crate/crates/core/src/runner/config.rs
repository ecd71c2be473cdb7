//! Experiment configuration file.
//!
//! A TOML document with sections `[pool]`, `[strategy]`, `[surrogate]`,
//! `[costing]`, `[eval]` and `[run]`. `[pool]` and `[strategy]` are
//! required; the others fall back to defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::acquisition::{StrategyKind, StrategySpec};
use crate::costing::{AcquisitionMode, OverheadModel};
use crate::error::{Error, Result};
use crate::flowproxy::FlowParams;
use crate::surrogate::SurrogateParams;
use crate::synth::GenConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolSource {
    #[default]
    Synthetic,
    Focal,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolSection {
    pub source: PoolSource,
    /// Root of a FOCAL-format pool.
    pub path: Option<PathBuf>,
    /// Defaults to `<path>/manifest.csv`.
    pub manifest: Option<PathBuf>,
    /// Directory holding `flow/<split>/<seq>.flow.csv` caches written by
    /// `stats`; defaults to the pool root.
    pub flow_cache: Option<PathBuf>,
    pub strict_classes: bool,
    pub synthetic: GenConfig,
    pub flow: FlowParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateSection {
    pub kappa: Option<f64>,
    pub noise_seed: Option<u64>,
    /// Per-frame score trace to replay instead of the surrogate.
    pub trace: Option<PathBuf>,
    /// Per-round test metrics belonging to `trace`.
    pub trace_metrics: Option<PathBuf>,
    /// Write per-frame scores to `trace.csv`; per-round metrics are always
    /// written.
    pub export_trace: bool,
}

impl Default for SurrogateSection {
    fn default() -> Self {
        SurrogateSection {
            kappa: None,
            noise_seed: None,
            trace: None,
            trace_metrics: None,
            export_trace: true,
        }
    }
}

impl SurrogateSection {
    pub fn params(&self) -> SurrogateParams {
        let d = SurrogateParams::default();
        SurrogateParams {
            kappa: self.kappa.unwrap_or(d.kappa),
            noise_seed: self.noise_seed.unwrap_or(d.noise_seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostingSection {
    pub mode: AcquisitionMode,
    pub interpolation_rate: usize,
    /// Frames acquired per round in singular mode.
    pub frames_per_round: usize,
    pub overhead: OverheadModel,
}

impl Default for CostingSection {
    fn default() -> Self {
        CostingSection {
            mode: AcquisitionMode::Sequential,
            interpolation_rate: 1,
            frames_per_round: 100,
            overhead: OverheadModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Boxes smaller than this many pixels at `reference_resolution` are
    /// left out of evaluation.
    pub min_box_pixels: f64,
    pub reference_resolution: u32,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            min_box_pixels: 50.0,
            reference_resolution: 640,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub name: String,
    pub seed_sequences: usize,
    pub rounds: usize,
    pub seeds: Vec<u64>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            name: "run".into(),
            seed_sequences: 2,
            rounds: 11,
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub pool: PoolSection,
    pub strategy: StrategySpec,
    #[serde(default)]
    pub surrogate: SurrogateSection,
    #[serde(default)]
    pub costing: CostingSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub run: RunSection,
}

fn parse_table(text: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>()
        .map_err(|e| Error::Config(e.to_string().trim_end().to_string()))
}

fn require(table: &toml::Table, section: &str) -> Result<()> {
    match table.get(section) {
        Some(toml::Value::Table(_)) => Ok(()),
        Some(_) => Err(Error::Config(format!("[{section}] must be a section"))),
        None => Err(Error::Config(format!("missing section [{section}]"))),
    }
}

fn deserialize<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Resolves relative paths against the directory of the config file.
fn rebase(path: &mut Option<PathBuf>, base: &Path) {
    if let Some(p) = path {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
}

impl PoolSection {
    /// Reads only the `[pool]` section of a config document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Only {
            pool: PoolSection,
        }
        let table = parse_table(text)?;
        require(&table, "pool")?;
        let mut only = toml::Table::new();
        only.insert("pool".into(), table["pool"].clone());
        let pool = deserialize::<Only>(&toml::to_string(&only).map_err(|e| Error::Config(e.to_string()))?)?.pool;
        pool.validate()?;
        Ok(pool)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut pool = Self::from_toml_str(&read(path)?)?;
        pool.rebase(path.parent().unwrap_or(Path::new(".")));
        Ok(pool)
    }

    fn rebase(&mut self, base: &Path) {
        rebase(&mut self.path, base);
        rebase(&mut self.manifest, base);
        rebase(&mut self.flow_cache, base);
    }

    pub fn validate(&self) -> Result<()> {
        match self.source {
            PoolSource::Focal if self.path.is_none() => {
                Err(Error::Config("[pool] source = \"focal\" needs `path`".into()))
            }
            PoolSource::Synthetic => self
                .synthetic
                .validate()
                .map_err(|e| Error::Config(format!("[pool.synthetic] {e}"))),
            PoolSource::Focal => Ok(()),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table = parse_table(text)?;
        for section in ["pool", "strategy"] {
            require(&table, section)?;
        }
        let cfg: RunConfig = deserialize(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml_str(&read(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.pool.rebase(base);
        rebase(&mut cfg.surrogate.trace, base);
        rebase(&mut cfg.surrogate.trace_metrics, base);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.pool.validate()?;
        if self.strategy.batch_size == 0 {
            return bad("[strategy] batch_size must be positive".into());
        }
        if self.costing.interpolation_rate == 0 {
            return bad("[costing] interpolation_rate must be at least 1".into());
        }
        if self.costing.frames_per_round == 0 {
            return bad("[costing] frames_per_round must be positive".into());
        }
        self.costing
            .overhead
            .validate()
            .map_err(|e| Error::Config(format!("[costing.overhead] {e}")))?;
        if let Some(k) = self.surrogate.kappa {
            if !(k > 0.0 && k.is_finite()) {
                return bad(format!("[surrogate] kappa {k} must be positive"));
            }
        }
        if self.surrogate.trace_metrics.is_some() && self.surrogate.trace.is_none() {
            return bad("[surrogate] trace_metrics needs `trace`".into());
        }
        if !(self.eval.min_box_pixels >= 0.0) || self.eval.reference_resolution == 0 {
            return bad("[eval] min_box_pixels must be non-negative and reference_resolution positive".into());
        }
        if self.run.seeds.is_empty() {
            return bad("[run] seeds must not be empty".into());
        }
        if self.run.name.is_empty() || self.run.name.contains(['/', '\\']) || self.run.name == ".." {
            return bad(format!("[run] name `{}` is not a plain directory name", self.run.name));
        }
        if self.run.seed_sequences == 0 {
            return bad("[run] seed_sequences must be positive".into());
        }
        if self.costing.mode == AcquisitionMode::Singular
            && (self.strategy.kind.is_conformal() || self.strategy.kind == StrategyKind::Coreset)
        {
            return Err(Error::Mode(format!(
                "strategy {} cannot acquire single frames",
                self.strategy.kind
            )));
        }
        Ok(())
    }
}
