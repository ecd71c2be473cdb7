//! Domain types shared by every stage of the pipeline: boxes, frames,
//! sequences with their cost labels, and the labeled/unlabeled pool.

mod focal;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use focal::{
    flow_cache_path, format_label_file, label_file_name, load_pool, parse_label_file, read_manifest,
    write_manifest, write_pool,
    LabelFile, LoadOptions, ParseOptions, ParseWarning, MANIFEST_FILE,
};

/// Superclass names, indexed by `class_id`.
pub const CLASS_NAMES: [&str; 4] = ["Pedestrian", "Bicycle", "Car", "Cart"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Occlusion {
    #[default]
    Visible,
    Partial,
    Full,
}

impl Occlusion {
    pub fn code(self) -> u8 {
        match self {
            Occlusion::Visible => 0,
            Occlusion::Partial => 1,
            Occlusion::Full => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Occlusion::Visible),
            1 => Some(Occlusion::Partial),
            2 => Some(Occlusion::Full),
            _ => None,
        }
    }
}

/// Normalized center-format box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub class_id: u32,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub occlusion: Occlusion,
}

impl BoundingBox {
    pub fn new(class_id: u32, cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BoundingBox {
            class_id,
            cx,
            cy,
            w,
            h,
            occlusion: Occlusion::Visible,
        }
    }

    pub fn with_occlusion(mut self, occlusion: Occlusion) -> Self {
        self.occlusion = occlusion;
        self
    }

    /// Build a box from corner coordinates, clipping the extent to the unit
    /// square. Returns `None` when nothing of positive area survives, and a
    /// flag telling whether any clamping happened.
    pub fn from_corners_clamped(
        class_id: u32,
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
    ) -> Option<(Self, bool)> {
        let cx0 = x0.clamp(0.0, 1.0);
        let cy0 = y0.clamp(0.0, 1.0);
        let cx1 = x1.clamp(0.0, 1.0);
        let cy1 = y1.clamp(0.0, 1.0);
        let clamped = cx0 != x0 || cy0 != y0 || cx1 != x1 || cy1 != y1;
        let w = cx1 - cx0;
        let h = cy1 - cy0;
        if !(w > 0.0 && h > 0.0) {
            return None;
        }
        let bbox = BoundingBox::new(class_id, cx0 + w / 2.0, cy0 + h / 2.0, w, h);
        Some((bbox, clamped))
    }

    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Holds the box invariants, allowing `tol` of slack on the extent
    /// check (formatted coordinates lose precision).
    pub fn is_valid(&self, tol: f64) -> bool {
        let (x0, y0, x1, y1) = self.corners();
        (0.0..=1.0).contains(&self.cx)
            && (0.0..=1.0).contains(&self.cy)
            && self.w > 0.0
            && self.w <= 1.0
            && self.h > 0.0
            && self.h <= 1.0
            && x0 >= -tol
            && y0 >= -tol
            && x1 <= 1.0 + tol
            && y1 <= 1.0 + tol
    }
}

/// Grayscale 8-bit raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl Raster {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width as usize * height as usize {
            return Err(Error::Shape(format!(
                "{}x{} raster needs {} bytes, got {}",
                width,
                height,
                width as usize * height as usize,
                pixels.len()
            )));
        }
        Ok(Raster {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Raster {
            width,
            height,
            pixels: vec![value; width as usize * height as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: u8) {
        self.pixels[(y * self.width + x) as usize] = value;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub frame_id: u32,
    pub boxes: Vec<BoundingBox>,
    pub raster: Option<Raster>,
}

macro_rules! text_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl $name {
            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::Manifest(format!(
                        "unknown {} `{}`",
                        stringify!($name),
                        other
                    ))),
                }
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Season {
    Winter,
    Spring,
    Summer,
}

text_enum!(Season { Winter => "winter", Spring => "spring", Summer => "summer" });

impl Season {
    pub const ALL: [Season; 3] = [Season::Winter, Season::Spring, Season::Summer];

    /// Ordinal encoding used for correlation analysis.
    pub fn ordinal(self) -> u8 {
        match self {
            Season::Winter => 0,
            Season::Spring => 1,
            Season::Summer => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeOfDay {
    Morning,
    Noon,
    Evening,
}

text_enum!(TimeOfDay { Morning => "morning", Noon => "noon", Evening => "evening" });

impl TimeOfDay {
    pub const ALL: [TimeOfDay; 3] = [TimeOfDay::Morning, TimeOfDay::Noon, TimeOfDay::Evening];

    pub fn ordinal(self) -> u8 {
        match self {
            TimeOfDay::Morning => 0,
            TimeOfDay::Noon => 1,
            TimeOfDay::Evening => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

text_enum!(Split { Train => "train", Validation => "validation", Test => "test" });

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    /// Directory name under `labels/` and `frames/`.
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "training",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceMeta {
    pub sequence_id: String,
    /// Annotation plus quality-assurance time for the whole sequence.
    pub cost_hours: f64,
    pub scene_id: u32,
    pub season: Season,
    pub time_of_day: TimeOfDay,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub meta: SequenceMeta,
    pub frames: Vec<Frame>,
    /// Per-frame flow-proxy motion, filled by `flowproxy`.
    pub motion_scores: Option<Vec<u64>>,
    /// Per-frame estimated box counts, filled by `flowproxy`.
    pub box_estimates: Option<Vec<u32>>,
}

impl Sequence {
    pub fn id(&self) -> &str {
        &self.meta.sequence_id
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn total_boxes(&self) -> usize {
        self.frames.iter().map(|f| f.boxes.len()).sum()
    }

    pub fn occluded_boxes(&self) -> usize {
        self.frames
            .iter()
            .flat_map(|f| &f.boxes)
            .filter(|b| b.occlusion != Occlusion::Visible)
            .count()
    }

    pub fn total_motion(&self) -> Option<u64> {
        self.motion_scores.as_ref().map(|m| m.iter().sum())
    }

    pub fn total_box_estimate(&self) -> Option<u64> {
        self.box_estimates
            .as_ref()
            .map(|b| b.iter().map(|&v| v as u64).sum())
    }

    pub fn has_rasters(&self) -> bool {
        !self.frames.is_empty() && self.frames.iter().all(|f| f.raster.is_some())
    }

    pub fn strip_rasters(&mut self) {
        for frame in &mut self.frames {
            frame.raster = None;
        }
    }

    /// Checks length and frame-numbering invariants.
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Manifest(format!(
                "sequence `{}` has no frames",
                self.id()
            )));
        }
        if !(self.meta.cost_hours > 0.0) {
            return Err(Error::Manifest(format!(
                "sequence `{}` has non-positive cost {}",
                self.id(),
                self.meta.cost_hours
            )));
        }
        for (expected, frame) in self.frames.iter().enumerate() {
            if frame.frame_id != expected as u32 {
                return Err(Error::Continuity {
                    sequence: self.id().to_string(),
                    expected: expected as u32,
                    found: frame.frame_id,
                });
            }
        }
        let n = self.frames.len();
        if self.motion_scores.as_ref().is_some_and(|m| m.len() != n)
            || self.box_estimates.as_ref().is_some_and(|b| b.len() != n)
        {
            return Err(Error::Shape(format!(
                "sequence `{}` flow statistics do not cover {} frames",
                self.id(),
                n
            )));
        }
        Ok(())
    }
}

/// All sequences of an experiment plus the acquisition state of the
/// training split.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolState {
    pub sequences: BTreeMap<String, Sequence>,
    /// Train ids in acquisition order.
    pub labeled: Vec<String>,
    pub unlabeled: BTreeSet<String>,
}

impl PoolState {
    /// Builds a pool with every train sequence unlabeled.
    pub fn new(sequences: Vec<Sequence>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for seq in sequences {
            seq.validate()?;
            let id = seq.id().to_string();
            if map.insert(id.clone(), seq).is_some() {
                return Err(Error::Manifest(format!("duplicate sequence id `{id}`")));
            }
        }
        let unlabeled = map
            .values()
            .filter(|s| s.meta.split == Split::Train)
            .map(|s| s.id().to_string())
            .collect();
        Ok(PoolState {
            sequences: map,
            labeled: Vec::new(),
            unlabeled,
        })
    }

    pub fn get(&self, id: &str) -> Option<&Sequence> {
        self.sequences.get(id)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sequence> {
        self.sequences
            .values()
            .filter(move |s| s.meta.split == split)
    }

    pub fn train_ids(&self) -> Vec<String> {
        self.split(Split::Train).map(|s| s.id().to_string()).collect()
    }

    pub fn unlabeled_frames(&self) -> u64 {
        self.unlabeled
            .iter()
            .map(|id| self.sequences[id].len() as u64)
            .sum()
    }

    pub fn train_frames(&self) -> u64 {
        self.split(Split::Train).map(|s| s.len() as u64).sum()
    }

    /// Moves a train sequence from the unlabeled set to the end of the
    /// labeled list.
    pub fn acquire(&mut self, id: &str) -> Result<()> {
        if !self.unlabeled.remove(id) {
            return Err(Error::Domain(format!(
                "sequence `{id}` is not in the unlabeled pool"
            )));
        }
        self.labeled.push(id.to_string());
        Ok(())
    }

    /// Labeled and unlabeled are disjoint and together cover the train split.
    pub fn partition_holds(&self) -> bool {
        let labeled: BTreeSet<&str> = self.labeled.iter().map(String::as_str).collect();
        if labeled.len() != self.labeled.len() {
            return false;
        }
        if labeled.iter().any(|id| self.unlabeled.contains(*id)) {
            return false;
        }
        let train: BTreeSet<&str> = self.split(Split::Train).map(|s| s.id()).collect();
        let union: BTreeSet<&str> = labeled
            .into_iter()
            .chain(self.unlabeled.iter().map(String::as_str))
            .collect();
        union == train
    }

    /// Structural equality with box coordinates and costs compared at `tol`.
    pub fn approx_eq(&self, other: &PoolState, tol: f64) -> bool {
        if self.labeled != other.labeled
            || self.unlabeled != other.unlabeled
            || self.sequences.len() != other.sequences.len()
        {
            return false;
        }
        self.sequences
            .iter()
            .zip(&other.sequences)
            .all(|((ka, a), (kb, b))| ka == kb && sequence_approx_eq(a, b, tol))
    }
}

fn sequence_approx_eq(a: &Sequence, b: &Sequence, tol: f64) -> bool {
    let (ma, mb) = (&a.meta, &b.meta);
    let meta_eq = ma.sequence_id == mb.sequence_id
        && (ma.cost_hours - mb.cost_hours).abs() <= tol
        && ma.scene_id == mb.scene_id
        && ma.season == mb.season
        && ma.time_of_day == mb.time_of_day
        && ma.split == mb.split;
    meta_eq
        && a.motion_scores == b.motion_scores
        && a.box_estimates == b.box_estimates
        && a.frames.len() == b.frames.len()
        && a.frames.iter().zip(&b.frames).all(|(fa, fb)| {
            fa.frame_id == fb.frame_id
                && fa.raster == fb.raster
                && fa.boxes.len() == fb.boxes.len()
                && fa.boxes.iter().zip(&fb.boxes).all(|(x, y)| {
                    x.class_id == y.class_id
                        && x.occlusion == y.occlusion
                        && (x.cx - y.cx).abs() <= tol
                        && (x.cy - y.cy).abs() <= tol
                        && (x.w - y.w).abs() <= tol
                        && (x.h - y.h).abs() <= tol
                })
        })
}
