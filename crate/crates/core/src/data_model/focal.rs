//! On-disk FOCAL layout:
//!
//! ```text
//! <root>/manifest.csv
//! <root>/labels/{training,validation,test}/<seqID>_<frameID>.txt
//! <root>/frames/{training,validation,test}/<seqID>_<frameID>.pgm   (optional)
//! <root>/flow/{training,validation,test}/<seqID>.flow.csv          (optional)
//! ```
//!
//! Every label line is `class cx cy w h [occlusion]` in normalized
//! center format.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    BoundingBox, Frame, Occlusion, PoolState, Raster, Season, Sequence, SequenceMeta, Split,
    TimeOfDay, CLASS_NAMES,
};
use crate::error::{Error, Result};
use crate::flowproxy;

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Reject class ids outside the four superclasses.
    pub strict_classes: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub parse: ParseOptions,
    pub load_rasters: bool,
    pub load_flow: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            parse: ParseOptions::default(),
            load_rasters: true,
            load_flow: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseWarning {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelFile {
    pub sequence_id: String,
    pub frame_id: u32,
    pub boxes: Vec<BoundingBox>,
    pub warnings: Vec<ParseWarning>,
}

pub fn label_file_name(sequence_id: &str, frame_id: u32) -> String {
    format!("{sequence_id}_{frame_id:06}.txt")
}

fn raster_file_name(sequence_id: &str, frame_id: u32) -> String {
    format!("{sequence_id}_{frame_id:06}.pgm")
}

fn parse_file_name(name: &str) -> Result<(String, u32)> {
    let bad = || Error::NameFormat(name.to_string());
    let stem = name.strip_suffix(".txt").ok_or_else(bad)?;
    let (sequence_id, frame) = stem.rsplit_once('_').ok_or_else(bad)?;
    if sequence_id.is_empty() || frame.is_empty() || !frame.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let frame_id = frame.parse::<u32>().map_err(|_| bad())?;
    Ok((sequence_id.to_string(), frame_id))
}

/// Parses one label file. `path_name` may carry directories; only the
/// final component is matched against the naming convention.
pub fn parse_label_file(path_name: &str, contents: &str, opts: ParseOptions) -> Result<LabelFile> {
    let file_name = Path::new(path_name)
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or(path_name);
    let (sequence_id, frame_id) = parse_file_name(file_name)?;

    let mut boxes = Vec::new();
    let mut warnings = Vec::new();
    for (index, raw) in contents.lines().enumerate() {
        let line = index + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let err = |message: String| Error::LineFormat {
            file: file_name.to_string(),
            line,
            message,
        };
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.len() != 5 && fields.len() != 6 {
            return Err(err(format!("expected 5 fields, found {}", fields.len())));
        }
        let class_id: u32 = fields[0]
            .parse()
            .map_err(|_| err(format!("class `{}` is not a non-negative integer", fields[0])))?;
        if opts.strict_classes && class_id as usize >= CLASS_NAMES.len() {
            return Err(err(format!("unknown class {class_id}")));
        }
        let mut coords = [0.0f64; 4];
        for (slot, text) in coords.iter_mut().zip(&fields[1..5]) {
            *slot = text
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("`{text}` is not a finite number")))?;
        }
        let occlusion = match fields.get(5) {
            None => Occlusion::Visible,
            Some(text) => text
                .parse::<u8>()
                .ok()
                .and_then(Occlusion::from_code)
                .ok_or_else(|| err(format!("occlusion `{text}` is not 0, 1 or 2")))?,
        };
        let [cx, cy, w, h] = coords;
        if !(w > 0.0 && h > 0.0) {
            return Err(err(format!("non-positive extent {w}x{h}")));
        }
        let candidate = BoundingBox::new(class_id, cx, cy, w, h).with_occlusion(occlusion);
        let bbox = if candidate.is_valid(0.0) {
            candidate
        } else {
            let (x0, y0, x1, y1) = candidate.corners();
            let (clamped, _) = BoundingBox::from_corners_clamped(class_id, x0, y0, x1, y1)
                .ok_or_else(|| err("box lies entirely outside the image".to_string()))?;
            warnings.push(ParseWarning {
                line,
                message: format!("clamped {cx} {cy} {w} {h} to the unit square"),
            });
            clamped.with_occlusion(occlusion)
        };
        boxes.push(bbox);
    }
    Ok(LabelFile {
        sequence_id,
        frame_id,
        boxes,
        warnings,
    })
}

/// Formats boxes as label-file text, one `%d %.6f %.6f %.6f %.6f` line per
/// box; a sixth field carries occlusion when the box is not fully visible.
pub fn format_label_file(boxes: &[BoundingBox]) -> String {
    let mut out = String::new();
    for b in boxes {
        out.push_str(&format!(
            "{} {:.6} {:.6} {:.6} {:.6}",
            b.class_id, b.cx, b.cy, b.w, b.h
        ));
        if b.occlusion != Occlusion::Visible {
            out.push_str(&format!(" {}", b.occlusion.code()));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    sequence_id: String,
    cost_hours: String,
    scene_id: u32,
    season: String,
    time_of_day: String,
    split: String,
}

pub fn read_manifest(path: &Path) -> Result<Vec<SequenceMeta>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Manifest(format!("{}: {other:?}", path.display())),
    })?;
    let mut metas = Vec::new();
    for (index, row) in reader.deserialize::<ManifestRow>().enumerate() {
        let row_no = index + 2;
        let row = row.map_err(|e| Error::Manifest(format!("row {row_no}: {e}")))?;
        let cost_hours: f64 = row
            .cost_hours
            .trim()
            .parse()
            .map_err(|_| Error::Manifest(format!("row {row_no}: bad cost `{}`", row.cost_hours)))?;
        if !(cost_hours > 0.0 && cost_hours.is_finite()) {
            return Err(Error::Manifest(format!(
                "row {row_no}: cost_hours must be positive, got {cost_hours}"
            )));
        }
        metas.push(SequenceMeta {
            sequence_id: row.sequence_id.trim().to_string(),
            cost_hours,
            scene_id: row.scene_id,
            season: row.season.parse::<Season>()?,
            time_of_day: row.time_of_day.parse::<TimeOfDay>()?,
            split: row.split.parse::<Split>()?,
        });
    }
    Ok(metas)
}

pub fn write_manifest<'a>(
    path: &Path,
    metas: impl IntoIterator<Item = &'a SequenceMeta>,
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    for m in metas {
        writer.serialize(ManifestRow {
            sequence_id: m.sequence_id.clone(),
            cost_hours: format!("{:.6}", m.cost_hours),
            scene_id: m.scene_id,
            season: m.season.to_string(),
            time_of_day: m.time_of_day.to_string(),
            split: m.split.to_string(),
        })?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read_pgm(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |what: &str| Error::Shape(format!("{}: {what}", path.display()));
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // single whitespace byte separates header and data
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("expected an 8-bit binary graymap (P5, maxval 255)"));
    }
    let width: u32 = fields[1].parse().map_err(|_| bad("bad width"))?;
    let height: u32 = fields[2].parse().map_err(|_| bad("bad height"))?;
    let data = bytes.get(pos..).unwrap_or_default().to_vec();
    Raster::new(width, height, data)
}

fn write_pgm(path: &Path, raster: &Raster) -> Result<()> {
    let mut buf = format!("P5\n{} {}\n255\n", raster.width, raster.height).into_bytes();
    buf.extend_from_slice(&raster.pixels);
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn list_label_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|ext| ext == "txt") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads a FOCAL tree. Every train sequence starts out unlabeled.
pub fn load_pool(root: &Path, manifest: &Path, opts: LoadOptions) -> Result<PoolState> {
    let metas = read_manifest(manifest)?;
    let mut by_id: BTreeMap<String, SequenceMeta> = BTreeMap::new();
    for meta in metas {
        let id = meta.sequence_id.clone();
        if by_id.insert(id.clone(), meta).is_some() {
            return Err(Error::Manifest(format!("duplicate sequence id `{id}`")));
        }
    }

    let mut frames_by_seq: BTreeMap<String, Vec<Frame>> = BTreeMap::new();
    for split in Split::ALL {
        let label_dir = root.join("labels").join(split.dir_name());
        let frame_dir = root.join("frames").join(split.dir_name());
        let files = list_label_files(&label_dir)?;
        let parsed: Vec<Result<(LabelFile, Option<Raster>)>> = files
            .par_iter()
            .map(|path| {
                let contents = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
                let label = parse_label_file(name, &contents, opts.parse)?;
                let raster_path = frame_dir.join(raster_file_name(&label.sequence_id, label.frame_id));
                let raster = if opts.load_rasters && raster_path.is_file() {
                    Some(read_pgm(&raster_path)?)
                } else {
                    None
                };
                Ok((label, raster))
            })
            .collect();
        for item in parsed {
            let (label, raster) = item?;
            let meta = by_id.get(&label.sequence_id).ok_or_else(|| {
                Error::Manifest(format!(
                    "label files for `{}` have no manifest row",
                    label.sequence_id
                ))
            })?;
            if meta.split != split {
                return Err(Error::Manifest(format!(
                    "sequence `{}` is listed as {} but stored under {}",
                    label.sequence_id,
                    meta.split,
                    split.dir_name()
                )));
            }
            frames_by_seq
                .entry(label.sequence_id)
                .or_default()
                .push(Frame {
                    frame_id: label.frame_id,
                    boxes: label.boxes,
                    raster,
                });
        }
    }

    let mut sequences = Vec::with_capacity(by_id.len());
    for (id, meta) in by_id {
        let mut frames = frames_by_seq.remove(&id).ok_or_else(|| {
            Error::Manifest(format!("manifest row `{id}` has no label files"))
        })?;
        frames.sort_by_key(|f| f.frame_id);
        for (expected, frame) in frames.iter().enumerate() {
            if frame.frame_id != expected as u32 {
                return Err(Error::Continuity {
                    sequence: id.clone(),
                    expected: expected as u32,
                    found: frame.frame_id,
                });
            }
        }
        let mut seq = Sequence {
            meta,
            frames,
            motion_scores: None,
            box_estimates: None,
        };
        if opts.load_flow {
            let cache = flow_cache_path(root, seq.meta.split, &id);
            if cache.is_file() {
                flowproxy::read_cache(&cache, &mut seq)?;
            }
        }
        sequences.push(seq);
    }
    PoolState::new(sequences)
}

/// Location of a sequence's flow cache under a pool or cache root.
pub fn flow_cache_path(root: &Path, split: Split, id: &str) -> PathBuf {
    root.join("flow")
        .join(split.dir_name())
        .join(flowproxy::cache_file_name(id))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes `pool` as a FOCAL tree rooted at `root` with `manifest.csv` beside
/// the `labels/` directory. The labeled/unlabeled state is not persisted.
pub fn write_pool(pool: &PoolState, root: &Path) -> Result<()> {
    for split in Split::ALL {
        create_dir(&root.join("labels").join(split.dir_name()))?;
    }
    pool.sequences.par_iter().try_for_each(|(id, seq)| -> Result<()> {
        let split_dir = seq.meta.split.dir_name();
        let label_dir = root.join("labels").join(split_dir);
        for frame in &seq.frames {
            let path = label_dir.join(label_file_name(id, frame.frame_id));
            let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            file.write_all(format_label_file(&frame.boxes).as_bytes())
                .map_err(|e| Error::io(&path, e))?;
        }
        if seq.frames.iter().any(|f| f.raster.is_some()) {
            let frame_dir = root.join("frames").join(split_dir);
            create_dir(&frame_dir)?;
            for frame in &seq.frames {
                if let Some(raster) = &frame.raster {
                    write_pgm(&frame_dir.join(raster_file_name(id, frame.frame_id)), raster)?;
                }
            }
        }
        if seq.motion_scores.is_some() && seq.box_estimates.is_some() {
            let path = flow_cache_path(root, seq.meta.split, id);
            create_dir(path.parent().expect("cache path has a parent"))?;
            flowproxy::write_cache(&path, seq)?;
        }
        Ok(())
    })?;
    write_manifest(
        &root.join(MANIFEST_FILE),
        pool.sequences.values().map(|s| &s.meta),
    )
}
