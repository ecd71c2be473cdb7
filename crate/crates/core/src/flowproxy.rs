//! Frame-differencing stand-in for dense optical flow.
//!
//! Conformal strategies only consume two scalars per frame: a motion
//! magnitude and an estimate of how many objects moved. Both come from the
//! absolute difference of consecutive grayscale rasters, computed with
//! integer arithmetic so results never depend on evaluation order.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{Raster, Sequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    pub threshold: u8,
    pub min_area: u32,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            threshold: 10,
            min_area: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowStats {
    pub motion_scores: Vec<u64>,
    pub box_estimates: Vec<u32>,
    pub threshold: u8,
    pub min_area: u32,
}

impl FlowStats {
    pub fn apply_to(self, seq: &mut Sequence) {
        seq.motion_scores = Some(self.motion_scores);
        seq.box_estimates = Some(self.box_estimates);
    }
}

fn check_shape(prev: &Raster, curr: &Raster) -> Result<()> {
    if prev.width != curr.width || prev.height != curr.height {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            prev.width, prev.height, curr.width, curr.height
        )));
    }
    Ok(())
}

/// Sum of absolute per-pixel differences.
pub fn motion_score(prev: &Raster, curr: &Raster) -> Result<u64> {
    check_shape(prev, curr)?;
    Ok(prev
        .pixels
        .iter()
        .zip(&curr.pixels)
        .map(|(&a, &b)| a.abs_diff(b) as u64)
        .sum())
}

/// Binary mask of pixels whose absolute difference reaches `threshold`.
pub fn difference_mask(prev: &Raster, curr: &Raster, threshold: u8) -> Result<Vec<bool>> {
    check_shape(prev, curr)?;
    Ok(prev
        .pixels
        .iter()
        .zip(&curr.pixels)
        .map(|(&a, &b)| a.abs_diff(b) >= threshold)
        .collect())
}

/// Areas of the 8-connected components of `mask`, in scan order of each
/// component's first pixel.
pub fn component_areas(mask: &[bool], width: usize, height: usize) -> Vec<u32> {
    let mut seen = vec![false; mask.len()];
    let mut areas = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut area = 0u32;
        while let Some(idx) = stack.pop() {
            area += 1;
            let (x, y) = ((idx % width) as isize, (idx / width) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                        continue;
                    }
                    let n = ny as usize * width + nx as usize;
                    if mask[n] && !seen[n] {
                        seen[n] = true;
                        stack.push(n);
                    }
                }
            }
        }
        areas.push(area);
    }
    areas
}

/// Number of moving regions: 8-connected components of the thresholded
/// difference map with at least `min_area` pixels.
pub fn estimate_boxes(prev: &Raster, curr: &Raster, threshold: u8, min_area: u32) -> Result<u32> {
    let mask = difference_mask(prev, curr, threshold)?;
    Ok(component_areas(&mask, prev.width as usize, prev.height as usize)
        .into_iter()
        .filter(|&a| a >= min_area)
        .count() as u32)
}

pub fn compute_flow_stats(seq: &Sequence, params: FlowParams) -> Result<FlowStats> {
    let mut rasters = Vec::with_capacity(seq.len());
    for frame in &seq.frames {
        rasters.push(frame.raster.as_ref().ok_or_else(|| Error::MissingRaster {
            sequence: seq.id().to_string(),
            frame: frame.frame_id,
        })?);
    }
    let pairs: Vec<(u64, u32)> = rasters
        .par_windows(2)
        .map(|w| {
            Ok((
                motion_score(w[0], w[1])?,
                estimate_boxes(w[0], w[1], params.threshold, params.min_area)?,
            ))
        })
        .collect::<Result<_>>()?;
    let mut motion_scores = Vec::with_capacity(seq.len());
    let mut box_estimates = Vec::with_capacity(seq.len());
    if !rasters.is_empty() {
        motion_scores.push(0);
        box_estimates.push(0);
    }
    for (m, b) in pairs {
        motion_scores.push(m);
        box_estimates.push(b);
    }
    Ok(FlowStats {
        motion_scores,
        box_estimates,
        threshold: params.threshold,
        min_area: params.min_area,
    })
}

/// Computes flow statistics at most once per sequence and counts how often
/// it was asked to.
#[derive(Debug, Default)]
pub struct FlowEngine {
    pub params: FlowParams,
    computed: AtomicUsize,
    reused: AtomicUsize,
}

impl FlowEngine {
    pub fn new(params: FlowParams) -> Self {
        FlowEngine {
            params,
            ..Default::default()
        }
    }

    /// Fills `seq.motion_scores`/`box_estimates` unless already present.
    pub fn ensure(&self, seq: &mut Sequence) -> Result<()> {
        if seq.motion_scores.is_some() && seq.box_estimates.is_some() {
            self.reused.fetch_add(1, Ordering::Relaxed);
            return Ok(());
        }
        compute_flow_stats(seq, self.params)?.apply_to(seq);
        self.computed.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    pub fn computed(&self) -> usize {
        self.computed.load(Ordering::Relaxed)
    }

    pub fn reused(&self) -> usize {
        self.reused.load(Ordering::Relaxed)
    }
}

pub fn cache_file_name(sequence_id: &str) -> String {
    format!("{sequence_id}.flow.csv")
}

#[derive(Serialize, Deserialize)]
struct CacheRow {
    frame_id: u32,
    motion: u64,
    box_est: u32,
}

pub fn write_cache(path: &Path, seq: &Sequence) -> Result<()> {
    let (Some(motion), Some(boxes)) = (&seq.motion_scores, &seq.box_estimates) else {
        return Err(Error::MissingStats(seq.id().to_string()));
    };
    let mut writer = csv::Writer::from_path(path)?;
    for (frame_id, (&motion, &box_est)) in motion.iter().zip(boxes).enumerate() {
        writer.serialize(CacheRow {
            frame_id: frame_id as u32,
            motion,
            box_est,
        })?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Loads a cache file into `seq`; it must cover every frame in order.
pub fn read_cache(path: &Path, seq: &mut Sequence) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut motion = Vec::new();
    let mut boxes = Vec::new();
    for row in reader.deserialize::<CacheRow>() {
        let row = row?;
        if row.frame_id as usize != motion.len() {
            return Err(Error::Continuity {
                sequence: seq.id().to_string(),
                expected: motion.len() as u32,
                found: row.frame_id,
            });
        }
        motion.push(row.motion);
        boxes.push(row.box_est);
    }
    if motion.len() != seq.len() {
        return Err(Error::Shape(format!(
            "{}: {} cached frames for a {}-frame sequence",
            path.display(),
            motion.len(),
            seq.len()
        )));
    }
    seq.motion_scores = Some(motion);
    seq.box_estimates = Some(boxes);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::fixtures::sequence;
    use crate::data_model::Split;
    use proptest::prelude::*;

    /// Component labelling by repeated min-label relaxation until nothing
    /// changes; slow but obviously correct.
    fn oracle_components(mask: &[bool], width: usize, height: usize) -> Vec<u32> {
        let mut label: Vec<Option<usize>> = mask
            .iter()
            .enumerate()
            .map(|(i, &m)| m.then_some(i))
            .collect();
        loop {
            let mut changed = false;
            for y in 0..height {
                for x in 0..width {
                    let i = y * width + x;
                    let Some(mut best) = label[i] else { continue };
                    for ny in y.saturating_sub(1)..=(y + 1).min(height - 1) {
                        for nx in x.saturating_sub(1)..=(x + 1).min(width - 1) {
                            if let Some(l) = label[ny * width + nx] {
                                best = best.min(l);
                            }
                        }
                    }
                    if Some(best) != label[i] {
                        label[i] = Some(best);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let mut counts = std::collections::BTreeMap::new();
        for l in label.into_iter().flatten() {
            *counts.entry(l).or_insert(0u32) += 1;
        }
        counts.into_values().collect()
    }

    fn block(raster: &mut Raster, x0: u32, y0: u32, size: u32, value: u8) {
        for y in y0..y0 + size {
            for x in x0..x0 + size {
                raster.set(x, y, value);
            }
        }
    }

    #[test]
    fn motion_score_examples() {
        let a = Raster::filled(4, 4, 0);
        assert_eq!(motion_score(&a, &a).unwrap(), 0);
        let mut b = a.clone();
        b.set(2, 1, 17);
        assert_eq!(motion_score(&a, &b).unwrap(), 17);
        assert_eq!(motion_score(&a, &Raster::filled(4, 4, 255)).unwrap(), 16 * 255);
        assert!(matches!(
            motion_score(&a, &Raster::filled(4, 5, 0)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn two_disjoint_moved_blocks_give_two_boxes() {
        let prev = Raster::filled(32, 32, 30);
        let mut curr = prev.clone();
        block(&mut curr, 2, 2, 6, 200);
        block(&mut curr, 20, 20, 6, 200);
        assert_eq!(estimate_boxes(&prev, &curr, 10, 25).unwrap(), 2);
        assert_eq!(estimate_boxes(&prev, &prev, 10, 25).unwrap(), 0);

        let mut small = prev.clone();
        block(&mut small, 5, 5, 3, 200);
        assert_eq!(estimate_boxes(&prev, &small, 10, 25).unwrap(), 0);
        assert_eq!(estimate_boxes(&prev, &small, 10, 9).unwrap(), 1);
    }

    #[test]
    fn higher_threshold_can_split_a_component() {
        let prev = Raster::filled(3, 1, 0);
        let curr = Raster::new(3, 1, vec![50, 20, 50]).unwrap();
        let count = |t| component_areas(&difference_mask(&prev, &curr, t).unwrap(), 3, 1).len();
        assert_eq!(count(10), 1);
        assert_eq!(count(30), 2);
    }

    #[test]
    fn diagonal_pixels_join_under_eight_connectivity() {
        let mask = [true, false, false, true];
        assert_eq!(component_areas(&mask, 2, 2), vec![2]);
    }

    #[test]
    fn single_frame_and_missing_raster() {
        let mut seq = sequence("s", 1.0, 1, Split::Train);
        assert!(matches!(
            compute_flow_stats(&seq, FlowParams::default()),
            Err(Error::MissingRaster { .. })
        ));
        seq.frames[0].raster = Some(Raster::filled(16, 16, 3));
        let stats = compute_flow_stats(&seq, FlowParams::default()).unwrap();
        assert_eq!(stats.motion_scores, vec![0]);
        assert_eq!(stats.box_estimates, vec![0]);
    }

    #[test]
    fn engine_computes_once() {
        let mut seq = sequence("s", 1.0, 2, Split::Train);
        for f in &mut seq.frames {
            f.raster = Some(Raster::filled(16, 16, 3));
        }
        let engine = FlowEngine::new(FlowParams::default());
        engine.ensure(&mut seq).unwrap();
        engine.ensure(&mut seq).unwrap();
        assert_eq!((engine.computed(), engine.reused()), (1, 1));
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut seq = sequence("s", 1.0, 3, Split::Train);
        seq.motion_scores = Some(vec![0, 40, 7]);
        seq.box_estimates = Some(vec![0, 2, 1]);
        let path = dir.path().join(cache_file_name("s"));
        write_cache(&path, &seq).unwrap();
        assert_eq!(
            fs::read_to_string(&path).unwrap(),
            "frame_id,motion,box_est\n0,0,0\n1,40,2\n2,7,1\n"
        );
        let mut other = sequence("s", 1.0, 3, Split::Train);
        read_cache(&path, &mut other).unwrap();
        assert_eq!(other.motion_scores, seq.motion_scores);
        let mut short = sequence("s", 1.0, 2, Split::Train);
        assert!(read_cache(&path, &mut short).is_err());
    }

    fn raster_pair() -> impl Strategy<Value = (Raster, Raster)> {
        (4u32..14, 4u32..14).prop_flat_map(|(w, h)| {
            let n = (w * h) as usize;
            (
                proptest::collection::vec(prop_oneof![Just(0u8), Just(30), any::<u8>()], n),
                proptest::collection::vec(prop_oneof![Just(0u8), Just(30), any::<u8>()], n),
            )
                .prop_map(move |(a, b)| {
                    (Raster::new(w, h, a).unwrap(), Raster::new(w, h, b).unwrap())
                })
        })
    }

    proptest! {
        #[test]
        fn components_match_relaxation_oracle((a, b) in raster_pair(), threshold in 0u8..=255) {
            let mask = difference_mask(&a, &b, threshold).unwrap();
            let (w, h) = (a.width as usize, a.height as usize);
            let mut got = component_areas(&mask, w, h);
            let mut want = oracle_components(&mask, w, h);
            got.sort_unstable();
            want.sort_unstable();
            prop_assert_eq!(got, want);
        }

        #[test]
        fn raising_threshold_shrinks_the_mask((a, b) in raster_pair(), t in 0u8..255) {
            let low = difference_mask(&a, &b, t).unwrap();
            let high = difference_mask(&a, &b, t + 1).unwrap();
            prop_assert!(low.iter().zip(&high).all(|(&l, &h)| l || !h));
        }

        #[test]
        fn motion_is_symmetric((a, b) in raster_pair()) {
            prop_assert_eq!(motion_score(&a, &b).unwrap(), motion_score(&b, &a).unwrap());
        }
    }
}
