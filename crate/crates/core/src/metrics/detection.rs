use std::collections::BTreeSet;

use crate::data_model::BoundingBox;
use crate::error::{Error, Result};

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub const IOU_THRESHOLDS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Ground truth and predictions of one image. Predictions only match truths
/// of the same frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalFrame {
    pub truths: Vec<BoundingBox>,
    pub predictions: Vec<(BoundingBox, f64)>,
}

/// Single-frame, single-class average precision.
pub fn average_precision(
    predictions: &[(BoundingBox, f64)],
    truths: &[BoundingBox],
    iou_thresh: f64,
) -> Option<f64> {
    let frame = [(predictions.iter().collect::<Vec<_>>(), truths.iter().collect::<Vec<_>>())];
    ap_core(&frame, iou_thresh)
}

/// Average precision of one class pooled over frames. Boxes of other
/// classes are ignored. `None` when the class has neither truths nor
/// predictions.
pub fn average_precision_frames(frames: &[EvalFrame], class_id: u32, iou_thresh: f64) -> Option<f64> {
    ap_core(&class_refs(frames, class_id), iou_thresh)
}

type FrameRefs<'a> = (Vec<&'a (BoundingBox, f64)>, Vec<&'a BoundingBox>);

fn ap_core(frames: &[FrameRefs<'_>], iou_thresh: f64) -> Option<f64> {
    ap_core_multi(frames, &[iou_thresh])[0]
}

/// Average precision at each threshold; the confidence ranking is shared.
fn ap_core_multi(frames: &[FrameRefs<'_>], thresholds: &[f64]) -> Vec<Option<f64>> {
    let n_truths: usize = frames.iter().map(|(_, t)| t.len()).sum();
    let n_preds: usize = frames.iter().map(|(p, _)| p.len()).sum();
    if n_truths == 0 {
        return vec![if n_preds == 0 { None } else { Some(0.0) }; thresholds.len()];
    }

    // (confidence, frame, prediction index); stable sort keeps insertion
    // order among equal confidences
    let mut order: Vec<(f64, usize, usize)> = frames
        .iter()
        .enumerate()
        .flat_map(|(fi, (preds, _))| preds.iter().enumerate().map(move |(pi, p)| (p.1, fi, pi)))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));

    thresholds
        .iter()
        .map(|&iou_thresh| {
            let mut matched: Vec<Vec<bool>> = frames.iter().map(|(_, t)| vec![false; t.len()]).collect();
            let mut hits = Vec::with_capacity(order.len());
            for &(_, fi, pi) in &order {
                let pred = &frames[fi].0[pi].0;
                let mut best: Option<(usize, f64)> = None;
                for (ti, truth) in frames[fi].1.iter().enumerate() {
                    if matched[fi][ti] {
                        continue;
                    }
                    let overlap = iou(pred, truth);
                    if overlap >= iou_thresh && best.is_none_or(|(_, b)| overlap > b) {
                        best = Some((ti, overlap));
                    }
                }
                let hit = best.is_some();
                if let Some((ti, _)) = best {
                    matched[fi][ti] = true;
                }
                hits.push(hit);
            }
            Some(envelope_area(&hits) / n_truths as f64)
        })
        .collect()
}

/// Sum of the monotone precision envelope at every hit; recall advances by
/// one truth at each.
fn envelope_area(hits: &[bool]) -> f64 {
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (rank, &hit) in hits.iter().enumerate() {
        tp += hit as usize;
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    hits.iter()
        .zip(&precision)
        .filter(|(hit, _)| **hit)
        .map(|(_, p)| *p)
        .sum()
}

fn class_refs(frames: &[EvalFrame], class_id: u32) -> Vec<FrameRefs<'_>> {
    frames
        .iter()
        .map(|f| {
            (
                f.predictions
                    .iter()
                    .filter(|(b, _)| b.class_id == class_id)
                    .collect::<Vec<_>>(),
                f.truths
                    .iter()
                    .filter(|b| b.class_id == class_id)
                    .collect::<Vec<_>>(),
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapSummary {
    pub map50: f64,
    pub map5095: f64,
}

/// Class-pooled mAP over a test split. Classes without any ground truth are
/// left out of the mean; a split without any ground truth scores zero.
pub fn mean_ap(frames: &[EvalFrame]) -> Result<MapSummary> {
    if frames.is_empty() {
        return Err(Error::EmptyTest);
    }
    let classes: BTreeSet<u32> = frames
        .iter()
        .flat_map(|f| f.truths.iter().map(|b| b.class_id))
        .collect();
    if classes.is_empty() {
        return Ok(MapSummary {
            map50: 0.0,
            map5095: 0.0,
        });
    }
    let mut map50 = 0.0;
    let mut map5095 = 0.0;
    for &class_id in &classes {
        let aps = ap_core_multi(&class_refs(frames, class_id), &IOU_THRESHOLDS);
        for (k, ap) in aps.into_iter().enumerate() {
            let ap = ap.unwrap_or(0.0);
            if k == 0 {
                map50 += ap;
            }
            map5095 += ap;
        }
    }
    let n = classes.len() as f64;
    Ok(MapSummary {
        map50: map50 / n,
        map5095: map5095 / (n * IOU_THRESHOLDS.len() as f64),
    })
}
