//! Synthetic pools of moving-rectangle sequences with a known cost model.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{
    BoundingBox, Frame, Occlusion, PoolState, Raster, Season, Sequence, SequenceMeta, Split,
    TimeOfDay, CLASS_NAMES,
};
use crate::error::{Error, Result};
use crate::rng::{keyed_rng, mix64};

pub const BACKGROUND: u8 = 30;
pub const FOREGROUND: u8 = 200;
pub const NOISE_AMPLITUDE: i16 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostCoeffs {
    /// Hours per ground-truth box.
    pub alpha_boxes: f64,
    /// Hours per pixel of true object travel.
    pub beta_motion: f64,
    /// Hours per occluded box.
    pub gamma_occlusion: f64,
    /// Hours per frame.
    pub delta_length: f64,
    pub noise_sd: f64,
}

impl Default for CostCoeffs {
    fn default() -> Self {
        CostCoeffs {
            alpha_boxes: 0.004,
            beta_motion: 0.002,
            gamma_occlusion: 0.01,
            delta_length: 0.002,
            noise_sd: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub rng_seed: u64,
    pub n_sequences: usize,
    pub frame_len_range: [usize; 2],
    pub raster_size: [u32; 2],
    pub objects_per_seq_range: [usize; 2],
    /// Side length of each rectangle in pixels.
    pub object_size_range: [u32; 2],
    pub speed_range: [f64; 2],
    /// Probability that an object starts on top of the previous one.
    pub occlusion_rate: f64,
    pub cost_coeffs: CostCoeffs,
    /// Emit rasters; without them flow statistics cannot be computed.
    pub render: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            rng_seed: 0,
            n_sequences: 126,
            frame_len_range: [594, 864],
            raster_size: [64, 64],
            objects_per_seq_range: [1, 6],
            object_size_range: [8, 16],
            speed_range: [0.5, 3.0],
            occlusion_rate: 0.2,
            cost_coeffs: CostCoeffs::default(),
            render: true,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Gen(msg));
        if self.n_sequences == 0 {
            return bad("n_sequences must be positive".into());
        }
        if self.frame_len_range[0] == 0 || self.frame_len_range[0] > self.frame_len_range[1] {
            return bad(format!("bad frame_len_range {:?}", self.frame_len_range));
        }
        if self.objects_per_seq_range[0] > self.objects_per_seq_range[1] {
            return bad(format!("bad objects_per_seq_range {:?}", self.objects_per_seq_range));
        }
        let [smin, smax] = self.object_size_range;
        if smin == 0 || smin > smax {
            return bad(format!("bad object_size_range {:?}", self.object_size_range));
        }
        let [lo, hi] = self.speed_range;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("bad speed_range {:?}", self.speed_range));
        }
        let [w, h] = self.raster_size;
        if w < 16 || h < 16 {
            return bad(format!("raster {w}x{h} is smaller than 16x16"));
        }
        if smax > w || smax > h {
            return bad(format!("objects up to {smax}px do not fit a {w}x{h} raster"));
        }
        if !(0.0..=1.0).contains(&self.occlusion_rate) {
            return bad(format!("occlusion_rate {} outside [0,1]", self.occlusion_rate));
        }
        let c = &self.cost_coeffs;
        let coeffs = [
            c.alpha_boxes,
            c.beta_motion,
            c.gamma_occlusion,
            c.delta_length,
            c.noise_sd,
        ];
        if coeffs.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("cost coefficients must be non-negative".into());
        }
        Ok(())
    }
}

/// Pool-level assignment of one sequence.
#[derive(Debug, Clone)]
struct Slot {
    index: usize,
    split: Split,
    scene_id: u32,
    season: Season,
    time_of_day: TimeOfDay,
}

fn split_counts(n: usize) -> (usize, usize, usize) {
    if n < 3 {
        return (n, 0, 0);
    }
    let test = ((n as f64 * 0.1).round() as usize).max(1);
    let val = ((n as f64 * 0.2).round() as usize).max(1);
    (n - test - val, val, test)
}

/// Sequences per scene; scenes never straddle splits.
const SCENE_GROUP: usize = 3;

fn plan(cfg: &GenConfig) -> Vec<Slot> {
    let mut rng = keyed_rng(cfg.rng_seed, &[0x706c_616e]);
    let mut order: Vec<usize> = (0..cfg.n_sequences).collect();
    order.shuffle(&mut rng);
    let (train, val, _) = split_counts(cfg.n_sequences);
    let mut slots = Vec::with_capacity(cfg.n_sequences);
    let mut next_scene = 0u32;
    let mut offset = 0;
    for (split, count) in [
        (Split::Train, train),
        (Split::Validation, val),
        (Split::Test, cfg.n_sequences - train - val),
    ] {
        for (k, &index) in order[offset..offset + count].iter().enumerate() {
            if k % SCENE_GROUP == 0 {
                next_scene += 1;
            }
            slots.push(Slot {
                index,
                split,
                scene_id: next_scene,
                season: Season::ALL[rng.random_range(0..3)],
                time_of_day: TimeOfDay::ALL[rng.random_range(0..3)],
            });
        }
        offset += count;
    }
    slots.sort_by_key(|s| s.index);
    slots
}

pub fn sequence_id(index: usize) -> String {
    format!("seq{index:03}")
}

#[derive(Debug, Clone)]
struct Mover {
    class_id: u32,
    w: u32,
    h: u32,
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
}

impl Mover {
    fn pixel_rect(&self) -> (u32, u32, u32, u32) {
        (self.x.round() as u32, self.y.round() as u32, self.w, self.h)
    }

    fn step(&mut self, max_x: f64, max_y: f64) {
        fn reflect(pos: &mut f64, vel: &mut f64, max: f64) {
            *pos += *vel;
            // a single step is shorter than the free range except for
            // degenerate configs, so a couple of passes settle it
            for _ in 0..4 {
                if *pos < 0.0 {
                    *pos = -*pos;
                    *vel = -*vel;
                } else if *pos > max {
                    *pos = 2.0 * max - *pos;
                    *vel = -*vel;
                } else {
                    break;
                }
            }
            *pos = pos.clamp(0.0, max);
        }
        reflect(&mut self.x, &mut self.vx, max_x);
        reflect(&mut self.y, &mut self.vy, max_y);
    }
}

/// Ground truth for one generated sequence, kept for cost and test checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTruth {
    pub total_boxes: usize,
    pub total_motion: f64,
    pub occluded_boxes: usize,
    pub frames: usize,
    /// Per frame, the drawn pixel rectangles `(x, y, w, h)` in object order.
    pub rects: Vec<Vec<(u32, u32, u32, u32)>>,
}

fn covered_fraction(rects: &[(u32, u32, u32, u32)], i: usize) -> f64 {
    let (x, y, w, h) = rects[i];
    let above = &rects[i + 1..];
    if above.is_empty() {
        return 0.0;
    }
    let mut covered = 0u32;
    for py in y..y + h {
        for px in x..x + w {
            if above
                .iter()
                .any(|&(ax, ay, aw, ah)| px >= ax && px < ax + aw && py >= ay && py < ay + ah)
            {
                covered += 1;
            }
        }
    }
    covered as f64 / (w * h) as f64
}

fn occlusion_level(fraction: f64) -> Occlusion {
    if fraction > 0.9 {
        Occlusion::Full
    } else if fraction > 0.5 {
        Occlusion::Partial
    } else {
        Occlusion::Visible
    }
}

fn noise_pattern(rng: &mut ChaCha8Rng, n: usize) -> Vec<i16> {
    (0..n)
        .map(|_| rng.random_range(-NOISE_AMPLITUDE..=NOISE_AMPLITUDE))
        .collect()
}

fn render(
    width: u32,
    height: u32,
    rects: &[(u32, u32, u32, u32)],
    noise: &[i16],
) -> Raster {
    let mut base = vec![BACKGROUND; (width * height) as usize];
    for &(x, y, w, h) in rects {
        for py in y..y + h {
            let row = (py * width) as usize;
            base[row + x as usize..row + (x + w) as usize].fill(FOREGROUND);
        }
    }
    let pixels = base
        .iter()
        .zip(noise)
        .map(|(&v, &n)| (v as i16 + n).clamp(0, 255) as u8)
        .collect();
    Raster {
        width,
        height,
        pixels,
    }
}

/// Generates sequence `slot` of the pool described by `cfg`.
fn generate_sequence(cfg: &GenConfig, slot: &Slot) -> (Sequence, SequenceTruth) {
    let mut rng = keyed_rng(mix64(cfg.rng_seed) ^ slot.index as u64, &[]);
    let [width, height] = cfg.raster_size;
    let n_frames = rng.random_range(cfg.frame_len_range[0]..=cfg.frame_len_range[1]);
    let n_objects = rng.random_range(cfg.objects_per_seq_range[0]..=cfg.objects_per_seq_range[1]);

    let mut movers: Vec<Mover> = Vec::with_capacity(n_objects);
    for k in 0..n_objects {
        let w = rng.random_range(cfg.object_size_range[0]..=cfg.object_size_range[1]);
        let h = rng.random_range(cfg.object_size_range[0]..=cfg.object_size_range[1]);
        let max_x = (width - w) as f64;
        let max_y = (height - h) as f64;
        let mut x = rng.random_range(0.0..=max_x);
        let mut y = rng.random_range(0.0..=max_y);
        if k > 0 && rng.random_bool(cfg.occlusion_rate) {
            let prev: &Mover = &movers[k - 1];
            x = prev.x.min(max_x);
            y = prev.y.min(max_y);
        }
        let speed = rng.random_range(cfg.speed_range[0]..=cfg.speed_range[1]);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        movers.push(Mover {
            class_id: rng.random_range(0..CLASS_NAMES.len() as u32),
            w,
            h,
            x,
            y,
            vx: speed * angle.cos(),
            vy: speed * angle.sin(),
        });
    }
    let cost_noise = if cfg.cost_coeffs.noise_sd > 0.0 {
        Normal::new(0.0, cfg.cost_coeffs.noise_sd)
            .expect("validated sd")
            .sample(&mut rng)
    } else {
        0.0
    };
    let noise = cfg
        .render
        .then(|| noise_pattern(&mut rng, (width * height) as usize));

    let total_motion: f64 = movers
        .iter()
        .map(|m| (m.vx * m.vx + m.vy * m.vy).sqrt() * n_frames as f64)
        .sum();

    let mut frames = Vec::with_capacity(n_frames);
    let mut all_rects = Vec::with_capacity(n_frames);
    let mut occluded_boxes = 0;
    for frame_id in 0..n_frames as u32 {
        let rects: Vec<_> = movers.iter().map(Mover::pixel_rect).collect();
        let boxes = rects
            .iter()
            .zip(&movers)
            .enumerate()
            .map(|(i, (&(x, y, w, h), m))| {
                let occlusion = occlusion_level(covered_fraction(&rects, i));
                if occlusion != Occlusion::Visible {
                    occluded_boxes += 1;
                }
                BoundingBox::new(
                    m.class_id,
                    (x as f64 + w as f64 / 2.0) / width as f64,
                    (y as f64 + h as f64 / 2.0) / height as f64,
                    w as f64 / width as f64,
                    h as f64 / height as f64,
                )
                .with_occlusion(occlusion)
            })
            .collect();
        let raster = noise.as_ref().map(|n| render(width, height, &rects, n));
        frames.push(Frame {
            frame_id,
            boxes,
            raster,
        });
        all_rects.push(rects);
        for m in &mut movers {
            m.step((width - m.w) as f64, (height - m.h) as f64);
        }
    }

    let total_boxes = n_objects * n_frames;
    let c = &cfg.cost_coeffs;
    let cost = c.alpha_boxes * total_boxes as f64
        + c.beta_motion * total_motion
        + c.gamma_occlusion * occluded_boxes as f64
        + c.delta_length * n_frames as f64
        + cost_noise;
    let meta = SequenceMeta {
        sequence_id: sequence_id(slot.index),
        cost_hours: cost.max(0.1),
        scene_id: slot.scene_id,
        season: slot.season,
        time_of_day: slot.time_of_day,
        split: slot.split,
    };
    let truth = SequenceTruth {
        total_boxes,
        total_motion,
        occluded_boxes,
        frames: n_frames,
        rects: all_rects,
    };
    (
        Sequence {
            meta,
            frames,
            motion_scores: None,
            box_estimates: None,
        },
        truth,
    )
}

/// Generates every sequence, handing each to `hook` (e.g. to compute flow
/// statistics and drop rasters) before it is stored.
pub fn generate_pool_with<F>(cfg: &GenConfig, hook: F) -> Result<(PoolState, Vec<SequenceTruth>)>
where
    F: Fn(&mut Sequence) -> Result<()> + Sync,
{
    cfg.validate()?;
    let generated: Vec<(Sequence, SequenceTruth)> = plan(cfg)
        .par_iter()
        .map(|slot| {
            let (mut seq, truth) = generate_sequence(cfg, slot);
            hook(&mut seq)?;
            Ok((seq, truth))
        })
        .collect::<Result<_>>()?;
    let (sequences, truths): (Vec<_>, Vec<_>) = generated.into_iter().unzip();
    Ok((PoolState::new(sequences)?, truths))
}

pub fn generate_pool(cfg: &GenConfig) -> Result<PoolState> {
    generate_pool_with(cfg, |_| Ok(())).map(|(pool, _)| pool)
}
