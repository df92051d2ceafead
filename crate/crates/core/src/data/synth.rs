//! Synthetic dash-cam scenarios.
//!
//! Each video tracks a handful of objects moving in a small pixel frame.
//! Positive videos contain one pair whose center distance shrinks linearly
//! to zero at the onset frame; negative videos keep that pair apart. A latent
//! risk level `r(t) = (t − 1)/(a − 1)`, capped at 1, leaks into the global
//! and visual features of positives so that the task is learnable from
//! either branch.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataError, DetectionSlot, FeatureBundle, Frame, Manifest, VideoEntry, VideoSample, BUNDLE_VERSION};
use crate::graph::BoundingBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub dataset: String,
    pub positives: usize,
    pub negatives: usize,
    pub frames: usize,
    pub fps: f64,
    pub slots: usize,
    pub visual_dim: usize,
    pub label_dim: usize,
    pub global_dim: usize,
    pub classes: u32,
    pub frame_width: f64,
    pub frame_height: f64,
    /// Closing speed of the colliding pair, pixels per frame.
    pub speed_range: (f64, f64),
    /// Inclusive range of 1-based onset frames.
    pub onset_window: (u32, u32),
    /// Standard deviation of per-frame feature noise.
    pub noise: f64,
    /// Strength of the risk signal in the features.
    pub signal: f64,
    /// Risk level already present at the first frame of a positive video.
    pub initial_risk: f64,
    /// Probability that a present object goes undetected in a frame.
    pub miss_rate: f64,
    /// 0 leaves the feature geometry untouched; larger values rotate the
    /// signal directions, offset the features and inflate the noise.
    pub domain_shift: f64,
    /// Seed of the shared feature geometry (prototypes, signal directions).
    /// Bundles that should be comparable use the same world seed.
    pub world_seed: u64,
    /// Seed of everything video-specific.
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self::easy()
    }
}

impl SyntheticConfig {
    /// Balanced, strongly separable preset.
    pub fn easy() -> Self {
        Self {
            dataset: "synthetic".into(),
            positives: 100,
            negatives: 100,
            frames: 50,
            fps: 10.0,
            slots: 4,
            visual_dim: 16,
            label_dim: 8,
            global_dim: 16,
            classes: 3,
            frame_width: 48.0,
            frame_height: 27.0,
            speed_range: (0.15, 0.3),
            onset_window: (30, 45),
            noise: 0.3,
            signal: 2.0,
            initial_risk: 0.5,
            miss_rate: 0.05,
            domain_shift: 0.0,
            world_seed: 0,
            seed: 0,
        }
    }

    /// Noisier preset with a weak signal and no head start, where the
    /// architecture choices show up in the scores.
    pub fn hard() -> Self {
        Self {
            positives: 60,
            negatives: 60,
            noise: 0.6,
            signal: 1.0,
            initial_risk: 0.0,
            ..Self::easy()
        }
    }

    /// Tiny preset for quick demos and tests.
    pub fn tiny() -> Self {
        Self {
            positives: 4,
            negatives: 4,
            frames: 12,
            onset_window: (6, 10),
            ..Self::easy()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::Config(m));
        if self.positives + self.negatives == 0 {
            return bad("no videos requested".into());
        }
        for (name, v) in [
            ("frames", self.frames),
            ("slots", self.slots),
            ("visual_dim", self.visual_dim),
            ("label_dim", self.label_dim),
            ("global_dim", self.global_dim),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.slots < 2 {
            return bad("at least two slots are needed for the converging pair".into());
        }
        if self.classes == 0 {
            return bad("classes must be positive".into());
        }
        let (lo, hi) = self.onset_window;
        if lo < 2 || lo > hi || hi as usize > self.frames {
            return bad(format!("onset window ({lo}, {hi}) must satisfy 2 ≤ lo ≤ hi ≤ {}", self.frames));
        }
        let (s0, s1) = self.speed_range;
        if !(s0 > 0.0 && s0 <= s1 && s1.is_finite()) {
            return bad(format!("speed range ({s0}, {s1}) must be positive and ordered"));
        }
        let finite_nonneg = [self.noise, self.signal, self.initial_risk, self.domain_shift];
        if finite_nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("noise, signal, initial_risk and domain_shift must be finite and nonnegative".into());
        }
        if !(0.0..1.0).contains(&self.miss_rate) {
            return bad(format!("miss_rate {} must lie in [0, 1)", self.miss_rate));
        }
        if !(self.fps > 0.0 && self.frame_width > 0.0 && self.frame_height > 0.0) {
            return bad("fps and frame dimensions must be positive".into());
        }
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Removes the component of `v` along unit vector `u`.
fn reject(mut v: Vec<f64>, u: &[f64]) -> Vec<f64> {
    let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
    v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
    v
}

/// Rotates unit `u` towards a random orthogonal direction by `angle`.
fn rotate(u: &[f64], rng: &mut ChaCha8Rng, angle: f64) -> Vec<f64> {
    if angle == 0.0 || u.len() < 2 {
        return u.to_vec();
    }
    let w = unit(reject(gaussian(rng, u.len(), 1.0), u));
    u.iter().zip(&w).map(|(a, b)| a * angle.cos() + b * angle.sin()).collect()
}

/// Feature geometry shared by every video generated under one world seed.
struct World {
    global_dir: Vec<f64>,
    global_offset: Vec<f64>,
    visual_dir: Vec<f64>,
    visual_offset: Vec<f64>,
    prototypes: Vec<Vec<f64>>,
    label_embeddings: Vec<Vec<f32>>,
    noise: f64,
}

impl World {
    fn new(c: &SyntheticConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(c.world_seed);
        let global_dir = unit(gaussian(&mut rng, c.global_dim, 1.0));
        let visual_dir = unit(gaussian(&mut rng, c.visual_dim, 1.0));
        let prototypes = (0..c.classes).map(|_| gaussian(&mut rng, c.visual_dim, 1.0)).collect();
        let label_embeddings = (0..c.classes)
            .map(|_| unit(gaussian(&mut rng, c.label_dim, 1.0)).into_iter().map(|x| x as f32).collect())
            .collect();
        // Separate stream: shift 0 and shift > 0 share all other geometry.
        let mut shift_rng = ChaCha8Rng::seed_from_u64(c.world_seed);
        shift_rng.set_stream(1);
        let angle = c.domain_shift * std::f64::consts::FRAC_PI_4;
        let global_dir = rotate(&global_dir, &mut shift_rng, angle);
        let visual_dir = rotate(&visual_dir, &mut shift_rng, angle);
        let global_offset = gaussian(&mut shift_rng, c.global_dim, c.domain_shift);
        let visual_offset = gaussian(&mut shift_rng, c.visual_dim, c.domain_shift);
        Self {
            global_dir,
            global_offset,
            visual_dir,
            visual_offset,
            prototypes,
            label_embeddings,
            noise: c.noise * (1.0 + c.domain_shift),
        }
    }
}

struct Track {
    class_id: u32,
    identity: Vec<f64>,
    size: (f64, f64),
    pos: (f64, f64),
    vel: (f64, f64),
}

fn round32(x: f64) -> f64 {
    x as f32 as f64
}

fn generate_video(c: &SyntheticConfig, world: &World, index: usize, positive: bool) -> VideoSample {
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    rng.set_stream(index as u64 + 1);
    let n = c.frames;
    let (w, h) = (c.frame_width, c.frame_height);
    let onset = positive.then(|| rng.random_range(c.onset_window.0..=c.onset_window.1));
    let risk = |t: usize| -> f64 {
        match onset {
            Some(a) => c.initial_risk + ((t as f64 - 1.0) / (a as f64 - 1.0)).min(1.0),
            None => 0.0,
        }
    };

    let n_objects = rng.random_range(2..=c.slots);
    let mut tracks: Vec<Track> = (0..n_objects)
        .map(|_| {
            let class_id = rng.random_range(0..c.classes);
            Track {
                class_id,
                identity: gaussian(&mut rng, c.visual_dim, 0.5),
                size: (rng.random_range(2.0..6.0), rng.random_range(2.0..6.0)),
                pos: (rng.random_range(0.0..w), rng.random_range(0.0..h)),
                vel: (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)),
            }
        })
        .collect();

    // The first two tracks form the pair of interest.
    let speed = rng.random_range(c.speed_range.0..=c.speed_range.1);
    let heading = rng.random_range(0.0..std::f64::consts::TAU);
    let dir = (heading.cos(), heading.sin());
    let mid = (rng.random_range(0.25 * w..0.75 * w), rng.random_range(0.25 * h..0.75 * h));
    let apart = rng.random_range(4.0..8.0);
    let base = unit(reject(gaussian(&mut rng, c.global_dim, 1.0), &world.global_dir));
    let base: Vec<f64> = base.iter().map(|x| x * 0.5).collect();

    let mut frames = Vec::with_capacity(n);
    for t in 1..=n {
        let gap = match onset {
            Some(a) => speed * (a as f64 - t as f64).max(0.0),
            None => apart + speed * t as f64 * 0.5,
        };
        for (k, tr) in tracks.iter_mut().enumerate() {
            if k < 2 {
                let sgn = if k == 0 { -0.5 } else { 0.5 };
                tr.pos = (mid.0 + sgn * gap * dir.0, mid.1 + sgn * gap * dir.1);
            } else {
                tr.pos.0 += tr.vel.0;
                tr.pos.1 += tr.vel.1;
                if !(0.0..=w).contains(&tr.pos.0) {
                    tr.vel.0 = -tr.vel.0;
                }
                if !(0.0..=h).contains(&tr.pos.1) {
                    tr.vel.1 = -tr.vel.1;
                }
            }
            tr.pos = (tr.pos.0.clamp(0.0, w), tr.pos.1.clamp(0.0, h));
        }

        let r = risk(t);
        let mut slots: Vec<DetectionSlot> = Vec::with_capacity(c.slots);
        for (k, tr) in tracks.iter().enumerate() {
            if rng.random::<f64>() < c.miss_rate {
                continue;
            }
            let involved = if k < 2 { r } else { 0.0 };
            let proto = &world.prototypes[tr.class_id as usize];
            let noise = gaussian(&mut rng, c.visual_dim, world.noise);
            let visual = (0..c.visual_dim)
                .map(|i| {
                    (proto[i] + tr.identity[i] + world.visual_offset[i] + involved * c.signal * world.visual_dir[i] + noise[i])
                        as f32
                })
                .collect();
            slots.push(DetectionSlot {
                valid: true,
                class_id: tr.class_id,
                bbox: BoundingBox::new(round32(tr.pos.0), round32(tr.pos.1), round32(tr.size.0), round32(tr.size.1)),
                visual,
                label: world.label_embeddings[tr.class_id as usize].clone(),
            });
        }
        slots.shuffle(&mut rng);
        slots.resize(c.slots, DetectionSlot::empty(c.visual_dim, c.label_dim));

        let noise = gaussian(&mut rng, c.global_dim, world.noise);
        let global = (0..c.global_dim)
            .map(|i| (world.global_offset[i] + base[i] + r * c.signal * world.global_dir[i] + noise[i]) as f32)
            .collect();
        frames.push(Frame { slots, global });
    }

    VideoSample {
        id: format!("{}_{index:04}", c.dataset),
        positive,
        onset,
        fps: c.fps,
        frames,
    }
}

/// Generates a bundle. Output depends only on the config.
pub fn synth_generate(config: &SyntheticConfig) -> Result<FeatureBundle, DataError> {
    config.validate()?;
    let world = World::new(config);
    let mut labels: Vec<bool> = std::iter::repeat_n(true, config.positives)
        .chain(std::iter::repeat_n(false, config.negatives))
        .collect();
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    labels.shuffle(&mut order_rng);
    let videos: Vec<VideoSample> = labels
        .iter()
        .enumerate()
        .map(|(i, &pos)| generate_video(config, &world, i, pos))
        .collect();
    let manifest = Manifest {
        format_version: BUNDLE_VERSION,
        dataset: config.dataset.clone(),
        fps: config.fps,
        resampled_from_fps: None,
        frame_width: config.frame_width,
        frame_height: config.frame_height,
        frames: config.frames,
        slots: config.slots,
        visual_dim: config.visual_dim,
        label_dim: config.label_dim,
        global_dim: config.global_dim,
        videos: videos
            .iter()
            .map(|v| VideoEntry {
                id: v.id.clone(),
                positive: v.positive,
                onset: v.onset,
            })
            .collect(),
    };
    Ok(FeatureBundle { manifest, videos })
}
