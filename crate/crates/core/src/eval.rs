//! Accident-anticipation metrics: frame-level average precision, time to
//! accident, mean time to accident and the baseline AP of a dataset.
//!
//! Scored frames are every frame of a negative video and the frames
//! `t < a` of a positive video with onset `a`; frames at or after the onset
//! are left out. A frame counts as predicted positive at threshold `α` when
//! `p_t > α`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::model::PredictionSeries;

/// One video's predictions with its ground truth.
pub type EvalRecord = PredictionSeries;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("video {id}: onset {onset} outside 1..={frames}")]
    Onset { id: String, onset: u32, frames: usize },
    #[error("video {0}: positive video without onset")]
    MissingOnset(String),
    #[error("video {0}: negative video carries an onset")]
    UnexpectedOnset(String),
    #[error("video {0}: time to accident is defined for positive videos only")]
    NotPositive(String),
    #[error("video {id}: probability {value} at frame {frame} is outside [0, 1]")]
    Probability { id: String, frame: usize, value: f64 },
    #[error("video {0}: fps must be positive")]
    Fps(String),
    #[error("the scored pool needs at least one positive and one negative frame")]
    DegeneratePool,
    #[error("no positive videos to evaluate")]
    NoPositives,
    #[error("no records")]
    Empty,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
}

/// Granularity of the AP pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMode {
    #[default]
    Frame,
    /// One score per video: its highest scored-frame probability.
    Video,
}

/// How thresholds are combined into one mTTA figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MttaMode {
    /// Mean over every threshold with at least one crossing.
    #[default]
    OverThresholds,
    /// Mean TTA at the threshold of best frame-level F1.
    BestThreshold,
}

/// Treatment of positive videos that never cross a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissPolicy {
    #[default]
    Exclude,
    /// Misses count as a TTA of zero.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ap_mode: ApMode,
    pub mtta_mode: MttaMode,
    pub miss_policy: MissPolicy,
}

/// Checks label/onset/probability consistency of one record.
pub fn check_record(r: &EvalRecord) -> Result<(), EvalError> {
    if !(r.fps.is_finite() && r.fps > 0.0) {
        return Err(EvalError::Fps(r.id.clone()));
    }
    match (r.label, r.onset) {
        (true, None) => return Err(EvalError::MissingOnset(r.id.clone())),
        (false, Some(_)) => return Err(EvalError::UnexpectedOnset(r.id.clone())),
        (true, Some(a)) if a == 0 || a as usize > r.probs.len() => {
            return Err(EvalError::Onset {
                id: r.id.clone(),
                onset: a,
                frames: r.probs.len(),
            })
        }
        _ => {}
    }
    if let Some((t, p)) = r.probs.iter().enumerate().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
        return Err(EvalError::Probability {
            id: r.id.clone(),
            frame: t + 1,
            value: *p,
        });
    }
    Ok(())
}

/// Per-frame ground truth: `Some(true)` for frames preceding the accident,
/// `Some(false)` for frames of negative videos, `None` for excluded frames.
pub fn frame_labels(r: &EvalRecord) -> Result<Vec<Option<bool>>, EvalError> {
    check_record(r)?;
    Ok(match r.onset {
        Some(a) => (1..=r.probs.len()).map(|t| (t < a as usize).then_some(true)).collect(),
        None => vec![Some(false); r.probs.len()],
    })
}

/// `(score, is_positive)` for every scored frame, in record order.
pub fn scored_pool(records: &[EvalRecord]) -> Result<Vec<(f64, bool)>, EvalError> {
    let mut pool = Vec::new();
    for r in records {
        for (p, l) in r.probs.iter().zip(frame_labels(r)?) {
            if let Some(l) = l {
                pool.push((*p, l));
            }
        }
    }
    Ok(pool)
}

/// One score per video: the maximum over its scored frames.
pub fn video_pool(records: &[EvalRecord]) -> Result<Vec<(f64, bool)>, EvalError> {
    records
        .iter()
        .map(|r| {
            let labels = frame_labels(r)?;
            let best = r
                .probs
                .iter()
                .zip(&labels)
                .filter(|(_, l)| l.is_some())
                .map(|(p, _)| *p)
                .fold(0.0, f64::max);
            Ok((best, r.label))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    /// Predictions with score at least this value are positive.
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall at every unique score, in increasing recall.
pub fn pr_curve(pool: &[(f64, bool)]) -> Result<Vec<PrPoint>, EvalError> {
    let positives = pool.iter().filter(|(_, l)| *l).count();
    if positives == 0 || positives == pool.len() {
        return Err(EvalError::DegeneratePool);
    }
    let mut sorted = pool.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == s {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push(PrPoint {
            threshold: s,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / positives as f64,
        });
    }
    Ok(out)
}

/// `Σ (R_n − R_{n−1}) · P_n` over the curve of [`pr_curve`].
pub fn ap_from_curve(curve: &[PrPoint]) -> f64 {
    let mut prev = 0.0;
    let mut ap = 0.0;
    for p in curve {
        ap += (p.recall - prev) * p.precision;
        prev = p.recall;
    }
    ap
}

pub fn average_precision(records: &[EvalRecord], mode: ApMode) -> Result<f64, EvalError> {
    let pool = match mode {
        ApMode::Frame => scored_pool(records)?,
        ApMode::Video => video_pool(records)?,
    };
    Ok(ap_from_curve(&pr_curve(&pool)?))
}

/// Seconds between the first frame `t < a` with `p_t > α` and the onset `a`.
pub fn tta(r: &EvalRecord, alpha: f64) -> Result<Option<f64>, EvalError> {
    check_record(r)?;
    let a = match (r.label, r.onset) {
        (true, Some(a)) => a as usize,
        _ => return Err(EvalError::NotPositive(r.id.clone())),
    };
    Ok(r.probs[..a - 1]
        .iter()
        .position(|p| *p > alpha)
        .map(|i| (a - (i + 1)) as f64 / r.fps))
}

/// Running maximum of the pre-onset probabilities; the first frame whose
/// running maximum exceeds `α` is the first crossing.
struct Crossing {
    prefix_max: Vec<f64>,
    onset: usize,
    fps: f64,
}

impl Crossing {
    fn new(r: &EvalRecord) -> Self {
        let a = r.onset.unwrap_or(0) as usize;
        let mut m = f64::NEG_INFINITY;
        let prefix_max = r.probs[..a.saturating_sub(1)]
            .iter()
            .map(|p| {
                m = m.max(*p);
                m
            })
            .collect();
        Self {
            prefix_max,
            onset: a,
            fps: r.fps,
        }
    }

    fn tta(&self, alpha: f64) -> Option<f64> {
        let i = self.prefix_max.partition_point(|m| *m <= alpha);
        (i < self.prefix_max.len()).then(|| (self.onset - (i + 1)) as f64 / self.fps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MttaResult {
    pub seconds: f64,
    /// Thresholds that contributed to the mean.
    pub thresholds_used: usize,
    /// Set when no positive video crossed any threshold.
    pub no_crossing: bool,
}

/// Unique scored-pool probabilities plus 0 and 1, ascending.
pub fn threshold_grid(records: &[EvalRecord]) -> Result<Vec<f64>, EvalError> {
    let mut g: Vec<f64> = scored_pool(records)?.into_iter().map(|(p, _)| p).collect();
    g.push(0.0);
    g.push(1.0);
    g.sort_by(f64::total_cmp);
    g.dedup();
    Ok(g)
}

fn mean_tta_at(crossings: &[Crossing], alpha: f64, policy: MissPolicy) -> Option<f64> {
    let mut sum = 0.0;
    let mut hits = 0usize;
    for c in crossings {
        if let Some(t) = c.tta(alpha) {
            sum += t;
            hits += 1;
        }
    }
    if hits == 0 {
        return None;
    }
    let denom = match policy {
        MissPolicy::Exclude => hits,
        MissPolicy::Zero => crossings.len(),
    };
    Some(sum / denom as f64)
}

fn positives(records: &[EvalRecord]) -> Result<Vec<Crossing>, EvalError> {
    let mut out = Vec::new();
    for r in records {
        check_record(r)?;
        if r.label {
            out.push(Crossing::new(r));
        }
    }
    if out.is_empty() {
        return Err(EvalError::NoPositives);
    }
    Ok(out)
}

/// Mean TTA over every grid threshold at which at least one positive video
/// crosses.
pub fn mtta(records: &[EvalRecord], policy: MissPolicy) -> Result<MttaResult, EvalError> {
    let crossings = positives(records)?;
    let grid = threshold_grid(records)?;
    let per: Vec<f64> = grid.iter().filter_map(|a| mean_tta_at(&crossings, *a, policy)).collect();
    Ok(if per.is_empty() {
        MttaResult {
            seconds: 0.0,
            thresholds_used: 0,
            no_crossing: true,
        }
    } else {
        MttaResult {
            seconds: per.iter().sum::<f64>() / per.len() as f64,
            thresholds_used: per.len(),
            no_crossing: false,
        }
    })
}

/// Threshold with the best frame-level F1; ties go to the higher threshold.
pub fn best_f1_threshold(curve: &[PrPoint]) -> Option<f64> {
    let f1 = |p: &PrPoint| {
        if p.precision + p.recall == 0.0 {
            0.0
        } else {
            2.0 * p.precision * p.recall / (p.precision + p.recall)
        }
    };
    let mut best: Option<(f64, f64)> = None;
    for p in curve {
        let f = f1(p);
        if best.is_none_or(|(bf, _)| f > bf) {
            best = Some((f, p.threshold));
        }
    }
    best.map(|(_, t)| t)
}

/// Mean TTA at the best-F1 operating point.
pub fn mtta_at_best_threshold(records: &[EvalRecord], policy: MissPolicy) -> Result<(f64, MttaResult), EvalError> {
    let crossings = positives(records)?;
    let curve = pr_curve(&scored_pool(records)?)?;
    let t = best_f1_threshold(&curve).ok_or(EvalError::DegeneratePool)?;
    let grid = threshold_grid(records)?;
    // Largest grid value strictly below t, so that `p > α` matches `p ≥ t`.
    let alpha = grid.iter().rev().find(|g| **g < t).copied().unwrap_or(0.0);
    let r = match mean_tta_at(&crossings, alpha, policy) {
        Some(s) => MttaResult {
            seconds: s,
            thresholds_used: 1,
            no_crossing: false,
        },
        None => MttaResult {
            seconds: 0.0,
            thresholds_used: 0,
            no_crossing: true,
        },
    };
    Ok((alpha, r))
}

/// Fraction of positive videos.
pub fn baseline_ap(records: &[EvalRecord]) -> Result<f64, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(records.iter().filter(|r| r.label).count() as f64 / records.len() as f64)
}

/// `positives / total` as a percentage rounded to one decimal.
pub fn percent_1dp(positives: usize, total: usize) -> f64 {
    (1000.0 * positives as f64 / total as f64).round() / 10.0
}

/// Mean and standard deviation of a statistic over random trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: f64,
    pub sd: f64,
}

impl Band {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        Self { mean, sd: var.sqrt() }
    }

    pub fn contains(&self, x: f64, sigmas: f64) -> bool {
        (x - self.mean).abs() <= sigmas * self.sd
    }
}

/// Video-level AP of uninformative scorers that give each video one uniform
/// random score.
pub fn random_scorer_band(records: &[EvalRecord], trials: usize, seed: u64) -> Result<Band, EvalError> {
    let labels: Vec<bool> = records.iter().map(|r| r.label).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut aps = Vec::with_capacity(trials);
    for _ in 0..trials {
        let pool: Vec<(f64, bool)> = labels.iter().map(|l| (rng.random::<f64>(), *l)).collect();
        aps.push(ap_from_curve(&pr_curve(&pool)?));
    }
    Ok(Band::from_samples(&aps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoTta {
    pub id: String,
    pub onset: u32,
    pub fps: f64,
    /// TTA at `α = 0.5`, seconds.
    pub tta_at_half: Option<f64>,
    /// TTA at the best-F1 threshold, seconds.
    pub tta_at_best: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: EvalConfig,
    pub videos: usize,
    pub positive_videos: usize,
    pub scored_frames: usize,
    /// Average precision under `config.ap_mode`.
    pub ap: f64,
    pub frame_ap: f64,
    pub video_ap: f64,
    /// mTTA under `config.mtta_mode` and `config.miss_policy`, seconds.
    pub mtta: f64,
    pub mtta_no_crossing: bool,
    pub mtta_over_thresholds: f64,
    pub mtta_best_threshold: f64,
    pub best_threshold: f64,
    pub baseline_ap: f64,
    pub baseline_ap_percent: f64,
    pub pr_curve: Vec<PrPoint>,
    pub thresholds: Vec<f64>,
    pub per_video: Vec<VideoTta>,
}

pub fn evaluate(records: &[EvalRecord], config: EvalConfig) -> Result<MetricsReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let pool = scored_pool(records)?;
    let curve = pr_curve(&pool)?;
    let frame_ap = ap_from_curve(&curve);
    let video_ap = ap_from_curve(&pr_curve(&video_pool(records)?)?);
    let over = mtta(records, config.miss_policy)?;
    let (alpha, best) = mtta_at_best_threshold(records, config.miss_policy)?;
    let (mtta, no_crossing) = match config.mtta_mode {
        MttaMode::OverThresholds => (over.seconds, over.no_crossing),
        MttaMode::BestThreshold => (best.seconds, best.no_crossing),
    };
    if no_crossing {
        log::warn!("no positive video crosses any threshold; mTTA reported as 0");
    }
    let per_video = records
        .iter()
        .filter(|r| r.label)
        .map(|r| {
            Ok(VideoTta {
                id: r.id.clone(),
                onset: r.onset.unwrap_or(0),
                fps: r.fps,
                tta_at_half: tta(r, 0.5)?,
                tta_at_best: tta(r, alpha)?,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let positive_videos = per_video.len();
    let bap = baseline_ap(records)?;
    Ok(MetricsReport {
        config,
        videos: records.len(),
        positive_videos,
        scored_frames: pool.len(),
        ap: match config.ap_mode {
            ApMode::Frame => frame_ap,
            ApMode::Video => video_ap,
        },
        frame_ap,
        video_ap,
        mtta,
        mtta_no_crossing: no_crossing,
        mtta_over_thresholds: over.seconds,
        mtta_best_threshold: best.seconds,
        best_threshold: alpha,
        baseline_ap: bap,
        baseline_ap_percent: percent_1dp(positive_videos, records.len()),
        pr_curve: curve,
        thresholds: threshold_grid(records)?,
        per_video,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One JSON object per line.
pub fn write_predictions(path: &Path, records: &[EvalRecord]) -> Result<(), EvalError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for r in records {
        let line = serde_json::to_string(r).expect("prediction records serialize");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_predictions(path: &Path) -> Result<Vec<EvalRecord>, EvalError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: EvalRecord = serde_json::from_str(&line).map_err(|e| EvalError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        check_record(&r).map_err(|e| EvalError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(r);
    }
    Ok(out)
}

/// `threshold,precision,recall` rows.
pub fn write_pr_csv(path: &Path, curve: &[PrPoint]) -> Result<(), EvalError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    writeln!(w, "threshold,precision,recall").map_err(io_err(path))?;
    for p in curve {
        writeln!(w, "{},{},{}", p.threshold, p.precision, p.recall).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// `id,frame,prob,label,onset` rows, one per frame.
pub fn write_traces_csv(path: &Path, records: &[EvalRecord]) -> Result<(), EvalError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    writeln!(w, "id,frame,prob,label,onset").map_err(io_err(path))?;
    for r in records {
        let onset = r.onset.map(|a| a.to_string()).unwrap_or_default();
        for (t, p) in r.probs.iter().enumerate() {
            writeln!(w, "{},{},{},{},{}", r.id, t + 1, p, u8::from(r.label), onset).map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}
