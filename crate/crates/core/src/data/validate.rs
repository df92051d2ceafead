use std::collections::HashSet;
use std::path::Path;

use serde::Serialize;

use super::{BundleReader, FeatureBundle, Manifest, VideoEntry, VideoSample};
use super::DataError;

/// Outcome for one video. An empty reason list means it passed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VideoCheck {
    pub id: String,
    pub reasons: Vec<String>,
}

impl VideoCheck {
    pub fn ok(&self) -> bool {
        self.reasons.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub dataset: String,
    pub entries: Vec<VideoCheck>,
    /// Problems with the manifest itself.
    pub manifest_issues: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> usize {
        self.entries.iter().filter(|e| e.ok()).count()
    }

    pub fn failed(&self) -> usize {
        self.entries.len() - self.passed()
    }

    pub fn is_valid(&self) -> bool {
        self.manifest_issues.is_empty() && self.failed() == 0
    }

    pub fn failures(&self) -> impl Iterator<Item = &VideoCheck> {
        self.entries.iter().filter(|e| !e.ok())
    }
}

fn manifest_issues(m: &Manifest) -> Vec<String> {
    let mut out = Vec::new();
    if !(m.fps.is_finite() && m.fps > 0.0) {
        out.push(format!("fps must be positive, got {}", m.fps));
    }
    if !(m.frame_width > 0.0 && m.frame_height > 0.0) {
        out.push("frame dimensions must be positive".into());
    }
    for (name, v) in [
        ("frames", m.frames),
        ("slots", m.slots),
        ("visual_dim", m.visual_dim),
        ("label_dim", m.label_dim),
        ("global_dim", m.global_dim),
    ] {
        if v == 0 {
            out.push(format!("{name} must be positive"));
        }
    }
    if let Some(r) = m.resampled_from_fps {
        if !(r.is_finite() && r > 0.0) {
            out.push(format!("resampled_from_fps must be positive, got {r}"));
        }
    }
    let mut seen = HashSet::new();
    for v in &m.videos {
        if !seen.insert(v.id.as_str()) {
            out.push(format!("duplicate video id {}", v.id));
        }
    }
    out
}

fn label_issues(m: &Manifest, e: &VideoEntry, reasons: &mut Vec<String>) {
    match (e.positive, e.onset) {
        (true, None) => reasons.push("positive video without onset".into()),
        (true, Some(a)) if a == 0 || a as usize > m.frames => {
            reasons.push(format!("onset {a} outside 1..={}", m.frames))
        }
        (false, Some(_)) => reasons.push("negative video carries an onset".into()),
        _ => {}
    }
}

fn video_issues(m: &Manifest, e: &VideoEntry, v: &VideoSample) -> Vec<String> {
    let mut r = Vec::new();
    label_issues(m, e, &mut r);
    if v.id != e.id || v.positive != e.positive || v.onset != e.onset {
        r.push("record labels differ from manifest".into());
    }
    if v.frames.len() != m.frames {
        r.push(format!("{} frames, manifest says {}", v.frames.len(), m.frames));
    }
    for (t, f) in v.frames.iter().enumerate() {
        let t1 = t + 1;
        if f.global.len() != m.global_dim {
            r.push(format!("frame {t1}: global dim {} != {}", f.global.len(), m.global_dim));
        } else if f.global.iter().any(|x| !x.is_finite()) {
            r.push(format!("frame {t1}: non-finite global feature"));
        }
        if f.slots.len() != m.slots {
            r.push(format!("frame {t1}: {} slots, manifest says {}", f.slots.len(), m.slots));
        }
        for (s, slot) in f.slots.iter().enumerate() {
            let at = format!("frame {t1} slot {s}");
            if slot.visual.len() != m.visual_dim || slot.label.len() != m.label_dim {
                r.push(format!("{at}: feature dims do not match manifest"));
                continue;
            }
            let b = slot.bbox;
            if !slot.valid {
                let zero = slot.class_id == 0
                    && [b.cx, b.cy, b.w, b.h].iter().all(|x| *x == 0.0)
                    && slot.visual.iter().chain(&slot.label).all(|x| *x == 0.0);
                if !zero {
                    r.push(format!("{at}: masked slot has a nonzero payload"));
                }
                continue;
            }
            if slot.visual.iter().chain(&slot.label).any(|x| !x.is_finite()) {
                r.push(format!("{at}: non-finite feature"));
            }
            if !(b.w > 0.0 && b.h > 0.0) {
                r.push(format!("{at}: box extent must be positive"));
            }
            let inside = (0.0..=m.frame_width).contains(&b.cx) && (0.0..=m.frame_height).contains(&b.cy);
            if !inside {
                r.push(format!("{at}: box center ({}, {}) outside the frame", b.cx, b.cy));
            }
        }
    }
    r
}

/// Checks every video of an in-memory bundle against its manifest.
pub fn validate_bundle(bundle: &FeatureBundle) -> ValidationReport {
    let m = &bundle.manifest;
    let mut manifest_issues = manifest_issues(m);
    if bundle.videos.len() != m.videos.len() {
        manifest_issues.push(format!(
            "manifest lists {} videos, bundle holds {}",
            m.videos.len(),
            bundle.videos.len()
        ));
    }
    let entries = m
        .videos
        .iter()
        .map(|e| {
            let reasons = match bundle.video(&e.id) {
                Some(v) => video_issues(m, e, v),
                None => vec!["record missing".into()],
            };
            VideoCheck {
                id: e.id.clone(),
                reasons,
            }
        })
        .collect();
    ValidationReport {
        dataset: m.dataset.clone(),
        entries,
        manifest_issues,
    }
}

/// Validates a bundle directory video by video. Unreadable or corrupt
/// records become failures of that video rather than an early return.
pub fn validate_dir(dir: &Path) -> Result<ValidationReport, DataError> {
    let reader = BundleReader::open(dir)?;
    let m = reader.manifest();
    let manifest_issues = manifest_issues(m);
    let entries = m
        .videos
        .iter()
        .map(|e| {
            let reasons = match reader.load_video(&e.id) {
                Ok(v) => video_issues(m, e, &v),
                Err(err) => {
                    let mut r = Vec::new();
                    label_issues(m, e, &mut r);
                    r.insert(0, err.to_string());
                    r
                }
            };
            VideoCheck {
                id: e.id.clone(),
                reasons,
            }
        })
        .collect();
    Ok(ValidationReport {
        dataset: m.dataset.clone(),
        entries,
        manifest_issues,
    })
}
