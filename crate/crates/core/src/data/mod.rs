//! Feature bundles: the on-disk dataset format, its validator, and the
//! synthetic scenario generator.

mod bundle;
mod synth;
mod validate;

pub use bundle::{
    decode_record, encode_record, load_bundle, read_bundle_unchecked, write_bundle, BundleReader, BUNDLE_MAGIC,
    BUNDLE_VERSION, MANIFEST_FILE,
};
pub use synth::{synth_generate, SyntheticConfig};
pub use validate::{validate_bundle, validate_dir, VideoCheck, ValidationReport};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::BoundingBox;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("video {video}: bad record magic")]
    BadMagic { video: String },
    #[error("video {video}: unsupported record version {version}")]
    Version { video: String, version: u32 },
    #[error("video {video}: truncated record")]
    Truncated { video: String },
    #[error("video {video}: checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    Checksum { video: String, stored: u32, computed: u32 },
    #[error("video {video}: {reason}")]
    Invalid { video: String, reason: String },
    #[error("unknown video {0}")]
    UnknownVideo(String),
    #[error("invalid synthetic config: {0}")]
    Config(String),
}

impl DataError {
    pub fn video(&self) -> Option<&str> {
        match self {
            DataError::BadMagic { video }
            | DataError::Version { video, .. }
            | DataError::Truncated { video }
            | DataError::Checksum { video, .. }
            | DataError::Invalid { video, .. } => Some(video),
            DataError::UnknownVideo(v) => Some(v),
            _ => None,
        }
    }
}

/// One detection slot of one frame. Masked slots carry a zeroed payload.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSlot {
    pub valid: bool,
    pub class_id: u32,
    pub bbox: BoundingBox,
    /// Object appearance feature (`visual_dim`).
    pub visual: Vec<f32>,
    /// Class-label embedding (`label_dim`).
    pub label: Vec<f32>,
}

impl DetectionSlot {
    pub fn empty(visual_dim: usize, label_dim: usize) -> Self {
        Self {
            valid: false,
            class_id: 0,
            bbox: BoundingBox::default(),
            visual: vec![0.0; visual_dim],
            label: vec![0.0; label_dim],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub slots: Vec<DetectionSlot>,
    /// Whole-frame descriptor (`global_dim`).
    pub global: Vec<f32>,
}

impl Frame {
    pub fn valid_count(&self) -> usize {
        self.slots.iter().filter(|s| s.valid).count()
    }
}

/// A clip with its frames and labels. `onset` is the 1-based frame at which
/// the accident starts and is present exactly for positive clips.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub id: String,
    pub positive: bool,
    pub onset: Option<u32>,
    pub fps: f64,
    pub frames: Vec<Frame>,
}

impl VideoSample {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub id: String,
    pub positive: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub onset: Option<u32>,
}

/// Dataset-level metadata written as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dataset: String,
    pub fps: f64,
    /// Source frame rate when the clips were resampled to `fps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resampled_from_fps: Option<f64>,
    pub frame_width: f64,
    pub frame_height: f64,
    pub frames: usize,
    pub slots: usize,
    pub visual_dim: usize,
    pub label_dim: usize,
    pub global_dim: usize,
    pub videos: Vec<VideoEntry>,
}

impl Manifest {
    pub fn positives(&self) -> usize {
        self.videos.iter().filter(|v| v.positive).count()
    }
}

/// A manifest plus every video it lists, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    pub manifest: Manifest,
    pub videos: Vec<VideoSample>,
}

impl FeatureBundle {
    pub fn video(&self, id: &str) -> Option<&VideoSample> {
        self.videos.iter().find(|v| v.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.videos.iter().map(|v| v.id.clone()).collect()
    }

    /// Sub-bundle with the listed videos, in the given order.
    pub fn subset(&self, ids: &[String]) -> Result<FeatureBundle, DataError> {
        let videos = ids
            .iter()
            .map(|id| self.video(id).cloned().ok_or_else(|| DataError::UnknownVideo(id.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let mut manifest = self.manifest.clone();
        manifest.videos = videos
            .iter()
            .map(|v| VideoEntry {
                id: v.id.clone(),
                positive: v.positive,
                onset: v.onset,
            })
            .collect();
        Ok(FeatureBundle { manifest, videos })
    }
}

#[cfg(test)]
mod tests;
