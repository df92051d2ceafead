//! Bundle directory I/O.
//!
//! A bundle is a directory holding `manifest.json` and one `<video id>.bin`
//! record per video. Record layout, little-endian throughout:
//!
//! ```text
//! "STAGBNDL"                              8 bytes
//! version                                 u32
//! frames, slots, visual, label, global    5 × u32
//! per frame:
//!   per slot:
//!     valid                               u8 (0 or 1)
//!     class id                            u32
//!     cx, cy, w, h                        4 × f32
//!     visual feature                      visual × f32
//!     label embedding                     label × f32
//!   global feature                        global × f32
//! CRC-32 of every preceding byte          u32
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::{validate_bundle, DataError, DetectionSlot, FeatureBundle, Frame, Manifest, VideoEntry, VideoSample};
use crate::graph::BoundingBox;

pub const BUNDLE_MAGIC: &[u8; 8] = b"STAGBNDL";
pub const BUNDLE_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn record_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.bin"))
}

/// Serializes one video. Dimensions are taken from the manifest.
pub fn encode_record(manifest: &Manifest, video: &VideoSample) -> Result<Vec<u8>, DataError> {
    let invalid = |reason: String| DataError::Invalid {
        video: video.id.clone(),
        reason,
    };
    let (s, d1, d2, h) = (manifest.slots, manifest.visual_dim, manifest.label_dim, manifest.global_dim);
    let mut out = Vec::with_capacity(32 + video.frames.len() * (s * (21 + 4 * (d1 + d2)) + 4 * h) + 4);
    out.extend_from_slice(BUNDLE_MAGIC);
    for v in [BUNDLE_VERSION, video.frames.len() as u32, s as u32, d1 as u32, d2 as u32, h as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let put = |out: &mut Vec<u8>, xs: &[f32]| xs.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
    for (t, frame) in video.frames.iter().enumerate() {
        if frame.slots.len() != s || frame.global.len() != h {
            return Err(invalid(format!("frame {t} does not match manifest dimensions")));
        }
        for slot in &frame.slots {
            if slot.visual.len() != d1 || slot.label.len() != d2 {
                return Err(invalid(format!("frame {t} slot feature dimensions do not match manifest")));
            }
            out.push(u8::from(slot.valid));
            out.extend_from_slice(&slot.class_id.to_le_bytes());
            let b = slot.bbox;
            put(&mut out, &[b.cx as f32, b.cy as f32, b.w as f32, b.h as f32]);
            put(&mut out, &slot.visual);
            put(&mut out, &slot.label);
        }
        put(&mut out, &frame.global);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    video: &'a str,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], DataError> {
        if self.pos + n > self.buf.len() {
            return Err(DataError::Truncated {
                video: self.video.to_string(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, DataError> {
        let b = self.take(4 * n)?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }
}

/// Parses one record. Structural problems (magic, version, truncation,
/// checksum, header dimensions) are errors; semantic checks are left to
/// [`validate_bundle`].
pub fn decode_record(manifest: &Manifest, entry: &VideoEntry, bytes: &[u8]) -> Result<VideoSample, DataError> {
    let video = entry.id.as_str();
    if bytes.len() < BUNDLE_MAGIC.len() + 28 {
        return Err(DataError::Truncated { video: video.into() });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(DataError::Checksum {
            video: video.into(),
            stored,
            computed,
        });
    }
    if &bytes[..8] != BUNDLE_MAGIC {
        return Err(DataError::BadMagic { video: video.into() });
    }
    let mut c = Cursor { buf: body, pos: 8, video };
    let version = c.u32()?;
    if version != BUNDLE_VERSION {
        return Err(DataError::Version {
            video: video.into(),
            version,
        });
    }
    let dims = [c.u32()?, c.u32()?, c.u32()?, c.u32()?, c.u32()?].map(|d| d as usize);
    let [n, s, d1, d2, h] = dims;
    let expected = [manifest.frames, manifest.slots, manifest.visual_dim, manifest.label_dim, manifest.global_dim];
    if dims != expected {
        return Err(DataError::Invalid {
            video: video.into(),
            reason: format!("record dims {dims:?} differ from manifest {expected:?}"),
        });
    }
    let mut frames = Vec::with_capacity(n);
    for _ in 0..n {
        let mut slots = Vec::with_capacity(s);
        for _ in 0..s {
            let valid = c.take(1)?[0] != 0;
            let class_id = c.u32()?;
            let b = c.f32s(4)?;
            slots.push(DetectionSlot {
                valid,
                class_id,
                bbox: BoundingBox::new(b[0] as f64, b[1] as f64, b[2] as f64, b[3] as f64),
                visual: c.f32s(d1)?,
                label: c.f32s(d2)?,
            });
        }
        frames.push(Frame {
            slots,
            global: c.f32s(h)?,
        });
    }
    if c.pos != body.len() {
        return Err(DataError::Invalid {
            video: video.into(),
            reason: format!("{} trailing bytes", body.len() - c.pos),
        });
    }
    Ok(VideoSample {
        id: entry.id.clone(),
        positive: entry.positive,
        onset: entry.onset,
        fps: manifest.fps,
        frames,
    })
}

/// Writes `manifest.json` and one record per video into `dir`.
pub fn write_bundle(dir: &Path, bundle: &FeatureBundle) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = serde_json::to_string_pretty(&bundle.manifest).map_err(|e| DataError::Manifest(e.to_string()))?;
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, manifest + "\n").map_err(io_err(&mpath))?;
    for video in &bundle.videos {
        let bytes = encode_record(&bundle.manifest, video)?;
        let path = record_path(dir, &video.id);
        fs::write(&path, bytes).map_err(io_err(&path))?;
    }
    Ok(())
}

/// Lazy access to a bundle directory: the manifest is read up front,
/// videos on demand.
#[derive(Debug, Clone)]
pub struct BundleReader {
    dir: PathBuf,
    manifest: Manifest,
}

impl BundleReader {
    pub fn open(dir: &Path) -> Result<Self, DataError> {
        let mpath = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| DataError::Manifest(e.to_string()))?;
        if manifest.format_version != BUNDLE_VERSION {
            return Err(DataError::Manifest(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn load_video(&self, id: &str) -> Result<VideoSample, DataError> {
        let entry = self
            .manifest
            .videos
            .iter()
            .find(|v| v.id == id)
            .ok_or_else(|| DataError::UnknownVideo(id.to_string()))?;
        let path = record_path(&self.dir, id);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        decode_record(&self.manifest, entry, &bytes)
    }

    /// Videos in manifest order, each loaded when the iterator reaches it.
    pub fn videos(&self) -> impl Iterator<Item = Result<VideoSample, DataError>> + '_ {
        self.manifest.videos.iter().map(|e| self.load_video(&e.id))
    }
}

/// Reads every record without semantic validation.
pub fn read_bundle_unchecked(dir: &Path) -> Result<FeatureBundle, DataError> {
    let reader = BundleReader::open(dir)?;
    let videos = reader.videos().collect::<Result<Vec<_>, _>>()?;
    Ok(FeatureBundle {
        manifest: reader.manifest,
        videos,
    })
}

/// Reads and fully validates a bundle; the first failing video is reported.
pub fn load_bundle(dir: &Path) -> Result<FeatureBundle, DataError> {
    let bundle = read_bundle_unchecked(dir)?;
    let report = validate_bundle(&bundle);
    if !report.manifest_issues.is_empty() {
        return Err(DataError::Manifest(report.manifest_issues.join("; ")));
    }
    if let Some(bad) = report.entries.iter().find(|e| !e.ok()) {
        return Err(DataError::Invalid {
            video: bad.id.clone(),
            reason: bad.reasons.join("; "),
        });
    }
    Ok(bundle)
}
