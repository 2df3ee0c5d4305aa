//! On-disk motion files and dataset manifests.
//!
//! A motion file is a 28-byte little-endian header (magic `MMOT`, u32
//! version, u32 frame count, f64 fps, u32 joints = 24, u32 width = 6)
//! followed by `T × 24 × 6` little-endian `f64`s. A dataset is a directory
//! holding `manifest.json` and one motion file per record.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{LabelSpan, MotionRecord};
use crate::error::{Error, Result};
use crate::skeleton::MotionSequence;
use crate::{JOINTS, POSE_DIM, ROT6D};

const MAGIC: &[u8; 4] = b"MMOT";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 28;
const MANIFEST: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;

pub const MOTION_EXTENSION: &str = "mclip";

pub fn write_motion<W: Write>(mut w: W, m: &MotionSequence) -> Result<()> {
    let mut buf = Vec::with_capacity(HEADER_LEN + m.len() * POSE_DIM * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(m.len() as u32).to_le_bytes());
    buf.extend_from_slice(&m.fps.to_le_bytes());
    buf.extend_from_slice(&(JOINTS as u32).to_le_bytes());
    buf.extend_from_slice(&(ROT6D as u32).to_le_bytes());
    for v in m.features() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_motion<R: Read>(mut r: R) -> Result<MotionSequence> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::Integrity("not a motion file".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    if u32_at(4) != VERSION {
        return Err(Error::Integrity(format!(
            "unsupported motion file version {}",
            u32_at(4)
        )));
    }
    let t = u32_at(8) as usize;
    let fps = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
    if u32_at(20) as usize != JOINTS || u32_at(24) as usize != ROT6D {
        return Err(Error::Integrity(format!(
            "motion file has {}×{} features, expected {JOINTS}×{ROT6D}",
            u32_at(20),
            u32_at(24)
        )));
    }
    let body = &bytes[HEADER_LEN..];
    if body.len() != t * POSE_DIM * 8 {
        return Err(Error::Integrity(format!(
            "motion file declares {t} frames but holds {} bytes of data",
            body.len()
        )));
    }
    let features: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("motion file".into()));
    }
    MotionSequence::from_features(fps, &features)
}

pub fn write_motion_file(path: impl AsRef<Path>, m: &MotionSequence) -> Result<()> {
    let mut buf = Vec::new();
    write_motion(&mut buf, m)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_motion_file(path: impl AsRef<Path>) -> Result<MotionSequence> {
    read_motion(fs::File::open(path)?)
}

/// `manifest.json` of a dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub records: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Motion file name relative to the dataset directory.
    pub file: String,
    pub fps: f64,
    pub frames: usize,
    pub labels: Vec<LabelSpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_id: Option<u32>,
}

fn file_name(id: &str) -> String {
    let stem: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{stem}.{MOTION_EXTENSION}")
}

pub fn save_dataset(dir: impl AsRef<Path>, records: &[MotionRecord]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(records.len());
    for r in records {
        let file = file_name(&r.id);
        if entries.iter().any(|e: &ManifestEntry| e.file == file) {
            return Err(Error::input(format!(
                "record id {:?} collides with another record",
                r.id
            )));
        }
        write_motion_file(dir.join(&file), &r.motion)?;
        entries.push(ManifestEntry {
            id: r.id.clone(),
            file,
            fps: r.fps(),
            frames: r.len(),
            labels: r.labels.clone(),
            class_id: r.class_id,
        });
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        records: entries,
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<MotionRecord>> {
    let dir = dir.as_ref();
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Integrity(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }
    manifest
        .records
        .into_iter()
        .map(|e| {
            let motion = read_motion_file(dir.join(&e.file))?;
            if motion.len() != e.frames || motion.fps != e.fps {
                return Err(Error::Integrity(format!(
                    "record {}: manifest says {} frames at {} fps, file has {} at {}",
                    e.id,
                    e.frames,
                    e.fps,
                    motion.len(),
                    motion.fps
                )));
            }
            MotionRecord::new(e.id, motion, e.labels, e.class_id)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthesize_dataset;

    #[test]
    fn motion_bytes_round_trip() {
        let r = &synthesize_dataset(1, 1, 4).unwrap()[0];
        let mut buf = Vec::new();
        write_motion(&mut buf, &r.motion).unwrap();
        assert_eq!(buf.len(), 28 + 60 * 144 * 8);
        assert_eq!(&buf[..4], b"MMOT");
        assert_eq!(read_motion(&buf[..]).unwrap(), r.motion);
        buf.truncate(buf.len() - 1);
        assert!(matches!(read_motion(&buf[..]), Err(Error::Integrity(_))));
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = synthesize_dataset(3, 2, 9).unwrap();
        save_dataset(dir.path(), &d).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), d);
    }
}
