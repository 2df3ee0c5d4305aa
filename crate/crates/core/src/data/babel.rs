//! Adapter for BABEL-format annotation files.
//!
//! BABEL ships per-sequence annotations keyed by sequence id; the motions
//! themselves come from AMASS and are not parsed here. Instead each sequence
//! must already exist as a motion file `<motion_dir>/<babel_sid>.mclip`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::io::{read_motion_file, MOTION_EXTENSION};
use super::{LabelSpan, MotionRecord};
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct BabelSeq {
    babel_sid: serde_json::Value,
    #[serde(default)]
    dur: Option<f64>,
    #[serde(default)]
    seq_ann: Option<BabelAnn>,
    #[serde(default)]
    frame_ann: Option<BabelAnn>,
}

#[derive(Deserialize)]
struct BabelAnn {
    #[serde(default)]
    labels: Vec<BabelLabel>,
}

#[derive(Deserialize)]
struct BabelLabel {
    #[serde(default)]
    proc_label: Option<String>,
    #[serde(default)]
    raw_label: Option<String>,
    #[serde(default)]
    act_cat: Option<Vec<String>>,
    #[serde(default)]
    start_t: Option<f64>,
    #[serde(default)]
    end_t: Option<f64>,
}

impl BabelLabel {
    fn text(&self) -> Option<&str> {
        self.proc_label
            .as_deref()
            .or(self.raw_label.as_deref())
            .map(str::trim)
            .filter(|s| !s.is_empty())
    }
}

#[derive(Debug, Default)]
pub struct ImportReport {
    pub records: Vec<MotionRecord>,
    /// `(sequence id, reason)` for every skipped sequence.
    pub skipped: Vec<(String, String)>,
}

/// Builds records from BABEL annotations.
///
/// Frame-level labels are preferred; sequences without them get one span per
/// sequence label covering every frame. Times in seconds map to frames
/// `floor(start·fps) ..= ceil(end·fps) − 1`, clamped to the sequence. When
/// `classes` is given, a record's class is the first of its action
/// categories that appears in the list.
pub fn import_babel(
    annotations: &str,
    motion_dir: impl AsRef<Path>,
    classes: Option<&[String]>,
) -> Result<ImportReport> {
    let seqs: BTreeMap<String, BabelSeq> = serde_json::from_str(annotations)?;
    let mut report = ImportReport::default();
    for (key, seq) in seqs {
        let sid = match &seq.babel_sid {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Number(n) => n.to_string(),
            _ => key.clone(),
        };
        let path = motion_dir
            .as_ref()
            .join(format!("{sid}.{MOTION_EXTENSION}"));
        let motion = match read_motion_file(&path) {
            Ok(m) => m,
            Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => {
                report
                    .skipped
                    .push((sid, format!("no motion file at {}", path.display())));
                continue;
            }
            Err(e) => return Err(e),
        };
        let t = motion.len();
        let fps = motion.fps;
        if let Some(dur) = seq.dur {
            let have = t as f64 / fps;
            if (have - dur).abs() > 1.0 {
                log::warn!("sequence {sid}: annotated duration {dur:.2}s, motion is {have:.2}s");
            }
        }
        let frame_labels = seq
            .frame_ann
            .as_ref()
            .map(|a| a.labels.as_slice())
            .unwrap_or(&[]);
        let (source, timed) = if frame_labels.is_empty() {
            (
                seq.seq_ann
                    .as_ref()
                    .map(|a| a.labels.as_slice())
                    .unwrap_or(&[]),
                false,
            )
        } else {
            (frame_labels, true)
        };
        let mut labels = Vec::new();
        let mut class_id = None;
        for l in source {
            let Some(text) = l.text() else { continue };
            let (start, end) = if timed {
                let s = (l.start_t.unwrap_or(0.0) * fps).floor().max(0.0) as usize;
                let e = ((l.end_t.unwrap_or(f64::INFINITY) * fps).ceil() - 1.0).max(0.0);
                let e = if e.is_finite() {
                    (e as usize).min(t - 1)
                } else {
                    t - 1
                };
                if s > e {
                    continue;
                }
                (s, e)
            } else {
                (0, t - 1)
            };
            labels.push(LabelSpan {
                start,
                end,
                text: text.to_string(),
            });
            if class_id.is_none() {
                if let (Some(classes), Some(cats)) = (classes, &l.act_cat) {
                    class_id = cats
                        .iter()
                        .find_map(|c| classes.iter().position(|k| k == c))
                        .map(|i| i as u32);
                }
            }
        }
        labels.sort_by_key(|l| (l.start, l.end));
        report
            .records
            .push(MotionRecord::new(sid, motion, labels, class_id)?);
    }
    Ok(report)
}
