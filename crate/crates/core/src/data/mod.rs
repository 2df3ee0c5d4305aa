//! Motion records, resampling, windowing, label text and training triplets.

mod babel;
mod io;
mod synth;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingProvider, SemanticVector};
use crate::error::{Error, Result};
use crate::renderer::{rasterize, Camera, FrameImage, RenderStyle};
use crate::skeleton::{MotionSequence, SkeletonModel};

pub use babel::{import_babel, ImportReport};
pub use io::{
    load_dataset, read_motion, read_motion_file, save_dataset, write_motion, write_motion_file,
    DatasetManifest, ManifestEntry, MOTION_EXTENSION,
};
pub use synth::{family_motion, synthesize_dataset, Family, FamilyParams, FAMILIES};

/// Frame rate every training sequence is resampled to.
pub const TARGET_FPS: f64 = 30.0;
/// Frames per training window.
pub const WINDOW_LEN: usize = 60;
/// Default window stride (half overlap).
pub const WINDOW_STRIDE: usize = 30;
/// Text used for windows without any label.
pub const EMPTY_LABEL: &str = "motion";

/// A text label covering frames `start..=end`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSpan {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionRecord {
    pub id: String,
    pub motion: MotionSequence,
    pub labels: Vec<LabelSpan>,
    pub class_id: Option<u32>,
}

impl MotionRecord {
    pub fn new(
        id: impl Into<String>,
        motion: MotionSequence,
        labels: Vec<LabelSpan>,
        class_id: Option<u32>,
    ) -> Result<Self> {
        let r = Self {
            id: id.into(),
            motion,
            labels,
            class_id,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn len(&self) -> usize {
        self.motion.len()
    }

    pub fn is_empty(&self) -> bool {
        self.motion.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.motion.fps
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.len();
        if t == 0 {
            return Err(Error::input(format!("record {} has no frames", self.id)));
        }
        if !(self.fps() > 0.0 && self.fps().is_finite()) {
            return Err(Error::input(format!(
                "record {} has fps {}",
                self.id,
                self.fps()
            )));
        }
        for l in &self.labels {
            if l.start > l.end || l.end >= t {
                return Err(Error::input(format!(
                    "record {}: label {:?} spans {}..={} outside 0..{t}",
                    self.id, l.text, l.start, l.end
                )));
            }
        }
        Ok(())
    }
}

/// Result of [`downsample`]; `warning` is set when the achieved rate is not the target.
#[derive(Clone, Debug, PartialEq)]
pub struct Downsampled {
    pub record: MotionRecord,
    pub stride: usize,
    pub warning: Option<String>,
}

/// Keeps every `round(fps / target)`-th frame.
pub fn downsample(r: &MotionRecord, target_fps: f64) -> Result<Downsampled> {
    if !(target_fps > 0.0 && target_fps.is_finite()) {
        return Err(Error::input(format!(
            "target fps must be positive, got {target_fps}"
        )));
    }
    let fps = r.fps();
    if fps < target_fps * (1.0 - 1e-9) {
        return Err(Error::Unsupported(format!(
            "record {} is {fps} fps; upsampling to {target_fps} fps is not supported",
            r.id
        )));
    }
    let stride = ((fps / target_fps).round() as usize).max(1);
    let new_fps = fps / stride as f64;
    let warning = ((new_fps - target_fps).abs() > 1e-9 * target_fps).then(|| {
        format!(
            "record {}: {fps} fps with stride {stride} gives {new_fps:.4} fps, not {target_fps}",
            r.id
        )
    });
    let poses = r.motion.poses.iter().step_by(stride).cloned().collect();
    let labels = r
        .labels
        .iter()
        .map(|l| LabelSpan {
            start: l.start / stride,
            end: l.end / stride,
            text: l.text.clone(),
        })
        .collect();
    Ok(Downsampled {
        record: MotionRecord {
            id: r.id.clone(),
            motion: MotionSequence::new(new_fps, poses)?,
            labels,
            class_id: r.class_id,
        },
        stride,
        warning,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub record_id: String,
    pub index: usize,
    pub start: usize,
    pub motion: MotionSequence,
    /// Texts of labels overlapping the window, in record order.
    pub labels: Vec<String>,
    pub class_id: Option<u32>,
}

impl Window {
    pub fn id(&self) -> String {
        format!("{}#{}", self.record_id, self.index)
    }

    pub fn text(&self) -> String {
        assemble_text(&self.labels)
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Windows {
    pub windows: Vec<Window>,
    /// Why no window was produced, if none was.
    pub diagnostic: Option<String>,
}

/// Cuts `floor((T - length) / stride) + 1` windows of `length` frames.
pub fn window(r: &MotionRecord, length: usize, stride: usize) -> Result<Windows> {
    if length == 0 || stride == 0 {
        return Err(Error::input("window length and stride must be positive"));
    }
    let t = r.len();
    if t < length {
        return Ok(Windows {
            windows: Vec::new(),
            diagnostic: Some(format!(
                "record {} has {t} frames, fewer than {length}",
                r.id
            )),
        });
    }
    let count = (t - length) / stride + 1;
    let windows = (0..count)
        .map(|index| {
            let start = index * stride;
            let end = start + length - 1;
            Window {
                record_id: r.id.clone(),
                index,
                start,
                motion: MotionSequence {
                    fps: r.fps(),
                    poses: r.motion.poses[start..=end].to_vec(),
                },
                labels: r
                    .labels
                    .iter()
                    .filter(|l| l.start <= end && l.end >= start)
                    .map(|l| l.text.clone())
                    .collect(),
                class_id: r.class_id,
            }
        })
        .collect();
    Ok(Windows {
        windows,
        diagnostic: None,
    })
}

/// Distinct trimmed labels in order of first appearance, joined by `", "`.
pub fn assemble_text<S: AsRef<str>>(labels: &[S]) -> String {
    let mut seen: Vec<&str> = Vec::new();
    for l in labels {
        let l = l.as_ref().trim();
        if !l.is_empty() && !seen.contains(&l) {
            seen.push(l);
        }
    }
    if seen.is_empty() {
        EMPTY_LABEL.to_string()
    } else {
        seen.join(", ")
    }
}

/// A motion window with its text, one rendered frame, and both embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    pub id: String,
    pub motion: MotionSequence,
    pub text: String,
    pub frame_index: usize,
    pub image: Option<FrameImage>,
    pub text_emb: Option<SemanticVector>,
    pub image_emb: Option<SemanticVector>,
    pub class_id: Option<u32>,
}

/// Renders a seeded random frame and embeds it together with `text`.
#[allow(clippy::too_many_arguments)]
pub fn build_triplet(
    id: &str,
    seq: &MotionSequence,
    text: &str,
    skeleton: &SkeletonModel,
    camera: &Camera,
    style: &RenderStyle,
    provider: &dyn EmbeddingProvider,
    seed: u64,
) -> Result<Triplet> {
    let wrap = |e: Error| Error::Triplet {
        id: id.to_string(),
        source: Box::new(e),
    };
    if seq.is_empty() {
        return Err(wrap(Error::input("empty sequence")));
    }
    let frame_index = ChaCha8Rng::seed_from_u64(seed).random_range(0..seq.len());
    let image = rasterize(skeleton, &seq.poses[frame_index], camera, style).map_err(wrap)?;
    let text_emb = provider.embed_text(text).map_err(wrap)?;
    let image_emb = provider.embed_image(&image).map_err(wrap)?;
    Ok(Triplet {
        id: id.to_string(),
        motion: seq.clone(),
        text: text.to_string(),
        frame_index,
        image: Some(image),
        text_emb: Some(text_emb),
        image_emb: Some(image_emb),
        class_id: None,
    })
}

/// Per-window seed: a SplitMix64 step of `seed` mixed with the window's position.
pub fn triplet_seed(seed: u64, position: usize) -> u64 {
    let mut z = seed ^ (position as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Downsamples, windows and embeds every record, in record then window order.
pub fn build_triplets(
    records: &[MotionRecord],
    skeleton: &SkeletonModel,
    provider: &dyn EmbeddingProvider,
    seed: u64,
) -> Result<Vec<Triplet>> {
    let camera = Camera::default();
    let style = RenderStyle::default();
    let mut out = Vec::new();
    for r in records {
        let d = downsample(r, TARGET_FPS)?;
        if let Some(w) = &d.warning {
            log::warn!("{w}");
        }
        let ws = window(&d.record, WINDOW_LEN, WINDOW_STRIDE)?;
        if let Some(msg) = &ws.diagnostic {
            log::info!("skipping: {msg}");
        }
        for w in ws.windows {
            let pos = out.len();
            let mut t = build_triplet(
                &w.id(),
                &w.motion,
                &w.text(),
                skeleton,
                &camera,
                &style,
                provider,
                triplet_seed(seed, pos),
            )?;
            t.class_id = w.class_id;
            out.push(t);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub records: usize,
    pub total_frames: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub fps: Vec<f64>,
    /// Windows each record yields at the canonical rate, length and stride.
    pub windows: usize,
    /// `(label, records carrying it)`, most frequent first.
    pub labels: Vec<(String, usize)>,
}

pub fn dataset_stats(records: &[MotionRecord]) -> Result<DatasetStats> {
    let mut fps: Vec<f64> = Vec::new();
    let mut labels: Vec<(String, usize)> = Vec::new();
    let mut windows = 0;
    for r in records {
        if !fps.contains(&r.fps()) {
            fps.push(r.fps());
        }
        let mut texts: Vec<&str> = r.labels.iter().map(|l| l.text.as_str()).collect();
        texts.dedup();
        texts.sort_unstable();
        texts.dedup();
        for t in texts {
            match labels.iter_mut().find(|(l, _)| l == t) {
                Some((_, n)) => *n += 1,
                None => labels.push((t.to_string(), 1)),
            }
        }
        if r.fps() >= TARGET_FPS {
            windows += window(
                &downsample(r, TARGET_FPS)?.record,
                WINDOW_LEN,
                WINDOW_STRIDE,
            )?
            .windows
            .len();
        }
    }
    fps.sort_by(f64::total_cmp);
    labels.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(DatasetStats {
        records: records.len(),
        total_frames: records.iter().map(MotionRecord::len).sum(),
        min_frames: records.iter().map(MotionRecord::len).min().unwrap_or(0),
        max_frames: records.iter().map(MotionRecord::len).max().unwrap_or(0),
        fps,
        windows,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::Pose;

    fn record(t: usize, fps: f64) -> MotionRecord {
        let poses = (0..t)
            .map(|i| {
                let mut p = Pose::identity();
                p.rotations[1].0[0] = 1.0 + i as f64;
                p
            })
            .collect();
        MotionRecord::new(
            "r",
            MotionSequence::new(fps, poses).unwrap(),
            vec![LabelSpan {
                start: 0,
                end: t - 1,
                text: "walk".into(),
            }],
            None,
        )
        .unwrap()
    }

    #[test]
    fn stride_two_at_sixty_fps() {
        let d = downsample(&record(120, 60.0), 30.0).unwrap();
        assert_eq!(d.stride, 2);
        assert_eq!(d.record.len(), 60);
        assert_eq!(d.record.fps(), 30.0);
        assert!(d.warning.is_none());
        assert_eq!(d.record.motion.poses[1].rotations[1].0[0], 3.0);
        assert_eq!(d.record.labels[0].end, 59);
    }

    #[test]
    fn thirty_fps_is_identity() {
        let r = record(45, 30.0);
        assert_eq!(downsample(&r, 30.0).unwrap().record, r);
    }

    #[test]
    fn hundred_fps_warns() {
        let d = downsample(&record(300, 100.0), 30.0).unwrap();
        assert_eq!(d.stride, 3);
        assert_eq!(d.record.fps(), 100.0 / 3.0);
        assert_eq!(d.record.len(), 100);
        assert!(d.warning.is_some());
    }

    #[test]
    fn upsampling_is_unsupported() {
        assert!(matches!(
            downsample(&record(10, 24.0), 30.0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn window_counts() {
        assert_eq!(window(&record(60, 30.0), 60, 60).unwrap().windows.len(), 1);
        let w = window(&record(150, 30.0), 60, 30).unwrap();
        assert_eq!(w.windows.len(), 4);
        assert_eq!(w.windows[3].start, 90);
        let short = window(&record(59, 30.0), 60, 30).unwrap();
        assert!(short.windows.is_empty());
        assert!(short.diagnostic.is_some());
    }

    #[test]
    fn window_labels_are_overlaps() {
        let mut r = record(150, 30.0);
        r.labels = vec![
            LabelSpan {
                start: 0,
                end: 40,
                text: "walk".into(),
            },
            LabelSpan {
                start: 70,
                end: 149,
                text: "wave".into(),
            },
        ];
        let w = window(&r, 60, 30).unwrap().windows;
        assert_eq!(w[0].labels, vec!["walk"]);
        assert_eq!(w[1].labels, vec!["walk", "wave"]);
        assert_eq!(w[2].labels, vec!["wave"]);
    }

    #[test]
    fn text_assembly() {
        assert_eq!(assemble_text(&["walk"]), "walk");
        assert_eq!(assemble_text(&["walk", "wave", "walk"]), "walk, wave");
        assert_eq!(assemble_text::<&str>(&[]), "motion");
        let once = assemble_text(&["b", "a", "b"]);
        assert_eq!(assemble_text(&[once.as_str()]), once);
    }

    #[test]
    fn label_outside_sequence_is_rejected() {
        let mut r = record(10, 30.0);
        r.labels[0].end = 10;
        assert!(r.validate().is_err());
    }
}
