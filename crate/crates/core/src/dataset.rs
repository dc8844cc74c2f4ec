//! Labeled fixed-length clips cut from featurized trace recordings.
//!
//! Windows of every length in the timestep set slide over each trace, are
//! labeled by their overlap with the annotated gesture segments, and are
//! resampled to the objective timestep.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMode, MotionFeatureSequence};
use crate::model::{LabelSet, SkeletonSpec};

/// An annotated gesture occupying frames `[phi_s, phi_e)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedSegment {
    pub phi_s: i64,
    pub phi_e: i64,
    pub class_id: usize,
    /// Restricts the segment to traces of this hand; `None` applies it to
    /// every trace of the recording.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<u32>,
}

impl AnnotatedSegment {
    pub fn new(phi_s: i64, phi_e: i64, class_id: usize) -> Result<Self> {
        AnnotatedSegment {
            phi_s,
            phi_e,
            class_id,
            source_id: None,
        }
        .validate()
    }

    pub fn validate(self) -> Result<Self> {
        if self.phi_s >= self.phi_e {
            return Err(Error::InvalidInput(format!(
                "segment [{}, {}) is empty",
                self.phi_s, self.phi_e
            )));
        }
        if self.class_id == 0 {
            return Err(Error::InvalidInput("annotated segments need a positive class".into()));
        }
        Ok(self)
    }
}

/// A clipped window occupying frames `[psi_s, psi_e)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipSpan {
    pub psi_s: i64,
    pub psi_e: i64,
}

impl ClipSpan {
    pub fn new(psi_s: i64, psi_e: i64) -> Result<Self> {
        if psi_s >= psi_e {
            return Err(Error::InvalidInput(format!("clip [{psi_s}, {psi_e}) is empty")));
        }
        Ok(ClipSpan { psi_s, psi_e })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelingThresholds {
    pub delta_ios: f64,
    pub delta_ioa: f64,
}

impl Default for LabelingThresholds {
    fn default() -> Self {
        LabelingThresholds {
            delta_ios: 0.3,
            delta_ioa: 0.3,
        }
    }
}

impl LabelingThresholds {
    pub fn validate(self) -> Result<Self> {
        let ok = |x: f64| x > 0.0 && x <= 1.0;
        if !ok(self.delta_ios) || !ok(self.delta_ioa) {
            return Err(Error::Config("labeling thresholds must lie in (0, 1]".into()));
        }
        Ok(self)
    }
}

/// Overlap of a clip with a segment, as fractions of each.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapRatios {
    /// Intersection over the annotation.
    pub r_ioa: f64,
    /// Intersection over the sample.
    pub r_ios: f64,
}

pub fn overlap_ratios(seg: &AnnotatedSegment, clip: &ClipSpan) -> OverlapRatios {
    let overlap = (seg.phi_e.min(clip.psi_e) - seg.phi_s.max(clip.psi_s)).max(0) as f64;
    OverlapRatios {
        r_ioa: overlap / (seg.phi_e - seg.phi_s) as f64,
        r_ios: overlap / (clip.psi_e - clip.psi_s) as f64,
    }
}

/// Negative unless both ratios reach their thresholds.
pub fn clip_label(ratios: OverlapRatios, class_id: usize, th: &LabelingThresholds) -> usize {
    if ratios.r_ios < th.delta_ios || ratios.r_ioa < th.delta_ioa {
        0
    } else {
        class_id
    }
}

/// Labels a clip against several segments by evaluating the one it covers
/// the largest fraction of; ties go to the earlier segment.
pub fn label_window(
    clip: &ClipSpan,
    segments: &[AnnotatedSegment],
    th: &LabelingThresholds,
) -> usize {
    let mut ordered: Vec<&AnnotatedSegment> = segments.iter().collect();
    ordered.sort_by_key(|s| (s.phi_s, s.phi_e));
    let mut best: Option<(OverlapRatios, usize)> = None;
    for seg in ordered {
        let r = overlap_ratios(seg, clip);
        if best.map_or(true, |(b, _)| r.r_ioa > b.r_ioa) {
            best = Some((r, seg.class_id));
        }
    }
    best.map_or(0, |(r, class)| clip_label(r, class, th))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub t_min: usize,
    pub delta_t: usize,
    pub t_obj: usize,
    pub stride: usize,
    /// Longest window harvested; `None` lets windows grow to the trace length.
    pub max_window: Option<usize>,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            t_min: 8,
            delta_t: 5,
            t_obj: 13,
            stride: 3,
            max_window: None,
        }
    }
}

impl AugmentationConfig {
    /// Windows of exactly `t_obj` frames.
    pub fn single_length(t_obj: usize, stride: usize) -> Self {
        AugmentationConfig {
            t_min: t_obj,
            delta_t: 1,
            t_obj,
            stride,
            max_window: Some(t_obj),
        }
    }

    pub fn validate(self) -> Result<Self> {
        if self.t_min < 2 || self.delta_t < 1 || self.t_obj < 2 || self.stride < 1 {
            return Err(Error::Config(
                "augmentation needs t_min >= 2, delta_t >= 1, t_obj >= 2, stride >= 1".into(),
            ));
        }
        Ok(self)
    }
}

/// Window lengths `t_min + n * delta_t` up to `max_len`, ascending.
pub fn timestep_set(cfg: &AugmentationConfig, max_len: usize) -> Vec<usize> {
    let cap = cfg.max_window.map_or(max_len, |m| m.min(max_len));
    if cfg.delta_t == 0 {
        return if cfg.t_min <= cap { vec![cfg.t_min] } else { vec![] };
    }
    (cfg.t_min..=cap.max(cfg.t_min))
        .step_by(cfg.delta_t)
        .take_while(|&t| t <= cap)
        .collect()
}

/// Piecewise-linear resampling of every channel to `t_obj` frames spaced
/// uniformly over the source; endpoints are kept exactly.
pub fn resample_clip(seq: &MotionFeatureSequence, t_obj: usize) -> Result<MotionFeatureSequence> {
    let len = seq.len();
    if len < 2 {
        return Err(Error::WindowUnderflow {
            needed: 2,
            available: len,
            shortfall: 2 - len,
        });
    }
    if t_obj < 2 {
        return Err(Error::InvalidInput("t_obj must be at least 2".into()));
    }
    let indices: Vec<u64> = (0..t_obj as u64).collect();
    if len == t_obj {
        return MotionFeatureSequence::new(
            seq.mode(),
            seq.velocity_width(),
            seq.shape_width(),
            indices,
            seq.data().to_vec(),
        );
    }
    let width = seq.width();
    let mut data = Vec::with_capacity(t_obj * width);
    let last = len - 1;
    for i in 0..t_obj {
        let pos = (i * last) as f64 / (t_obj - 1) as f64;
        let lo = (pos.floor() as usize).min(last);
        if lo == last {
            data.extend_from_slice(seq.frame(last));
            continue;
        }
        let frac = pos - lo as f64;
        let (a, b) = (seq.frame(lo), seq.frame(lo + 1));
        data.extend(a.iter().zip(b).map(|(&x, &y)| x + frac * (y - x)));
    }
    MotionFeatureSequence::new(
        seq.mode(),
        seq.velocity_width(),
        seq.shape_width(),
        indices,
        data,
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipProvenance {
    pub recording: String,
    pub trace_id: u64,
    pub psi_s: i64,
    pub psi_e: i64,
    /// Window length before resampling.
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceClip {
    pub features: MotionFeatureSequence,
    pub label: usize,
    pub provenance: ClipProvenance,
}

/// One contiguous featurized run of a trace plus the segments that apply
/// to it.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFeatures {
    pub trace_id: u64,
    pub features: MotionFeatureSequence,
    pub segments: Vec<AnnotatedSegment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub id: String,
    pub skeleton: SkeletonSpec,
    pub mode: FeatureMode,
    pub traces: Vec<TraceFeatures>,
}

fn clips_for_trace(
    recording: &str,
    trace: &TraceFeatures,
    cfg: &AugmentationConfig,
    th: &LabelingThresholds,
) -> Result<Vec<SequenceClip>> {
    let seq = &trace.features;
    let frames = seq.frame_indices();
    let mut out = Vec::new();
    for len in timestep_set(cfg, seq.len()) {
        for start in (0..=seq.len() - len).step_by(cfg.stride) {
            let span = ClipSpan {
                psi_s: frames[start] as i64,
                psi_e: frames[start + len - 1] as i64 + 1,
            };
            let window = seq.slice(start, start + len)?;
            out.push(SequenceClip {
                features: resample_clip(&window, cfg.t_obj)?,
                label: label_window(&span, &trace.segments, th),
                provenance: ClipProvenance {
                    recording: recording.to_string(),
                    trace_id: trace.trace_id,
                    psi_s: span.psi_s,
                    psi_e: span.psi_e,
                    length: len,
                },
            });
        }
    }
    Ok(out)
}

fn clip_order(c: &SequenceClip) -> (&str, u64, usize, i64) {
    let p = &c.provenance;
    (p.recording.as_str(), p.trace_id, p.length, p.psi_s)
}

/// Cuts, labels and resamples every window of every trace.
///
/// Output is sorted by `(recording, trace_id, window length, psi_s)` so the
/// result does not depend on input order or scheduling.
pub fn generate_clips(
    recordings: &[Recording],
    cfg: &AugmentationConfig,
    th: &LabelingThresholds,
) -> Result<Vec<SequenceClip>> {
    let cfg = cfg.validate()?;
    let th = th.validate()?;
    if let Some(first) = recordings.first() {
        for r in recordings {
            if r.skeleton != first.skeleton {
                return Err(Error::schema("skeleton", format!("recording {} differs", r.id)));
            }
            if r.mode != first.mode {
                return Err(Error::schema("mode", format!("recording {} differs", r.id)));
            }
            for t in &r.traces {
                if t.features.mode() != r.mode {
                    return Err(Error::schema(
                        "mode",
                        format!("trace {} of recording {}", t.trace_id, r.id),
                    ));
                }
            }
        }
    }
    let jobs: Vec<(&str, &TraceFeatures)> = recordings
        .iter()
        .flat_map(|r| r.traces.iter().map(move |t| (r.id.as_str(), t)))
        .collect();
    let nested = jobs
        .par_iter()
        .map(|(rec, t)| clips_for_trace(rec, t, &cfg, &th))
        .collect::<Result<Vec<_>>>()?;
    let mut clips: Vec<SequenceClip> = nested.into_iter().flatten().collect();
    clips.sort_by(|a, b| clip_order(a).cmp(&clip_order(b)));
    Ok(clips)
}

/// Splits clips by recording id so that no recording lands on both sides.
pub fn split_dataset(
    clips: Vec<SequenceClip>,
    ratio: f64,
    seed: u64,
) -> Result<(Vec<SequenceClip>, Vec<SequenceClip>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidInput(format!("split ratio {ratio} outside (0, 1)")));
    }
    let test_ids = split_recordings(
        clips.iter().map(|c| c.provenance.recording.clone()),
        ratio,
        seed,
    )?
    .1;
    Ok(clips
        .into_iter()
        .partition(|c| !test_ids.contains(&c.provenance.recording)))
}

/// Deterministic train/test partition of recording ids.
pub fn split_recordings(
    ids: impl IntoIterator<Item = String>,
    ratio: f64,
    seed: u64,
) -> Result<(BTreeSet<String>, BTreeSet<String>)> {
    let unique: BTreeSet<String> = ids.into_iter().collect();
    if unique.len() < 2 {
        return Err(Error::CannotSplit(format!(
            "{} recording(s); need at least 2",
            unique.len()
        )));
    }
    let mut order: Vec<String> = unique.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = order.len();
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let test = order.split_off(n_train);
    Ok((order.into_iter().collect(), test.into_iter().collect()))
}

/// Clips sharing skeleton, feature mode, objective timestep and label set.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub skeleton: SkeletonSpec,
    pub mode: FeatureMode,
    pub t_obj: usize,
    pub labels: LabelSet,
    pub clips: Vec<SequenceClip>,
}

const DATASET_MAGIC: &[u8; 8] = b"LHGRDSET";
const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ClipHeader {
    #[serde(flatten)]
    provenance: ClipProvenance,
    label: usize,
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    format_version: u32,
    skeleton: SkeletonSpec,
    mode: FeatureMode,
    t_obj: usize,
    velocity_width: usize,
    shape_width: usize,
    labels: LabelSet,
    clips: Vec<ClipHeader>,
}

impl SequenceDataset {
    pub fn new(
        skeleton: SkeletonSpec,
        mode: FeatureMode,
        t_obj: usize,
        labels: LabelSet,
        clips: Vec<SequenceClip>,
    ) -> Result<Self> {
        let ds = SequenceDataset {
            skeleton,
            mode,
            t_obj,
            labels,
            clips,
        };
        ds.check()?;
        Ok(ds)
    }

    /// `(velocity_width, shape_width)` of every clip.
    pub fn widths(&self) -> (usize, usize) {
        match self.mode {
            FeatureMode::Motion => (
                2 * self.skeleton.keypoint_count,
                2 * self.skeleton.edge_count(),
            ),
            FeatureMode::Box => (crate::features::BOX_WIDTH, 0),
        }
    }

    fn check(&self) -> Result<()> {
        let widths = self.widths();
        for c in &self.clips {
            if c.features.len() != self.t_obj {
                return Err(Error::schema(
                    "clips",
                    format!("clip of length {} in a t_obj={} dataset", c.features.len(), self.t_obj),
                ));
            }
            if (c.features.velocity_width(), c.features.shape_width()) != widths
                || c.features.mode() != self.mode
            {
                return Err(Error::schema("clips", "clip width or mode differs from header"));
            }
            if c.label >= self.labels.len() {
                return Err(Error::schema("clips", format!("label {} out of range", c.label)));
            }
        }
        Ok(())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.labels.len()];
        for c in &self.clips {
            counts[c.label] += 1;
        }
        counts
    }

    pub fn recordings(&self) -> BTreeMap<&str, usize> {
        let mut m = BTreeMap::new();
        for c in &self.clips {
            *m.entry(c.provenance.recording.as_str()).or_insert(0) += 1;
        }
        m
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let (vw, sw) = self.widths();
        let header = DatasetHeader {
            format_version: DATASET_VERSION,
            skeleton: self.skeleton.clone(),
            mode: self.mode,
            t_obj: self.t_obj,
            velocity_width: vw,
            shape_width: sw,
            labels: self.labels.clone(),
            clips: self
                .clips
                .iter()
                .map(|c| ClipHeader {
                    provenance: c.provenance.clone(),
                    label: c.label,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::json("dataset header", e))?;
        let mut buf = Vec::with_capacity(16 + json.len() + self.clips.len() * self.t_obj * (vw + sw) * 4);
        buf.extend_from_slice(DATASET_MAGIC);
        buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for c in &self.clips {
            for &v in c.features.data() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        w.write_all(&buf).map_err(|e| Error::io("<dataset>", e))
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::io("<dataset>", e))?;
        let bad = |m: &str| Error::schema("dataset", m.to_string());
        if bytes.len() < 20 || &bytes[..8] != DATASET_MAGIC {
            return Err(bad("not a dataset file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != DATASET_VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..).ok_or_else(|| bad("truncated"))?;
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: DatasetHeader =
            serde_json::from_slice(&body[..hlen]).map_err(|e| Error::json("dataset header", e))?;
        let skeleton = header.skeleton.validate()?;
        let width = header.velocity_width + header.shape_width;
        let per_clip = header.t_obj * width;
        let tensors = &body[hlen..];
        if tensors.len() != per_clip * header.clips.len() * 4 {
            return Err(bad("tensor section size does not match header"));
        }
        let mut clips = Vec::with_capacity(header.clips.len());
        for (i, ch) in header.clips.into_iter().enumerate() {
            let chunk = &tensors[i * per_clip * 4..(i + 1) * per_clip * 4];
            let data = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect();
            clips.push(SequenceClip {
                features: MotionFeatureSequence::new(
                    header.mode,
                    header.velocity_width,
                    header.shape_width,
                    (0..header.t_obj as u64).collect(),
                    data,
                )?,
                label: ch.label,
                provenance: ch.provenance,
            });
        }
        SequenceDataset::new(skeleton, header.mode, header.t_obj, header.labels, clips)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }

    /// Per-class clip counts as aligned text.
    pub fn summary(&self) -> String {
        let counts = self.class_counts();
        let name_w = self.labels.names().iter().map(String::len).max().unwrap_or(5).max(5);
        let mut s = format!(
            "mode {}  t_obj {}  clips {}  recordings {}\n",
            self.mode.as_str(),
            self.t_obj,
            self.clips.len(),
            self.recordings().len()
        );
        s.push_str(&format!("{:>3}  {:<name_w$}  {:>8}\n", "id", "class", "clips"));
        for (id, (name, n)) in self.labels.names().iter().zip(&counts).enumerate() {
            s.push_str(&format!("{id:>3}  {name:<name_w$}  {n:>8}\n"));
        }
        s
    }
}
