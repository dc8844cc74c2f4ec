//! Glue between the stages: tracking a detection stream, cutting trace
//! streams into contiguous runs, and turning runs plus annotations into
//! dataset recordings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    generate_clips, split_recordings, AnnotatedSegment, AugmentationConfig, LabelingThresholds, Recording,
    SequenceClip, SequenceDataset, TraceFeatures,
};
use crate::error::{Error, Result};
use crate::features::{feature_column_names, features_for_mode, FeatureMode};
use crate::model::{FrameObservation, HandDetection, LabelSet, SkeletonSpec};
use crate::net::{TrainConfig, TriggerConfig};
use crate::stream::TraceFrame;
use crate::synth::{corpus_noise, corpus_scripts, synth_scene, CorpusConfig, Scene};
use crate::tracking::{TraceStore, TrackerConfig};

/// Network settings that can be overridden from a config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSettings {
    pub hidden: usize,
    pub dropout: f64,
    pub layers: usize,
    pub fc_hidden: usize,
}

impl Default for NetSettings {
    fn default() -> Self {
        NetSettings {
            hidden: 64,
            dropout: 0.2,
            layers: 1,
            fc_hidden: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Share of recordings used for training.
    pub ratio: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { ratio: 0.8, seed: 0 }
    }
}

/// Everything `--config` can override.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub skeleton: SkeletonSpec,
    pub labels: LabelSet,
    pub tracker: TrackerConfig,
    pub labeling: LabelingThresholds,
    pub augmentation: AugmentationConfig,
    pub net: NetSettings,
    pub train: TrainConfig,
    pub trigger: TriggerConfig,
    pub split: SplitConfig,
}

impl PipelineConfig {
    pub fn validate(self) -> Result<Self> {
        let skeleton = self.skeleton.clone().validate()?;
        self.tracker.validate()?;
        self.labeling.validate()?;
        self.augmentation.validate()?;
        self.trigger.validate()?;
        if self.labels.len() < 2 {
            return Err(Error::Config("label set needs at least two classes".into()));
        }
        Ok(PipelineConfig { skeleton, ..self })
    }
}

/// Trace stream plus the trace id given to every input detection.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutput {
    pub frames: Vec<TraceFrame>,
    pub assignments: Vec<Vec<u64>>,
}

pub fn track(frames: &[FrameObservation], cfg: TrackerConfig) -> Result<TrackOutput> {
    let mut store = TraceStore::new(cfg)?;
    let mut out = Vec::with_capacity(frames.len());
    let mut assignments = Vec::with_capacity(frames.len());
    for f in frames {
        let events = store.step(f)?;
        out.push(TraceFrame::snapshot(f.frame_index, &store, &events));
        assignments.push(events.detection_traces);
    }
    Ok(TrackOutput {
        frames: out,
        assignments,
    })
}

/// A maximal run of one trace matched on consecutive frames.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRun {
    pub trace_id: u64,
    pub detections: Vec<HandDetection>,
}

impl TraceRun {
    /// Most frequent ground-truth hand id in the run; ties go to the
    /// smaller id.
    pub fn source_id(&self) -> Option<u32> {
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for s in self.detections.iter().filter_map(|d| d.source_id) {
            *counts.entry(s).or_default() += 1;
        }
        counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(s, _)| s)
    }
}

/// Splits a trace stream into runs ordered by `(trace_id, first frame)`.
pub fn trace_runs(frames: &[TraceFrame]) -> Result<Vec<TraceRun>> {
    let mut open: BTreeMap<u64, Vec<HandDetection>> = BTreeMap::new();
    let mut done = Vec::new();
    for f in frames {
        for (id, det) in f.matched()? {
            let run = open.entry(id).or_default();
            if run.last().map_or(false, |l| l.frame_index + 1 != det.frame_index) {
                done.push(TraceRun {
                    trace_id: id,
                    detections: std::mem::take(run),
                });
            }
            run.push(det);
        }
    }
    done.extend(open.into_iter().map(|(trace_id, detections)| TraceRun { trace_id, detections }));
    done.retain(|r| !r.detections.is_empty());
    done.sort_by_key(|r| (r.trace_id, r.detections[0].frame_index));
    Ok(done)
}

/// Featurizes every run with at least two detections and attaches the
/// segments of its hand (segments without a hand id apply to every run).
pub fn build_recording(
    id: &str,
    frames: &[TraceFrame],
    segments: &[AnnotatedSegment],
    skeleton: &SkeletonSpec,
    mode: FeatureMode,
) -> Result<Recording> {
    let mut traces = Vec::new();
    for run in trace_runs(frames)? {
        if run.detections.len() < 2 {
            continue;
        }
        let src = run.source_id();
        let segs = segments
            .iter()
            .filter(|s| s.source_id.is_none() || s.source_id == src)
            .cloned()
            .collect();
        traces.push(TraceFeatures {
            trace_id: run.trace_id,
            features: features_for_mode(&run.detections, skeleton, mode)?,
            segments: segs,
        });
    }
    Ok(Recording {
        id: id.to_string(),
        skeleton: skeleton.clone(),
        mode,
        traces,
    })
}

/// Tracks a synthetic scene and featurizes the result.
pub fn scene_recording(id: &str, scene: &Scene, cfg: &PipelineConfig, mode: FeatureMode) -> Result<Recording> {
    let tracked = track(&scene.frames, cfg.tracker)?;
    build_recording(id, &tracked.frames, &scene.segments, &cfg.skeleton, mode)
}

/// Simulates, tracks and featurizes every recording of a corpus.
pub fn corpus_recordings(corpus: &CorpusConfig, cfg: &PipelineConfig, mode: FeatureMode) -> Result<Vec<Recording>> {
    (0..corpus.recordings)
        .into_par_iter()
        .map(|i| {
            let scene = synth_scene(
                &corpus_scripts(corpus, i),
                &corpus_noise(corpus, i),
                corpus.n_frames,
                &cfg.skeleton,
                (640, 480),
            )?;
            scene_recording(&format!("rec{i:04}"), &scene, cfg, mode)
        })
        .collect()
}

/// Feature CSV: `trace_id,frame` then one column per feature.
pub fn featurize_csv(frames: &[TraceFrame], skeleton: &SkeletonSpec, mode: FeatureMode) -> Result<String> {
    let mut s = String::from("trace_id,frame");
    for c in feature_column_names(skeleton, mode) {
        s.push(',');
        s.push_str(&c);
    }
    s.push('\n');
    for run in trace_runs(frames)? {
        if run.detections.len() < 2 {
            continue;
        }
        let seq = features_for_mode(&run.detections, skeleton, mode)?;
        for (t, row) in seq.frames().enumerate() {
            let _ = write!(s, "{},{}", run.trace_id, seq.frame_indices()[t]);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
    }
    Ok(s)
}

/// Train and test datasets cut from the same recordings.
///
/// Training clips use `train_aug`; test clips are always plain `t_obj`
/// windows so that differently augmented runs are scored on identical
/// samples.
pub fn split_datasets(
    recordings: &[Recording],
    cfg: &PipelineConfig,
    train_aug: &AugmentationConfig,
) -> Result<(SequenceDataset, SequenceDataset)> {
    let (train_ids, _) = split_recordings(recordings.iter().map(|r| r.id.clone()), cfg.split.ratio, cfg.split.seed)?;
    let (train, test): (Vec<Recording>, Vec<Recording>) =
        recordings.iter().cloned().partition(|r| train_ids.contains(&r.id));
    let test_aug = AugmentationConfig::single_length(train_aug.t_obj, cfg.augmentation.stride);
    Ok((
        dataset(&train, cfg, train_aug)?,
        dataset(&test, cfg, &test_aug)?,
    ))
}

/// All clips of `recordings` as one dataset.
pub fn dataset(recordings: &[Recording], cfg: &PipelineConfig, aug: &AugmentationConfig) -> Result<SequenceDataset> {
    let mode = match recordings.first() {
        Some(r) => r.mode,
        None => FeatureMode::Motion,
    };
    for r in recordings {
        if r.mode != mode || r.skeleton != cfg.skeleton {
            return Err(Error::schema(
                "recordings",
                format!("recording {} differs in skeleton or feature mode", r.id),
            ));
        }
    }
    let clips: Vec<SequenceClip> = generate_clips(recordings, aug, &cfg.labeling)?;
    SequenceDataset::new(cfg.skeleton.clone(), mode, aug.t_obj, cfg.labels.clone(), clips)
}
