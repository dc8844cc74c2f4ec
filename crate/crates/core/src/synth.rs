//! Synthetic detection streams with ground truth.
//!
//! Hands follow scripted palm trajectories (horizontal waves, holds, drifts,
//! vertical bobs); keypoints ride rigidly on the palm and the box bounds the
//! keypoints. Detector noise, dropouts and false positives are layered on top
//! from a seeded generator, so every scene is reproducible bit for bit.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::AnnotatedSegment;
use crate::error::{Error, Result};
use crate::model::{BoundingBox, FrameObservation, HandDetection, SkeletonSpec};

pub const FRAME_RATE: u64 = 30;

/// Palm trajectory of a script.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Motion {
    /// Horizontal sinusoid heading left first.
    LeftWave,
    /// Horizontal sinusoid heading right first.
    RightWave,
    Hold,
    /// Constant per-frame velocity.
    Drift { du: f64, dv: f64 },
    /// Vertical sinusoid.
    Bob,
    /// One of hold, slow drift or bob, picked by the scene generator.
    Negative,
}

fn default_scale() -> f64 {
    0.12
}

fn default_period() -> f64 {
    20.0
}

/// One hand's motion over frames `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureScript {
    pub source_id: u32,
    /// Annotated class; 0 leaves the span unannotated.
    #[serde(default)]
    pub class_id: usize,
    /// Defaults to left wave for class 1, right wave for class 2 and a
    /// generator-chosen negative motion for class 0.
    #[serde(default)]
    pub motion: Option<Motion>,
    pub start: u64,
    pub end: u64,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default = "default_period")]
    pub period: f64,
    /// Palm position at `start`; `None` continues from the previous script
    /// of the same hand (or the frame center for its first script).
    #[serde(default)]
    pub base: Option<[f64; 2]>,
    #[serde(default = "default_scale")]
    pub scale: f64,
}

impl GestureScript {
    pub fn validate(&self) -> Result<()> {
        if self.start >= self.end {
            return Err(Error::Script(format!(
                "script for hand {} has empty span [{}, {})",
                self.source_id, self.start, self.end
            )));
        }
        if !(self.amplitude >= 0.0) || !(self.period >= 2.0) || !(self.scale > 0.0) {
            return Err(Error::Script(format!(
                "script for hand {} needs amplitude >= 0, period >= 2, scale > 0",
                self.source_id
            )));
        }
        if self.motion.is_none() && self.class_id > 2 {
            return Err(Error::Script(format!(
                "class {} has no default motion; set one explicitly",
                self.class_id
            )));
        }
        Ok(())
    }

    fn default_motion(&self) -> Motion {
        match self.class_id {
            1 => Motion::LeftWave,
            2 => Motion::RightWave,
            _ => Motion::Negative,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Per-coordinate keypoint jitter, normalized units.
    pub keypoint_sigma: f64,
    /// Jitter on each of `cx, cy, w, h`.
    pub box_sigma: f64,
    /// Chance a hand goes undetected in a frame.
    pub dropout: f64,
    /// Chance of a single-frame false positive per frame.
    pub false_positive_rate: f64,
    /// Static clutter objects detected in every frame.
    pub persistent_false_positives: usize,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            keypoint_sigma: 0.0,
            box_sigma: 0.0,
            dropout: 0.0,
            false_positive_rate: 0.0,
            persistent_false_positives: 0,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..1.0).contains(&p) || p == 1.0;
        if !(self.keypoint_sigma >= 0.0 && self.box_sigma >= 0.0) {
            return Err(Error::Config("noise sigmas must be non-negative".into()));
        }
        if !prob(self.dropout) || !(0.0..1.0).contains(&self.false_positive_rate) {
            return Err(Error::Config("noise probabilities must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Keypoint offsets from the palm center for a unit-scale hand: keypoint 0
/// is the wrist below the palm, the rest fan out above it.
pub fn hand_offsets(keypoint_count: usize) -> Vec<[f64; 2]> {
    let mut offs = Vec::with_capacity(keypoint_count);
    if keypoint_count == 0 {
        return offs;
    }
    offs.push([0.0, 0.45]);
    let tips = keypoint_count - 1;
    for i in 0..tips {
        let theta = if tips == 1 {
            0.0
        } else {
            -0.7 + 1.4 * i as f64 / (tips - 1) as f64
        };
        let reach = 0.5 + 0.08 * (1.0 - theta.abs());
        offs.push([reach * theta.sin(), -reach * theta.cos()]);
    }
    offs
}

/// Noise-free detection of a hand whose palm is at `palm`.
pub fn hand_at(palm: [f64; 2], scale: f64, skeleton: &SkeletonSpec, frame: u64) -> HandDetection {
    let keypoints: Vec<[f64; 2]> = hand_offsets(skeleton.keypoint_count)
        .iter()
        .map(|o| [palm[0] + scale * o[0], palm[1] + scale * o[1]])
        .collect();
    let bbox = keypoint_box(&keypoints, scale);
    HandDetection {
        bbox,
        keypoints,
        confidence: 0.95,
        frame_index: frame,
        source_id: None,
    }
}

fn keypoint_box(kpts: &[[f64; 2]], scale: f64) -> BoundingBox {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in kpts {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let w = ((x1 - x0) * 1.1).max(0.1 * scale);
    let h = ((y1 - y0) * 1.1).max(0.1 * scale);
    BoundingBox::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, w, h)
        .unwrap_or(BoundingBox { cx: 0.5, cy: 0.5, w: 0.1, h: 0.1 })
}

/// A script with its negative motion resolved and its base fixed.
#[derive(Debug, Clone, Copy)]
struct ResolvedScript {
    motion: Motion,
    start: u64,
    end: u64,
    amplitude: f64,
    period: f64,
    base: [f64; 2],
    scale: f64,
}

impl ResolvedScript {
    fn palm(&self, frame: u64) -> [f64; 2] {
        let tau = frame as f64 - self.start as f64;
        let phase = (2.0 * PI * tau / self.period).sin();
        let [u, v] = self.base;
        match self.motion {
            Motion::LeftWave => [u - self.amplitude * phase, v],
            Motion::RightWave => [u + self.amplitude * phase, v],
            Motion::Bob => [u, v + self.amplitude * phase],
            Motion::Drift { du, dv } => [u + du * tau, v + dv * tau],
            Motion::Hold | Motion::Negative => [u, v],
        }
    }
}

fn resolve(script: &GestureScript, base: [f64; 2], rng: &mut ChaCha8Rng) -> ResolvedScript {
    let motion = match script.motion.unwrap_or_else(|| script.default_motion()) {
        Motion::Negative => match rng.gen_range(0..3) {
            0 => Motion::Hold,
            1 => {
                let angle = rng.gen_range(0.0..2.0 * PI);
                let len = (script.end - script.start) as f64;
                let speed = script.amplitude.max(0.02) / len;
                Motion::Drift {
                    du: speed * angle.cos(),
                    dv: speed * angle.sin(),
                }
            }
            _ => Motion::Bob,
        },
        m => m,
    };
    ResolvedScript {
        motion,
        start: script.start,
        end: script.end,
        amplitude: script.amplitude,
        period: script.period,
        base,
        scale: script.scale,
    }
}

/// Noise-free detections of one script, one per frame of its span.
pub fn synth_gesture_trace<R: Rng + ?Sized>(
    script: &GestureScript,
    skeleton: &SkeletonSpec,
    rng: &mut R,
) -> Result<Vec<HandDetection>> {
    script.validate()?;
    let mut chacha = ChaCha8Rng::seed_from_u64(rng.gen());
    let r = resolve(script, script.base.unwrap_or([0.5, 0.5]), &mut chacha);
    Ok((r.start..r.end)
        .map(|f| hand_at(r.palm(f), r.scale, skeleton, f).with_source(Some(script.source_id)))
        .collect())
}

/// Generated stream plus its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub frames: Vec<FrameObservation>,
    pub segments: Vec<AnnotatedSegment>,
    pub n_frames: u64,
}

impl Scene {
    /// Ground-truth hand id of every detection, frame by frame.
    pub fn truth_ids(&self) -> Vec<Vec<Option<u32>>> {
        self.frames
            .iter()
            .map(|f| f.detections.iter().map(|d| d.source_id).collect())
            .collect()
    }
}

pub fn timestamp_ms(frame: u64) -> i64 {
    (frame * 1000 / FRAME_RATE) as i64
}

/// Renders scripts into a noisy detection stream with annotations.
pub fn synth_scene(
    scripts: &[GestureScript],
    noise: &NoiseConfig,
    n_frames: u64,
    skeleton: &SkeletonSpec,
    image_size: (u32, u32),
) -> Result<Scene> {
    noise.validate()?;
    let mut by_hand: BTreeMap<u32, Vec<&GestureScript>> = BTreeMap::new();
    for s in scripts {
        s.validate()?;
        if s.end > n_frames {
            return Err(Error::Script(format!(
                "script for hand {} ends at {} beyond {n_frames} frames",
                s.source_id, s.end
            )));
        }
        by_hand.entry(s.source_id).or_default().push(s);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut resolved: Vec<(u32, ResolvedScript)> = Vec::new();
    for (&id, list) in by_hand.iter_mut() {
        list.sort_by_key(|s| (s.start, s.end));
        for pair in list.windows(2) {
            if pair[1].start < pair[0].end {
                return Err(Error::Script(format!(
                    "scripts for hand {id} overlap at frame {}",
                    pair[1].start
                )));
            }
        }
        let mut carry = [0.5, 0.5];
        for s in list.iter() {
            let r = resolve(s, s.base.unwrap_or(carry), &mut rng);
            carry = r.palm(r.end);
            resolved.push((id, r));
        }
    }

    let clutter: Vec<([f64; 2], f64)> = (0..noise.persistent_false_positives)
        .map(|_| {
            (
                [rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85)],
                rng.gen_range(0.06..0.16),
            )
        })
        .collect();
    let kp_noise = Normal::new(0.0, noise.keypoint_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let box_noise = Normal::new(0.0, noise.box_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let jitter = |det: &mut HandDetection, rng: &mut ChaCha8Rng| {
        if noise.keypoint_sigma > 0.0 {
            for p in &mut det.keypoints {
                p[0] += kp_noise.sample(rng);
                p[1] += kp_noise.sample(rng);
            }
        }
        if noise.box_sigma > 0.0 {
            let b = det.bbox;
            let cx = b.cx + box_noise.sample(rng);
            let cy = b.cy + box_noise.sample(rng);
            let w = (b.w + box_noise.sample(rng)).max(0.01);
            let h = (b.h + box_noise.sample(rng)).max(0.01);
            det.bbox = BoundingBox::new(cx, cy, w, h).unwrap_or(b);
        }
    };

    let mut frames = Vec::with_capacity(n_frames as usize);
    for f in 0..n_frames {
        let mut detections = Vec::new();
        for (id, r) in &resolved {
            if f < r.start || f >= r.end {
                continue;
            }
            if noise.dropout > 0.0 && rng.gen::<f64>() < noise.dropout {
                continue;
            }
            let mut det = hand_at(r.palm(f), r.scale, skeleton, f).with_source(Some(*id));
            jitter(&mut det, &mut rng);
            detections.push(det);
        }
        for &(palm, scale) in &clutter {
            let mut det = hand_at(palm, scale, skeleton, f);
            det.confidence = 0.6;
            jitter(&mut det, &mut rng);
            detections.push(det);
        }
        if noise.false_positive_rate > 0.0 && rng.gen::<f64>() < noise.false_positive_rate {
            let palm = [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)];
            let mut det = hand_at(palm, rng.gen_range(0.05..0.2), skeleton, f);
            det.confidence = rng.gen_range(0.3..0.7);
            detections.push(det);
        }
        frames.push(FrameObservation {
            frame_index: f,
            timestamp_ms: timestamp_ms(f),
            image_size,
            detections,
        });
    }

    let mut segments: Vec<AnnotatedSegment> = scripts
        .iter()
        .filter(|s| s.class_id > 0)
        .map(|s| AnnotatedSegment {
            phi_s: s.start as i64,
            phi_e: s.end as i64,
            class_id: s.class_id,
            source_id: Some(s.source_id),
        })
        .collect();
    segments.sort_by_key(|s| (s.phi_s, s.source_id));
    Ok(Scene {
        frames,
        segments,
        n_frames,
    })
}

/// Two hands sweeping across the frame in opposite directions, slightly
/// offset vertically so their boxes overlap when they pass.
pub fn crossing_hands(n_frames: u64) -> Vec<GestureScript> {
    let sweep = 0.6 / n_frames as f64;
    vec![
        GestureScript {
            source_id: 0,
            class_id: 0,
            motion: Some(Motion::Drift { du: sweep, dv: 0.0 }),
            start: 0,
            end: n_frames,
            amplitude: 0.0,
            period: 20.0,
            base: Some([0.2, 0.46]),
            scale: 0.12,
        },
        GestureScript {
            source_id: 1,
            class_id: 0,
            motion: Some(Motion::Drift { du: -sweep, dv: 0.0 }),
            start: 0,
            end: n_frames,
            amplitude: 0.0,
            period: 20.0,
            base: Some([0.8, 0.54]),
            scale: 0.14,
        },
    ]
}

/// Share of frames in which every true hand is carried by the trace it was
/// first assigned to.
///
/// `assigned` holds the trace id given to each detection, aligned with the
/// scene's detections.
pub fn identity_recovery(scene: &Scene, assigned: &[Vec<u64>]) -> f64 {
    let mut first: HashMap<u32, u64> = HashMap::new();
    let mut owner: HashMap<u64, u32> = HashMap::new();
    let (mut good, mut counted) = (0usize, 0usize);
    for (frame, ids) in scene.frames.iter().zip(assigned) {
        let mut ok = true;
        let mut any = false;
        for (det, &trace) in frame.detections.iter().zip(ids) {
            let Some(src) = det.source_id else { continue };
            any = true;
            let expected = *first.entry(src).or_insert(trace);
            let holder = *owner.entry(trace).or_insert(src);
            if expected != trace || holder != src {
                ok = false;
            }
        }
        if any {
            counted += 1;
            good += ok as usize;
        }
    }
    if counted == 0 {
        1.0
    } else {
        good as f64 / counted as f64
    }
}

/// Parameters for a corpus of single-hand recordings, one gesture (or
/// negative motion) per recording surrounded by holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub recordings: usize,
    pub n_frames: u64,
    /// Gesture classes besides negative; recordings cycle through
    /// `0..=gesture_classes`.
    pub gesture_classes: usize,
    pub amplitude: (f64, f64),
    pub period: (f64, f64),
    pub scale: (f64, f64),
    pub noise: NoiseConfig,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            recordings: 300,
            n_frames: 48,
            gesture_classes: 2,
            amplitude: (0.08, 0.16),
            period: (10.0, 30.0),
            scale: (0.10, 0.16),
            noise: NoiseConfig {
                keypoint_sigma: 0.002,
                box_sigma: 0.01,
                ..NoiseConfig::default()
            },
            seed: 0,
        }
    }
}

/// Scripts of recording `index` of a corpus.
pub fn corpus_scripts(cfg: &CorpusConfig, index: usize) -> Vec<GestureScript> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let class_id = index % (cfg.gesture_classes + 1);
    let amplitude = rng.gen_range(cfg.amplitude.0..=cfg.amplitude.1);
    let period = rng.gen_range(cfg.period.0..=cfg.period.1).round();
    let scale = rng.gen_range(cfg.scale.0..=cfg.scale.1);
    let base = [rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7)];
    let span = (period as u64).min(cfg.n_frames.saturating_sub(4)).max(2);
    let slack = cfg.n_frames - span;
    let start = rng.gen_range(2..=slack.saturating_sub(2).max(2));
    let end = start + span;
    let script = |class_id, motion, start, end| GestureScript {
        source_id: 0,
        class_id,
        motion,
        start,
        end,
        amplitude,
        period,
        base: None,
        scale,
    };
    let mut scripts = vec![GestureScript {
        base: Some(base),
        ..script(0, Some(Motion::Hold), 0, start)
    }];
    scripts.push(script(class_id, (class_id == 0).then_some(Motion::Negative), start, end));
    if end < cfg.n_frames {
        scripts.push(script(0, Some(Motion::Hold), end, cfg.n_frames));
    }
    scripts
}

/// Noise settings of recording `index` of a corpus.
pub fn corpus_noise(cfg: &CorpusConfig, index: usize) -> NoiseConfig {
    NoiseConfig {
        seed: cfg.noise.seed ^ cfg.seed.wrapping_add(index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03),
        ..cfg.noise
    }
}

/// Recording ids and scenes of a corpus.
pub fn synth_corpus(cfg: &CorpusConfig, skeleton: &SkeletonSpec) -> Result<Vec<(String, Scene)>> {
    (0..cfg.recordings)
        .map(|i| {
            let noise = corpus_noise(cfg, i);
            let scene = synth_scene(&corpus_scripts(cfg, i), &noise, cfg.n_frames, skeleton, (640, 480))?;
            Ok((format!("rec{i:04}"), scene))
        })
        .collect()
}
