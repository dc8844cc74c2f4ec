//! Temporal motion features of a tracked hand.
//!
//! A motion frame stacks the per-keypoint velocity `x_v` (current minus
//! previous position, interleaved `u, v`) with the skeleton edge vectors
//! `x_e` (`x_pi - x_pj` for each edge in declaration order). The box variant
//! replaces both with the raw `(cx, cy, w, h)` of each frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HandDetection, HandTrace, SkeletonSpec};

pub const BOX_WIDTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    Motion,
    Box,
}

impl FeatureMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureMode::Motion => "motion",
            FeatureMode::Box => "box",
        }
    }
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "motion" => Ok(FeatureMode::Motion),
            "box" => Ok(FeatureMode::Box),
            other => Err(Error::Config(format!("unknown feature mode {other:?}"))),
        }
    }
}

/// One stacked motion frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionFrame {
    pub frame_index: u64,
    pub x_v: Vec<f64>,
    pub x_e: Vec<f64>,
}

/// A `T x width` feature matrix, row-major, with per-row frame indices.
///
/// Each row is split into a leading velocity block and a trailing shape
/// block. Box-mode sequences put the four box channels in the velocity block
/// and leave the shape block empty.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionFeatureSequence {
    mode: FeatureMode,
    velocity_width: usize,
    shape_width: usize,
    frame_indices: Vec<u64>,
    data: Vec<f64>,
}

impl MotionFeatureSequence {
    pub fn new(
        mode: FeatureMode,
        velocity_width: usize,
        shape_width: usize,
        frame_indices: Vec<u64>,
        data: Vec<f64>,
    ) -> Result<Self> {
        let width = velocity_width + shape_width;
        if width == 0 {
            return Err(Error::schema("features", "zero frame width"));
        }
        if data.len() != frame_indices.len() * width {
            return Err(Error::schema(
                "features",
                format!(
                    "{} values do not fill {} frames of width {width}",
                    data.len(),
                    frame_indices.len()
                ),
            ));
        }
        if frame_indices.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::schema("features", "frame indices not strictly increasing"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature sequence".into()));
        }
        Ok(MotionFeatureSequence {
            mode,
            velocity_width,
            shape_width,
            frame_indices,
            data,
        })
    }

    pub fn from_frames(frames: &[MotionFrame]) -> Result<Self> {
        let (vw, sw) = frames
            .first()
            .map(|f| (f.x_v.len(), f.x_e.len()))
            .ok_or_else(|| Error::InvalidInput("no motion frames".into()))?;
        let mut data = Vec::with_capacity(frames.len() * (vw + sw));
        for f in frames {
            if f.x_v.len() != vw || f.x_e.len() != sw {
                return Err(Error::schema("features", "frames differ in width"));
            }
            data.extend_from_slice(&f.x_v);
            data.extend_from_slice(&f.x_e);
        }
        Self::new(
            FeatureMode::Motion,
            vw,
            sw,
            frames.iter().map(|f| f.frame_index).collect(),
            data,
        )
    }

    pub fn mode(&self) -> FeatureMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.frame_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_indices.is_empty()
    }

    pub fn width(&self) -> usize {
        self.velocity_width + self.shape_width
    }

    pub fn velocity_width(&self) -> usize {
        self.velocity_width
    }

    pub fn shape_width(&self) -> usize {
        self.shape_width
    }

    pub fn frame_indices(&self) -> &[u64] {
        &self.frame_indices
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let w = self.width();
        &self.data[t * w..(t + 1) * w]
    }

    pub fn velocity(&self, t: usize) -> &[f64] {
        &self.frame(t)[..self.velocity_width]
    }

    pub fn shape(&self, t: usize) -> &[f64] {
        &self.frame(t)[self.velocity_width..]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.width())
    }

    /// Rows `start..end` as a new sequence.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::InvalidInput(format!(
                "slice {start}..{end} of a {}-frame sequence",
                self.len()
            )));
        }
        let w = self.width();
        Ok(MotionFeatureSequence {
            mode: self.mode,
            velocity_width: self.velocity_width,
            shape_width: self.shape_width,
            frame_indices: self.frame_indices[start..end].to_vec(),
            data: self.data[start * w..end * w].to_vec(),
        })
    }
}

/// Velocity of every keypoint between entries `t - 1` and `t`.
pub fn velocity_features(window: &[HandDetection], t: usize) -> Result<Vec<f64>> {
    if t == 0 {
        return Err(Error::NoPredecessor(t));
    }
    let cur = window.get(t).ok_or_else(|| {
        Error::InvalidInput(format!("entry {t} outside a window of {}", window.len()))
    })?;
    let prev = &window[t - 1];
    if cur.keypoints.len() != prev.keypoints.len() {
        return Err(Error::schema("keypoints", "keypoint count changed inside window"));
    }
    Ok(cur
        .keypoints
        .iter()
        .zip(&prev.keypoints)
        .flat_map(|(c, p)| [c[0] - p[0], c[1] - p[1]])
        .collect())
}

/// Edge vectors `x_pi - x_pj` in skeleton edge order.
pub fn edge_features(det: &HandDetection, skeleton: &SkeletonSpec) -> Result<Vec<f64>> {
    det.conforms_to(skeleton)?;
    Ok(skeleton
        .edges
        .iter()
        .flat_map(|&(pi, pj)| {
            let (a, b) = (det.keypoints[pi], det.keypoints[pj]);
            [a[0] - b[0], a[1] - b[1]]
        })
        .collect())
}

fn check_contiguous(dets: &[HandDetection]) -> Result<()> {
    for w in dets.windows(2) {
        if w[1].frame_index != w[0].frame_index + 1 {
            return Err(Error::WindowGap {
                before: w[0].frame_index,
                after: w[1].frame_index,
            });
        }
    }
    Ok(())
}

/// Motion features over consecutive detections; `n` detections give `n - 1`
/// frames.
pub fn motion_features(dets: &[HandDetection], skeleton: &SkeletonSpec) -> Result<MotionFeatureSequence> {
    if dets.len() < 2 {
        return Err(Error::WindowUnderflow {
            needed: 2,
            available: dets.len(),
            shortfall: 2 - dets.len(),
        });
    }
    check_contiguous(dets)?;
    let vw = 2 * skeleton.keypoint_count;
    let sw = 2 * skeleton.edge_count();
    let mut data = Vec::with_capacity((dets.len() - 1) * (vw + sw));
    for t in 1..dets.len() {
        dets[t].conforms_to(skeleton)?;
        data.extend(velocity_features(dets, t)?);
        data.extend(edge_features(&dets[t], skeleton)?);
    }
    MotionFeatureSequence::new(
        FeatureMode::Motion,
        vw,
        sw,
        dets[1..].iter().map(|d| d.frame_index).collect(),
        data,
    )
}

/// Per-frame `(cx, cy, w, h)` over consecutive detections.
pub fn box_features(dets: &[HandDetection]) -> Result<MotionFeatureSequence> {
    if dets.is_empty() {
        return Err(Error::WindowUnderflow {
            needed: 1,
            available: 0,
            shortfall: 1,
        });
    }
    check_contiguous(dets)?;
    let data = dets.iter().flat_map(|d| d.bbox.as_array()).collect();
    MotionFeatureSequence::new(
        FeatureMode::Box,
        BOX_WIDTH,
        0,
        dets.iter().map(|d| d.frame_index).collect(),
        data,
    )
}

/// Features over a consecutive detection run in either mode. Box mode drops
/// the first detection so both modes cover the same frames.
pub fn features_for_mode(
    dets: &[HandDetection],
    skeleton: &SkeletonSpec,
    mode: FeatureMode,
) -> Result<MotionFeatureSequence> {
    match mode {
        FeatureMode::Motion => motion_features(dets, skeleton),
        FeatureMode::Box => {
            if dets.len() < 2 {
                return Err(Error::WindowUnderflow {
                    needed: 2,
                    available: dets.len(),
                    shortfall: 2 - dets.len(),
                });
            }
            box_features(&dets[1..])
        }
    }
}

fn tail(trace: &HandTrace, n: usize) -> Result<Vec<HandDetection>> {
    let available = trace.len();
    if available < n {
        return Err(Error::WindowUnderflow {
            needed: n,
            available,
            shortfall: n - available,
        });
    }
    Ok(trace.history().iter().skip(available - n).cloned().collect())
}

/// The last `t` motion frames of a trace, built from its last `t + 1`
/// detections.
pub fn motion_sequence(
    trace: &HandTrace,
    t: usize,
    skeleton: &SkeletonSpec,
) -> Result<MotionFeatureSequence> {
    if t == 0 {
        return Err(Error::InvalidInput("window length must be positive".into()));
    }
    motion_features(&tail(trace, t + 1)?, skeleton)
}

/// The last `t` box frames of a trace.
pub fn box_sequence(trace: &HandTrace, t: usize) -> Result<MotionFeatureSequence> {
    if t == 0 {
        return Err(Error::InvalidInput("window length must be positive".into()));
    }
    box_features(&tail(trace, t)?)
}

/// CSV column names after `trace_id,frame`.
pub fn feature_column_names(skeleton: &SkeletonSpec, mode: FeatureMode) -> Vec<String> {
    match mode {
        FeatureMode::Motion => (0..skeleton.keypoint_count)
            .flat_map(|i| [format!("kpt{i}_vu"), format!("kpt{i}_vv")])
            .chain((0..skeleton.edge_count()).flat_map(|i| [format!("edge{i}_du"), format!("edge{i}_dv")]))
            .collect(),
        FeatureMode::Box => ["cx", "cy", "w", "h"].iter().map(|s| s.to_string()).collect(),
    }
}
