//! Domain types shared by every pipeline stage.
//!
//! All geometry is held in normalized image coordinates: `u` and `v` run over
//! `[0, 1]` across the frame regardless of the capture resolution.

use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Keypoint layout of a hand and the skeleton edges used for shape features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonSpec {
    pub name: String,
    pub keypoint_count: usize,
    pub edges: Vec<(usize, usize)>,
}

impl SkeletonSpec {
    /// Wrist plus four fingertips, star edges from the wrist.
    pub fn default_hand() -> Self {
        SkeletonSpec {
            name: "wrist-star-5".to_string(),
            keypoint_count: 5,
            edges: vec![(0, 1), (0, 2), (0, 3), (0, 4)],
        }
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Width of a motion-mode feature frame: `2K + 2|E|`.
    pub fn motion_width(&self) -> usize {
        2 * self.keypoint_count + 2 * self.edges.len()
    }

    pub fn validate(self) -> Result<Self> {
        validate_skeleton(self)
    }
}

impl Default for SkeletonSpec {
    fn default() -> Self {
        Self::default_hand()
    }
}

/// Checks the skeleton invariants and hands the spec back unchanged.
pub fn validate_skeleton(spec: SkeletonSpec) -> Result<SkeletonSpec> {
    if spec.keypoint_count == 0 {
        return Err(Error::schema("keypoint_count", "must be positive"));
    }
    if spec.keypoint_count >= 2 && spec.edges.is_empty() {
        return Err(Error::schema("edges", "empty edge set"));
    }
    let mut seen = HashSet::with_capacity(spec.edges.len());
    for &(a, b) in &spec.edges {
        for idx in [a, b] {
            if idx >= spec.keypoint_count {
                return Err(Error::schema(
                    "edges",
                    format!("edge index {idx} out of range"),
                ));
            }
        }
        if a == b {
            return Err(Error::schema("edges", format!("self edge ({a}, {b})")));
        }
        if !seen.insert((a.min(b), a.max(b))) {
            return Err(Error::schema("edges", format!("duplicate edge ({a}, {b})")));
        }
    }
    Ok(spec)
}

const MIN_EXTENT: f64 = 1e-6;
const COORD_LO: f64 = -0.5;
const COORD_HI: f64 = 1.5;

/// Axis-aligned box in center/extent form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    /// Builds a box, clamping the center into `[-0.5, 1.5]` and the extents
    /// into `(0, 1]`. Non-positive or non-finite extents are rejected.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if ![cx, cy, w, h].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("bounding box".into()));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "degenerate box extent {w} x {h}"
            )));
        }
        Ok(BoundingBox {
            cx: cx.clamp(COORD_LO, COORD_HI),
            cy: cy.clamp(COORD_LO, COORD_HI),
            w: w.clamp(MIN_EXTENT, 1.0),
            h: h.clamp(MIN_EXTENT, 1.0),
        })
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let (x0, x1) = (x0.min(x1), x0.max(x1));
        let (y0, y1) = (y0.min(y1), y0.max(y1));
        Self::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn diagonal(&self) -> f64 {
        self.w.hypot(self.h)
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.cx - self.w / 2.0, self.cx + self.w / 2.0)
    }

    pub fn y_range(&self) -> (f64, f64) {
        (self.cy - self.h / 2.0, self.cy + self.h / 2.0)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }
}

/// One frame's observation of one hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandDetection {
    pub bbox: BoundingBox,
    pub keypoints: Vec<[f64; 2]>,
    pub confidence: f64,
    pub frame_index: u64,
    /// Ground-truth hand id, only present in synthetic streams.
    pub source_id: Option<u32>,
}

impl HandDetection {
    pub fn new(
        bbox: BoundingBox,
        keypoints: Vec<[f64; 2]>,
        confidence: f64,
        frame_index: u64,
    ) -> Result<Self> {
        let det = HandDetection {
            bbox,
            keypoints,
            confidence,
            frame_index,
            source_id: None,
        };
        det.check()?;
        Ok(det)
    }

    pub fn with_source(mut self, source_id: Option<u32>) -> Self {
        self.source_id = source_id;
        self
    }

    fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::InvalidInput(format!(
                "confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        if self
            .keypoints
            .iter()
            .any(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return Err(Error::NonFinite("keypoints".into()));
        }
        Ok(())
    }

    /// Verifies the keypoint count against a skeleton.
    pub fn conforms_to(&self, skeleton: &SkeletonSpec) -> Result<()> {
        if self.keypoints.len() != skeleton.keypoint_count {
            return Err(Error::schema(
                "keypoints",
                format!(
                    "expected {} keypoints, got {}",
                    skeleton.keypoint_count,
                    self.keypoints.len()
                ),
            ));
        }
        Ok(())
    }

    /// Same geometry, ignoring confidence, frame and source metadata.
    pub fn same_geometry(&self, other: &HandDetection) -> bool {
        self.bbox == other.bbox && self.keypoints == other.keypoints
    }
}

/// Pixel-space detection as produced by an upstream detector.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDetection {
    /// `(x0, y0, x1, y1)` in pixels.
    pub corners: [f64; 4],
    pub keypoints: Vec<[f64; 2]>,
    pub confidence: f64,
    pub frame_index: u64,
    pub source_id: Option<u32>,
}

/// Divides every coordinate by the image size and stores the box in
/// center/extent form.
pub fn normalize_detection(raw: &RawDetection, image_size: (f64, f64)) -> Result<HandDetection> {
    let (width, height) = image_size;
    if !(width > 0.0 && height > 0.0) {
        return Err(Error::InvalidInput(format!(
            "image size {width} x {height} must be positive"
        )));
    }
    let [x0, y0, x1, y1] = raw.corners;
    let bbox = BoundingBox::from_corners(x0 / width, y0 / height, x1 / width, y1 / height)?;
    let keypoints = raw
        .keypoints
        .iter()
        .map(|&[u, v]| [u / width, v / height])
        .collect();
    Ok(HandDetection::new(bbox, keypoints, raw.confidence, raw.frame_index)?
        .with_source(raw.source_id))
}

/// All detections captured in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservation {
    pub frame_index: u64,
    pub timestamp_ms: i64,
    pub image_size: (u32, u32),
    pub detections: Vec<HandDetection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceState {
    Active,
    Terminated,
}

/// A persistent hand identity with a bounded history of matched detections.
#[derive(Debug, Clone, PartialEq)]
pub struct HandTrace {
    pub trace_id: u64,
    history: VecDeque<HandDetection>,
    capacity: usize,
    pub misses: u32,
    pub state: TraceState,
}

impl HandTrace {
    pub fn new(trace_id: u64, first: HandDetection, capacity: usize) -> Self {
        let capacity = capacity.max(1);
        let mut history = VecDeque::with_capacity(capacity.min(256));
        history.push_back(first);
        HandTrace {
            trace_id,
            history,
            capacity,
            misses: 0,
            state: TraceState::Active,
        }
    }

    /// Builds a trace from an already ordered list of detections.
    pub fn from_history(
        trace_id: u64,
        detections: impl IntoIterator<Item = HandDetection>,
        capacity: usize,
    ) -> Result<Self> {
        let mut it = detections.into_iter();
        let first = it
            .next()
            .ok_or_else(|| Error::InvalidInput("empty trace history".into()))?;
        let mut trace = HandTrace::new(trace_id, first, capacity);
        for det in it {
            trace.push(det)?;
        }
        Ok(trace)
    }

    pub fn history(&self) -> &VecDeque<HandDetection> {
        &self.history
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn latest(&self) -> Option<&HandDetection> {
        self.history.back()
    }

    pub fn is_active(&self) -> bool {
        self.state == TraceState::Active
    }

    /// Appends a matched detection, evicting the oldest entry when full.
    pub fn push(&mut self, det: HandDetection) -> Result<()> {
        if !self.is_active() {
            return Err(Error::Logic(format!(
                "trace {} is terminated",
                self.trace_id
            )));
        }
        if let Some(last) = self.history.back() {
            if det.frame_index <= last.frame_index {
                return Err(Error::StreamOrder {
                    last: last.frame_index,
                    got: det.frame_index,
                });
            }
        }
        if self.history.len() == self.capacity {
            self.history.pop_front();
        }
        self.history.push_back(det);
        self.misses = 0;
        Ok(())
    }

    pub(crate) fn clear_history(&mut self) {
        self.history.clear();
    }
}

/// A gesture class; id 0 is the negative class.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GestureLabel {
    pub class_id: usize,
    pub name: String,
}

impl GestureLabel {
    pub fn negative() -> Self {
        GestureLabel {
            class_id: 0,
            name: "negative".into(),
        }
    }

    pub fn is_negative(&self) -> bool {
        self.class_id == 0
    }
}

/// Dense class names indexed by class id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::schema("labels", "need at least two classes"));
        }
        if names[0] != "negative" {
            return Err(Error::schema("labels", "class 0 must be \"negative\""));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::schema("labels", format!("duplicate class name {n:?}")));
            }
        }
        Ok(LabelSet { names })
    }

    /// negative, left-wave, right-wave.
    pub fn waves() -> Self {
        LabelSet {
            names: vec!["negative".into(), "left-wave".into(), "right-wave".into()],
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn label(&self, class_id: usize) -> Option<GestureLabel> {
        self.names.get(class_id).map(|n| GestureLabel {
            class_id,
            name: n.clone(),
        })
    }

    pub fn by_name(&self, name: &str) -> Option<GestureLabel> {
        self.names
            .iter()
            .position(|n| n == name)
            .and_then(|id| self.label(id))
    }
}

impl Default for LabelSet {
    fn default() -> Self {
        Self::waves()
    }
}

impl TryFrom<Vec<String>> for LabelSet {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        LabelSet::new(names)
    }
}

impl From<LabelSet> for Vec<String> {
    fn from(set: LabelSet) -> Self {
        set.names
    }
}
