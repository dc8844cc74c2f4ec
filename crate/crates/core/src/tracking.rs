//! Hand trace mapping: frame-to-frame association of detections with the
//! maintained traces, plus trace birth and death.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoundingBox, FrameObservation, HandDetection, HandTrace, TraceState};

/// Weights of the location, IoU and area terms of the match loss, and the
/// largest loss a detection/trace pair may have to be matched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchWeights {
    pub w_loc: f64,
    pub w_iou: f64,
    pub w_area: f64,
    pub gate: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        MatchWeights {
            w_loc: 0.5,
            w_iou: 0.3,
            w_area: 0.2,
            gate: 0.6,
        }
    }
}

impl MatchWeights {
    pub fn new(w_loc: f64, w_iou: f64, w_area: f64, gate: f64) -> Result<Self> {
        MatchWeights {
            w_loc,
            w_iou,
            w_area,
            gate,
        }
        .validate()
    }

    pub fn validate(self) -> Result<Self> {
        let ws = [self.w_loc, self.w_iou, self.w_area];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("match weights must be non-negative".into()));
        }
        if ws.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("match weights must not all be zero".into()));
        }
        if !(self.gate > 0.0) {
            return Err(Error::Config("match gate must be positive".into()));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub weights: MatchWeights,
    pub max_misses: u32,
    pub history_capacity: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            weights: MatchWeights::default(),
            max_misses: 5,
            history_capacity: 64,
        }
    }
}

impl TrackerConfig {
    pub fn validate(self) -> Result<Self> {
        self.weights.validate()?;
        if self.history_capacity == 0 {
            return Err(Error::Config("history capacity must be positive".into()));
        }
        Ok(self)
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> Result<f64> {
    if !(a.area() > 0.0 && b.area() > 0.0) {
        return Err(Error::InvalidInput("iou of a zero-area box".into()));
    }
    let (ax0, ax1) = a.x_range();
    let (ay0, ay1) = a.y_range();
    let (bx0, bx1) = b.x_range();
    let (by0, by1) = b.y_range();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return Ok(0.0);
    }
    let union = a.area() + b.area() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// The three unweighted match-loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchTerms {
    pub loc: f64,
    pub iou: f64,
    pub area: f64,
}

impl MatchTerms {
    pub fn weighted(&self, w: &MatchWeights) -> f64 {
        w.w_loc * self.loc + w.w_iou * self.iou + w.w_area * self.area
    }
}

/// Loss terms of `det` against a reference detection.
///
/// The location term is the mean keypoint distance scaled by the reference
/// box diagonal, the IoU term is `1 - IoU` and the area term is the relative
/// area difference.
pub fn match_terms(det: &HandDetection, reference: &HandDetection) -> Result<MatchTerms> {
    if det.keypoints.len() != reference.keypoints.len() {
        return Err(Error::schema(
            "keypoints",
            format!(
                "detection has {} keypoints, trace has {}",
                det.keypoints.len(),
                reference.keypoints.len()
            ),
        ));
    }
    let loc = if det.keypoints.is_empty() {
        0.0
    } else {
        let total: f64 = det
            .keypoints
            .iter()
            .zip(&reference.keypoints)
            .map(|(p, q)| (p[0] - q[0]).hypot(p[1] - q[1]))
            .sum();
        total / det.keypoints.len() as f64 / reference.bbox.diagonal()
    };
    let iou_term = if det.bbox == reference.bbox {
        0.0
    } else {
        1.0 - iou(&det.bbox, &reference.bbox)?
    };
    let (ad, at) = (det.bbox.area(), reference.bbox.area());
    let area = if ad == at { 0.0 } else { (ad - at).abs() / ad.max(at) };
    Ok(MatchTerms {
        loc,
        iou: iou_term,
        area,
    })
}

/// Weighted match loss of a detection against a trace's latest detection.
pub fn match_loss(det: &HandDetection, trace: &HandTrace, w: &MatchWeights) -> Result<f64> {
    let last = trace
        .latest()
        .ok_or_else(|| Error::Logic(format!("trace {} has no history", trace.trace_id)))?;
    Ok(match_terms(det, last)?.weighted(w))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assignment {
    /// `(detection_index, trace_id, loss)`, ascending by detection index.
    pub pairs: Vec<(usize, u64, f64)>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_traces: Vec<u64>,
}

impl Assignment {
    /// Sum of pair losses, accumulated in detection order.
    pub fn total_loss(&self) -> f64 {
        self.pairs.iter().fold(0.0, |acc, p| acc + p.2)
    }
}

/// Largest side length for which matching is solved exactly.
pub const EXACT_MATCH_LIMIT: usize = 8;

/// Matches rows (detections) to columns (traces) of a cost matrix.
///
/// Pairs above `gate` are inadmissible. The result has as many pairs as
/// possible, then the least total cost, then the lexicographically smallest
/// pair list. Entries are `(row, column, cost)` ascending by row.
pub fn solve_assignment(costs: &[Vec<f64>], gate: f64) -> Vec<(usize, usize, f64)> {
    let rows = costs.len();
    let cols = costs.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    if rows.max(cols) <= EXACT_MATCH_LIMIT {
        exact_assignment(costs, cols, gate)
    } else {
        greedy_assignment(costs, cols, gate)
    }
}

struct Search<'a> {
    costs: &'a [Vec<f64>],
    gate: f64,
    used: Vec<bool>,
    current: Vec<(usize, usize)>,
    best: Vec<(usize, usize)>,
    best_total: f64,
}

impl Search<'_> {
    fn total(&self, pairs: &[(usize, usize)]) -> f64 {
        pairs.iter().fold(0.0, |acc, &(r, c)| acc + self.costs[r][c])
    }

    fn consider(&mut self) {
        let better = match self.current.len().cmp(&self.best.len()) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => {
                let total = self.total(&self.current);
                total < self.best_total || (total == self.best_total && self.current < self.best)
            }
        };
        if better {
            self.best = self.current.clone();
            self.best_total = self.total(&self.best);
        }
    }

    fn descend(&mut self, row: usize) {
        if row == self.costs.len() {
            self.consider();
            return;
        }
        for col in 0..self.used.len() {
            let c = self.costs[row][col];
            if self.used[col] || !(c <= self.gate) {
                continue;
            }
            self.used[col] = true;
            self.current.push((row, col));
            self.descend(row + 1);
            self.current.pop();
            self.used[col] = false;
        }
        self.descend(row + 1);
    }
}

fn exact_assignment(costs: &[Vec<f64>], cols: usize, gate: f64) -> Vec<(usize, usize, f64)> {
    let mut search = Search {
        costs,
        gate,
        used: vec![false; cols],
        current: Vec::with_capacity(costs.len()),
        best: Vec::new(),
        best_total: 0.0,
    };
    search.descend(0);
    search
        .best
        .into_iter()
        .map(|(r, c)| (r, c, costs[r][c]))
        .collect()
}

fn greedy_assignment(costs: &[Vec<f64>], cols: usize, gate: f64) -> Vec<(usize, usize, f64)> {
    let mut candidates: Vec<(f64, usize, usize)> = costs
        .iter()
        .enumerate()
        .flat_map(|(r, row)| row.iter().enumerate().map(move |(c, &v)| (v, r, c)))
        .filter(|(v, _, _)| *v <= gate)
        .collect();
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut row_used = vec![false; costs.len()];
    let mut col_used = vec![false; cols];
    let mut out = Vec::new();
    for (v, r, c) in candidates {
        if !row_used[r] && !col_used[c] {
            row_used[r] = true;
            col_used[c] = true;
            out.push((r, c, v));
        }
    }
    out.sort_by_key(|p| p.0);
    out
}

/// Ids assigned to traces by one call to [`TraceStore::step`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TraceEvents {
    pub created: Vec<u64>,
    pub updated: Vec<u64>,
    pub terminated: Vec<u64>,
    /// Trace id for each detection of the frame, in detection order.
    pub detection_traces: Vec<u64>,
}

/// The set of live traces and the id counter.
#[derive(Debug, Clone)]
pub struct TraceStore {
    active: BTreeMap<u64, HandTrace>,
    next_id: u64,
    last_frame: Option<u64>,
    config: TrackerConfig,
}

impl TraceStore {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        Ok(TraceStore {
            active: BTreeMap::new(),
            next_id: 0,
            last_frame: None,
            config: config.validate()?,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn last_frame(&self) -> Option<u64> {
        self.last_frame
    }

    /// Active traces in ascending id order.
    pub fn active(&self) -> impl Iterator<Item = &HandTrace> {
        self.active.values()
    }

    pub fn get(&self, id: u64) -> Option<&HandTrace> {
        self.active.get(&id)
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    /// Inserts a trace directly, bypassing association.
    pub fn insert(&mut self, trace: HandTrace) -> Result<()> {
        if trace.is_empty() {
            return Err(Error::Logic("cannot insert a trace without history".into()));
        }
        if self.active.contains_key(&trace.trace_id) || trace.trace_id < self.next_id {
            return Err(Error::Logic(format!("trace id {} already issued", trace.trace_id)));
        }
        self.next_id = trace.trace_id + 1;
        self.active.insert(trace.trace_id, trace);
        Ok(())
    }

    /// Finds the best admissible matching of one frame's detections to the
    /// active traces.
    pub fn associate(&self, dets: &[HandDetection]) -> Result<Assignment> {
        let ids: Vec<u64> = self.active.keys().copied().collect();
        let w = &self.config.weights;
        let costs = dets
            .iter()
            .map(|d| {
                self.active
                    .values()
                    .map(|t| match_loss(d, t, w))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let solved = solve_assignment(&costs, w.gate);
        let mut det_used = vec![false; dets.len()];
        let mut trace_used = vec![false; ids.len()];
        let pairs = solved
            .into_iter()
            .map(|(r, c, loss)| {
                det_used[r] = true;
                trace_used[c] = true;
                (r, ids[c], loss)
            })
            .collect();
        Ok(Assignment {
            pairs,
            unmatched_detections: (0..dets.len()).filter(|&i| !det_used[i]).collect(),
            unmatched_traces: ids
                .iter()
                .zip(&trace_used)
                .filter(|(_, used)| !**used)
                .map(|(id, _)| *id)
                .collect(),
        })
    }

    /// Advances the store by one frame.
    pub fn step(&mut self, frame: &FrameObservation) -> Result<TraceEvents> {
        if let Some(last) = self.last_frame {
            if frame.frame_index <= last {
                return Err(Error::StreamOrder {
                    last,
                    got: frame.frame_index,
                });
            }
        }
        if let Some(bad) = frame
            .detections
            .iter()
            .find(|d| d.frame_index != frame.frame_index)
        {
            return Err(Error::InvalidInput(format!(
                "detection tagged frame {} inside frame {}",
                bad.frame_index, frame.frame_index
            )));
        }
        let assignment = self.associate(&frame.detections)?;
        self.last_frame = Some(frame.frame_index);

        let mut events = TraceEvents {
            detection_traces: vec![0; frame.detections.len()],
            ..Default::default()
        };
        for &(di, id, _) in &assignment.pairs {
            let trace = self.active.get_mut(&id).expect("paired trace is active");
            trace.push(frame.detections[di].clone())?;
            events.updated.push(id);
            events.detection_traces[di] = id;
        }
        for &id in &assignment.unmatched_traces {
            let trace = self.active.get_mut(&id).expect("unmatched trace is active");
            trace.misses += 1;
            if trace.misses > self.config.max_misses {
                trace.state = TraceState::Terminated;
                events.terminated.push(id);
            }
        }
        for id in &events.terminated {
            if let Some(mut t) = self.active.remove(id) {
                t.clear_history();
            }
        }
        for &di in &assignment.unmatched_detections {
            let id = self.next_id;
            self.next_id += 1;
            self.active.insert(
                id,
                HandTrace::new(id, frame.detections[di].clone(), self.config.history_capacity),
            );
            events.created.push(id);
            events.detection_traces[di] = id;
        }
        events.updated.sort_unstable();
        Ok(events)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(cx: f64, cy: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(cx, cy, w, h).unwrap()
    }

    fn det(b: BoundingBox, kpts: Vec<[f64; 2]>, frame: u64) -> HandDetection {
        HandDetection::new(b, kpts, 1.0, frame).unwrap()
    }

    fn frame(index: u64, detections: Vec<HandDetection>) -> FrameObservation {
        FrameObservation {
            frame_index: index,
            timestamp_ms: index as i64 * 33,
            image_size: (320, 240),
            detections,
        }
    }

    #[test]
    fn iou_cases() {
        let a = bx(0.25, 0.25, 0.5, 0.5);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &bx(0.9, 0.9, 0.1, 0.1)).unwrap(), 0.0);
        let b = bx(0.5, 0.25, 0.5, 0.5);
        // intersection 0.25 x 0.5, union 0.25 + 0.25 - 0.125
        assert!((iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&a, &b).unwrap(), iou(&b, &a).unwrap());
        let degenerate = BoundingBox { cx: 0.5, cy: 0.5, w: 0.0, h: 0.1 };
        assert!(iou(&a, &degenerate).is_err());
    }

    #[test]
    fn match_loss_cases() {
        let kp = vec![[0.3, 0.3], [0.35, 0.2]];
        let a = det(bx(0.25, 0.25, 0.5, 0.5), kp.clone(), 0);
        let trace = HandTrace::new(0, a.clone(), 8);
        let w = MatchWeights::default();
        assert_eq!(match_loss(&a, &trace, &w).unwrap(), 0.0);

        let far = det(bx(0.9, 0.9, 0.1, 0.1), kp.clone(), 1);
        let iou_only = MatchWeights::new(0.0, 1.0, 0.0, 0.6).unwrap();
        assert_eq!(match_loss(&far, &trace, &iou_only).unwrap(), 1.0);

        let shifted = det(bx(0.5, 0.25, 0.5, 0.5), kp, 1);
        let all = MatchWeights::new(1.0, 1.0, 1.0, 0.6).unwrap();
        let loss = match_loss(&shifted, &trace, &all).unwrap();
        assert!((loss - 2.0 / 3.0).abs() < 1e-15, "{loss}");
    }

    #[test]
    fn match_loss_needs_history_and_matching_skeleton() {
        let a = det(bx(0.5, 0.5, 0.2, 0.2), vec![[0.5, 0.5]], 0);
        let mut t = HandTrace::new(0, a.clone(), 4);
        t.clear_history();
        assert!(matches!(
            match_loss(&a, &t, &MatchWeights::default()),
            Err(Error::Logic(_))
        ));
        let t = HandTrace::new(1, a, 4);
        let other = det(bx(0.5, 0.5, 0.2, 0.2), vec![], 1);
        assert!(match_loss(&other, &t, &MatchWeights::default()).is_err());
    }

    #[test]
    fn solver_hand_built_matrix() {
        let costs = vec![vec![0.1, 0.4], vec![0.2, 0.15]];
        let pairs = solve_assignment(&costs, 0.5);
        assert_eq!(pairs, vec![(0, 0, 0.1), (1, 1, 0.15)]);
        let total: f64 = pairs.iter().map(|p| p.2).sum();
        assert!((total - 0.25).abs() < 1e-15);
    }

    #[test]
    fn solver_respects_gate_and_ties() {
        let costs = vec![vec![0.7, 0.9]];
        assert!(solve_assignment(&costs, 0.6).is_empty());
        let tie = vec![vec![0.2, 0.2], vec![0.2, 0.2]];
        assert_eq!(solve_assignment(&tie, 0.6), vec![(0, 0, 0.2), (1, 1, 0.2)]);
    }

    #[test]
    fn greedy_path_above_exact_limit() {
        let n = EXACT_MATCH_LIMIT + 2;
        let costs: Vec<Vec<f64>> = (0..n)
            .map(|r| (0..n).map(|c| if r == c { 0.01 } else { 0.5 }).collect())
            .collect();
        let pairs = solve_assignment(&costs, 0.6);
        assert_eq!(pairs.len(), n);
        assert!(pairs.iter().all(|&(r, c, _)| r == c));
    }

    #[test]
    fn associate_empty_sides() {
        let mut store = TraceStore::new(TrackerConfig::default()).unwrap();
        let d = det(bx(0.3, 0.3, 0.1, 0.1), vec![[0.3, 0.3]], 0);
        let e = det(bx(0.7, 0.7, 0.1, 0.1), vec![[0.7, 0.7]], 0);
        store.step(&frame(0, vec![d, e])).unwrap();
        let a = store.associate(&[]).unwrap();
        assert!(a.pairs.is_empty());
        assert_eq!(a.unmatched_traces, vec![0, 1]);
    }

    #[test]
    fn associate_zero_cost_pair() {
        let mut store = TraceStore::new(TrackerConfig::default()).unwrap();
        let near = det(bx(0.3, 0.3, 0.1, 0.1), vec![[0.3, 0.3]], 0);
        let far = det(bx(0.8, 0.8, 0.1, 0.1), vec![[0.8, 0.8]], 0);
        store.step(&frame(0, vec![near.clone(), far])).unwrap();
        let mut again = near;
        again.frame_index = 1;
        let a = store.associate(&[again]).unwrap();
        assert_eq!(a.pairs, vec![(0, 0, 0.0)]);
        assert_eq!(a.unmatched_traces, vec![1]);
    }

    #[test]
    fn cold_start_and_timeout() {
        let cfg = TrackerConfig {
            max_misses: 2,
            ..Default::default()
        };
        let mut store = TraceStore::new(cfg).unwrap();
        let d0 = det(bx(0.3, 0.3, 0.1, 0.1), vec![[0.3, 0.3]], 0);
        let d1 = det(bx(0.7, 0.7, 0.1, 0.1), vec![[0.7, 0.7]], 0);
        let ev = store.step(&frame(0, vec![d0, d1])).unwrap();
        assert_eq!(ev.created, vec![0, 1]);
        assert!(store.step(&frame(1, vec![])).unwrap().terminated.is_empty());
        assert!(store.step(&frame(2, vec![])).unwrap().terminated.is_empty());
        assert_eq!(store.step(&frame(3, vec![])).unwrap().terminated, vec![0, 1]);
        assert!(store.is_empty());
    }

    #[test]
    fn rejects_non_monotonic_frames() {
        let mut store = TraceStore::new(TrackerConfig::default()).unwrap();
        store.step(&frame(5, vec![])).unwrap();
        assert!(matches!(
            store.step(&frame(5, vec![])),
            Err(Error::StreamOrder { last: 5, got: 5 })
        ));
    }

    #[test]
    fn ids_are_never_reused() {
        let cfg = TrackerConfig {
            max_misses: 0,
            ..Default::default()
        };
        let mut store = TraceStore::new(cfg).unwrap();
        let mut seen = std::collections::HashSet::new();
        for f in 0..10u64 {
            // alternate between two far-apart spots so nothing matches
            let p = if f % 2 == 0 { 0.2 } else { 0.8 };
            let d = det(bx(p, p, 0.05, 0.05), vec![[p, p]], f);
            let ev = store.step(&frame(f, vec![d])).unwrap();
            for id in ev.created {
                assert!(seen.insert(id));
            }
        }
        assert_eq!(seen.len(), 10);
    }
}
