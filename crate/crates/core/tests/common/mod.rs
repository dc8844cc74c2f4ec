#![allow(dead_code)]

use lehgr::model::{BoundingBox, HandDetection, HandTrace, SkeletonSpec};
use lehgr::synth::hand_at;
use lehgr::tracking::{match_loss, MatchWeights, TraceStore, TrackerConfig};
use rand::Rng;

/// A hand near `center` with its scale and keypoints perturbed.
pub fn random_hand<R: Rng>(rng: &mut R, center: [f64; 2], frame: u64) -> HandDetection {
    let sk = SkeletonSpec::default_hand();
    let palm = [
        center[0] + rng.gen_range(-0.08..0.08),
        center[1] + rng.gen_range(-0.08..0.08),
    ];
    let mut det = hand_at(palm, rng.gen_range(0.08..0.16), &sk, frame);
    for p in &mut det.keypoints {
        p[0] += rng.gen_range(-0.01..0.01);
        p[1] += rng.gen_range(-0.01..0.01);
    }
    let [cx, cy, w, h] = det.bbox.as_array();
    det.bbox = BoundingBox::new(
        cx + rng.gen_range(-0.01..0.01),
        cy + rng.gen_range(-0.01..0.01),
        w * rng.gen_range(0.9..1.1),
        h * rng.gen_range(0.9..1.1),
    )
    .unwrap();
    det
}

/// A store holding `n_traces` traces and `n_dets` detections of the next
/// frame, all crowded into a small region so the gate binds sometimes.
pub fn random_matching_problem<R: Rng>(rng: &mut R, n_dets: usize, n_traces: usize) -> (TraceStore, Vec<HandDetection>) {
    let mut store = TraceStore::new(TrackerConfig::default()).unwrap();
    let centers: Vec<[f64; 2]> = (0..n_traces.max(n_dets))
        .map(|_| [rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7)])
        .collect();
    for (id, c) in centers.iter().take(n_traces).enumerate() {
        let first = random_hand(rng, *c, 0);
        store.insert(HandTrace::new(id as u64, first, 8)).unwrap();
    }
    let dets = centers.iter().take(n_dets).map(|c| random_hand(rng, *c, 1)).collect();
    (store, dets)
}

/// Exhaustive matching: every injective partial map from detections to
/// traces whose pairs pass the gate. Keeps the largest matchings, then the
/// least total summed in detection order.
pub fn brute_force_matching(store: &TraceStore, dets: &[HandDetection], w: &MatchWeights) -> (usize, f64) {
    let traces: Vec<&HandTrace> = store.active().collect();
    let costs: Vec<Vec<f64>> = dets
        .iter()
        .map(|d| traces.iter().map(|t| match_loss(d, t, w).unwrap()).collect())
        .collect();
    let mut best = (0usize, 0.0f64);
    let mut choice = vec![None; dets.len()];
    enumerate(&costs, w.gate, 0, &mut choice, &mut best);
    best
}

fn enumerate(costs: &[Vec<f64>], gate: f64, row: usize, choice: &mut Vec<Option<usize>>, best: &mut (usize, f64)) {
    if row == costs.len() {
        let mut n = 0;
        let mut total = 0.0;
        for (r, c) in choice.iter().enumerate() {
            if let Some(c) = c {
                n += 1;
                total += costs[r][*c];
            }
        }
        if n > best.0 || (n == best.0 && total < best.1) {
            *best = (n, total);
        }
        return;
    }
    choice[row] = None;
    enumerate(costs, gate, row + 1, choice, best);
    let cols = costs[row].len();
    for c in 0..cols {
        if costs[row][c] > gate || choice[..row].contains(&Some(c)) {
            continue;
        }
        choice[row] = Some(c);
        enumerate(costs, gate, row + 1, choice, best);
    }
    choice[row] = None;
}
