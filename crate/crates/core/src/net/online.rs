//! Streaming recognition: classify the trailing window of every live trace
//! and turn per-frame probabilities into discrete gesture events.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::model::{argmax, TraceSeqModel};
use crate::error::{Error, Result};
use crate::features::{features_for_mode, FeatureMode};
use crate::model::SkeletonSpec;
use crate::tracking::TraceStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TriggerConfig {
    /// Probability the winning gesture class must exceed.
    pub prob_threshold: f64,
    /// Consecutive frames the same class must win.
    pub consecutive: u32,
    /// Frames after an event during which the trace stays silent.
    pub refractory: u32,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        TriggerConfig {
            prob_threshold: 0.8,
            consecutive: 3,
            refractory: 15,
        }
    }
}

impl TriggerConfig {
    pub fn validate(self) -> Result<Self> {
        if !(self.prob_threshold > 0.0 && self.prob_threshold < 1.0) {
            return Err(Error::Config("trigger threshold must lie in (0, 1)".into()));
        }
        if self.consecutive == 0 {
            return Err(Error::Config("trigger needs at least one frame".into()));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GestureEvent {
    pub trace_id: u64,
    pub class_id: usize,
    pub frame: u64,
    pub probability: f64,
}

/// Debounce state for one trace.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventTrigger {
    class: usize,
    count: u32,
    last_frame: Option<u64>,
    quiet_until: Option<u64>,
}

impl EventTrigger {
    /// Feeds one frame's class probabilities; returns `(class, probability)`
    /// when an event fires.
    pub fn observe(&mut self, frame: u64, probs: &[f64], cfg: &TriggerConfig) -> Option<(usize, f64)> {
        if self.last_frame.map_or(false, |f| frame != f + 1) {
            self.count = 0;
        }
        self.last_frame = Some(frame);
        let class = argmax(probs);
        let p = probs[class];
        if class == 0 || !(p > cfg.prob_threshold) {
            self.count = 0;
            return None;
        }
        if class == self.class && self.count > 0 {
            self.count += 1;
        } else {
            self.class = class;
            self.count = 1;
        }
        if self.quiet_until.map_or(false, |q| frame <= q) {
            return None;
        }
        if self.count >= cfg.consecutive {
            self.count = 0;
            self.quiet_until = Some(frame + cfg.refractory as u64);
            return Some((class, p));
        }
        None
    }
}

/// Runs a trained model over the live traces of a [`TraceStore`].
#[derive(Debug)]
pub struct GestureRecognizer<'m> {
    model: &'m TraceSeqModel,
    skeleton: SkeletonSpec,
    mode: FeatureMode,
    t_obj: usize,
    trigger: TriggerConfig,
    states: BTreeMap<u64, EventTrigger>,
}

impl<'m> GestureRecognizer<'m> {
    pub fn new(
        model: &'m TraceSeqModel,
        skeleton: SkeletonSpec,
        mode: FeatureMode,
        t_obj: usize,
        trigger: TriggerConfig,
    ) -> Result<Self> {
        if t_obj == 0 {
            return Err(Error::Config("t_obj must be positive".into()));
        }
        Ok(GestureRecognizer {
            model,
            skeleton,
            mode,
            t_obj,
            trigger: trigger.validate()?,
            states: BTreeMap::new(),
        })
    }

    /// Uses the feature layout recorded in the model file.
    pub fn from_model(model: &'m TraceSeqModel, trigger: TriggerConfig) -> Result<Self> {
        let meta = model
            .meta()
            .ok_or_else(|| Error::schema("model", "weight file has no feature metadata"))?
            .clone();
        Self::new(model, meta.skeleton, meta.feature_mode, meta.t_obj, trigger)
    }

    /// Class probabilities for every trace updated at `frame` whose last
    /// `t_obj + 1` detections are consecutive.
    pub fn classify(&self, store: &TraceStore, frame: u64) -> Result<Vec<(u64, Vec<f64>)>> {
        let mut out = Vec::new();
        for trace in store.active() {
            let Some(last) = trace.latest() else { continue };
            if trace.misses > 0 || last.frame_index != frame || trace.len() < self.t_obj + 1 {
                continue;
            }
            let dets: Vec<_> = trace
                .history()
                .iter()
                .skip(trace.len() - self.t_obj - 1)
                .cloned()
                .collect();
            let seq = match features_for_mode(&dets, &self.skeleton, self.mode) {
                Ok(s) => s,
                Err(Error::WindowGap { .. }) => continue,
                Err(e) => return Err(e),
            };
            out.push((trace.trace_id, self.model.predict(&seq)?));
        }
        Ok(out)
    }

    /// Processes the store state after stepping `frame`.
    pub fn observe(&mut self, store: &TraceStore, frame: u64) -> Result<Vec<GestureEvent>> {
        let scored = self.classify(store, frame)?;
        self.states.retain(|id, _| store.get(*id).is_some());
        let mut events = Vec::new();
        for (trace_id, probs) in scored {
            let state = self.states.entry(trace_id).or_default();
            if let Some((class_id, probability)) = state.observe(frame, &probs, &self.trigger) {
                events.push(GestureEvent {
                    trace_id,
                    class_id,
                    frame,
                    probability,
                });
            }
        }
        Ok(events)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_confident_frames_fire_once() {
        let cfg = TriggerConfig {
            prob_threshold: 0.8,
            consecutive: 3,
            refractory: 0,
        };
        let mut t = EventTrigger::default();
        let p = [0.05, 0.9, 0.05];
        assert_eq!(t.observe(10, &p, &cfg), None);
        assert_eq!(t.observe(11, &p, &cfg), None);
        assert_eq!(t.observe(12, &p, &cfg), Some((1, 0.9)));
        assert_eq!(t.observe(13, &p, &cfg), None);
    }

    #[test]
    fn negative_class_and_gaps_reset() {
        let cfg = TriggerConfig {
            consecutive: 2,
            ..Default::default()
        };
        let mut t = EventTrigger::default();
        let pos = [0.05, 0.9, 0.05];
        let neg = [0.95, 0.03, 0.02];
        assert_eq!(t.observe(0, &pos, &cfg), None);
        assert_eq!(t.observe(1, &neg, &cfg), None);
        assert_eq!(t.observe(2, &pos, &cfg), None);
        assert_eq!(t.observe(4, &pos, &cfg), None, "frame gap resets the run");
        assert!(t.observe(5, &pos, &cfg).is_some());
    }

    #[test]
    fn class_switch_restarts_count() {
        let cfg = TriggerConfig {
            consecutive: 2,
            ..Default::default()
        };
        let mut t = EventTrigger::default();
        assert_eq!(t.observe(0, &[0.0, 0.9, 0.1], &cfg), None);
        assert_eq!(t.observe(1, &[0.0, 0.1, 0.9], &cfg), None);
        assert_eq!(t.observe(2, &[0.0, 0.1, 0.9], &cfg), Some((2, 0.9)));
    }

    #[test]
    fn refractory_suppresses() {
        let cfg = TriggerConfig {
            consecutive: 1,
            refractory: 3,
            prob_threshold: 0.5,
        };
        let mut t = EventTrigger::default();
        let p = [0.1, 0.9];
        let fired: Vec<u64> = (0..10).filter(|&f| t.observe(f, &p, &cfg).is_some()).collect();
        assert_eq!(fired, vec![0, 4, 8]);
    }

    #[test]
    fn bad_trigger_config() {
        assert!(TriggerConfig { prob_threshold: 1.0, ..Default::default() }.validate().is_err());
        assert!(TriggerConfig { consecutive: 0, ..Default::default() }.validate().is_err());
    }
}
