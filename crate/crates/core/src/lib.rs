//! Hand gesture recognition from hand detection streams.
//!
//! Detections are linked into per-hand traces by minimum-cost matching,
//! traces are turned into keypoint motion features, annotated recordings are
//! cut into labeled fixed-length clips, and a two-branch LSTM classifier
//! trained from scratch labels the clips and drives online gesture events.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod features;
pub mod metrics;
pub mod model;
pub mod net;
pub mod pipeline;
pub mod stream;
pub mod synth;
pub mod tracking;

pub use error::{Error, Result};
pub use features::{FeatureMode, MotionFeatureSequence};
pub use model::{BoundingBox, FrameObservation, HandDetection, HandTrace, LabelSet, SkeletonSpec};
pub use net::{NetConfig, TraceSeqModel};
pub use tracking::{TraceStore, TrackerConfig};
