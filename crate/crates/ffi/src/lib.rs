//! C ABI over the `lehgr` library.
//!
//! Objects cross the boundary as opaque handles created by `*_new` or
//! `*_load` and released by the matching `*_free`. Every fallible call
//! returns an [`LehgrStatus`]; on failure a message describing the error can
//! be fetched with [`lehgr_last_error`] from the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::mem::ManuallyDrop;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use lehgr::features::{FeatureMode, MotionFeatureSequence};
use lehgr::model::{BoundingBox, FrameObservation, HandDetection};
use lehgr::net::{GestureRecognizer, TraceSeqModel, TriggerConfig};
use lehgr::tracking::{TraceStore, TrackerConfig};
use lehgr::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LehgrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Malformed data, including files that fail to parse.
    DataError = 3,
    Io = 4,
    /// An output buffer is too small.
    BufferTooSmall = 5,
    /// A Rust panic was caught at the boundary.
    Internal = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: LehgrStatus, msg: impl Into<String>) -> LehgrStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> LehgrStatus {
    let status = match &e {
        Error::Io { .. } => LehgrStatus::Io,
        Error::Config(_) | Error::InvalidInput(_) => LehgrStatus::InvalidArgument,
        _ => LehgrStatus::DataError,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> LehgrStatus) -> LehgrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(LehgrStatus::Internal, "panic inside lehgr"),
    }
}

/// Message of the last failed call on this thread, or NULL if none.
///
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lehgr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lehgr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// One hand detection in normalized image coordinates.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LehgrDetection {
    /// Box center and extent: `cx, cy, w, h`.
    pub bbox: [f64; 4],
    /// `2 * keypoint_count` values laid out `u0, v0, u1, v1, ...`.
    pub keypoints: *const f64,
    pub keypoint_count: usize,
    pub confidence: f64,
}

/// Tracker tuning; pass NULL to `lehgr_tracker_new` for the defaults.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LehgrTrackerOptions {
    pub w_loc: f64,
    pub w_iou: f64,
    pub w_area: f64,
    pub gate: f64,
    pub max_misses: u32,
    pub history_capacity: usize,
}

/// A gesture event raised by a recognizer.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LehgrEvent {
    pub trace_id: u64,
    pub class_id: usize,
    pub frame: u64,
    pub probability: f64,
}

/// Opaque multi-hand tracker.
pub struct LehgrTracker {
    store: TraceStore,
}

/// Opaque trained classifier.
pub struct LehgrModel {
    model: TraceSeqModel,
}

/// Opaque streaming recognizer: a tracker plus a model.
pub struct LehgrRecognizer {
    recognizer: ManuallyDrop<GestureRecognizer<'static>>,
    store: TraceStore,
    model: *mut TraceSeqModel,
}

impl Drop for LehgrRecognizer {
    fn drop(&mut self) {
        // SAFETY: `recognizer` is the only borrower of `model` and is gone
        // before the box is reclaimed; `model` came from `Box::into_raw`.
        unsafe {
            ManuallyDrop::drop(&mut self.recognizer);
            drop(Box::from_raw(self.model));
        }
    }
}

fn tracker_config(opts: Option<&LehgrTrackerOptions>) -> TrackerConfig {
    let mut cfg = TrackerConfig::default();
    if let Some(o) = opts {
        cfg.weights.w_loc = o.w_loc;
        cfg.weights.w_iou = o.w_iou;
        cfg.weights.w_area = o.w_area;
        cfg.weights.gate = o.gate;
        cfg.max_misses = o.max_misses;
        cfg.history_capacity = o.history_capacity;
    }
    cfg
}

/// Fills `out` with the library defaults.
///
/// # Safety
/// `out` must be NULL or point to writable memory for one options struct.
#[no_mangle]
pub unsafe extern "C" fn lehgr_tracker_options_default(out: *mut LehgrTrackerOptions) -> LehgrStatus {
    if out.is_null() {
        return fail(LehgrStatus::NullPointer, "out is NULL");
    }
    let c = TrackerConfig::default();
    *out = LehgrTrackerOptions {
        w_loc: c.weights.w_loc,
        w_iou: c.weights.w_iou,
        w_area: c.weights.w_area,
        gate: c.weights.gate,
        max_misses: c.max_misses,
        history_capacity: c.history_capacity,
    };
    LehgrStatus::Ok
}

/// Creates a tracker. `opts` may be NULL.
///
/// # Safety
/// `opts` must be NULL or point to a valid options struct; `out` must point
/// to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn lehgr_tracker_new(
    opts: *const LehgrTrackerOptions,
    out: *mut *mut LehgrTracker,
) -> LehgrStatus {
    guard(|| {
        if out.is_null() {
            return fail(LehgrStatus::NullPointer, "out is NULL");
        }
        match TraceStore::new(tracker_config(opts.as_ref())) {
            Ok(store) => {
                *out = Box::into_raw(Box::new(LehgrTracker { store }));
                LehgrStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `tracker` must be NULL or a handle from `lehgr_tracker_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lehgr_tracker_free(tracker: *mut LehgrTracker) {
    if !tracker.is_null() {
        drop(Box::from_raw(tracker));
    }
}

unsafe fn read_frame(frame: u64, dets: *const LehgrDetection, n: usize) -> Result<FrameObservation, LehgrStatus> {
    if n > 0 && dets.is_null() {
        return Err(fail(LehgrStatus::NullPointer, "detections is NULL"));
    }
    let raw = if n == 0 { &[][..] } else { std::slice::from_raw_parts(dets, n) };
    let mut detections = Vec::with_capacity(n);
    for (i, d) in raw.iter().enumerate() {
        if d.keypoint_count > 0 && d.keypoints.is_null() {
            return Err(fail(LehgrStatus::NullPointer, format!("detection {i} has NULL keypoints")));
        }
        let flat = if d.keypoint_count == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(d.keypoints, 2 * d.keypoint_count)
        };
        let kpts = flat.chunks_exact(2).map(|p| [p[0], p[1]]).collect();
        let [cx, cy, w, h] = d.bbox;
        let det = BoundingBox::new(cx, cy, w, h)
            .and_then(|b| HandDetection::new(b, kpts, d.confidence, frame))
            .map_err(from_error)?;
        detections.push(det);
    }
    Ok(FrameObservation {
        frame_index: frame,
        timestamp_ms: 0,
        image_size: (1, 1),
        detections,
    })
}

/// Advances the tracker by one frame and writes the trace id assigned to
/// each detection into `out_ids` (length `n`, may be NULL when `n` is 0).
///
/// # Safety
/// `tracker` must be a live handle; `dets` and `out_ids` must point to `n`
/// elements; each detection's `keypoints` must hold `2 * keypoint_count`
/// values.
#[no_mangle]
pub unsafe extern "C" fn lehgr_tracker_step(
    tracker: *mut LehgrTracker,
    frame: u64,
    dets: *const LehgrDetection,
    n: usize,
    out_ids: *mut u64,
) -> LehgrStatus {
    guard(|| {
        let Some(t) = tracker.as_mut() else {
            return fail(LehgrStatus::NullPointer, "tracker is NULL");
        };
        if n > 0 && out_ids.is_null() {
            return fail(LehgrStatus::NullPointer, "out_ids is NULL");
        }
        let obs = match read_frame(frame, dets, n) {
            Ok(o) => o,
            Err(s) => return s,
        };
        match t.store.step(&obs) {
            Ok(ev) => {
                if n > 0 {
                    std::slice::from_raw_parts_mut(out_ids, n).copy_from_slice(&ev.detection_traces);
                }
                LehgrStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Number of live traces, or 0 for a NULL handle.
///
/// # Safety
/// `tracker` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lehgr_tracker_active_count(tracker: *const LehgrTracker) -> usize {
    tracker.as_ref().map_or(0, |t| t.store.len())
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, LehgrStatus> {
    if path.is_null() {
        return Err(fail(LehgrStatus::NullPointer, "path is NULL"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map(Path::new)
        .map_err(|_| fail(LehgrStatus::InvalidArgument, "path is not UTF-8"))
}

/// Loads a weight file written by `lehgr train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must point to writable
/// storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn lehgr_model_load(path: *const c_char, out: *mut *mut LehgrModel) -> LehgrStatus {
    guard(|| {
        if out.is_null() {
            return fail(LehgrStatus::NullPointer, "out is NULL");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match TraceSeqModel::load(path) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(LehgrModel { model }));
                LehgrStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `model` must be NULL or a handle from `lehgr_model_load` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lehgr_model_free(model: *mut LehgrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of output classes, or 0 for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lehgr_model_class_count(model: *const LehgrModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config().classes)
}

/// Values per input frame, or 0 for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lehgr_model_frame_width(model: *const LehgrModel) -> usize {
    model.as_ref().map_or(0, |m| {
        let c = m.model.config();
        c.velocity_width + c.shape_width
    })
}

/// Class probabilities of a row-major `frames x width` feature sequence.
///
/// Writes `class_count` values into `out_probs`; if `out_len` is smaller,
/// returns `BUFFER_TOO_SMALL` without writing.
///
/// # Safety
/// `model` must be a live handle; `features` must hold `frames * width`
/// values and `out_probs` `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn lehgr_model_predict(
    model: *const LehgrModel,
    features: *const f64,
    frames: usize,
    width: usize,
    out_probs: *mut f64,
    out_len: usize,
) -> LehgrStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(LehgrStatus::NullPointer, "model is NULL");
        };
        if features.is_null() || out_probs.is_null() {
            return fail(LehgrStatus::NullPointer, "features or out_probs is NULL");
        }
        let cfg = m.model.config();
        if width != cfg.velocity_width + cfg.shape_width {
            return fail(
                LehgrStatus::InvalidArgument,
                format!("frame width {width}, model expects {}", cfg.velocity_width + cfg.shape_width),
            );
        }
        if out_len < cfg.classes {
            return fail(LehgrStatus::BufferTooSmall, format!("need {} outputs", cfg.classes));
        }
        let data = std::slice::from_raw_parts(features, frames * width).to_vec();
        let mode = m.model.meta().map_or(FeatureMode::Motion, |meta| meta.feature_mode);
        let seq = MotionFeatureSequence::new(mode, cfg.velocity_width, cfg.shape_width, (0..frames as u64).collect(), data);
        match seq.and_then(|s| m.model.predict(&s)) {
            Ok(p) => {
                std::slice::from_raw_parts_mut(out_probs, cfg.classes).copy_from_slice(&p);
                LehgrStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Creates a streaming recognizer that owns a copy of `model`, default
/// tracker settings and the given trigger settings.
///
/// # Safety
/// `model` must be a live handle; `out` must point to writable storage for
/// one handle.
#[no_mangle]
pub unsafe extern "C" fn lehgr_recognizer_new(
    model: *const LehgrModel,
    prob_threshold: f64,
    consecutive: u32,
    refractory: u32,
    out: *mut *mut LehgrRecognizer,
) -> LehgrStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(LehgrStatus::NullPointer, "model is NULL");
        };
        if out.is_null() {
            return fail(LehgrStatus::NullPointer, "out is NULL");
        }
        let trigger = TriggerConfig {
            prob_threshold,
            consecutive,
            refractory,
        };
        let owned: *mut TraceSeqModel = Box::into_raw(Box::new(m.model.clone()));
        // SAFETY: the box lives until `LehgrRecognizer` is dropped, which
        // drops the borrowing recognizer first.
        let borrowed: &'static TraceSeqModel = &*owned;
        let built = GestureRecognizer::from_model(borrowed, trigger)
            .and_then(|r| TraceStore::new(TrackerConfig::default()).map(|s| (r, s)));
        match built {
            Ok((recognizer, store)) => {
                *out = Box::into_raw(Box::new(LehgrRecognizer {
                    recognizer: ManuallyDrop::new(recognizer),
                    store,
                    model: owned,
                }));
                LehgrStatus::Ok
            }
            Err(e) => {
                drop(Box::from_raw(owned));
                from_error(e)
            }
        }
    })
}

/// # Safety
/// `rec` must be NULL or a handle from `lehgr_recognizer_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lehgr_recognizer_free(rec: *mut LehgrRecognizer) {
    if !rec.is_null() {
        drop(Box::from_raw(rec));
    }
}

/// Feeds one frame of detections and reports the events it raised.
///
/// `out_count` receives the number of events. When it exceeds `capacity`
/// the first `capacity` events are written and `BUFFER_TOO_SMALL` is
/// returned; the frame is consumed either way.
///
/// # Safety
/// `rec` must be a live handle; `dets` must point to `n` detections;
/// `out_events` must hold `capacity` elements (NULL allowed when 0);
/// `out_count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lehgr_recognizer_step(
    rec: *mut LehgrRecognizer,
    frame: u64,
    dets: *const LehgrDetection,
    n: usize,
    out_events: *mut LehgrEvent,
    capacity: usize,
    out_count: *mut usize,
) -> LehgrStatus {
    guard(|| {
        let Some(r) = rec.as_mut() else {
            return fail(LehgrStatus::NullPointer, "recognizer is NULL");
        };
        if out_count.is_null() || (capacity > 0 && out_events.is_null()) {
            return fail(LehgrStatus::NullPointer, "output pointer is NULL");
        }
        let obs = match read_frame(frame, dets, n) {
            Ok(o) => o,
            Err(s) => return s,
        };
        let events = match r.store.step(&obs).and_then(|_| r.recognizer.observe(&r.store, frame)) {
            Ok(ev) => ev,
            Err(e) => return from_error(e),
        };
        *out_count = events.len();
        let out = if capacity == 0 {
            &mut [][..]
        } else {
            std::slice::from_raw_parts_mut(out_events, capacity)
        };
        for (slot, ev) in out.iter_mut().zip(&events) {
            *slot = LehgrEvent {
                trace_id: ev.trace_id,
                class_id: ev.class_id,
                frame: ev.frame,
                probability: ev.probability,
            };
        }
        if events.len() > capacity {
            return fail(LehgrStatus::BufferTooSmall, format!("{} events raised", events.len()));
        }
        LehgrStatus::Ok
    })
}
