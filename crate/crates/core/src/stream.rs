//! JSON Lines file formats: detection streams, trace streams and
//! annotation files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::AnnotatedSegment;
use crate::error::{Error, Result};
use crate::model::{BoundingBox, FrameObservation, HandDetection, SkeletonSpec};
use crate::tracking::{TraceEvents, TraceStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HandRecord {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    kpts: Vec<[f64; 2]>,
    conf: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    src_id: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    frame: u64,
    ts_ms: i64,
    image: [u32; 2],
    hands: Vec<HandRecord>,
}

fn frame_to_record(f: &FrameObservation) -> FrameRecord {
    FrameRecord {
        frame: f.frame_index,
        ts_ms: f.timestamp_ms,
        image: [f.image_size.0, f.image_size.1],
        hands: f
            .detections
            .iter()
            .map(|d| HandRecord {
                bbox: d.bbox.as_array(),
                kpts: d.keypoints.clone(),
                conf: d.confidence,
                src_id: d.source_id,
            })
            .collect(),
    }
}

fn record_to_frame(r: FrameRecord, line: usize) -> Result<FrameObservation> {
    let at = |e: Error| Error::schema(format!("line {line}"), e.to_string());
    let detections = r
        .hands
        .into_iter()
        .map(|h| {
            let [cx, cy, w, hh] = h.bbox;
            let bbox = BoundingBox::new(cx, cy, w, hh).map_err(at)?;
            HandDetection::new(bbox, h.kpts, h.conf, r.frame)
                .map(|d| d.with_source(h.src_id))
                .map_err(at)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameObservation {
        frame_index: r.frame,
        timestamp_ms: r.ts_ms,
        image_size: (r.image[0], r.image[1]),
        detections,
    })
}

fn parse_lines<T: for<'de> Deserialize<'de>>(reader: impl BufRead, what: &str) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(what, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::json(format!("{what} line {}", i + 1), e))?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

/// Reads a detection stream, checking frame order and keypoint counts.
pub fn read_detection_stream(reader: impl BufRead, skeleton: &SkeletonSpec) -> Result<Vec<FrameObservation>> {
    let mut frames: Vec<FrameObservation> = Vec::new();
    for (line, rec) in parse_lines::<FrameRecord>(reader, "detection stream")? {
        let frame = record_to_frame(rec, line)?;
        if let Some(prev) = frames.last() {
            if frame.frame_index <= prev.frame_index {
                return Err(Error::StreamOrder {
                    last: prev.frame_index,
                    got: frame.frame_index,
                });
            }
        }
        for d in &frame.detections {
            d.conforms_to(skeleton)
                .map_err(|e| Error::schema(format!("line {line}"), e.to_string()))?;
        }
        frames.push(frame);
    }
    Ok(frames)
}

pub fn write_detection_stream(mut w: impl Write, frames: &[FrameObservation]) -> Result<()> {
    for f in frames {
        let line = serde_json::to_string(&frame_to_record(f)).map_err(|e| Error::json("detection stream", e))?;
        writeln!(w, "{line}").map_err(|e| Error::io("detection stream", e))?;
    }
    Ok(())
}

/// One trace's state after a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEntry {
    pub id: u64,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub kpts: Vec<[f64; 2]>,
    pub misses: u32,
    #[serde(default = "full_confidence")]
    pub conf: f64,
    /// Ground-truth hand id of the latest detection, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_id: Option<u32>,
}

fn full_confidence() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceFrameEvents {
    pub created: Vec<u64>,
    pub terminated: Vec<u64>,
}

/// One line of a trace stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceFrame {
    pub frame: u64,
    pub traces: Vec<TraceEntry>,
    pub events: TraceFrameEvents,
}

impl TraceFrame {
    /// Snapshot of the store right after it stepped `frame`.
    pub fn snapshot(frame: u64, store: &TraceStore, events: &TraceEvents) -> Self {
        let traces = store
            .active()
            .filter_map(|t| {
                let d = t.latest()?;
                Some(TraceEntry {
                    id: t.trace_id,
                    bbox: d.bbox.as_array(),
                    kpts: d.keypoints.clone(),
                    misses: t.misses,
                    conf: d.confidence,
                    src_id: d.source_id,
                })
            })
            .collect();
        TraceFrame {
            frame,
            traces,
            events: TraceFrameEvents {
                created: events.created.clone(),
                terminated: events.terminated.clone(),
            },
        }
    }

    /// Detections matched in this frame, keyed by trace id.
    pub fn matched(&self) -> Result<Vec<(u64, HandDetection)>> {
        self.traces
            .iter()
            .filter(|t| t.misses == 0)
            .map(|t| {
                let [cx, cy, w, h] = t.bbox;
                let bbox = BoundingBox::new(cx, cy, w, h)?;
                let det = HandDetection::new(bbox, t.kpts.clone(), t.conf, self.frame)?.with_source(t.src_id);
                Ok((t.id, det))
            })
            .collect()
    }
}

pub fn read_trace_stream(reader: impl BufRead) -> Result<Vec<TraceFrame>> {
    let mut out: Vec<TraceFrame> = Vec::new();
    for (_, rec) in parse_lines::<TraceFrame>(reader, "trace stream")? {
        if let Some(prev) = out.last() {
            if rec.frame <= prev.frame {
                return Err(Error::StreamOrder {
                    last: prev.frame,
                    got: rec.frame,
                });
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_trace_stream(mut w: impl Write, frames: &[TraceFrame]) -> Result<()> {
    for f in frames {
        let line = serde_json::to_string(f).map_err(|e| Error::json("trace stream", e))?;
        writeln!(w, "{line}").map_err(|e| Error::io("trace stream", e))?;
    }
    Ok(())
}

/// Annotation file: the labeled segments of one recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotations {
    pub recording: String,
    pub segments: Vec<AnnotatedSegment>,
}

impl Annotations {
    pub fn validate(self, classes: usize) -> Result<Self> {
        for (i, s) in self.segments.iter().enumerate() {
            s.clone()
                .validate()
                .map_err(|e| Error::schema(format!("segments[{i}]"), e.to_string()))?;
            if s.class_id >= classes {
                return Err(Error::schema(
                    format!("segments[{i}].class_id"),
                    format!("class {} outside {classes} labels", s.class_id),
                ));
            }
        }
        Ok(self)
    }
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| Error::json(path.display().to_string(), e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::json(path.display().to_string(), e))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{"frame":3,"ts_ms":100,"image":[640,480],"hands":[{"box":[0.5,0.5,0.2,0.3],"kpts":[[0.5,0.6],[0.45,0.4],[0.48,0.4],[0.52,0.4],[0.55,0.4]],"conf":0.9,"src_id":2}]}"#;

    #[test]
    fn detection_line_round_trip() {
        let sk = SkeletonSpec::default_hand();
        let frames = read_detection_stream(LINE.as_bytes(), &sk).unwrap();
        assert_eq!(frames[0].detections[0].source_id, Some(2));
        assert_eq!(frames[0].detections[0].frame_index, 3);
        let mut out = Vec::new();
        write_detection_stream(&mut out, &frames).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().trim_end(), LINE);
    }

    #[test]
    fn schema_errors() {
        let sk = SkeletonSpec::default_hand();
        let unknown = LINE.replace("\"conf\"", "\"confidence\"");
        assert!(read_detection_stream(unknown.as_bytes(), &sk).is_err());
        let bad_conf = LINE.replace("0.9", "1.5");
        assert!(matches!(
            read_detection_stream(bad_conf.as_bytes(), &SkeletonSpec::default_hand()),
            Err(Error::Schema { .. })
        ));
        let short = LINE.replace(",[0.55,0.4]", "");
        assert!(read_detection_stream(short.as_bytes(), &sk).unwrap_err().is_data_error());
        let twice = format!("{LINE}\n{LINE}\n");
        assert!(matches!(
            read_detection_stream(twice.as_bytes(), &sk),
            Err(Error::StreamOrder { last: 3, got: 3 })
        ));
    }

    #[test]
    fn blank_lines_skipped() {
        let text = format!("\n{LINE}\n\n");
        assert_eq!(read_detection_stream(text.as_bytes(), &SkeletonSpec::default_hand()).unwrap().len(), 1);
    }
}
