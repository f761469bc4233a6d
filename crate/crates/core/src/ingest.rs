//! Detection wire format.
//!
//! One frame per line (JSONL):
//!
//! ```text
//! {"producer_id":"P4","frame_index":0,"timestamp_ms":0,
//!  "detections":[{"label":"Car","confidence":0.6,"bbox":[0,0,10,10],
//!                 "attributes":{"color":"Black"},"feature":[0.1,0.9]}]}
//! ```
//!
//! `bbox` is `[x_min, y_min, width, height]` in pixels with the origin at the
//! top-left corner of the image. `attributes` and `feature` are optional.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::error::Category;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("malformed record at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("schema error in field `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("out-of-order frame for producer {producer_id}: frame {curr_index} (t={curr_ts}) after frame {prev_index} (t={prev_ts})")]
    OutOfOrder {
        producer_id: String,
        prev_index: u64,
        curr_index: u64,
        prev_ts: u64,
        curr_ts: u64,
    },
    #[error("frame from producer {found} on a source bound to {expected}")]
    ProducerMismatch { expected: String, found: String },
}

impl IngestError {
    fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        IngestError::Schema {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// Axis-aligned box in pixel coordinates; y grows downward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub width: f64,
    pub height: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, width: f64, height: f64) -> Result<Self, IngestError> {
        let values = [x_min, y_min, width, height];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(IngestError::schema("bbox", "coordinates must be finite"));
        }
        if x_min < 0.0 || y_min < 0.0 {
            return Err(IngestError::schema("bbox", "x_min and y_min must be >= 0"));
        }
        if width <= 0.0 || height <= 0.0 {
            return Err(IngestError::schema("bbox", "width and height must be > 0"));
        }
        Ok(BoundingBox {
            x_min,
            y_min,
            width,
            height,
        })
    }

    pub fn x_max(&self) -> f64 {
        self.x_min + self.width
    }

    pub fn y_max(&self) -> f64 {
        self.y_min + self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = IngestError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x_min, b.y_min, b.width, b.height]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub label: String,
    pub confidence: f64,
    pub bbox: BoundingBox,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDetections {
    pub producer_id: String,
    pub frame_index: u64,
    pub timestamp_ms: u64,
    pub detections: Vec<DetectionRecord>,
}

impl FrameDetections {
    /// Serializes to a single wire-format line (no trailing newline).
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("frame detections always serialize")
    }

    fn validate(&self) -> Result<(), IngestError> {
        if self.producer_id.is_empty() {
            return Err(IngestError::schema("producer_id", "must be non-empty"));
        }
        for (i, d) in self.detections.iter().enumerate() {
            if d.label.is_empty() {
                return Err(IngestError::schema(
                    format!("detections[{i}].label"),
                    "label must be non-empty",
                ));
            }
            if !(d.confidence > 0.0 && d.confidence <= 1.0) {
                return Err(IngestError::schema(
                    format!("detections[{i}].confidence"),
                    "confidence out of range",
                ));
            }
            if let Some(f) = &d.feature {
                if f.iter().any(|v| !v.is_finite()) {
                    return Err(IngestError::schema(
                        format!("detections[{i}].feature"),
                        "feature values must be finite",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Parses one wire-format line. Unknown fields are ignored.
pub fn parse_detection_line(line: &str) -> Result<FrameDetections, IngestError> {
    let frame: FrameDetections = serde_json::from_str(line).map_err(|e| classify(line, e))?;
    frame.validate()?;
    Ok(frame)
}

fn classify(line: &str, e: serde_json::Error) -> IngestError {
    match e.classify() {
        Category::Data => {
            let message = e.to_string();
            // Both "missing field `name`" and our own bbox errors quote the field.
            let field = if message.starts_with("missing field `")
                || message.starts_with("schema error in field `")
            {
                message.split('`').nth(1).unwrap_or("record").to_string()
            } else {
                "record".to_string()
            };
            IngestError::Schema { field, message }
        }
        Category::Syntax | Category::Eof | Category::Io => IngestError::Parse {
            offset: byte_offset(line, e.line(), e.column()),
            message: e.to_string(),
        },
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

/// Checks the per-producer ordering contract between consecutive frames.
pub fn validate_sequence(
    prev: &FrameDetections,
    curr: FrameDetections,
) -> Result<FrameDetections, IngestError> {
    if prev.producer_id != curr.producer_id {
        return Err(IngestError::ProducerMismatch {
            expected: prev.producer_id.clone(),
            found: curr.producer_id,
        });
    }
    if curr.frame_index <= prev.frame_index || curr.timestamp_ms < prev.timestamp_ms {
        return Err(IngestError::OutOfOrder {
            producer_id: curr.producer_id,
            prev_index: prev.frame_index,
            curr_index: curr.frame_index,
            prev_ts: prev.timestamp_ms,
            curr_ts: curr.timestamp_ms,
        });
    }
    Ok(curr)
}

/// Outcome of one line read by [`FrameReader`].
#[derive(Debug)]
pub enum ReadEvent {
    Frame(FrameDetections),
    Dropped(IngestError),
}

/// Turns a byte stream bound to one producer into ordered frames.
///
/// Malformed lines, frames of another producer and out-of-order frames are
/// reported as [`ReadEvent::Dropped`]; the reader never buffers or reorders.
/// A read error (such as a socket timeout) leaves any partial line buffered,
/// so the call can simply be retried.
pub struct FrameReader<R> {
    producer_id: String,
    source: R,
    last: Option<(u64, u64)>,
    buf: Vec<u8>,
    dropped: u64,
    last_parse: Duration,
}

impl<R: BufRead> FrameReader<R> {
    pub fn new(producer_id: impl Into<String>, source: R) -> Self {
        FrameReader {
            producer_id: producer_id.into(),
            source,
            last: None,
            buf: Vec::new(),
            dropped: 0,
            last_parse: Duration::ZERO,
        }
    }

    pub fn producer_id(&self) -> &str {
        &self.producer_id
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// Time spent parsing and validating the most recent line.
    pub fn last_parse_time(&self) -> Duration {
        self.last_parse
    }

    /// Reads the next non-blank line. `Ok(None)` at end of stream.
    pub fn next_event(&mut self) -> std::io::Result<Option<ReadEvent>> {
        loop {
            let n = self.source.read_until(b'\n', &mut self.buf)?;
            if n == 0 && self.buf.is_empty() {
                return Ok(None);
            }
            let raw = std::mem::take(&mut self.buf);
            let started = Instant::now();
            let text = String::from_utf8_lossy(&raw);
            let text = text.trim();
            if text.is_empty() {
                continue;
            }
            let event = match self.accept(text) {
                Ok(frame) => ReadEvent::Frame(frame),
                Err(e) => {
                    self.dropped += 1;
                    ReadEvent::Dropped(e)
                }
            };
            self.last_parse = started.elapsed();
            return Ok(Some(event));
        }
    }

    fn accept(&mut self, text: &str) -> Result<FrameDetections, IngestError> {
        let frame = parse_detection_line(text)?;
        if frame.producer_id != self.producer_id {
            return Err(IngestError::ProducerMismatch {
                expected: self.producer_id.clone(),
                found: frame.producer_id,
            });
        }
        if let Some((prev_index, prev_ts)) = self.last {
            if frame.frame_index <= prev_index || frame.timestamp_ms < prev_ts {
                return Err(IngestError::OutOfOrder {
                    producer_id: frame.producer_id,
                    prev_index,
                    curr_index: frame.frame_index,
                    prev_ts,
                    curr_ts: frame.timestamp_ms,
                });
            }
        }
        self.last = Some((frame.frame_index, frame.timestamp_ms));
        Ok(frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_record() {
        let f = parse_detection_line(
            r#"{"producer_id":"P4","frame_index":0,"timestamp_ms":0,"detections":[{"label":"Car","confidence":0.6,"bbox":[0,0,10,10]}]}"#,
        )
        .unwrap();
        assert_eq!(f.producer_id, "P4");
        assert_eq!(f.detections.len(), 1);
        assert_eq!(f.detections[0].bbox, BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap());
        assert!(f.detections[0].attributes.is_empty());
        assert!(f.detections[0].feature.is_none());
    }

    #[test]
    fn confidence_out_of_range() {
        let err = parse_detection_line(
            r#"{"producer_id":"P4","frame_index":0,"timestamp_ms":0,"detections":[{"label":"Car","confidence":1.2,"bbox":[0,0,10,10]}]}"#,
        )
        .unwrap_err();
        match err {
            IngestError::Schema { field, message } => {
                assert_eq!(field, "detections[0].confidence");
                assert_eq!(message, "confidence out of range");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn attributes_and_feature_survive_round_trip() {
        let line = r#"{"producer_id":"P3","frame_index":7,"timestamp_ms":233,"detections":[{"label":"Car","confidence":0.9,"bbox":[12,40,80,50],"attributes":{"color":"Black"},"feature":[0.1,0.9]}]}"#;
        let f = parse_detection_line(line).unwrap();
        // Reference serializer: serde_json's generic Value model.
        // Numbers are compared as reals: `12` and `12.0` are the same pixel.
        fn normalize(v: serde_json::Value) -> serde_json::Value {
            use serde_json::Value;
            match v {
                Value::Number(n) => Value::from(n.as_f64().unwrap()),
                Value::Array(a) => Value::Array(a.into_iter().map(normalize).collect()),
                Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, normalize(v))).collect()),
                other => other,
            }
        }
        let reference: serde_json::Value = serde_json::from_str(line).unwrap();
        let ours: serde_json::Value = serde_json::from_str(&f.to_line()).unwrap();
        assert_eq!(normalize(reference), normalize(ours));
        assert_eq!(f.detections[0].attributes["color"], "Black");
        assert_eq!(f.detections[0].feature.as_deref(), Some(&[0.1, 0.9][..]));
    }

    #[test]
    fn unknown_fields_ignored() {
        let f = parse_detection_line(
            r#"{"producer_id":"P","frame_index":1,"timestamp_ms":2,"camera":"x","detections":[{"label":"Car","confidence":0.5,"bbox":[0,0,1,1],"track":3}]}"#,
        )
        .unwrap();
        assert_eq!(f.frame_index, 1);
    }

    #[test]
    fn syntax_error_reports_offset() {
        let line = r#"{"producer_id":"P","frame_index":1,,}"#;
        match parse_detection_line(line).unwrap_err() {
            IngestError::Parse { offset, .. } => assert_eq!(&line[offset..offset + 1], ","),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_field_is_named() {
        let err = parse_detection_line(r#"{"producer_id":"P","frame_index":1,"detections":[]}"#)
            .unwrap_err();
        match err {
            IngestError::Schema { field, .. } => assert_eq!(field, "timestamp_ms"),
            other => panic!("unexpected {other:?}"),
        }
        let err = parse_detection_line(
            r#"{"producer_id":"P","frame_index":1,"timestamp_ms":0,"detections":[{"confidence":0.5,"bbox":[0,0,1,1]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, IngestError::Schema { ref field, .. } if field == "label"));
    }

    #[test]
    fn degenerate_bbox_rejected() {
        let err = parse_detection_line(
            r#"{"producer_id":"P","frame_index":1,"timestamp_ms":0,"detections":[{"label":"Car","confidence":0.5,"bbox":[0,0,0,1]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, IngestError::Schema { ref field, .. } if field == "bbox"));
    }

    fn frame(index: u64, ts: u64) -> FrameDetections {
        FrameDetections {
            producer_id: "P".into(),
            frame_index: index,
            timestamp_ms: ts,
            detections: vec![],
        }
    }

    #[test]
    fn sequence_rules() {
        assert!(validate_sequence(&frame(3, 0), frame(4, 10)).is_ok());
        assert!(matches!(
            validate_sequence(&frame(4, 0), frame(4, 10)),
            Err(IngestError::OutOfOrder { prev_index: 4, curr_index: 4, .. })
        ));
        assert!(validate_sequence(&frame(4, 100), frame(5, 100)).is_ok());
        assert!(validate_sequence(&frame(4, 100), frame(5, 99)).is_err());
    }

    #[test]
    fn reader_drops_bad_lines_and_keeps_order() {
        let input = [
            frame(0, 0).to_line(),
            "not json".to_string(),
            frame(2, 66).to_line(),
            frame(1, 33).to_line(),
            String::new(),
            frame(3, 100).to_line(),
        ]
        .join("\n");
        let mut reader = FrameReader::new("P", input.as_bytes());
        let mut kept = vec![];
        while let Some(ev) = reader.next_event().unwrap() {
            if let ReadEvent::Frame(f) = ev {
                kept.push(f.frame_index);
            }
        }
        assert_eq!(kept, vec![0, 2, 3]);
        assert_eq!(reader.dropped(), 2);
    }

    /// Hands out its chunks one per read and fails with `WouldBlock` between them.
    struct Stutter {
        chunks: Vec<Vec<u8>>,
        pending_error: bool,
    }

    impl std::io::Read for Stutter {
        fn read(&mut self, out: &mut [u8]) -> std::io::Result<usize> {
            if self.pending_error {
                self.pending_error = false;
                return Err(std::io::ErrorKind::WouldBlock.into());
            }
            if self.chunks.is_empty() {
                return Ok(0);
            }
            let c = self.chunks.remove(0);
            out[..c.len()].copy_from_slice(&c);
            self.pending_error = true;
            Ok(c.len())
        }
    }

    #[test]
    fn partial_line_survives_read_errors() {
        let line = frame(0, 0).to_line() + "\n";
        let (a, b) = line.as_bytes().split_at(17);
        let source = std::io::BufReader::with_capacity(
            4096,
            Stutter {
                chunks: vec![a.to_vec(), b.to_vec()],
                pending_error: false,
            },
        );
        let mut reader = FrameReader::new("P", source);
        let mut frames = 0;
        let mut errors = 0;
        loop {
            match reader.next_event() {
                Ok(Some(ReadEvent::Frame(_))) => frames += 1,
                Ok(Some(ReadEvent::Dropped(e))) => panic!("{e}"),
                Ok(None) => break,
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => errors += 1,
                Err(e) => panic!("{e}"),
            }
        }
        assert_eq!((frames, errors), (1, 2));
    }
}
