//! Spatiotemporal complex event processing over object-detection streams.
//!
//! Detections arrive one frame per line ([`ingest`]), are turned into
//! per-frame knowledge graphs with tracked object identities ([`vekg`]),
//! collected into event-time windows ([`window`]) and matched against
//! declarative queries ([`veql`]) by a three-stage matcher ([`matcher`])
//! built on spatial ([`spatial`]) and temporal ([`temporal`]) operators.
//! [`engine`] wires the stages into a concurrent pipeline and [`bench`]
//! generates synthetic workloads and measures accuracy, latency and
//! throughput.

pub mod bench;
pub mod engine;
pub mod ingest;
pub mod matcher;
pub mod spatial;
pub mod temporal;
pub mod veql;
pub mod vekg;
pub mod window;

pub use ingest::{BoundingBox, DetectionRecord, FrameDetections, IngestError};
pub use matcher::{confidence_score, evaluate_window, MatchNotification, PatternKind};
pub use vekg::{ObjectNode, TrackingParams, VekgGraph};
pub use veql::{compile_query, parse_veql, render_veql, QueryPlan};
pub use window::{WindowAssigner, WindowConfig, WindowState};
