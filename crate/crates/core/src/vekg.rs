//! Per-frame video event knowledge graphs.
//!
//! Each frame becomes a [`VekgGraph`]: one [`ObjectNode`] per detection,
//! an implied complete digraph of spatial edges (materialized only when a
//! query evaluates a pair) and temporal edges to the same tracked objects in
//! the previous frame. Identity is carried across frames by greedy
//! one-to-one association on IOU and feature cosine similarity.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::ingest::{BoundingBox, DetectionRecord, FrameDetections};
use crate::spatial::SpatialRelation;

pub type NodeId = u64;

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectNode {
    pub id: NodeId,
    pub label: String,
    pub confidence: f64,
    /// Keys are stored lowercased.
    pub attributes: BTreeMap<String, String>,
    pub bbox: BoundingBox,
    pub feature: Option<Vec<f64>>,
    pub frame_index: u64,
    pub timestamp_ms: u64,
}

impl ObjectNode {
    pub fn attribute(&self, name: &str) -> Option<&str> {
        self.attributes
            .get(&name.to_lowercase())
            .map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpatialEdge {
    /// `None` until a query evaluates the pair.
    pub relation: Option<SpatialRelation>,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemporalEdge {
    pub node_id: NodeId,
    pub prev_frame_index: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VekgGraph {
    pub producer_id: String,
    pub frame_index: u64,
    pub timestamp_ms: u64,
    pub nodes: Vec<Arc<ObjectNode>>,
    spatial_edges: BTreeMap<(NodeId, NodeId), SpatialEdge>,
    pub temporal_edges: Vec<TemporalEdge>,
}

impl VekgGraph {
    pub fn empty(producer_id: impl Into<String>, frame_index: u64, timestamp_ms: u64) -> Self {
        VekgGraph {
            producer_id: producer_id.into(),
            frame_index,
            timestamp_ms,
            nodes: Vec::new(),
            spatial_edges: BTreeMap::new(),
            temporal_edges: Vec::new(),
        }
    }

    pub fn node(&self, id: NodeId) -> Option<&ObjectNode> {
        self.nodes.iter().find(|n| n.id == id).map(Arc::as_ref)
    }

    /// Resolves the edge `from -> to` of the complete digraph. Pairs that were
    /// never evaluated read as an unlabelled zero-weight edge.
    pub fn spatial_edge(&self, from: NodeId, to: NodeId) -> Option<SpatialEdge> {
        if from == to || self.node(from).is_none() || self.node(to).is_none() {
            return None;
        }
        Some(
            self.spatial_edges
                .get(&(from, to))
                .copied()
                .unwrap_or_default(),
        )
    }

    pub fn set_spatial_edge(&mut self, from: NodeId, to: NodeId, relation: SpatialRelation, weight: f64) {
        debug_assert!(from != to);
        self.spatial_edges.insert(
            (from, to),
            SpatialEdge {
                relation: Some(relation),
                weight,
            },
        );
    }

    /// Number of edges that carry an evaluated relation.
    pub fn materialized_edges(&self) -> usize {
        self.spatial_edges.len()
    }

    pub fn ordered_pairs(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.nodes.iter().flat_map(move |a| {
            self.nodes
                .iter()
                .filter(move |b| b.id != a.id)
                .map(move |b| (a.id, b.id))
        })
    }

    /// Human-readable adjacency listing used by the debug dump.
    pub fn adjacency_listing(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "producer {} frame {} t={}ms nodes={}",
            self.producer_id,
            self.frame_index,
            self.timestamp_ms,
            self.nodes.len()
        );
        for n in &self.nodes {
            let attrs: Vec<String> = n.attributes.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let b = n.bbox;
            let _ = writeln!(
                out,
                "  node {} {} p={:.3} bbox=[{}, {}, {}, {}] attrs={{{}}}",
                n.id,
                n.label,
                n.confidence,
                b.x_min,
                b.y_min,
                b.width,
                b.height,
                attrs.join(", ")
            );
            for (from, to) in self.ordered_pairs().filter(|(f, _)| *f == n.id) {
                let edge = self.spatial_edge(from, to).unwrap_or_default();
                let rel = edge
                    .relation
                    .map(|r| r.to_string())
                    .unwrap_or_else(|| "-".into());
                let _ = writeln!(out, "    -> {to} spatial {rel} w={}", edge.weight);
            }
        }
        for t in &self.temporal_edges {
            let _ = writeln!(out, "  temporal {} <- frame {}", t.node_id, t.prev_frame_index);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingParams {
    pub iou_threshold: f64,
    pub cosine_sim_threshold: f64,
}

impl Default for TrackingParams {
    fn default() -> Self {
        TrackingParams {
            iou_threshold: 0.3,
            cosine_sim_threshold: 0.7,
        }
    }
}

/// Per-producer source of fresh node ids. Ids are never recycled.
#[derive(Debug, Default, Clone)]
pub struct IdAllocator {
    next: NodeId,
}

impl IdAllocator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_id(&mut self) -> NodeId {
        let id = self.next;
        self.next += 1;
        id
    }
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = (a.x_max().min(b.x_max()) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max().min(b.y_max()) - a.y_min.max(b.y_min)).max(0.0);
    let inter = w * h;
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimilarityError {
    #[error("feature length mismatch ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("zero or empty feature vector")]
    ZeroVector,
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, SimilarityError> {
    if a.len() != b.len() {
        return Err(SimilarityError::LengthMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(SimilarityError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

struct Candidate {
    iou: f64,
    cosine: Option<f64>,
    prev_id: NodeId,
    curr: usize,
}

/// Greedy one-to-one association of current detections to previous nodes.
///
/// Same-label pairs with `iou >= iou_threshold` or
/// `cosine >= cosine_sim_threshold` are candidates; they are taken in
/// descending IOU, then descending cosine, then ascending previous id.
pub fn track_objects(
    prev_nodes: &[Arc<ObjectNode>],
    curr: &[DetectionRecord],
    params: &TrackingParams,
) -> BTreeMap<usize, NodeId> {
    let mut candidates = Vec::new();
    for (ci, det) in curr.iter().enumerate() {
        for p in prev_nodes.iter().filter(|p| p.label == det.label) {
            let overlap = iou(&p.bbox, &det.bbox);
            let cosine = match (&p.feature, &det.feature) {
                (Some(a), Some(b)) => cosine_similarity(a, b).ok(),
                _ => None,
            };
            let by_iou = overlap >= params.iou_threshold;
            let by_feature = cosine.is_some_and(|c| c >= params.cosine_sim_threshold);
            if by_iou || by_feature {
                candidates.push(Candidate {
                    iou: overlap,
                    cosine,
                    prev_id: p.id,
                    curr: ci,
                });
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.iou
            .total_cmp(&a.iou)
            .then_with(|| {
                let ca = a.cosine.unwrap_or(f64::NEG_INFINITY);
                let cb = b.cosine.unwrap_or(f64::NEG_INFINITY);
                cb.total_cmp(&ca)
            })
            .then_with(|| a.prev_id.cmp(&b.prev_id))
            .then_with(|| a.curr.cmp(&b.curr))
    });

    let mut assignment = BTreeMap::new();
    let mut used_prev = HashSet::new();
    for c in candidates {
        if assignment.contains_key(&c.curr) || used_prev.contains(&c.prev_id) {
            continue;
        }
        used_prev.insert(c.prev_id);
        assignment.insert(c.curr, c.prev_id);
    }
    assignment
}

pub fn build_vekg(
    frame: &FrameDetections,
    prev: Option<&VekgGraph>,
    params: &TrackingParams,
    ids: &mut IdAllocator,
) -> VekgGraph {
    let mut graph = VekgGraph::empty(frame.producer_id.clone(), frame.frame_index, frame.timestamp_ms);
    let assignment = match prev {
        Some(p) => track_objects(&p.nodes, &frame.detections, params),
        None => BTreeMap::new(),
    };
    for (i, det) in frame.detections.iter().enumerate() {
        let id = match assignment.get(&i) {
            Some(&prev_id) => {
                graph.temporal_edges.push(TemporalEdge {
                    node_id: prev_id,
                    prev_frame_index: prev.map(|p| p.frame_index).unwrap_or_default(),
                });
                prev_id
            }
            None => ids.next_id(),
        };
        graph.nodes.push(Arc::new(ObjectNode {
            id,
            label: det.label.clone(),
            confidence: det.confidence,
            attributes: det
                .attributes
                .iter()
                .map(|(k, v)| (k.to_lowercase(), v.clone()))
                .collect(),
            bbox: det.bbox,
            feature: det.feature.clone(),
            frame_index: frame.frame_index,
            timestamp_ms: frame.timestamp_ms,
        }));
    }
    graph
}

/// Sequential graph construction for one producer.
#[derive(Debug)]
pub struct GraphBuilder {
    params: TrackingParams,
    ids: IdAllocator,
    prev: Option<Arc<VekgGraph>>,
}

impl GraphBuilder {
    pub fn new(params: TrackingParams) -> Self {
        GraphBuilder {
            params,
            ids: IdAllocator::new(),
            prev: None,
        }
    }

    pub fn push(&mut self, frame: &FrameDetections) -> Arc<VekgGraph> {
        let graph = Arc::new(build_vekg(frame, self.prev.as_deref(), &self.params, &mut self.ids));
        self.prev = Some(Arc::clone(&graph));
        graph
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bbox(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn det(label: &str, b: BoundingBox) -> DetectionRecord {
        DetectionRecord {
            label: label.into(),
            confidence: 0.9,
            bbox: b,
            attributes: BTreeMap::new(),
            feature: None,
        }
    }

    fn frame(index: u64, dets: Vec<DetectionRecord>) -> FrameDetections {
        FrameDetections {
            producer_id: "P".into(),
            frame_index: index,
            timestamp_ms: index * 33,
            detections: dets,
        }
    }

    #[test]
    fn iou_examples() {
        let a = bbox(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bbox(20.0, 0.0, 10.0, 10.0)), 0.0);
        // intersection 5x10 = 50, union 100 + 100 - 50 = 150
        assert!((iou(&a, &bbox(5.0, 0.0, 10.0, 10.0)) - 50.0 / 150.0).abs() < 1e-12);
        // touching edge has zero-area intersection
        assert_eq!(iou(&a, &bbox(10.0, 0.0, 10.0, 10.0)), 0.0);
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[0.3, 0.4], &[0.3, 0.4]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let v = cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((v - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(
            cosine_similarity(&[1.0], &[1.0, 2.0]),
            Err(SimilarityError::LengthMismatch(1, 2))
        );
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]), Err(SimilarityError::ZeroVector));
    }

    #[test]
    fn empty_frame_builds_empty_graph() {
        let g = build_vekg(&frame(0, vec![]), None, &TrackingParams::default(), &mut IdAllocator::new());
        assert!(g.nodes.is_empty());
        assert_eq!(g.ordered_pairs().count(), 0);
        assert!(g.temporal_edges.is_empty());
    }

    #[test]
    fn shifted_car_keeps_identity() {
        // [0,0,20,10] vs [2,0,20,10]: intersection 18*10=180, union 220 -> 0.818
        let mut b = GraphBuilder::new(TrackingParams::default());
        let g0 = b.push(&frame(0, vec![det("Car", bbox(0.0, 0.0, 20.0, 10.0))]));
        let g1 = b.push(&frame(1, vec![det("Car", bbox(2.0, 0.0, 20.0, 10.0))]));
        assert_eq!(g0.nodes[0].id, g1.nodes[0].id);
        assert_eq!(
            g1.temporal_edges,
            vec![TemporalEdge {
                node_id: g0.nodes[0].id,
                prev_frame_index: 0
            }]
        );
    }

    #[test]
    fn complete_digraph_over_three_nodes() {
        let g = build_vekg(
            &frame(
                0,
                vec![
                    det("Car", bbox(0.0, 0.0, 5.0, 5.0)),
                    det("Car", bbox(10.0, 0.0, 5.0, 5.0)),
                    det("Car", bbox(20.0, 0.0, 5.0, 5.0)),
                ],
            ),
            None,
            &TrackingParams::default(),
            &mut IdAllocator::new(),
        );
        let pairs: Vec<_> = g.ordered_pairs().collect();
        assert_eq!(pairs.len(), 6);
        for (a, b) in pairs {
            let e = g.spatial_edge(a, b).unwrap();
            assert_eq!(e.weight, 0.0);
            assert!(e.relation.is_none());
        }
        assert_eq!(g.materialized_edges(), 0);
    }

    #[test]
    fn tracking_examples() {
        let prev = Arc::new(ObjectNode {
            id: 7,
            label: "Car".into(),
            confidence: 0.9,
            attributes: BTreeMap::new(),
            bbox: bbox(0.0, 0.0, 10.0, 10.0),
            feature: None,
            frame_index: 0,
            timestamp_ms: 0,
        });
        let params = TrackingParams::default();
        assert!(track_objects(&[], &[det("Car", bbox(0.0, 0.0, 10.0, 10.0))], &params).is_empty());
        // intersection 9*10 = 90, union 110 -> 9/11
        let a = track_objects(std::slice::from_ref(&prev), &[det("Car", bbox(1.0, 0.0, 10.0, 10.0))], &params);
        assert_eq!(a.get(&0), Some(&7));
        let a = track_objects(&[prev], &[det("Person", bbox(0.0, 0.0, 10.0, 10.0))], &params);
        assert!(a.is_empty());
    }

    #[test]
    fn feature_similarity_rescues_low_overlap() {
        let mut d0 = det("Car", bbox(0.0, 0.0, 10.0, 10.0));
        d0.feature = Some(vec![1.0, 0.0]);
        let mut d1 = det("Car", bbox(50.0, 0.0, 10.0, 10.0));
        d1.feature = Some(vec![0.9, 0.1]);
        let mut b = GraphBuilder::new(TrackingParams::default());
        let g0 = b.push(&frame(0, vec![d0]));
        let g1 = b.push(&frame(1, vec![d1.clone()]));
        assert_eq!(g0.nodes[0].id, g1.nodes[0].id);
        d1.feature = None;
        let g2 = b.push(&frame(2, vec![det("Car", bbox(100.0, 0.0, 10.0, 10.0))]));
        assert_ne!(g1.nodes[0].id, g2.nodes[0].id);
    }

    #[test]
    fn greedy_prefers_highest_overlap() {
        let mk = |id, x| {
            Arc::new(ObjectNode {
                id,
                label: "Car".into(),
                confidence: 0.9,
                attributes: BTreeMap::new(),
                bbox: bbox(x, 0.0, 10.0, 10.0),
                feature: None,
                frame_index: 0,
                timestamp_ms: 0,
            })
        };
        let prev = vec![mk(1, 0.0), mk(2, 4.0)];
        let a = track_objects(
            &prev,
            &[det("Car", bbox(3.0, 0.0, 10.0, 10.0)), det("Car", bbox(0.5, 0.0, 10.0, 10.0))],
            &TrackingParams::default(),
        );
        // det0 overlaps prev2 best (0.9/1.1), det1 overlaps prev1 best.
        assert_eq!(a.get(&0), Some(&2));
        assert_eq!(a.get(&1), Some(&1));
    }

    #[test]
    fn attribute_lookup_is_case_insensitive_on_key() {
        let mut d = det("Car", bbox(0.0, 0.0, 1.0, 1.0));
        d.attributes.insert("Color".into(), "Black".into());
        let g = build_vekg(&frame(0, vec![d]), None, &TrackingParams::default(), &mut IdAllocator::new());
        assert_eq!(g.nodes[0].attribute("color"), Some("Black"));
        assert_eq!(g.nodes[0].attribute("COLOR"), Some("Black"));
    }
}
