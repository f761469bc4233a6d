//! Runs a compiled plan over one sealed window.
//!
//! Stage one binds graph nodes to query keys, stage two applies the plan's
//! spatial, temporal or count step, and every surviving match is scored with
//! the entropy-weighted mean of its events' detector confidences.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::spatial::{bsf, SpatialRelation};
use crate::temporal::{self, EventMap, EventOccurrence, TemporalMatch, TemporalOperator};
use crate::veql::{Comparator, PlanStep, QueryPlan};
use crate::vekg::VekgGraph;
use crate::window::WindowState;

pub type ObjectEvent = EventOccurrence;

const P_EPS: f64 = 1e-6;

/// `M = sum(P * w) / sum(w)` with `w = -log2 P`. The weight uses `P` clamped
/// to `[1e-6, 1 - 1e-6]` so certain events keep a nonzero weight; the value
/// being averaged is left untouched.
pub fn confidence_score(probabilities: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for &p in probabilities {
        let w = -p.clamp(P_EPS, 1.0 - P_EPS).log2();
        num += p * w;
        den += w;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

pub fn event_confidence(events: &[ObjectEvent]) -> f64 {
    let ps: Vec<f64> = events.iter().map(ObjectEvent::probability).collect();
    confidence_score(&ps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PatternKind {
    Object,
    Spatial,
    Temporal,
    Count,
}

impl PatternKind {
    pub fn of(step: &PlanStep) -> Self {
        match step {
            PlanStep::Object { .. } => PatternKind::Object,
            PlanStep::Spatial { .. } => PatternKind::Spatial,
            PlanStep::Temporal { .. } => PatternKind::Temporal,
            PlanStep::Count { .. } => PatternKind::Count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotifiedEvent {
    pub key: String,
    pub node_id: u64,
    pub label: String,
    pub frame_index: u64,
    pub timestamp_ms: u64,
    pub probability: f64,
}

impl From<&ObjectEvent> for NotifiedEvent {
    fn from(e: &ObjectEvent) -> Self {
        NotifiedEvent {
            key: e.key.to_string(),
            node_id: e.node.id,
            label: e.node.label.clone(),
            frame_index: e.frame_index,
            timestamp_ms: e.timestamp_ms,
            probability: e.probability(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchNotification {
    pub query_id: String,
    pub producer_id: String,
    pub window: (u64, u64),
    pub pattern_kind: PatternKind,
    pub events: Vec<NotifiedEvent>,
    pub confidence: f64,
    pub truncated: bool,
    #[serde(skip)]
    pub emitted_at: Option<Instant>,
}

impl MatchNotification {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("notification serializes")
    }

    pub fn from_json_line(line: &str) -> serde_json::Result<Self> {
        serde_json::from_str(line)
    }
}

/// Stage-one output: per graph of the window, the events bound in it ordered
/// by plan key order, then node order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObjectEvents {
    pub frames: Vec<Vec<ObjectEvent>>,
}

impl ObjectEvents {
    pub fn iter(&self) -> impl Iterator<Item = &ObjectEvent> {
        self.frames.iter().flatten()
    }

    pub fn in_frame<'a>(&'a self, frame: usize, key: &'a str) -> impl Iterator<Item = &'a ObjectEvent> + 'a {
        self.frames[frame].iter().filter(move |e| &*e.key == key)
    }

    pub fn len(&self) -> usize {
        self.frames.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Binds every node to every plan key whose constraints it satisfies.
pub fn match_objects(state: &WindowState, plan: &QueryPlan) -> ObjectEvents {
    let frames = state
        .graphs
        .iter()
        .map(|g| {
            let mut events = Vec::new();
            for qn in &plan.object_nodes {
                for node in &g.nodes {
                    if qn.matches(node) {
                        events.push(EventOccurrence::new(Arc::clone(&qn.key), Arc::clone(node)));
                    }
                }
            }
            events
        })
        .collect();
    ObjectEvents { frames }
}

#[derive(Debug, Clone)]
pub struct SpatialOutcome {
    /// `(subject, reference)` pairs in frame order.
    pub matches: Vec<(ObjectEvent, ObjectEvent)>,
    /// The matcher's private graph copies, with weights set on matched edges.
    pub graphs: Vec<Arc<VekgGraph>>,
}

pub fn match_spatial(
    state: &WindowState,
    events: &ObjectEvents,
    relation: SpatialRelation,
    subject: &str,
    reference: &str,
) -> SpatialOutcome {
    let mut graphs = state.graphs.clone();
    let mut matches = Vec::new();
    for (i, graph) in graphs.iter_mut().enumerate() {
        for s in events.in_frame(i, subject) {
            for r in events.in_frame(i, reference) {
                if s.node.id == r.node.id {
                    continue;
                }
                if bsf(relation, &*s.node, &*r.node) == 1 {
                    Arc::make_mut(graph).set_spatial_edge(s.node.id, r.node.id, relation, 1.0);
                    matches.push((s.clone(), r.clone()));
                }
            }
        }
    }
    SpatialOutcome { matches, graphs }
}

pub fn match_temporal(
    events: &ObjectEvents,
    op: TemporalOperator,
    keys: &[Arc<str>],
    cap: usize,
) -> temporal::TemporalResult {
    let mut map = EventMap::new();
    for k in keys {
        map.declare(k);
    }
    for e in events.iter() {
        if keys.contains(&e.key) {
            map.insert(e.clone());
        }
    }
    let keys: Vec<&str> = keys.iter().map(|k| &**k).collect();
    temporal::evaluate(op, &map, &keys, cap)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountMatch {
    pub frame: usize,
    pub count: usize,
    pub bound: Vec<ObjectEvent>,
}

pub fn match_count(
    events: &ObjectEvents,
    key: &str,
    cmp: Comparator,
    value: f64,
    per_frame: bool,
) -> Option<CountMatch> {
    let counts: Vec<usize> = (0..events.frames.len())
        .map(|i| events.in_frame(i, key).count())
        .collect();
    let holds = |c: usize| cmp.holds(&(c as f64), &value);
    let frame = if per_frame {
        if counts.is_empty() || !counts.iter().all(|&c| holds(c)) {
            return None;
        }
        // Representative frame: fewest matching objects, earliest on ties.
        (0..counts.len()).min_by_key(|&i| counts[i])?
    } else {
        (0..counts.len()).find(|&i| holds(counts[i]))?
    };
    Some(CountMatch {
        frame,
        count: counts[frame],
        bound: events.in_frame(frame, key).cloned().collect(),
    })
}

#[derive(Debug, Clone, Default)]
pub struct WindowOutcome {
    pub notifications: Vec<MatchNotification>,
    /// Matches dropped for failing the confidence threshold.
    pub suppressed: u64,
    pub truncated: bool,
}

pub fn evaluate_window(state: &WindowState, plan: &QueryPlan, cap: usize) -> WindowOutcome {
    let events = match_objects(state, plan);
    let kind = PatternKind::of(&plan.step);
    let mut out = WindowOutcome::default();
    let emit = |bound: Vec<ObjectEvent>, confidence: f64, out: &mut WindowOutcome| {
        if plan.confidence.accepts(confidence) {
            out.notifications.push(MatchNotification {
                query_id: plan.query_id.clone(),
                producer_id: state.producer_id.clone(),
                window: state.bounds(),
                pattern_kind: kind,
                events: bound.iter().map(NotifiedEvent::from).collect(),
                confidence,
                truncated: false,
                emitted_at: None,
            });
        } else {
            out.suppressed += 1;
        }
    };

    match &plan.step {
        PlanStep::Object { key } => {
            for e in events.iter().filter(|e| e.key == *key) {
                emit(vec![e.clone()], e.probability(), &mut out);
            }
        }
        PlanStep::Spatial {
            relation,
            subject,
            reference,
        } => {
            let spatial = match_spatial(state, &events, *relation, subject, reference);
            for (s, r) in spatial.matches {
                let bound = vec![s, r];
                let m = event_confidence(&bound);
                emit(bound, m, &mut out);
            }
        }
        PlanStep::Temporal { op, keys } => {
            let result = match_temporal(&events, *op, keys, cap);
            for TemporalMatch { bound, .. } in result.matches {
                let m = event_confidence(&bound);
                emit(bound, m, &mut out);
            }
            if result.truncated {
                out.truncated = true;
                let best = out
                    .notifications
                    .iter()
                    .map(|n| n.confidence)
                    .fold(f64::NEG_INFINITY, f64::max);
                if best.is_finite() {
                    out.notifications.push(MatchNotification {
                        query_id: plan.query_id.clone(),
                        producer_id: state.producer_id.clone(),
                        window: state.bounds(),
                        pattern_kind: kind,
                        events: Vec::new(),
                        confidence: best,
                        truncated: true,
                        emitted_at: None,
                    });
                }
            }
        }
        PlanStep::Count {
            key,
            cmp,
            value,
            per_frame,
        } => {
            if let Some(c) = match_count(&events, key, *cmp, *value, *per_frame) {
                // An empty representative frame (e.g. `COUNT < 1`) is vacuously certain.
                let m = if c.bound.is_empty() { 1.0 } else { event_confidence(&c.bound) };
                emit(c.bound, m, &mut out);
            }
        }
    }
    let now = Instant::now();
    for n in &mut out.notifications {
        n.emitted_at = Some(now);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::BoundingBox;
    use crate::spatial::DirectionRelation;
    use crate::veql::plan_from_text;
    use crate::vekg::ObjectNode;

    /// Independent oracle: weights computed with exact logs via ln.
    fn oracle_m(ps: &[f64]) -> f64 {
        let w: Vec<f64> = ps.iter().map(|p| -(p.clamp(1e-6, 1.0 - 1e-6).ln() / 2f64.ln())).collect();
        let num: f64 = ps.iter().zip(&w).map(|(p, w)| p * w).sum();
        num / w.iter().sum::<f64>()
    }

    #[test]
    fn score_examples() {
        assert!((confidence_score(&[0.6, 0.7]) - 0.641).abs() < 5e-4);
        assert!((confidence_score(&[0.9, 0.8, 0.5]) - oracle_m(&[0.9, 0.8, 0.5])).abs() < 1e-12);
        assert!((confidence_score(&[0.9, 0.8, 0.5]) - 0.6068).abs() < 1e-4);
        assert!((confidence_score(&[0.37]) - 0.37).abs() < 1e-15);
        assert_eq!(confidence_score(&[1.0, 1.0]), 1.0);
    }

    pub(crate) fn node(id: u64, label: &str, color: Option<&str>, p: f64, x: f64, frame: u64, t: u64) -> Arc<ObjectNode> {
        Arc::new(ObjectNode {
            id,
            label: label.into(),
            confidence: p,
            attributes: color
                .map(|c| [("color".to_string(), c.to_string())].into_iter().collect())
                .unwrap_or_default(),
            bbox: BoundingBox::new(x, 10.0, 10.0, 10.0).unwrap(),
            feature: None,
            frame_index: frame,
            timestamp_ms: t,
        })
    }

    fn state(frames: Vec<Vec<Arc<ObjectNode>>>) -> WindowState {
        let graphs = frames
            .into_iter()
            .enumerate()
            .map(|(i, nodes)| {
                let mut g = VekgGraph::empty("Camera", i as u64, i as u64 * 1000);
                g.nodes = nodes;
                Arc::new(g)
            })
            .collect::<Vec<_>>();
        WindowState {
            query_id: "q".into(),
            producer_id: "Camera".into(),
            window_start_ms: 0,
            window_end_ms: 10_000,
            representation_ms: vec![0.0; graphs.len()],
            graphs,
            sealed_at: Instant::now(),
        }
    }

    const Q1: &str = "SELECT Object FROM Camera WHERE Object.label='Car' WITHIN TIMEFRAME_WINDOW(10)";
    const Q2: &str =
        "SELECT Object FROM Camera WHERE Object.label='Car' AND Object.attrcolor='Black' WITHIN TIMEFRAME_WINDOW(10)";
    const Q3: &str = "SELECT Left(Object1, Object2) FROM Camera WHERE Object1.label='Car' AND Object1.attrcolor='Black' AND Object2.label='Car' AND Object2.attrcolor='Not Black' WITHIN TIMEFRAME_WINDOW(10)";

    #[test]
    fn objects_found_only_in_their_frames() {
        let plan = plan_from_text("q", Q1).unwrap();
        let s = state(vec![
            vec![],
            vec![node(1, "Car", None, 0.9, 0.0, 1, 1000)],
            vec![node(2, "Person", None, 0.9, 0.0, 2, 2000)],
            vec![node(1, "Car", None, 0.9, 0.0, 3, 3000)],
            vec![],
        ]);
        let ev = match_objects(&s, &plan);
        let frames: Vec<u64> = ev.iter().map(|e| e.frame_index).collect();
        assert_eq!(frames, vec![1, 3]);
        assert!(match_objects(&state(vec![]), &plan).is_empty());
    }

    #[test]
    fn attribute_filter() {
        let plan = plan_from_text("q", Q2).unwrap();
        let s = state(vec![vec![
            node(1, "Car", Some("Black"), 0.9, 0.0, 0, 0),
            node(2, "Car", Some("Red"), 0.8, 50.0, 0, 0),
        ]]);
        let ev = match_objects(&s, &plan);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev.iter().next().unwrap().node.id, 1);
    }

    #[test]
    fn single_object_notification_carries_probability() {
        let plan = plan_from_text("q", Q1).unwrap();
        let s = state(vec![vec![node(1, "Car", None, 0.9, 0.0, 0, 0)]]);
        let out = evaluate_window(&s, &plan, 100);
        assert_eq!(out.notifications.len(), 1);
        assert_eq!(out.notifications[0].confidence, 0.9);
        assert_eq!(out.notifications[0].pattern_kind, PatternKind::Object);
    }

    #[test]
    fn below_threshold_is_suppressed() {
        let plan = plan_from_text("q", Q1).unwrap();
        let s = state(vec![vec![node(1, "Car", None, 0.4, 0.0, 0, 0)]]);
        let out = evaluate_window(&s, &plan, 100);
        assert!(out.notifications.is_empty());
        assert_eq!(out.suppressed, 1);
    }

    #[test]
    fn left_pairs_and_edge_weights() {
        let plan = plan_from_text("q", Q3).unwrap();
        let s = state(vec![vec![
            node(1, "Car", Some("Black"), 0.9, 0.0, 0, 0),
            node(2, "Car", Some("Black"), 0.9, 20.0, 0, 0),
            node(3, "Car", Some("Red"), 0.9, 100.0, 0, 0),
            node(4, "Car", Some("White"), 0.9, 200.0, 0, 0),
        ]]);
        let events = match_objects(&s, &plan);
        let sp = match_spatial(
            &s,
            &events,
            SpatialRelation::Direction(DirectionRelation::Left),
            "Object1:Car",
            "Object2:Car",
        );
        assert_eq!(sp.matches.len(), 4);
        assert_eq!(sp.graphs[0].spatial_edge(1, 3).unwrap().weight, 1.0);
        assert_eq!(sp.graphs[0].spatial_edge(3, 1).unwrap().weight, 0.0);
        // The shared state is untouched.
        assert_eq!(s.graphs[0].materialized_edges(), 0);
    }

    #[test]
    fn spatial_needs_co_occurrence() {
        let plan = plan_from_text("q", Q3).unwrap();
        let s = state(vec![
            vec![node(1, "Car", Some("Black"), 0.9, 0.0, 0, 0)],
            vec![node(3, "Car", Some("Red"), 0.9, 100.0, 1, 1000)],
        ]);
        assert!(evaluate_window(&s, &plan, 100).notifications.is_empty());
    }

    #[test]
    fn walkthrough_car_person() {
        // Car at t1 and t3, Person at t3 and t4.
        let s = state(vec![
            vec![],
            vec![node(1, "Car", None, 0.6, 0.0, 1, 1000)],
            vec![],
            vec![node(1, "Car", None, 0.6, 0.0, 3, 3000), node(2, "Person", None, 0.7, 50.0, 3, 3000)],
            vec![node(2, "Person", None, 0.7, 50.0, 4, 4000)],
        ]);
        let seq = plan_from_text(
            "q",
            "SELECT SEQ(A, B) FROM Camera WHERE A.label='Car' AND B.label='Person' WITHIN TIMEFRAME_WINDOW(10)",
        )
        .unwrap();
        let out = evaluate_window(&s, &seq, 100);
        let pairs: Vec<(u64, u64)> = out
            .notifications
            .iter()
            .map(|n| (n.events[0].timestamp_ms, n.events[1].timestamp_ms))
            .collect();
        assert_eq!(pairs, vec![(1000, 3000), (1000, 4000), (3000, 4000)]);
        assert!((out.notifications[0].confidence - 0.641).abs() < 5e-4);

        let eq = plan_from_text(
            "q",
            "SELECT EQ(A, B) FROM Camera WHERE A.label='Car' AND B.label='Person' WITHIN TIMEFRAME_WINDOW(10)",
        )
        .unwrap();
        let out = evaluate_window(&s, &eq, 100);
        assert_eq!(out.notifications.len(), 1);
        assert_eq!(out.notifications[0].events[0].timestamp_ms, 3000);
    }

    #[test]
    fn conj_without_person_is_empty() {
        let s = state(vec![vec![node(1, "Car", None, 0.9, 0.0, 0, 0)]]);
        let plan = plan_from_text(
            "q",
            "SELECT CONJ(A, B) FROM Camera WHERE A.label='Car' AND B.label='Person' WITHIN TIMEFRAME_WINDOW(10)",
        )
        .unwrap();
        assert!(evaluate_window(&s, &plan, 100).notifications.is_empty());
    }

    fn cars(n: usize, frame: u64, first_id: u64) -> Vec<Arc<ObjectNode>> {
        (0..n)
            .map(|i| node(first_id + i as u64, "Car", None, 0.9, i as f64 * 20.0, frame, frame * 1000))
            .collect()
    }

    #[test]
    fn count_quantifiers() {
        let all_six = state((0..10).map(|f| cars(6, f, 0)).collect());
        let q5 = plan_from_text(
            "q",
            "SELECT HIGH_TRAFFIC_FLOW(Object) FROM Camera WHERE Object.label='Car' AND COUNT(Object) > 5 FOR EACH FRAME WITHIN TIMEFRAME_WINDOW(10)",
        )
        .unwrap();
        let out = evaluate_window(&all_six, &q5, 100);
        assert_eq!(out.notifications.len(), 1);
        assert_eq!(out.notifications[0].events.len(), 6);
        assert_eq!(out.notifications[0].pattern_kind, PatternKind::Count);

        let one_short = state(vec![cars(6, 0, 0), cars(5, 1, 0), cars(6, 2, 0)]);
        assert!(evaluate_window(&one_short, &q5, 100).notifications.is_empty());

        let exist = plan_from_text(
            "q",
            "SELECT Object FROM Camera WHERE Object.label='Car' AND COUNT(Object) > 5 WITHIN TIMEFRAME_WINDOW(10)",
        )
        .unwrap();
        let s = state(vec![cars(2, 0, 0), cars(7, 1, 0), cars(3, 2, 0)]);
        let events = match_objects(&s, &exist);
        let c = match_count(&events, "Object:Car", Comparator::Gt, 5.0, false).unwrap();
        assert_eq!((c.frame, c.count), (1, 7));
        assert_eq!(evaluate_window(&s, &exist, 100).notifications.len(), 1);
    }

    #[test]
    fn seq_cap_emits_summary() {
        let frames: Vec<Vec<Arc<ObjectNode>>> = (0..6)
            .map(|f| vec![node(f, "Car", None, 0.9, 0.0, f, f * 1000), node(100 + f, "Person", None, 0.9, 50.0, f, f * 1000)])
            .collect();
        let s = state(frames);
        let plan = plan_from_text(
            "q",
            "SELECT SEQ(A, B) FROM Camera WHERE A.label='Car' AND B.label='Person' WITHIN TIMEFRAME_WINDOW(10)",
        )
        .unwrap();
        // 15 increasing pairs exist.
        let full = evaluate_window(&s, &plan, 100);
        assert_eq!(full.notifications.len(), 15);
        assert!(!full.truncated);
        let capped = evaluate_window(&s, &plan, 4);
        assert!(capped.truncated);
        assert_eq!(capped.notifications.len(), 5);
        let last = capped.notifications.last().unwrap();
        assert!(last.truncated && last.events.is_empty());
    }

    #[test]
    fn notification_wire_format() {
        let plan = plan_from_text("q1", Q1).unwrap();
        let s = state(vec![vec![node(7, "Car", None, 0.75, 0.0, 0, 0)]]);
        let n = &evaluate_window(&s, &plan, 10).notifications[0];
        let line = n.to_json_line();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["query_id"], "q1");
        assert_eq!(v["window"], serde_json::json!([0, 10000]));
        assert_eq!(v["pattern_kind"], "OBJECT");
        assert_eq!(v["events"][0]["node_id"], 7);
        assert_eq!(v["events"][0]["key"], "Object:Car");
        assert_eq!(v["truncated"], false);
        let mut back = MatchNotification::from_json_line(&line).unwrap();
        back.emitted_at = n.emitted_at;
        assert_eq!(&back, n);
    }
}
