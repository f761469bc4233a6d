//! Temporal patterns over per-key event occurrence lists.
//!
//! `SEQ` enumerates every strictly time-increasing combination
//! (skip-till-any-match), `EQ` every combination sharing one timestamp,
//! `CONJ` every combination regardless of order and `DISJ` every single
//! occurrence. A combination never binds the same tracked object twice.
//! Tuple-producing operators stop after `cap` matches and flag truncation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::vekg::ObjectNode;

pub const DEFAULT_COMBINATION_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemporalOperator {
    Seq,
    Eq,
    Conj,
    Disj,
}

impl TemporalOperator {
    pub fn name(self) -> &'static str {
        match self {
            TemporalOperator::Seq => "SEQ",
            TemporalOperator::Eq => "EQ",
            TemporalOperator::Conj => "CONJ",
            TemporalOperator::Disj => "DISJ",
        }
    }
}

impl fmt::Display for TemporalOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TemporalOperator {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.to_ascii_uppercase().as_str() {
            "SEQ" => Ok(TemporalOperator::Seq),
            "EQ" => Ok(TemporalOperator::Eq),
            "CONJ" => Ok(TemporalOperator::Conj),
            "DISJ" => Ok(TemporalOperator::Disj),
            _ => Err(()),
        }
    }
}

/// A node bound to a query key at the time its frame was captured.
#[derive(Debug, Clone, PartialEq)]
pub struct EventOccurrence {
    pub key: Arc<str>,
    pub node: Arc<ObjectNode>,
    pub timestamp_ms: u64,
    pub frame_index: u64,
}

impl EventOccurrence {
    pub fn new(key: Arc<str>, node: Arc<ObjectNode>) -> Self {
        EventOccurrence {
            key,
            timestamp_ms: node.timestamp_ms,
            frame_index: node.frame_index,
            node,
        }
    }

    /// Detector confidence of the bound node.
    pub fn probability(&self) -> f64 {
        self.node.confidence
    }

    fn order_key(&self) -> (u64, u64) {
        (self.timestamp_ms, self.frame_index)
    }
}

/// Query key -> occurrences sorted by `(timestamp_ms, frame_index)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventMap {
    lists: BTreeMap<Arc<str>, Vec<EventOccurrence>>,
}

impl EventMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a key with an empty list (no-op if present).
    pub fn declare(&mut self, key: &Arc<str>) {
        self.lists.entry(Arc::clone(key)).or_default();
    }

    pub fn insert(&mut self, occ: EventOccurrence) {
        let list = self.lists.entry(Arc::clone(&occ.key)).or_default();
        // Occurrences normally arrive in time order; this keeps the list
        // sorted and stable for equal keys either way.
        let at = list.partition_point(|e| e.order_key() <= occ.order_key());
        list.insert(at, occ);
    }

    pub fn get(&self, key: &str) -> &[EventOccurrence] {
        self.lists.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Number of keys holding at least one occurrence.
    pub fn populated_keys(&self) -> usize {
        self.lists.values().filter(|l| !l.is_empty()).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalMatch {
    pub operator: TemporalOperator,
    pub bound: Vec<EventOccurrence>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TemporalResult {
    pub matches: Vec<TemporalMatch>,
    /// More matches existed than the cap allowed.
    pub truncated: bool,
}

struct Collector {
    operator: TemporalOperator,
    cap: usize,
    result: TemporalResult,
}

impl Collector {
    fn new(operator: TemporalOperator, cap: usize) -> Self {
        Collector {
            operator,
            cap,
            result: TemporalResult::default(),
        }
    }

    /// Returns false once the search should stop.
    fn push(&mut self, bound: &[&EventOccurrence]) -> bool {
        if self.result.matches.len() >= self.cap {
            self.result.truncated = true;
            return false;
        }
        self.result.matches.push(TemporalMatch {
            operator: self.operator,
            bound: bound.iter().map(|e| (*e).clone()).collect(),
        });
        true
    }
}

fn distinct_node(chosen: &[&EventOccurrence], candidate: &EventOccurrence) -> bool {
    chosen.iter().all(|e| e.node.id != candidate.node.id)
}

pub fn eval_seq(map: &EventMap, key_order: &[&str], cap: usize) -> TemporalResult {
    let lists: Vec<&[EventOccurrence]> = key_order.iter().map(|k| map.get(k)).collect();
    let mut out = Collector::new(TemporalOperator::Seq, cap);
    if lists.is_empty() || lists.iter().any(|l| l.is_empty()) {
        return out.result;
    }
    let mut chosen = Vec::with_capacity(lists.len());
    seq_extend(&lists, &mut chosen, &mut out);
    out.result
}

fn seq_extend<'a>(
    lists: &[&'a [EventOccurrence]],
    chosen: &mut Vec<&'a EventOccurrence>,
    out: &mut Collector,
) -> bool {
    let depth = chosen.len();
    if depth == lists.len() {
        return out.push(chosen);
    }
    let list = lists[depth];
    let start = match chosen.last() {
        Some(prev) => list.partition_point(|e| e.timestamp_ms <= prev.timestamp_ms),
        None => 0,
    };
    for e in &list[start..] {
        if !distinct_node(chosen, e) {
            continue;
        }
        chosen.push(e);
        let go_on = seq_extend(lists, chosen, out);
        chosen.pop();
        if !go_on {
            return false;
        }
    }
    true
}

pub fn eval_eq(map: &EventMap, keys: &[&str], cap: usize) -> TemporalResult {
    let lists: Vec<&[EventOccurrence]> = keys.iter().map(|k| map.get(k)).collect();
    let mut out = Collector::new(TemporalOperator::Eq, cap);
    if lists.is_empty() || lists.iter().any(|l| l.is_empty()) {
        return out.result;
    }
    let mut timestamps: Vec<u64> = lists[0].iter().map(|e| e.timestamp_ms).collect();
    timestamps.dedup();
    for t in timestamps {
        let slices: Vec<&[EventOccurrence]> = lists
            .iter()
            .map(|l| {
                let lo = l.partition_point(|e| e.timestamp_ms < t);
                let hi = l.partition_point(|e| e.timestamp_ms <= t);
                &l[lo..hi]
            })
            .collect();
        if slices.iter().any(|s| s.is_empty()) {
            continue;
        }
        if !product(&slices, &mut Vec::new(), &mut out) {
            break;
        }
    }
    out.result
}

pub fn eval_conj(map: &EventMap, keys: &[&str], cap: usize) -> TemporalResult {
    let lists: Vec<&[EventOccurrence]> = keys.iter().map(|k| map.get(k)).collect();
    let mut out = Collector::new(TemporalOperator::Conj, cap);
    if lists.is_empty() || lists.iter().any(|l| l.is_empty()) {
        return out.result;
    }
    product(&lists, &mut Vec::new(), &mut out);
    out.result
}

fn product<'a>(
    lists: &[&'a [EventOccurrence]],
    chosen: &mut Vec<&'a EventOccurrence>,
    out: &mut Collector,
) -> bool {
    let depth = chosen.len();
    if depth == lists.len() {
        return out.push(chosen);
    }
    for e in lists[depth] {
        if !distinct_node(chosen, e) {
            continue;
        }
        chosen.push(e);
        let go_on = product(lists, chosen, out);
        chosen.pop();
        if !go_on {
            return false;
        }
    }
    true
}

pub fn eval_disj(map: &EventMap, keys: &[&str]) -> Vec<TemporalMatch> {
    keys.iter()
        .flat_map(|k| map.get(k))
        .map(|e| TemporalMatch {
            operator: TemporalOperator::Disj,
            bound: vec![e.clone()],
        })
        .collect()
}

pub fn evaluate(op: TemporalOperator, map: &EventMap, keys: &[&str], cap: usize) -> TemporalResult {
    match op {
        TemporalOperator::Seq => eval_seq(map, keys, cap),
        TemporalOperator::Eq => eval_eq(map, keys, cap),
        TemporalOperator::Conj => eval_conj(map, keys, cap),
        TemporalOperator::Disj => TemporalResult {
            matches: eval_disj(map, keys),
            truncated: false,
        },
    }
}
