//! Event-time windows over per-producer graph sequences.
//!
//! Windows are half-open `[start, start + length)` intervals aligned to
//! multiples of the slide. A window opens when the first graph that falls in
//! it arrives and is sealed as soon as a graph at or past its end shows up
//! (or at end of stream). Sealed states go to a matcher over a bounded queue.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::{SendTimeoutError, Sender};
use thiserror::Error;

use crate::veql::QueryPlan;
use crate::vekg::VekgGraph;

pub const DEFAULT_QUEUE_CAPACITY: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowConfig {
    pub query_id: String,
    pub producer_id: String,
    pub length_ms: u64,
    /// Equal to `length_ms` for tumbling windows.
    pub slide_ms: u64,
}

impl WindowConfig {
    pub fn tumbling(query_id: impl Into<String>, producer_id: impl Into<String>, length_ms: u64) -> Self {
        Self::sliding(query_id, producer_id, length_ms, length_ms)
    }

    pub fn sliding(
        query_id: impl Into<String>,
        producer_id: impl Into<String>,
        length_ms: u64,
        slide_ms: u64,
    ) -> Self {
        assert!(length_ms > 0 && slide_ms > 0 && slide_ms <= length_ms, "invalid window config");
        WindowConfig {
            query_id: query_id.into(),
            producer_id: producer_id.into(),
            length_ms,
            slide_ms,
        }
    }

    pub fn from_plan(plan: &QueryPlan) -> Self {
        Self::sliding(
            plan.query_id.clone(),
            plan.producer.clone(),
            plan.window.length_ms(),
            plan.window.slide_ms(),
        )
    }

    /// Starts of every aligned window containing `t`, ascending.
    pub fn covering_starts(&self, t: u64) -> impl Iterator<Item = u64> {
        let (len, slide) = (self.length_ms, self.slide_ms);
        let first_k = if t < len { 0 } else { (t - len) / slide + 1 };
        let last_k = t / slide;
        (first_k..=last_k).map(move |k| k * slide)
    }
}

/// A sealed window: the subsequence of graphs a matcher evaluates.
#[derive(Debug, Clone)]
pub struct WindowState {
    pub query_id: String,
    pub producer_id: String,
    pub window_start_ms: u64,
    pub window_end_ms: u64,
    pub graphs: Vec<Arc<VekgGraph>>,
    /// Per-graph parse + build time in milliseconds, parallel to `graphs`.
    pub representation_ms: Vec<f64>,
    pub sealed_at: Instant,
}

impl WindowState {
    pub fn bounds(&self) -> (u64, u64) {
        (self.window_start_ms, self.window_end_ms)
    }

    pub fn mean_representation_ms(&self) -> f64 {
        if self.representation_ms.is_empty() {
            0.0
        } else {
            self.representation_ms.iter().sum::<f64>() / self.representation_ms.len() as f64
        }
    }

    /// One line for the optional state dump file.
    pub fn dump_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.query_id,
            self.producer_id,
            self.window_start_ms,
            self.window_end_ms,
            self.graphs.len()
        )
    }
}

#[derive(Debug)]
struct OpenWindow {
    start: u64,
    graphs: Vec<Arc<VekgGraph>>,
    representation_ms: Vec<f64>,
}

#[derive(Debug)]
pub struct WindowAssigner {
    config: WindowConfig,
    open: VecDeque<OpenWindow>,
    /// Smallest aligned start that has not been opened yet.
    next_start: u64,
    last_ts: Option<u64>,
}

impl WindowAssigner {
    pub fn new(config: WindowConfig) -> Self {
        WindowAssigner {
            config,
            open: VecDeque::new(),
            next_start: 0,
            last_ts: None,
        }
    }

    pub fn config(&self) -> &WindowConfig {
        &self.config
    }

    pub fn open_windows(&self) -> usize {
        self.open.len()
    }

    pub fn accept_graph(&mut self, g: Arc<VekgGraph>) -> Vec<WindowState> {
        self.accept_timed(g, 0.0)
    }

    /// Adds `g` to every window containing its timestamp and returns the
    /// windows that ended at or before it.
    pub fn accept_timed(&mut self, g: Arc<VekgGraph>, representation_ms: f64) -> Vec<WindowState> {
        let t = g.timestamp_ms;
        debug_assert!(self.last_ts.is_none_or(|p| p <= t), "graphs out of order");
        self.last_ts = Some(t);

        let mut sealed = Vec::new();
        while self
            .open
            .front()
            .is_some_and(|w| w.start + self.config.length_ms <= t)
        {
            let w = self.open.pop_front().expect("front exists");
            sealed.push(self.seal(w));
        }
        for start in self.config.covering_starts(t) {
            if start >= self.next_start {
                self.open.push_back(OpenWindow {
                    start,
                    graphs: Vec::new(),
                    representation_ms: Vec::new(),
                });
                self.next_start = start + self.config.slide_ms;
            }
        }
        for w in self.open.iter_mut() {
            debug_assert!(w.start <= t && t < w.start + self.config.length_ms);
            w.graphs.push(Arc::clone(&g));
            w.representation_ms.push(representation_ms);
        }
        sealed
    }

    /// Seals every open window as-is (end of stream).
    pub fn flush(&mut self) -> Vec<WindowState> {
        let open: Vec<OpenWindow> = self.open.drain(..).collect();
        open.into_iter().map(|w| self.seal(w)).collect()
    }

    fn seal(&self, w: OpenWindow) -> WindowState {
        WindowState {
            query_id: self.config.query_id.clone(),
            producer_id: self.config.producer_id.clone(),
            window_start_ms: w.start,
            window_end_ms: w.start + self.config.length_ms,
            graphs: w.graphs,
            representation_ms: w.representation_ms,
            sealed_at: Instant::now(),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DispatchError {
    #[error("dispatch aborted by shutdown")]
    Aborted,
    #[error("matcher queue closed")]
    Disconnected,
}

/// Sends sealed states to one matcher queue, blocking while it is full.
#[derive(Debug, Clone)]
pub struct StateDispatcher {
    tx: Sender<WindowState>,
    abort: Arc<AtomicBool>,
    dropped: Arc<AtomicU64>,
}

impl StateDispatcher {
    pub fn new(tx: Sender<WindowState>, abort: Arc<AtomicBool>) -> Self {
        StateDispatcher {
            tx,
            abort,
            dropped: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    pub fn dispatch(&self, state: WindowState) -> Result<(), DispatchError> {
        let mut state = state;
        loop {
            if self.abort.load(Ordering::Relaxed) {
                self.dropped.fetch_add(1, Ordering::Relaxed);
                return Err(DispatchError::Aborted);
            }
            match self.tx.send_timeout(state, Duration::from_millis(20)) {
                Ok(()) => return Ok(()),
                Err(SendTimeoutError::Timeout(s)) => state = s,
                Err(SendTimeoutError::Disconnected(_)) => {
                    self.dropped.fetch_add(1, Ordering::Relaxed);
                    return Err(DispatchError::Disconnected);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn graph(t: u64, i: u64) -> Arc<VekgGraph> {
        Arc::new(VekgGraph::empty("P", i, t))
    }

    fn feed(a: &mut WindowAssigner, ts: &[u64]) -> Vec<WindowState> {
        let mut out = Vec::new();
        for (i, &t) in ts.iter().enumerate() {
            out.extend(a.accept_graph(graph(t, i as u64)));
        }
        out
    }

    fn stamps(s: &WindowState) -> Vec<u64> {
        s.graphs.iter().map(|g| g.timestamp_ms).collect()
    }

    #[test]
    fn tumbling_seals_on_boundary_frame() {
        let mut a = WindowAssigner::new(WindowConfig::tumbling("q", "P", 10_000));
        let ts: Vec<u64> = (0..300).map(|i| i * 10_000 / 300).collect();
        assert!(feed(&mut a, &ts).is_empty());
        let sealed = a.accept_graph(graph(10_000, 300));
        assert_eq!(sealed.len(), 1);
        assert_eq!(sealed[0].bounds(), (0, 10_000));
        assert_eq!(stamps(&sealed[0]), ts);
        assert_eq!(a.open_windows(), 1);
    }

    #[test]
    fn thirty_fps_ten_seconds_is_three_hundred_graphs() {
        let mut a = WindowAssigner::new(WindowConfig::tumbling("q", "P", 10_000));
        // 30 fps timestamps rounded to whole milliseconds.
        let ts: Vec<u64> = (0..=300).map(|i| (i as f64 * 1000.0 / 30.0).round() as u64).collect();
        let sealed = feed(&mut a, &ts);
        assert_eq!(sealed.len(), 1);
        assert_eq!(sealed[0].graphs.len(), 300);
    }

    #[test]
    fn sliding_frame_lands_in_both_covering_windows() {
        let cfg = WindowConfig::sliding("q", "P", 10_000, 5_000);
        assert_eq!(cfg.covering_starts(7_000).collect::<Vec<_>>(), vec![0, 5_000]);
        let mut a = WindowAssigner::new(cfg);
        feed(&mut a, &[7_000]);
        let flushed = a.flush();
        assert_eq!(flushed.len(), 2);
        assert_eq!(flushed[0].bounds(), (0, 10_000));
        assert_eq!(flushed[1].bounds(), (5_000, 15_000));
    }

    #[test]
    fn flush_cases() {
        let mut a = WindowAssigner::new(WindowConfig::tumbling("q", "P", 1_000));
        assert!(a.flush().is_empty());
        feed(&mut a, &[0, 100, 200]);
        let f = a.flush();
        assert_eq!(f.len(), 1);
        assert_eq!(stamps(&f[0]), vec![0, 100, 200]);
        assert_eq!(a.open_windows(), 0);
    }

    #[test]
    fn gaps_do_not_emit_empty_windows() {
        let mut a = WindowAssigner::new(WindowConfig::tumbling("q", "P", 1_000));
        let mut sealed = feed(&mut a, &[10, 5_500]);
        sealed.extend(a.flush());
        let bounds: Vec<_> = sealed.iter().map(WindowState::bounds).collect();
        assert_eq!(bounds, vec![(0, 1_000), (5_000, 6_000)]);
    }

    #[test]
    fn dispatcher_blocks_then_aborts() {
        let (tx, rx) = crossbeam_channel::bounded(1);
        let abort = Arc::new(AtomicBool::new(false));
        let d = StateDispatcher::new(tx, Arc::clone(&abort));
        let mut a = WindowAssigner::new(WindowConfig::tumbling("q", "P", 10));
        feed(&mut a, &[0, 10]);
        let s = a.flush().pop().unwrap();
        d.dispatch(s.clone()).unwrap();
        let d2 = d.clone();
        let s2 = s.clone();
        let handle = std::thread::spawn(move || d2.dispatch(s2));
        std::thread::sleep(Duration::from_millis(60));
        assert!(!handle.is_finished(), "second dispatch should block on a full queue");
        rx.recv().unwrap();
        assert_eq!(handle.join().unwrap(), Ok(()));

        abort.store(true, Ordering::Relaxed);
        assert_eq!(d.dispatch(s), Err(DispatchError::Aborted));
        assert_eq!(d.dropped(), 1);
    }

    fn timestamps() -> impl Strategy<Value = Vec<u64>> {
        proptest::collection::vec(0u64..400, 1..60).prop_map(|steps| {
            let mut t = 0;
            steps
                .into_iter()
                .map(|d| {
                    t += d;
                    t
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn tumbling_partitions(ts in timestamps(), len in 1u64..2_000) {
            let mut a = WindowAssigner::new(WindowConfig::tumbling("q", "P", len));
            let mut sealed = feed(&mut a, &ts);
            sealed.extend(a.flush());
            let mut seen: Vec<u64> = Vec::new();
            for s in &sealed {
                for g in &s.graphs {
                    prop_assert!(s.window_start_ms <= g.timestamp_ms && g.timestamp_ms < s.window_end_ms);
                    seen.push(g.frame_index);
                }
            }
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..ts.len() as u64).collect::<Vec<_>>());
        }

        #[test]
        fn sliding_matches_interval_coverage(ts in timestamps(), len in 1u64..2_000, div in 1u64..6) {
            let slide = (len / div).max(1);
            let mut a = WindowAssigner::new(WindowConfig::sliding("q", "P", len, slide));
            let mut sealed = feed(&mut a, &ts);
            sealed.extend(a.flush());
            for (i, &t) in ts.iter().enumerate() {
                // Brute force: every aligned start k*slide with t in [start, start+len).
                let expected: Vec<u64> = (0..=t / slide)
                    .map(|k| k * slide)
                    .filter(|s| *s <= t && t < s + len)
                    .collect();
                let got: Vec<u64> = sealed
                    .iter()
                    .filter(|s| s.graphs.iter().any(|g| g.frame_index == i as u64))
                    .map(|s| s.window_start_ms)
                    .collect();
                prop_assert!(got.len() as u64 <= len.div_ceil(slide));
                prop_assert_eq!(got, expected);
            }
        }
    }
}
