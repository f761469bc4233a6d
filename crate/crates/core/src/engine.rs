//! Concurrent pipeline: one reader and one graph builder per producer, one
//! window assigner per (producer, query), one matcher per query and a single
//! sink writer. Every hop is a bounded queue.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, SendTimeoutError, Sender};
use serde::Deserialize;
use thiserror::Error;

use crate::ingest::{FrameDetections, FrameReader, ReadEvent};
use crate::matcher::{evaluate_window, MatchNotification};
use crate::temporal::DEFAULT_COMBINATION_CAP;
use crate::veql::{plan_from_text, QueryPlan, VeqlError};
use crate::vekg::{GraphBuilder, TrackingParams};
use crate::window::{StateDispatcher, WindowAssigner, WindowConfig, WindowState, DEFAULT_QUEUE_CAPACITY};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("query `{id}`: {source}")]
    Query {
        id: String,
        #[source]
        source: VeqlError,
    },
    #[error("query id `{0}` is already registered")]
    DuplicateQuery(String),
    #[error("producer `{0}` is already configured")]
    DuplicateProducer(String),
    #[error("query `{query}` reads from producer `{producer}`, which is not configured")]
    UnknownProducer { query: String, producer: String },
    #[error("cannot open source of producer `{producer}`: {source}")]
    Source {
        producer: String,
        #[source]
        source: io::Error,
    },
    #[error("cannot open {what} `{path}`: {source}")]
    Output {
        what: &'static str,
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl EngineError {
    /// Errors caused by bad configuration or query text, as opposed to
    /// failures while touching the outside world.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            EngineError::Config(_)
                | EngineError::Query { .. }
                | EngineError::DuplicateQuery(_)
                | EngineError::DuplicateProducer(_)
                | EngineError::UnknownProducer { .. }
        )
    }
}

pub enum Source {
    File(PathBuf),
    /// `host:port`; the engine connects and reads until the peer closes.
    Tcp(String),
    Reader(Box<dyn BufRead + Send>),
}

impl std::fmt::Debug for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Source::File(p) => write!(f, "File({})", p.display()),
            Source::Tcp(a) => write!(f, "Tcp({a})"),
            Source::Reader(_) => f.write_str("Reader"),
        }
    }
}

impl Source {
    pub fn from_bytes(bytes: impl Into<Vec<u8>>) -> Self {
        Source::Reader(Box::new(io::Cursor::new(bytes.into())))
    }

    fn open(self) -> io::Result<Box<dyn BufRead + Send>> {
        Ok(match self {
            Source::File(p) => Box::new(BufReader::new(File::open(p)?)),
            Source::Tcp(addr) => {
                let stream = TcpStream::connect(&addr)?;
                // Lets the reader notice an interrupt while the peer is idle.
                stream.set_read_timeout(Some(Duration::from_millis(200)))?;
                Box::new(BufReader::new(stream))
            }
            Source::Reader(r) => r,
        })
    }
}

#[derive(Debug, Clone)]
pub struct EngineSettings {
    pub tracking: TrackingParams,
    /// Capacity of each matcher's state queue.
    pub queue_capacity: usize,
    /// Capacity of each producer's frame queue.
    pub producer_queue_capacity: usize,
    pub combination_cap: usize,
    /// Appends one line per sealed window to this file.
    pub state_dump: Option<PathBuf>,
    /// Keep every emitted notification in the run report.
    pub collect_notifications: bool,
}

impl Default for EngineSettings {
    fn default() -> Self {
        EngineSettings {
            tracking: TrackingParams::default(),
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            producer_queue_capacity: 64,
            combination_cap: DEFAULT_COMBINATION_CAP,
            state_dump: None,
            collect_notifications: false,
        }
    }
}

/// One matcher evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencySample {
    pub query_id: String,
    pub producer_id: String,
    pub window_start_ms: u64,
    pub window_end_ms: u64,
    pub graphs: usize,
    pub notifications: usize,
    pub suppressed: u64,
    pub truncated: bool,
    /// Seal to start of evaluation (queueing).
    pub queue_ms: f64,
    /// Start of evaluation to notification.
    pub matcher_ms: f64,
    pub mean_representation_ms: f64,
}

impl LatencySample {
    pub const CSV_HEADER: &'static str = "query_id,producer_id,window_start_ms,window_end_ms,graphs,notifications,suppressed,truncated,queue_ms,matcher_ms,mean_representation_ms,system_ms";

    /// Mean per-frame representation time plus matcher latency.
    pub fn system_ms(&self) -> f64 {
        self.mean_representation_ms + self.matcher_ms
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            self.query_id,
            self.producer_id,
            self.window_start_ms,
            self.window_end_ms,
            self.graphs,
            self.notifications,
            self.suppressed,
            self.truncated,
            self.queue_ms,
            self.matcher_ms,
            self.mean_representation_ms,
            self.system_ms()
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProducerStats {
    pub producer_id: String,
    pub frames_ingested: u64,
    pub frames_dropped: u64,
    pub representation_ms_total: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryStats {
    pub query_id: String,
    pub windows: u64,
    pub graphs_in_windows: u64,
    pub emitted: u64,
    pub suppressed: u64,
    pub truncated_windows: u64,
    pub states_dropped: u64,
}

#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub producers: Vec<ProducerStats>,
    pub queries: Vec<QueryStats>,
    pub latency: Vec<LatencySample>,
    pub notifications: Vec<MatchNotification>,
    pub wall: Duration,
    pub interrupted: bool,
    /// Set when the sink failed and the run was aborted.
    pub sink_error: Option<String>,
}

impl RunReport {
    pub fn frames_processed(&self) -> u64 {
        self.producers.iter().map(|p| p.frames_ingested).sum()
    }

    pub fn throughput_fps(&self) -> f64 {
        let secs = self.wall.as_secs_f64();
        if secs > 0.0 {
            self.frames_processed() as f64 / secs
        } else {
            0.0
        }
    }

    pub fn query(&self, id: &str) -> Option<&QueryStats> {
        self.queries.iter().find(|q| q.query_id == id)
    }

    pub const METRICS_HEADER: &'static str = "scope,id,metric,value";

    /// Final summary as `scope,id,metric,value` rows.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(Self::METRICS_HEADER);
        out.push('\n');
        let mut row = |scope: &str, id: &str, metric: &str, value: String| {
            out.push_str(&format!("{scope},{id},{metric},{value}\n"));
        };
        row("run", "all", "wall_s", format!("{:.6}", self.wall.as_secs_f64()));
        row("run", "all", "frames_processed", self.frames_processed().to_string());
        row("run", "all", "throughput_fps", format!("{:.3}", self.throughput_fps()));
        row("run", "all", "interrupted", self.interrupted.to_string());
        for p in &self.producers {
            row("producer", &p.producer_id, "frames_ingested", p.frames_ingested.to_string());
            row("producer", &p.producer_id, "frames_dropped", p.frames_dropped.to_string());
            let mean = if p.frames_ingested > 0 {
                p.representation_ms_total / p.frames_ingested as f64
            } else {
                0.0
            };
            row("producer", &p.producer_id, "mean_representation_ms", format!("{mean:.6}"));
        }
        for q in &self.queries {
            row("query", &q.query_id, "windows", q.windows.to_string());
            row("query", &q.query_id, "emitted", q.emitted.to_string());
            row("query", &q.query_id, "suppressed", q.suppressed.to_string());
            row("query", &q.query_id, "truncated_windows", q.truncated_windows.to_string());
            row("query", &q.query_id, "states_dropped", q.states_dropped.to_string());
            let samples: Vec<f64> = self
                .latency
                .iter()
                .filter(|s| s.query_id == q.query_id)
                .map(|s| s.matcher_ms)
                .collect();
            let summary = LatencySummary::of(&samples);
            row("query", &q.query_id, "matcher_ms_mean", format!("{:.6}", summary.mean));
            row("query", &q.query_id, "matcher_ms_p50", format!("{:.6}", summary.p50));
            row("query", &q.query_id, "matcher_ms_p99", format!("{:.6}", summary.p99));
        }
        out
    }

    pub fn latency_csv(&self) -> String {
        let mut out = String::from(LatencySample::CSV_HEADER);
        out.push('\n');
        for s in &self.latency {
            out.push_str(&s.csv_row());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LatencySummary {
    pub mean: f64,
    pub p50: f64,
    pub p99: f64,
}

impl LatencySummary {
    /// Nearest-rank percentiles.
    pub fn of(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut v = samples.to_vec();
        v.sort_by(f64::total_cmp);
        let rank = |q: f64| v[((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        LatencySummary {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            p50: rank(0.50),
            p99: rank(0.99),
        }
    }
}

/// The query register plus the configured producers.
pub struct Engine {
    settings: EngineSettings,
    producers: Vec<(String, Source)>,
    plans: Vec<Arc<QueryPlan>>,
    stop: Arc<AtomicBool>,
}

impl Engine {
    pub fn new(settings: EngineSettings) -> Self {
        Engine {
            settings,
            producers: Vec::new(),
            plans: Vec::new(),
            stop: Arc::new(AtomicBool::new(false)),
        }
    }

    pub fn settings(&self) -> &EngineSettings {
        &self.settings
    }

    pub fn add_producer(&mut self, id: impl Into<String>, source: Source) -> Result<(), EngineError> {
        let id = id.into();
        if self.producers.iter().any(|(p, _)| *p == id) {
            return Err(EngineError::DuplicateProducer(id));
        }
        self.producers.push((id, source));
        Ok(())
    }

    pub fn register_query(&mut self, query_id: &str, veql: &str) -> Result<Arc<QueryPlan>, EngineError> {
        if self.plans.iter().any(|p| p.query_id == query_id) {
            return Err(EngineError::DuplicateQuery(query_id.to_string()));
        }
        let plan = plan_from_text(query_id, veql).map_err(|source| EngineError::Query {
            id: query_id.to_string(),
            source,
        })?;
        for w in &plan.warnings {
            log::warn!("query {query_id}: {w}");
        }
        let plan = Arc::new(plan);
        self.plans.push(Arc::clone(&plan));
        Ok(plan)
    }

    pub fn plans(&self) -> &[Arc<QueryPlan>] {
        &self.plans
    }

    /// Setting the flag stops readers; buffered work is still drained.
    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.stop)
    }

    /// Runs to end of input (or until stopped) and writes notifications to
    /// `sink`, one JSON line each.
    pub fn run(self, sink: Box<dyn Write + Send>) -> Result<RunReport, EngineError> {
        let Engine {
            settings,
            producers,
            plans,
            stop,
        } = self;

        for plan in &plans {
            if !producers.iter().any(|(p, _)| *p == plan.producer) {
                return Err(EngineError::UnknownProducer {
                    query: plan.query_id.clone(),
                    producer: plan.producer.clone(),
                });
            }
        }
        let mut opened = Vec::new();
        for (id, source) in producers {
            let reader = source.open().map_err(|source| EngineError::Source {
                producer: id.clone(),
                source,
            })?;
            opened.push((id, reader));
        }
        let state_dump = match &settings.state_dump {
            Some(path) => {
                let file = File::create(path).map_err(|source| EngineError::Output {
                    what: "state dump",
                    path: path.clone(),
                    source,
                })?;
                let mut w = BufWriter::new(file);
                let _ = writeln!(w, "query_id,producer_id,window_start_ms,window_end_ms,graphs");
                Some(Arc::new(Mutex::new(w)))
            }
            None => None,
        };

        let started = Instant::now();
        let abort = Arc::new(AtomicBool::new(false));

        // Sink.
        let (note_tx, note_rx) = bounded::<MatchNotification>(1024);
        let sink_abort = Arc::clone(&abort);
        let collect = settings.collect_notifications;
        let sink_handle = thread::Builder::new()
            .name("sink".into())
            .spawn(move || sink_loop(sink, note_rx, sink_abort, collect))
            .expect("spawn sink");

        // Matchers.
        let mut dispatchers: BTreeMap<String, StateDispatcher> = BTreeMap::new();
        let mut matcher_handles = Vec::new();
        for plan in &plans {
            let (tx, rx) = bounded::<WindowState>(settings.queue_capacity.max(1));
            dispatchers.insert(plan.query_id.clone(), StateDispatcher::new(tx, Arc::clone(&abort)));
            let plan = Arc::clone(plan);
            let note_tx = note_tx.clone();
            let abort = Arc::clone(&abort);
            let cap = settings.combination_cap;
            let handle = thread::Builder::new()
                .name(format!("matcher-{}", plan.query_id))
                .spawn(move || matcher_loop(plan, rx, note_tx, abort, cap))
                .expect("spawn matcher");
            matcher_handles.push(handle);
        }
        drop(note_tx);

        // Producers.
        let mut producer_handles = Vec::new();
        for (id, reader) in opened {
            let assigners: Vec<(WindowAssigner, StateDispatcher)> = plans
                .iter()
                .filter(|p| p.producer == id)
                .map(|p| {
                    (
                        WindowAssigner::new(WindowConfig::from_plan(p)),
                        dispatchers[&p.query_id].clone(),
                    )
                })
                .collect();
            let (frame_tx, frame_rx) = bounded::<(FrameDetections, Duration)>(settings.producer_queue_capacity.max(1));
            let dropped = Arc::new(AtomicU64::new(0));
            let reader_handle = {
                let (id, stop, abort, dropped) = (id.clone(), Arc::clone(&stop), Arc::clone(&abort), Arc::clone(&dropped));
                thread::Builder::new()
                    .name(format!("reader-{id}"))
                    .spawn(move || reader_loop(FrameReader::new(id, reader), frame_tx, stop, abort, dropped))
                    .expect("spawn reader")
            };
            let builder_handle = {
                let (id, tracking, dump, abort) =
                    (id.clone(), settings.tracking, state_dump.clone(), Arc::clone(&abort));
                thread::Builder::new()
                    .name(format!("builder-{id}"))
                    .spawn(move || builder_loop(id, tracking, frame_rx, assigners, dump, abort))
                    .expect("spawn builder")
            };
            producer_handles.push((id, reader_handle, builder_handle, dropped));
        }

        let mut report = RunReport::default();
        for (id, reader_handle, builder_handle, dropped) in producer_handles {
            reader_handle.join().expect("reader thread panicked");
            let (frames, rep_ms) = builder_handle.join().expect("builder thread panicked");
            report.producers.push(ProducerStats {
                producer_id: id,
                frames_ingested: frames,
                frames_dropped: dropped.load(Ordering::Relaxed),
                representation_ms_total: rep_ms,
            });
        }
        let states_dropped: BTreeMap<String, u64> =
            dispatchers.iter().map(|(k, d)| (k.clone(), d.dropped())).collect();
        drop(dispatchers);
        for (plan, handle) in plans.iter().zip(matcher_handles) {
            let (mut stats, samples) = handle.join().expect("matcher thread panicked");
            stats.states_dropped = states_dropped[&plan.query_id];
            report.queries.push(stats);
            report.latency.extend(samples);
        }
        let (notifications, sink_error) = sink_handle.join().expect("sink thread panicked");
        report.notifications = notifications;
        report.sink_error = sink_error;
        if let Some(dump) = state_dump {
            let _ = dump.lock().expect("dump lock").flush();
        }
        report.wall = started.elapsed();
        report.interrupted = stop.load(Ordering::Relaxed);
        Ok(report)
    }
}

/// Blocking send that gives up once `abort` is raised.
fn send_or_abort<T>(tx: &Sender<T>, item: T, abort: &AtomicBool) -> bool {
    let mut item = item;
    loop {
        if abort.load(Ordering::Relaxed) {
            return false;
        }
        match tx.send_timeout(item, Duration::from_millis(20)) {
            Ok(()) => return true,
            Err(SendTimeoutError::Timeout(i)) => item = i,
            Err(SendTimeoutError::Disconnected(_)) => return false,
        }
    }
}

fn reader_loop(
    mut reader: FrameReader<Box<dyn BufRead + Send>>,
    tx: Sender<(FrameDetections, Duration)>,
    stop: Arc<AtomicBool>,
    abort: Arc<AtomicBool>,
    dropped: Arc<AtomicU64>,
) {
    while !stop.load(Ordering::Relaxed) && !abort.load(Ordering::Relaxed) {
        match reader.next_event() {
            Ok(Some(ReadEvent::Frame(frame))) => {
                if !send_or_abort(&tx, (frame, reader.last_parse_time()), &abort) {
                    break;
                }
            }
            Ok(Some(ReadEvent::Dropped(e))) => {
                dropped.fetch_add(1, Ordering::Relaxed);
                log::warn!("producer {}: dropped line: {e}", reader.producer_id());
            }
            Ok(None) => break,
            Err(e)
                if matches!(
                    e.kind(),
                    io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut | io::ErrorKind::Interrupted
                ) => {}
            Err(e) => {
                log::error!("producer {}: read failed: {e}", reader.producer_id());
                break;
            }
        }
    }
}

fn builder_loop(
    producer_id: String,
    tracking: TrackingParams,
    rx: Receiver<(FrameDetections, Duration)>,
    mut assigners: Vec<(WindowAssigner, StateDispatcher)>,
    dump: Option<Arc<Mutex<BufWriter<File>>>>,
    abort: Arc<AtomicBool>,
) -> (u64, f64) {
    let mut builder = GraphBuilder::new(tracking);
    let mut frames = 0u64;
    let mut rep_total = 0.0;
    let dispatch = |states: Vec<WindowState>, d: &StateDispatcher| {
        for s in states {
            if let Some(dump) = &dump {
                let _ = writeln!(dump.lock().expect("dump lock"), "{}", s.dump_line());
            }
            if let Err(e) = d.dispatch(s) {
                log::warn!("producer {producer_id}: window state dropped: {e}");
            }
        }
    };
    for (frame, parse_time) in rx.iter() {
        if abort.load(Ordering::Relaxed) {
            break;
        }
        let t0 = Instant::now();
        let graph = builder.push(&frame);
        let rep_ms = (parse_time + t0.elapsed()).as_secs_f64() * 1e3;
        frames += 1;
        rep_total += rep_ms;
        for (assigner, d) in assigners.iter_mut() {
            dispatch(assigner.accept_timed(Arc::clone(&graph), rep_ms), d);
        }
    }
    for (assigner, d) in assigners.iter_mut() {
        dispatch(assigner.flush(), d);
    }
    (frames, rep_total)
}

fn matcher_loop(
    plan: Arc<QueryPlan>,
    rx: Receiver<WindowState>,
    note_tx: Sender<MatchNotification>,
    abort: Arc<AtomicBool>,
    cap: usize,
) -> (QueryStats, Vec<LatencySample>) {
    let mut stats = QueryStats {
        query_id: plan.query_id.clone(),
        ..QueryStats::default()
    };
    let mut samples = Vec::new();
    for state in rx.iter() {
        let received = Instant::now();
        let outcome = evaluate_window(&state, &plan, cap);
        let matcher_ms = received.elapsed().as_secs_f64() * 1e3;
        stats.windows += 1;
        stats.graphs_in_windows += state.graphs.len() as u64;
        stats.emitted += outcome.notifications.len() as u64;
        stats.suppressed += outcome.suppressed;
        stats.truncated_windows += u64::from(outcome.truncated);
        samples.push(LatencySample {
            query_id: plan.query_id.clone(),
            producer_id: state.producer_id.clone(),
            window_start_ms: state.window_start_ms,
            window_end_ms: state.window_end_ms,
            graphs: state.graphs.len(),
            notifications: outcome.notifications.len(),
            suppressed: outcome.suppressed,
            truncated: outcome.truncated,
            queue_ms: received.duration_since(state.sealed_at).as_secs_f64() * 1e3,
            matcher_ms,
            mean_representation_ms: state.mean_representation_ms(),
        });
        for n in outcome.notifications {
            if !send_or_abort(&note_tx, n, &abort) {
                break;
            }
        }
    }
    (stats, samples)
}

fn sink_loop(
    sink: Box<dyn Write + Send>,
    rx: Receiver<MatchNotification>,
    abort: Arc<AtomicBool>,
    collect: bool,
) -> (Vec<MatchNotification>, Option<String>) {
    let mut w = BufWriter::new(sink);
    let mut kept = Vec::new();
    let mut error = None;
    let write = |w: &mut BufWriter<Box<dyn Write + Send>>, n: &MatchNotification| -> io::Result<()> {
        w.write_all(n.to_json_line().as_bytes())?;
        w.write_all(b"\n")?;
        if rx.is_empty() {
            w.flush()?;
        }
        Ok(())
    };
    for n in rx.iter() {
        if error.is_none() {
            if let Err(e) = write(&mut w, &n) {
                log::error!("sink write failed: {e}");
                error = Some(e.to_string());
                abort.store(true, Ordering::Relaxed);
            }
        }
        if collect {
            kept.push(n);
        }
    }
    if error.is_none() {
        if let Err(e) = w.flush() {
            error = Some(e.to_string());
        }
    }
    (kept, error)
}

// Configuration file.

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    engine: EngineSection,
    #[serde(default)]
    producers: BTreeMap<String, ProducerEntry>,
    #[serde(default)]
    queries: BTreeMap<String, QueryEntry>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EngineSection {
    output: Option<String>,
    queue_capacity: Option<usize>,
    producer_queue_capacity: Option<usize>,
    combination_cap: Option<usize>,
    iou_threshold: Option<f64>,
    cosine_threshold: Option<f64>,
    state_dump: Option<PathBuf>,
    metrics: Option<PathBuf>,
    latency_samples: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProducerEntry {
    file: Option<PathBuf>,
    tcp: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryEntry {
    file: Option<PathBuf>,
    text: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    File(PathBuf),
    Tcp(String),
}

impl SourceSpec {
    pub fn into_source(self) -> Source {
        match self {
            SourceSpec::File(p) => Source::File(p),
            SourceSpec::Tcp(a) => Source::Tcp(a),
        }
    }
}

/// Where notifications go; `-` on the command line means standard output.
#[derive(Debug, Clone, PartialEq)]
pub enum SinkSpec {
    Stdout,
    File(PathBuf),
}

impl SinkSpec {
    pub fn parse(s: &str) -> Self {
        if s == "-" {
            SinkSpec::Stdout
        } else {
            SinkSpec::File(PathBuf::from(s))
        }
    }

    pub fn open(&self) -> Result<Box<dyn Write + Send>, EngineError> {
        Ok(match self {
            SinkSpec::Stdout => Box::new(io::stdout()),
            SinkSpec::File(p) => Box::new(File::create(p).map_err(|source| EngineError::Output {
                what: "output",
                path: p.clone(),
                source,
            })?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub producers: Vec<(String, SourceSpec)>,
    /// `(query_id, VEQL text)`.
    pub queries: Vec<(String, String)>,
    pub sink: SinkSpec,
    pub tracking: TrackingParams,
    pub queue_capacity: usize,
    pub producer_queue_capacity: usize,
    pub combination_cap: usize,
    pub state_dump: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub latency_samples: Option<PathBuf>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let s = EngineSettings::default();
        EngineConfig {
            producers: Vec::new(),
            queries: Vec::new(),
            sink: SinkSpec::Stdout,
            tracking: s.tracking,
            queue_capacity: s.queue_capacity,
            producer_queue_capacity: s.producer_queue_capacity,
            combination_cap: s.combination_cap,
            state_dump: None,
            metrics: None,
            latency_samples: None,
        }
    }
}

impl EngineConfig {
    /// Reads a TOML config; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EngineError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, EngineError> {
        let file: ConfigFile =
            toml::from_str(text).map_err(|e| EngineError::Config(e.to_string()))?;
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let mut cfg = EngineConfig::default();
        for (id, entry) in file.producers {
            let spec = match (entry.file, entry.tcp) {
                (Some(f), None) => SourceSpec::File(resolve(f)),
                (None, Some(a)) => SourceSpec::Tcp(a),
                _ => {
                    return Err(EngineError::Config(format!(
                        "producer `{id}` needs exactly one of `file` or `tcp`"
                    )))
                }
            };
            cfg.producers.push((id, spec));
        }
        for (id, entry) in file.queries {
            let text = match (entry.file, entry.text) {
                (Some(f), None) => {
                    let p = resolve(f);
                    std::fs::read_to_string(&p).map_err(|e| {
                        EngineError::Config(format!("query `{id}`: cannot read {}: {e}", p.display()))
                    })?
                }
                (None, Some(t)) => t,
                _ => {
                    return Err(EngineError::Config(format!(
                        "query `{id}` needs exactly one of `file` or `text`"
                    )))
                }
            };
            cfg.queries.push((id, text));
        }
        let e = file.engine;
        if let Some(o) = e.output {
            cfg.sink = match SinkSpec::parse(&o) {
                SinkSpec::File(p) => SinkSpec::File(resolve(p)),
                s => s,
            };
        }
        if let Some(v) = e.queue_capacity {
            cfg.queue_capacity = v;
        }
        if let Some(v) = e.producer_queue_capacity {
            cfg.producer_queue_capacity = v;
        }
        if let Some(v) = e.combination_cap {
            cfg.combination_cap = v;
        }
        if let Some(v) = e.iou_threshold {
            cfg.tracking.iou_threshold = v;
        }
        if let Some(v) = e.cosine_threshold {
            cfg.tracking.cosine_sim_threshold = v;
        }
        cfg.state_dump = e.state_dump.map(resolve);
        cfg.metrics = e.metrics.map(resolve);
        cfg.latency_samples = e.latency_samples.map(resolve);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.queue_capacity == 0 || self.producer_queue_capacity == 0 {
            return Err(EngineError::Config("queue capacities must be positive".into()));
        }
        if self.combination_cap == 0 {
            return Err(EngineError::Config("combination_cap must be positive".into()));
        }
        let t = self.tracking;
        if !(0.0..=1.0).contains(&t.iou_threshold) || !(-1.0..=1.0).contains(&t.cosine_sim_threshold) {
            return Err(EngineError::Config(
                "iou_threshold must be in [0,1] and cosine_threshold in [-1,1]".into(),
            ));
        }
        Ok(())
    }

    pub fn settings(&self) -> EngineSettings {
        EngineSettings {
            tracking: self.tracking,
            queue_capacity: self.queue_capacity,
            producer_queue_capacity: self.producer_queue_capacity,
            combination_cap: self.combination_cap,
            state_dump: self.state_dump.clone(),
            collect_notifications: false,
        }
    }

    /// Builds an engine with every producer and query registered.
    pub fn build(&self) -> Result<Engine, EngineError> {
        self.validate()?;
        let mut engine = Engine::new(self.settings());
        for (id, spec) in &self.producers {
            engine.add_producer(id.clone(), spec.clone().into_source())?;
        }
        for (id, text) in &self.queries {
            engine.register_query(id, text)?;
        }
        Ok(engine)
    }
}
