//! Synthetic detection streams with scripted patterns, ground truth computed
//! from the underlying object states, and the accuracy, latency and
//! throughput experiments built on top of them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Engine, EngineError, EngineSettings, LatencySample, LatencySummary, Source};
use crate::ingest::{BoundingBox, DetectionRecord, FrameDetections};
use crate::matcher::MatchNotification;
use crate::temporal::TemporalOperator;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid bench spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn spec_err(msg: impl Into<String>) -> BenchError {
    BenchError::Spec(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Probability that a detection is missing from its frame.
    pub dropout: f64,
    /// Confidences move by up to this much either way.
    pub confidence_jitter: f64,
    pub bbox_jitter_px: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            dropout: 0.0,
            confidence_jitter: 0.0,
            bbox_jitter_px: 0.0,
        }
    }
}

/// A pattern injected over `[start_s, end_s)`.
///
/// Pattern text is one of `X`, `X then Y`, `X with Y`, `X left of Y`,
/// `count X > N` or `count X = N`, where an object is `[Color] Label`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptItem {
    pub start_s: f64,
    pub end_s: f64,
    pub pattern: String,
    /// Cap on how many frames each participant stays visible.
    #[serde(default)]
    pub hold_frames: Option<u32>,
    /// Re-inject every this many seconds until the end of the stream.
    #[serde(default)]
    pub repeat_every_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticStreamSpec {
    pub producers: usize,
    pub fps: f64,
    pub duration_s: f64,
    pub frame_size: [f64; 2],
    /// Range of background objects kept in view.
    pub objects_per_frame: [usize; 2],
    /// Background label weights.
    pub labels: BTreeMap<String, f64>,
    pub colors: Vec<String>,
    pub max_speed_px: f64,
    pub lifetime_s: [f64; 2],
    /// Tumbling window used by the accuracy queries.
    pub window_s: f64,
    pub noise: NoiseSpec,
    pub script: Vec<ScriptItem>,
    pub latency_window_s: Vec<f64>,
    pub latency_repeats: usize,
    pub sweep_producers: Vec<usize>,
    pub sweep_duration_s: f64,
}

impl Default for SyntheticStreamSpec {
    fn default() -> Self {
        SyntheticStreamSpec {
            producers: 1,
            fps: 30.0,
            duration_s: 60.0,
            frame_size: [1280.0, 720.0],
            objects_per_frame: [0, 2],
            labels: [("Bus", 1.0), ("Truck", 1.0), ("Bicycle", 1.0)]
                .into_iter()
                .map(|(l, w)| (l.to_string(), w))
                .collect(),
            colors: ["Black", "Red", "White", "Blue"].map(String::from).to_vec(),
            max_speed_px: 8.0,
            lifetime_s: [1.0, 6.0],
            window_s: 10.0,
            noise: NoiseSpec::default(),
            script: Vec::new(),
            latency_window_s: vec![5.0, 30.0, 60.0],
            latency_repeats: 3,
            sweep_producers: vec![1, 5, 10, 15],
            sweep_duration_s: 20.0,
        }
    }
}

impl SyntheticStreamSpec {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        let spec: Self = toml::from_str(text).map_err(|e| spec_err(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = fs::read_to_string(path).map_err(|source| BenchError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.producers == 0 {
            return Err(spec_err("producers must be at least 1"));
        }
        if !positive(self.fps) || self.fps > 1000.0 {
            return Err(spec_err("fps must be in (0, 1000]"));
        }
        if !positive(self.duration_s) || !positive(self.window_s) {
            return Err(spec_err("duration_s and window_s must be positive"));
        }
        if !positive(self.frame_size[0]) || !positive(self.frame_size[1]) {
            return Err(spec_err("frame_size must be positive"));
        }
        if self.objects_per_frame[0] > self.objects_per_frame[1] {
            return Err(spec_err("objects_per_frame must be [min, max]"));
        }
        if self.objects_per_frame[1] > 0
            && (self.labels.is_empty() || self.labels.values().any(|w| !positive(*w)))
        {
            return Err(spec_err("background labels need positive weights"));
        }
        if !positive(self.lifetime_s[0]) || self.lifetime_s[0] > self.lifetime_s[1] {
            return Err(spec_err("lifetime_s must be [min, max] with min > 0"));
        }
        if !(self.max_speed_px.is_finite() && self.max_speed_px >= 0.0) {
            return Err(spec_err("max_speed_px must be >= 0"));
        }
        let n = &self.noise;
        if !(0.0..=1.0).contains(&n.dropout) {
            return Err(spec_err("noise.dropout must be in [0, 1]"));
        }
        if !(n.confidence_jitter >= 0.0 && n.bbox_jitter_px >= 0.0) {
            return Err(spec_err("noise jitter must be >= 0"));
        }
        for item in &self.script {
            if !(item.start_s >= 0.0 && item.end_s > item.start_s) {
                return Err(spec_err(format!("script `{}`: need 0 <= start_s < end_s", item.pattern)));
            }
            if item.repeat_every_s.is_some_and(|r| !positive(r)) {
                return Err(spec_err(format!("script `{}`: repeat_every_s must be positive", item.pattern)));
            }
            Injection::parse(&item.pattern)?;
        }
        if self.latency_window_s.iter().any(|w| !positive(*w)) {
            return Err(spec_err("latency_window_s entries must be positive"));
        }
        if self.sweep_producers.contains(&0) || !positive(self.sweep_duration_s) {
            return Err(spec_err("sweep needs positive producer counts and duration"));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.duration_s * self.fps).round() as usize
    }

    pub fn timestamp_ms(&self, frame: usize) -> u64 {
        (frame as f64 * 1000.0 / self.fps).round() as u64
    }

    pub fn window_ms(&self) -> u64 {
        (self.window_s * 1000.0).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ObjSpec {
    label: String,
    color: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
enum Injection {
    Single(ObjSpec),
    Then(ObjSpec, ObjSpec),
    With(ObjSpec, ObjSpec),
    LeftOf(ObjSpec, ObjSpec),
    Count(ObjSpec, usize),
}

impl Injection {
    fn parse(text: &str) -> Result<Self, BenchError> {
        let words: Vec<&str> = text.split_whitespace().collect();
        let bad = || spec_err(format!("cannot parse script pattern `{text}`"));
        let obj = |w: &[&str]| -> Result<ObjSpec, BenchError> {
            match w {
                [label] => Ok(ObjSpec {
                    label: label.to_string(),
                    color: None,
                }),
                [color, label] => Ok(ObjSpec {
                    label: label.to_string(),
                    color: Some(color.to_string()),
                }),
                _ => Err(bad()),
            }
        };
        let lower: Vec<String> = words.iter().map(|w| w.to_ascii_lowercase()).collect();
        if lower.first().map(String::as_str) == Some("count") {
            let n = words.len();
            if n < 4 {
                return Err(bad());
            }
            let value: usize = words[n - 1].parse().map_err(|_| bad())?;
            let copies = match words[n - 2] {
                ">" => value + 1,
                "=" => value,
                _ => return Err(bad()),
            };
            return Ok(Injection::Count(obj(&words[1..n - 2])?, copies));
        }
        if let Some(i) = lower.iter().position(|w| w == "then") {
            return Ok(Injection::Then(obj(&words[..i])?, obj(&words[i + 1..])?));
        }
        if let Some(i) = lower.iter().position(|w| w == "with") {
            return Ok(Injection::With(obj(&words[..i])?, obj(&words[i + 1..])?));
        }
        if let Some(i) = lower.windows(2).position(|w| w[0] == "left" && w[1] == "of") {
            return Ok(Injection::LeftOf(obj(&words[..i])?, obj(&words[i + 2..])?));
        }
        Ok(Injection::Single(obj(&words)?))
    }
}

/// Ground-truth state of one object in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthObject {
    pub object: u64,
    pub label: String,
    pub color: Option<String>,
    pub bbox: BoundingBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthFrame {
    pub frame_index: u64,
    pub timestamp_ms: u64,
    pub objects: Vec<TruthObject>,
}

#[derive(Debug, Clone)]
pub struct ProducerStream {
    pub producer_id: String,
    pub truth: Vec<TruthFrame>,
    /// Noisy detections as the engine sees them.
    pub frames: Vec<FrameDetections>,
}

impl ProducerStream {
    pub fn jsonl(&self) -> String {
        let mut out = String::new();
        for f in &self.frames {
            out.push_str(&f.to_line());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedStream {
    pub spec: SyntheticStreamSpec,
    pub seed: u64,
    pub producers: Vec<ProducerStream>,
}

impl GeneratedStream {
    /// All producers interleaved by timestamp.
    pub fn merged_jsonl(&self) -> String {
        let mut all: Vec<(u64, usize, &FrameDetections)> = self
            .producers
            .iter()
            .enumerate()
            .flat_map(|(p, s)| s.frames.iter().map(move |f| (f.timestamp_ms, p, f)))
            .collect();
        all.sort_by_key(|&(t, p, _)| (t, p));
        let mut out = String::new();
        for (_, _, f) in all {
            out.push_str(&f.to_line());
            out.push('\n');
        }
        out
    }
}

pub fn producer_name(i: usize) -> String {
    format!("P{}", i + 1)
}

#[derive(Debug, Clone)]
struct Actor {
    id: u64,
    label: String,
    color: Option<String>,
    first: usize,
    last: usize,
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    vx: f64,
    vy: f64,
    confidence: f64,
}

/// Position on a segment of length `span`, bouncing off both ends.
fn bounce(p: f64, span: f64) -> f64 {
    if span <= 0.0 {
        return 0.0;
    }
    let period = 2.0 * span;
    let m = p.rem_euclid(period);
    if m <= span {
        m
    } else {
        period - m
    }
}

impl Actor {
    fn at(&self, frame: usize, size: [f64; 2]) -> BoundingBox {
        let dt = (frame - self.first) as f64;
        let x = bounce(self.x0 + self.vx * dt, size[0] - self.w);
        let y = bounce(self.y0 + self.vy * dt, size[1] - self.h);
        BoundingBox::new(x, y, self.w, self.h).expect("actor boxes are valid")
    }
}

fn nominal_size(label: &str) -> (f64, f64) {
    match label {
        "Car" => (80.0, 50.0),
        "Person" => (30.0, 70.0),
        "Bus" | "Truck" => (120.0, 70.0),
        _ => (50.0, 50.0),
    }
}

struct TruthBuilder<'a> {
    spec: &'a SyntheticStreamSpec,
    rng: ChaCha8Rng,
    next_id: u64,
    actors: Vec<Actor>,
}

impl<'a> TruthBuilder<'a> {
    fn actor(&mut self, obj: &ObjSpec, first: usize, last: usize, x: f64, y: f64, moving: bool) -> Actor {
        let (w, h) = nominal_size(&obj.label);
        let [fw, fh] = self.spec.frame_size;
        let (w, h) = (w.min(fw), h.min(fh));
        let v = self.spec.max_speed_px;
        let (vx, vy) = if moving && v > 0.0 {
            (self.rng.gen_range(-v..=v), self.rng.gen_range(-v..=v) / 2.0)
        } else {
            (0.0, 0.0)
        };
        self.next_id += 1;
        Actor {
            id: self.next_id,
            label: obj.label.clone(),
            color: obj.color.clone(),
            first,
            last,
            x0: x.clamp(0.0, fw - w),
            y0: y.clamp(0.0, fh - h),
            w,
            h,
            vx,
            vy,
            confidence: self.rng.gen_range(0.6..0.99),
        }
    }

    fn random_point(&mut self) -> (f64, f64) {
        let [fw, fh] = self.spec.frame_size;
        (self.rng.gen_range(0.0..fw), self.rng.gen_range(0.0..fh))
    }

    fn inject(&mut self, inj: &Injection, first: usize, last: usize, hold: Option<u32>) {
        let n = self.spec.frame_count();
        if first >= n {
            return;
        }
        let last = last.min(n - 1);
        let held = |from: usize, to: usize| match hold {
            Some(h) => to.min(from + h.max(1) as usize - 1),
            None => to,
        };
        let [fw, fh] = self.spec.frame_size;
        match inj {
            Injection::Single(o) => {
                let (x, y) = self.random_point();
                let a = self.actor(o, first, held(first, last), x, y, false);
                self.actors.push(a);
            }
            Injection::Then(a, b) => {
                let span = last - first + 1;
                let a_last = first + (span * 2 / 5).max(1) - 1;
                let b_first = (first + span * 3 / 5).max(a_last + 1).min(last);
                let (x, y) = self.random_point();
                let first_actor = self.actor(a, first, held(first, a_last), x, y, false);
                self.actors.push(first_actor);
                let (x, y) = self.random_point();
                let second = self.actor(b, b_first, held(b_first, last), x, y, false);
                self.actors.push(second);
            }
            Injection::With(a, b) => {
                for o in [a, b] {
                    let (x, y) = self.random_point();
                    let actor = self.actor(o, first, held(first, last), x, y, false);
                    self.actors.push(actor);
                }
            }
            Injection::LeftOf(a, b) => {
                let y = self.rng.gen_range(0.1 * fh..0.6 * fh);
                let xa = self.rng.gen_range(0.05 * fw..0.3 * fw);
                let xb = self.rng.gen_range(0.6 * fw..0.85 * fw);
                let left = self.actor(a, first, held(first, last), xa, y, false);
                let right = self.actor(b, first, held(first, last), xb, y, false);
                self.actors.push(left);
                self.actors.push(right);
            }
            Injection::Count(o, copies) => {
                // One lane of non-overlapping copies.
                let (w, h) = nominal_size(&o.label);
                let per_row = ((fw / (w * 1.25)).floor() as usize).max(1);
                for k in 0..*copies {
                    let x = (k % per_row) as f64 * w * 1.25;
                    let y = (k / per_row) as f64 * h * 1.25;
                    let a = self.actor(o, first, held(first, last), x, y, false);
                    self.actors.push(a);
                }
            }
        }
    }

    fn background(&mut self) {
        let [lo, hi] = self.spec.objects_per_frame;
        if hi == 0 {
            return;
        }
        let labels: Vec<&String> = self.spec.labels.keys().collect();
        let weights = WeightedIndex::new(self.spec.labels.values()).expect("validated weights");
        let n = self.spec.frame_count();
        let fps = self.spec.fps;
        let mut alive: Vec<usize> = Vec::new();
        for frame in 0..n {
            alive.retain(|&end| end >= frame);
            let target = self.rng.gen_range(lo..=hi);
            while alive.len() < target {
                let label = labels[weights.sample(&mut self.rng)].clone();
                let color = if self.spec.colors.is_empty() {
                    None
                } else {
                    Some(self.spec.colors[self.rng.gen_range(0..self.spec.colors.len())].clone())
                };
                let life = self.rng.gen_range(self.spec.lifetime_s[0]..=self.spec.lifetime_s[1]);
                let last = (frame + (life * fps).round().max(1.0) as usize - 1).min(n - 1);
                let (x, y) = self.random_point();
                let a = self.actor(&ObjSpec { label, color }, frame, last, x, y, true);
                alive.push(last);
                self.actors.push(a);
            }
        }
    }
}

fn frame_of(spec: &SyntheticStreamSpec, seconds: f64) -> usize {
    (seconds * spec.fps).round() as usize
}

fn generate_truth(spec: &SyntheticStreamSpec, seed: u64, producer: usize) -> Vec<TruthFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * producer as u64);
    let mut b = TruthBuilder {
        spec,
        rng,
        next_id: 0,
        actors: Vec::new(),
    };
    for item in &spec.script {
        let inj = Injection::parse(&item.pattern).expect("validated pattern");
        let mut start = item.start_s;
        loop {
            let end = start + (item.end_s - item.start_s);
            let first = frame_of(spec, start);
            let last = frame_of(spec, end).saturating_sub(1).max(first);
            b.inject(&inj, first, last, item.hold_frames);
            match item.repeat_every_s {
                Some(r) if start + r < spec.duration_s => start += r,
                _ => break,
            }
        }
    }
    b.background();

    let n = spec.frame_count();
    let mut frames: Vec<TruthFrame> = (0..n)
        .map(|i| TruthFrame {
            frame_index: i as u64,
            timestamp_ms: spec.timestamp_ms(i),
            objects: Vec::new(),
        })
        .collect();
    for a in &b.actors {
        for (i, f) in frames.iter_mut().enumerate().take(a.last + 1).skip(a.first) {
            f.objects.push(TruthObject {
                object: a.id,
                label: a.label.clone(),
                color: a.color.clone(),
                bbox: a.at(i, spec.frame_size),
                confidence: a.confidence,
            });
        }
    }
    frames
}

/// Applies detector noise. Every detection consumes the same four uniforms
/// whatever the settings, so raising the dropout rate only ever removes
/// detections for a fixed seed.
fn observe(spec: &SyntheticStreamSpec, seed: u64, producer: usize, truth: &[TruthFrame]) -> Vec<FrameDetections> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * producer as u64 + 1);
    let noise = &spec.noise;
    let producer_id = producer_name(producer);
    truth
        .iter()
        .map(|tf| {
            let mut detections = Vec::with_capacity(tf.objects.len());
            for o in &tf.objects {
                let u: [f64; 4] = rng.gen();
                if u[0] < noise.dropout {
                    continue;
                }
                let confidence = (o.confidence + (2.0 * u[1] - 1.0) * noise.confidence_jitter).clamp(0.01, 1.0);
                let jx = (2.0 * u[2] - 1.0) * noise.bbox_jitter_px;
                let jy = (2.0 * u[3] - 1.0) * noise.bbox_jitter_px;
                let bbox = BoundingBox::new(
                    (o.bbox.x_min + jx).max(0.0),
                    (o.bbox.y_min + jy).max(0.0),
                    o.bbox.width,
                    o.bbox.height,
                )
                .expect("jittered box stays valid");
                let mut attributes = BTreeMap::new();
                if let Some(c) = &o.color {
                    attributes.insert("color".to_string(), c.clone());
                }
                detections.push(DetectionRecord {
                    label: o.label.clone(),
                    confidence,
                    bbox,
                    attributes,
                    feature: None,
                });
            }
            FrameDetections {
                producer_id: producer_id.clone(),
                frame_index: tf.frame_index,
                timestamp_ms: tf.timestamp_ms,
                detections,
            }
        })
        .collect()
}

pub fn generate_stream(spec: &SyntheticStreamSpec, seed: u64) -> Result<GeneratedStream, BenchError> {
    spec.validate()?;
    let producers = (0..spec.producers)
        .map(|p| {
            let truth = generate_truth(spec, seed, p);
            let frames = observe(spec, seed, p, &truth);
            ProducerStream {
                producer_id: producer_name(p),
                truth,
                frames,
            }
        })
        .collect();
    Ok(GeneratedStream {
        spec: spec.clone(),
        seed,
        producers,
    })
}

/// The five query shapes used for accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Archetype {
    /// Any Car.
    Q1,
    /// Any Black Car.
    Q2,
    /// A Black Car left of a non-Black Car.
    Q3,
    /// A Car followed by a Person.
    Q4,
    /// More than 5 Cars in every frame.
    Q5,
}

impl Archetype {
    pub const ALL: [Archetype; 5] = [Self::Q1, Self::Q2, Self::Q3, Self::Q4, Self::Q5];

    pub fn name(self) -> &'static str {
        match self {
            Self::Q1 => "Q1",
            Self::Q2 => "Q2",
            Self::Q3 => "Q3",
            Self::Q4 => "Q4",
            Self::Q5 => "Q5",
        }
    }

    pub fn query_id(self, producer: &str) -> String {
        format!("{}@{producer}", self.name())
    }

    pub fn veql(self, producer: &str, window_s: f64) -> String {
        let tail = format!("WITHIN TIMEFRAME_WINDOW({window_s}) WITH_CONFIDENCE > 0.5");
        match self {
            Self::Q1 => format!("SELECT Object FROM {producer} WHERE Object.label = 'Car' {tail}"),
            Self::Q2 => format!(
                "SELECT Object FROM {producer} WHERE Object.label = 'Car' AND Object.attrcolor = 'Black' {tail}"
            ),
            Self::Q3 => format!(
                "SELECT Left(Object1, Object2) FROM {producer} WHERE Object1.label = 'Car' \
                 AND Object1.attrcolor = 'Black' AND Object2.label = 'Car' \
                 AND Object2.attrcolor = 'Not Black' {tail}"
            ),
            Self::Q4 => format!(
                "SELECT SEQ(Object1, Object2) FROM {producer} WHERE Object1.label = 'Car' \
                 AND Object2.label = 'Person' {tail}"
            ),
            Self::Q5 => format!(
                "SELECT HIGH_TRAFFIC_FLOW(Object) FROM {producer} WHERE Object.label = 'Car' \
                 AND COUNT(Object) > 5 FOR EACH FRAME {tail}"
            ),
        }
    }

    /// Whether the pattern holds over the true object states of one window.
    pub fn holds(self, frames: &[&TruthFrame]) -> bool {
        let is_car = |o: &&TruthObject| o.label == "Car";
        let black = |o: &TruthObject| o.color.as_deref() == Some("Black");
        match self {
            Self::Q1 => frames.iter().any(|f| f.objects.iter().any(|o| is_car(&o))),
            Self::Q2 => frames
                .iter()
                .any(|f| f.objects.iter().any(|o| is_car(&o) && black(o))),
            Self::Q3 => frames.iter().any(|f| {
                f.objects.iter().filter(is_car).filter(|o| black(o)).any(|a| {
                    f.objects
                        .iter()
                        .filter(is_car)
                        .filter(|o| o.color.is_some() && !black(o))
                        .any(|b| a.object != b.object && left_of(&a.bbox, &b.bbox))
                })
            }),
            Self::Q4 => {
                let first_car = frames
                    .iter()
                    .filter(|f| f.objects.iter().any(|o| is_car(&o)))
                    .map(|f| f.timestamp_ms)
                    .min();
                let last_person = frames
                    .iter()
                    .filter(|f| f.objects.iter().any(|o| o.label == "Person"))
                    .map(|f| f.timestamp_ms)
                    .max();
                matches!((first_car, last_person), (Some(c), Some(p)) if c < p)
            }
            Self::Q5 => !frames.is_empty() && frames.iter().all(|f| f.objects.iter().filter(is_car).count() > 5),
        }
    }
}

/// Dominant-axis test on box centres; ties go to the horizontal axis.
fn left_of(a: &BoundingBox, b: &BoundingBox) -> bool {
    let dx = (a.x_min + a.width / 2.0) - (b.x_min + b.width / 2.0);
    let dy = (a.y_min + a.height / 2.0) - (b.y_min + b.height / 2.0);
    dx < 0.0 && dx.abs() >= dy.abs()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroundTruthRow {
    pub query_id: String,
    pub producer_id: String,
    pub window_start_ms: u64,
    pub window_end_ms: u64,
    pub expected: bool,
}

/// One row per (archetype, producer, non-empty tumbling window).
pub fn ground_truth(stream: &GeneratedStream, archetypes: &[Archetype]) -> Vec<GroundTruthRow> {
    let len = stream.spec.window_ms();
    let mut rows = Vec::new();
    for p in &stream.producers {
        let mut windows: BTreeMap<u64, Vec<&TruthFrame>> = BTreeMap::new();
        for f in &p.truth {
            windows.entry(f.timestamp_ms / len * len).or_default().push(f);
        }
        for &a in archetypes {
            for (&start, frames) in &windows {
                rows.push(GroundTruthRow {
                    query_id: a.query_id(&p.producer_id),
                    producer_id: p.producer_id.clone(),
                    window_start_ms: start,
                    window_end_ms: start + len,
                    expected: a.holds(frames),
                });
            }
        }
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

/// Precision and recall are 1 when their denominator is empty; F is 0 when
/// both are 0.
pub fn f_score(tp: u64, fp: u64, fn_: u64) -> FScore {
    let ratio = |num: u64, den: u64| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    FScore { precision, recall, f }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowVerdict {
    pub query_id: String,
    pub producer_id: String,
    pub window_start_ms: u64,
    pub expected: bool,
    pub notified: bool,
}

/// Joins ground truth with the windows that produced notifications.
/// A notified window missing from the ground truth counts as unexpected.
pub fn judge(gt: &[GroundTruthRow], notifications: &[MatchNotification]) -> Vec<WindowVerdict> {
    let notified: BTreeSet<(&str, &str, u64)> = notifications
        .iter()
        .map(|n| (n.query_id.as_str(), n.producer_id.as_str(), n.window.0))
        .collect();
    let mut seen = BTreeSet::new();
    let mut out: Vec<WindowVerdict> = gt
        .iter()
        .map(|g| {
            let key = (g.query_id.as_str(), g.producer_id.as_str(), g.window_start_ms);
            seen.insert(key);
            WindowVerdict {
                query_id: g.query_id.clone(),
                producer_id: g.producer_id.clone(),
                window_start_ms: g.window_start_ms,
                expected: g.expected,
                notified: notified.contains(&key),
            }
        })
        .collect();
    for key in notified.difference(&seen) {
        out.push(WindowVerdict {
            query_id: key.0.to_string(),
            producer_id: key.1.to_string(),
            window_start_ms: key.2,
            expected: false,
            notified: true,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyRow {
    pub archetype: Archetype,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    /// Pooled over all windows and producers.
    pub pooled: FScore,
    /// Mean of per-window F over windows that are positive in either column.
    pub per_window_f: f64,
}

pub fn accuracy_rows(verdicts: &[WindowVerdict]) -> Vec<AccuracyRow> {
    Archetype::ALL
        .iter()
        .filter_map(|&a| {
            let prefix = format!("{}@", a.name());
            let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
            for v in verdicts.iter().filter(|v| v.query_id.starts_with(&prefix)) {
                match (v.expected, v.notified) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    (false, false) => tn += 1,
                }
            }
            if tp + fp + fn_ + tn == 0 {
                return None;
            }
            let judged = tp + fp + fn_;
            Some(AccuracyRow {
                archetype: a,
                tp,
                fp,
                fn_,
                tn,
                pooled: f_score(tp, fp, fn_),
                per_window_f: if judged == 0 { 1.0 } else { tp as f64 / judged as f64 },
            })
        })
        .collect()
}

fn engine_for(stream: &GeneratedStream, only: Option<usize>) -> Result<Engine, BenchError> {
    let mut engine = Engine::new(EngineSettings {
        collect_notifications: true,
        ..EngineSettings::default()
    });
    for (i, p) in stream.producers.iter().enumerate() {
        if only.is_none_or(|o| o == i) {
            engine.add_producer(&p.producer_id, Source::from_bytes(p.jsonl()))?;
        }
    }
    Ok(engine)
}

#[derive(Debug, Clone)]
pub struct AccuracyReport {
    pub ground_truth: Vec<GroundTruthRow>,
    pub notifications: Vec<MatchNotification>,
    pub verdicts: Vec<WindowVerdict>,
    pub rows: Vec<AccuracyRow>,
}

impl AccuracyReport {
    pub fn row(&self, a: Archetype) -> Option<&AccuracyRow> {
        self.rows.iter().find(|r| r.archetype == a)
    }
}

/// Runs the chosen archetypes over every producer and scores them.
pub fn run_accuracy(stream: &GeneratedStream, archetypes: &[Archetype]) -> Result<AccuracyReport, BenchError> {
    let mut engine = engine_for(stream, None)?;
    for p in &stream.producers {
        for &a in archetypes {
            engine.register_query(&a.query_id(&p.producer_id), &a.veql(&p.producer_id, stream.spec.window_s))?;
        }
    }
    let report = engine.run(Box::new(io::sink()))?;
    let ground_truth = ground_truth(stream, archetypes);
    let verdicts = judge(&ground_truth, &report.notifications);
    let rows = accuracy_rows(&verdicts);
    Ok(AccuracyReport {
        ground_truth,
        notifications: report.notifications,
        verdicts,
        rows,
    })
}

pub const LATENCY_OPERATORS: [TemporalOperator; 4] = [
    TemporalOperator::Seq,
    TemporalOperator::Conj,
    TemporalOperator::Eq,
    TemporalOperator::Disj,
];

pub fn temporal_query(op: TemporalOperator, producer: &str, window_s: f64) -> String {
    format!(
        "SELECT {op}(Object1, Object2) FROM {producer} WHERE Object1.label = 'Car' \
         AND Object2.label = 'Person' WITHIN TIMEFRAME_WINDOW({window_s}) WITH_CONFIDENCE > 0.5"
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyRow {
    pub operator: TemporalOperator,
    pub window_s: f64,
    pub windows: usize,
    pub matcher: LatencySummary,
    pub system_mean_ms: f64,
    pub representation_mean_ms: f64,
    pub mean_notifications: f64,
    pub truncated_windows: usize,
}

/// Matcher latency per temporal operator and window length, on the first
/// producer's stream. Each configuration runs alone.
pub fn run_latency(stream: &GeneratedStream) -> Result<(Vec<LatencyRow>, Vec<LatencySample>), BenchError> {
    let producer = &stream.producers[0].producer_id;
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for &w in &stream.spec.latency_window_s {
        for op in LATENCY_OPERATORS {
            let mut samples = Vec::new();
            for _ in 0..stream.spec.latency_repeats.max(1) {
                let mut engine = engine_for(stream, Some(0))?;
                engine.register_query(&format!("{op}/{w}s"), &temporal_query(op, producer, w))?;
                samples.extend(engine.run(Box::new(io::sink()))?.latency);
            }
            let n = samples.len().max(1) as f64;
            let matcher: Vec<f64> = samples.iter().map(|s| s.matcher_ms).collect();
            rows.push(LatencyRow {
                operator: op,
                window_s: w,
                windows: samples.len(),
                matcher: LatencySummary::of(&matcher),
                system_mean_ms: samples.iter().map(LatencySample::system_ms).sum::<f64>() / n,
                representation_mean_ms: samples.iter().map(|s| s.mean_representation_ms).sum::<f64>() / n,
                mean_notifications: samples.iter().map(|s| s.notifications as f64).sum::<f64>() / n,
                truncated_windows: samples.iter().filter(|s| s.truncated).count(),
            });
            all.extend(samples);
        }
    }
    Ok((rows, all))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub producers: usize,
    pub frames: u64,
    pub wall_s: f64,
    pub throughput_fps: f64,
    pub system_mean_ms: f64,
}

/// Engine-only throughput with all five archetypes on every producer.
pub fn run_sweep(spec: &SyntheticStreamSpec, seed: u64) -> Result<Vec<SweepRow>, BenchError> {
    let mut rows = Vec::new();
    for &n in &spec.sweep_producers {
        let sub = SyntheticStreamSpec {
            producers: n,
            duration_s: spec.sweep_duration_s,
            ..spec.clone()
        };
        let stream = generate_stream(&sub, seed)?;
        let mut engine = engine_for(&stream, None)?;
        for p in &stream.producers {
            for a in Archetype::ALL {
                engine.register_query(&a.query_id(&p.producer_id), &a.veql(&p.producer_id, sub.window_s))?;
            }
        }
        let report = engine.run(Box::new(io::sink()))?;
        let system: Vec<f64> = report.latency.iter().map(LatencySample::system_ms).collect();
        rows.push(SweepRow {
            producers: n,
            frames: report.frames_processed(),
            wall_s: report.wall.as_secs_f64(),
            throughput_fps: report.throughput_fps(),
            system_mean_ms: LatencySummary::of(&system).mean,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub stream: GeneratedStream,
    pub accuracy: AccuracyReport,
    pub latency: Vec<LatencyRow>,
    pub latency_samples: Vec<LatencySample>,
    pub sweep: Vec<SweepRow>,
}

pub fn run_bench(spec: &SyntheticStreamSpec, seed: u64) -> Result<BenchReport, BenchError> {
    let stream = generate_stream(spec, seed)?;
    let accuracy = run_accuracy(&stream, &Archetype::ALL)?;
    let (latency, latency_samples) = run_latency(&stream)?;
    let sweep = run_sweep(spec, seed)?;
    Ok(BenchReport {
        stream,
        accuracy,
        latency,
        latency_samples,
        sweep,
    })
}

impl BenchReport {
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("experiment,subject,parameter,metric,value\n");
        for r in &self.accuracy.rows {
            let a = r.archetype.name();
            for (m, v) in [
                ("tp", r.tp as f64),
                ("fp", r.fp as f64),
                ("fn", r.fn_ as f64),
                ("tn", r.tn as f64),
                ("precision", r.pooled.precision),
                ("recall", r.pooled.recall),
                ("f_pooled", r.pooled.f),
                ("f_per_window", r.per_window_f),
            ] {
                let _ = writeln!(out, "accuracy,{a},window_s={},{m},{v}", self.stream.spec.window_s);
            }
        }
        for r in &self.latency {
            for (m, v) in [
                ("windows", r.windows as f64),
                ("matcher_mean_ms", r.matcher.mean),
                ("matcher_p50_ms", r.matcher.p50),
                ("matcher_p99_ms", r.matcher.p99),
                ("system_mean_ms", r.system_mean_ms),
                ("representation_mean_ms", r.representation_mean_ms),
                ("mean_notifications", r.mean_notifications),
                ("truncated_windows", r.truncated_windows as f64),
            ] {
                let _ = writeln!(out, "latency,{},window_s={},{m},{v}", r.operator, r.window_s);
            }
        }
        for r in &self.sweep {
            for (m, v) in [
                ("frames", r.frames as f64),
                ("wall_s", r.wall_s),
                ("throughput_fps", r.throughput_fps),
                ("system_mean_ms", r.system_mean_ms),
            ] {
                let _ = writeln!(out, "throughput,engine,producers={},{m},{v}", r.producers);
            }
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for r in &self.accuracy.rows {
            let _ = writeln!(
                out,
                "{}: P={:.3} R={:.3} F={:.3} (tp {} fp {} fn {})",
                r.archetype.name(),
                r.pooled.precision,
                r.pooled.recall,
                r.pooled.f,
                r.tp,
                r.fp,
                r.fn_
            );
        }
        for r in &self.latency {
            let _ = writeln!(
                out,
                "{} window {}s: matcher mean {:.3} ms, p99 {:.3} ms, system {:.3} ms",
                r.operator, r.window_s, r.matcher.mean, r.matcher.p99, r.system_mean_ms
            );
        }
        for r in &self.sweep {
            let _ = writeln!(out, "{} producers: {:.0} fps", r.producers, r.throughput_fps);
        }
        out
    }

    /// Writes stream.jsonl, ground_truth.csv, notifications.jsonl,
    /// metrics.csv and latency_samples.csv into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), BenchError> {
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| BenchError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(io_err(&path))
        };
        write("stream.jsonl", self.stream.merged_jsonl())?;

        let gt_path = dir.join("ground_truth.csv");
        let mut w = csv::Writer::from_path(&gt_path)?;
        for row in &self.accuracy.ground_truth {
            w.serialize(row)?;
        }
        w.flush().map_err(io_err(&gt_path))?;

        let mut lines = String::new();
        for n in &self.accuracy.notifications {
            lines.push_str(&n.to_json_line());
            lines.push('\n');
        }
        write("notifications.jsonl", lines)?;
        write("metrics.csv", self.metrics_csv())?;

        let mut samples = format!("{}\n", LatencySample::CSV_HEADER);
        for s in &self.latency_samples {
            samples.push_str(&s.csv_row());
            samples.push('\n');
        }
        write("latency_samples.csv", samples)
    }
}
