use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::Ordering;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use stcep::bench::{self, BenchError, SyntheticStreamSpec};
use stcep::engine::{EngineConfig, EngineError, SinkSpec, SourceSpec};
use stcep::ingest::parse_detection_line;
use stcep::vekg::GraphBuilder;
use stcep::veql::plan_from_text;
use stcep::TrackingParams;

/// Spatiotemporal event matching over object detection streams.
#[derive(Debug, Parser)]
#[command(name = "engine", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run queries over one or more detection streams.
    Run(RunArgs),
    /// Parse and compile a query, then print its plan.
    Check {
        #[arg(long)]
        query: PathBuf,
        #[arg(long, default_value = "q")]
        id: String,
    },
    /// Print the graph built for one frame of a detection file.
    DumpGraph {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        frame: u64,
        /// Defaults to the producer of the first valid line.
        #[arg(long)]
        producer: Option<String>,
        #[arg(long, default_value_t = 0.3)]
        iou_threshold: f64,
        #[arg(long, default_value_t = 0.7)]
        cosine_threshold: f64,
    },
    /// Generate a synthetic stream and run the accuracy, latency and
    /// throughput experiments.
    Bench {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `PRODUCER=path` of a JSONL detection file.
    #[arg(long = "input", value_name = "PRODUCER=PATH")]
    inputs: Vec<String>,
    /// `PRODUCER=host:port` of a JSONL detection stream.
    #[arg(long = "connect", value_name = "PRODUCER=ADDR")]
    connects: Vec<String>,
    /// `ID=path` of a query file.
    #[arg(long = "query", value_name = "ID=PATH")]
    queries: Vec<String>,
    /// Notification sink; `-` is standard output.
    #[arg(long)]
    output: Option<String>,
    #[arg(long)]
    queue_capacity: Option<usize>,
    #[arg(long)]
    producer_queue_capacity: Option<usize>,
    #[arg(long)]
    combination_cap: Option<usize>,
    #[arg(long)]
    iou_threshold: Option<f64>,
    #[arg(long)]
    cosine_threshold: Option<f64>,
    #[arg(long)]
    state_dump: Option<PathBuf>,
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long)]
    latency_samples: Option<PathBuf>,
}

/// Exit code 1: bad configuration or query. Exit code 2: failure at runtime.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        if e.is_config() {
            Failure::Config(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Spec(_) => Failure::Config(e.into()),
            BenchError::Engine(e) => e.into(),
            other => Failure::Runtime(other.into()),
        }
    }
}

fn split_pair<'a>(flag: &str, s: &'a str) -> Result<(&'a str, &'a str), Failure> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() && !v.is_empty() => Ok((k, v)),
        _ => Err(Failure::Config(anyhow!("--{flag} expects NAME=VALUE, got `{s}`"))),
    }
}

fn build_config(args: &RunArgs) -> Result<EngineConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => EngineConfig::load(p)?,
        None => EngineConfig::default(),
    };
    for s in &args.inputs {
        let (id, path) = split_pair("input", s)?;
        cfg.producers.retain(|(p, _)| p != id);
        cfg.producers.push((id.to_string(), SourceSpec::File(path.into())));
    }
    for s in &args.connects {
        let (id, addr) = split_pair("connect", s)?;
        cfg.producers.retain(|(p, _)| p != id);
        cfg.producers.push((id.to_string(), SourceSpec::Tcp(addr.to_string())));
    }
    for s in &args.queries {
        let (id, path) = split_pair("query", s)?;
        let text = fs::read_to_string(path)
            .with_context(|| format!("query `{id}`: cannot read {path}"))
            .map_err(Failure::Config)?;
        cfg.queries.retain(|(q, _)| q != id);
        cfg.queries.push((id.to_string(), text));
    }
    if let Some(o) = &args.output {
        cfg.sink = SinkSpec::parse(o);
    }
    if let Some(v) = args.queue_capacity {
        cfg.queue_capacity = v;
    }
    if let Some(v) = args.producer_queue_capacity {
        cfg.producer_queue_capacity = v;
    }
    if let Some(v) = args.combination_cap {
        cfg.combination_cap = v;
    }
    if let Some(v) = args.iou_threshold {
        cfg.tracking.iou_threshold = v;
    }
    if let Some(v) = args.cosine_threshold {
        cfg.tracking.cosine_sim_threshold = v;
    }
    if let Some(p) = &args.state_dump {
        cfg.state_dump = Some(p.clone());
    }
    if let Some(p) = &args.metrics {
        cfg.metrics = Some(p.clone());
    }
    if let Some(p) = &args.latency_samples {
        cfg.latency_samples = Some(p.clone());
    }
    if cfg.producers.is_empty() {
        return Err(Failure::Config(anyhow!("no producers; pass --input, --connect or --config")));
    }
    if cfg.queries.is_empty() {
        return Err(Failure::Config(anyhow!("no queries; pass --query or --config")));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(path: &Path, text: String) -> Result<(), Failure> {
    fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::Runtime)
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let cfg = build_config(&args)?;
    let engine = cfg.build()?;
    let stop = engine.stop_flag();
    if let Err(e) = ctrlc::set_handler(move || stop.store(true, Ordering::Relaxed)) {
        log::warn!("cannot install interrupt handler: {e}");
    }
    let sink = cfg.sink.open()?;
    let report = engine.run(sink)?;
    if let Some(p) = &cfg.metrics {
        write_file(p, report.metrics_csv())?;
    }
    if let Some(p) = &cfg.latency_samples {
        write_file(p, report.latency_csv())?;
    }
    let emitted: u64 = report.queries.iter().map(|q| q.emitted).sum();
    eprintln!(
        "processed {} frames from {} producer(s) in {:.3} s ({:.0} fps), {} notification(s){}",
        report.frames_processed(),
        report.producers.len(),
        report.wall.as_secs_f64(),
        report.throughput_fps(),
        emitted,
        if report.interrupted { ", interrupted" } else { "" }
    );
    if let Some(e) = report.sink_error {
        return Err(Failure::Runtime(anyhow!("writing notifications failed: {e}")));
    }
    Ok(())
}

fn cmd_check(query: &Path, id: &str) -> Result<(), Failure> {
    let text = fs::read_to_string(query)
        .with_context(|| format!("cannot read {}", query.display()))
        .map_err(Failure::Config)?;
    let plan = plan_from_text(id, &text)
        .map_err(|e| Failure::Config(anyhow!("{}: {e}", query.display())))?;
    print!("{plan}");
    Ok(())
}

fn cmd_dump_graph(
    input: &Path,
    frame: u64,
    producer: Option<String>,
    tracking: TrackingParams,
) -> Result<(), Failure> {
    let file = fs::File::open(input)
        .with_context(|| format!("cannot open {}", input.display()))
        .map_err(Failure::Runtime)?;
    let mut producer = producer;
    let mut builder = GraphBuilder::new(tracking);
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line
            .with_context(|| format!("reading {}", input.display()))
            .map_err(Failure::Runtime)?;
        if line.trim().is_empty() {
            continue;
        }
        let f = match parse_detection_line(&line) {
            Ok(f) => f,
            Err(e) => {
                log::warn!("line {}: {e}", n + 1);
                continue;
            }
        };
        let p = producer.get_or_insert_with(|| f.producer_id.clone());
        if f.producer_id != *p {
            continue;
        }
        let graph = builder.push(&f);
        if f.frame_index == frame {
            print!("{}", graph.adjacency_listing());
            return Ok(());
        }
        if f.frame_index > frame {
            break;
        }
    }
    Err(Failure::Runtime(anyhow!("frame {frame} not found in {}", input.display())))
}

fn cmd_bench(spec: &Path, seed: u64, out: &Path) -> Result<(), Failure> {
    let spec = SyntheticStreamSpec::load(spec).map_err(|e| match e {
        BenchError::Io { .. } => Failure::Config(e.into()),
        other => other.into(),
    })?;
    let report = bench::run_bench(&spec, seed)?;
    report.write_to(out)?;
    print!("{}", report.summary());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ENGINE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Check { query, id } => cmd_check(&query, &id),
        Command::DumpGraph {
            input,
            frame,
            producer,
            iou_threshold,
            cosine_threshold,
        } => cmd_dump_graph(
            &input,
            frame,
            producer,
            TrackingParams {
                iou_threshold,
                cosine_sim_threshold: cosine_threshold,
            },
        ),
        Command::Bench { spec, seed, out } => cmd_bench(&spec, seed, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
