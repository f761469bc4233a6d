use std::io::{self, Write};
use std::net::TcpListener;
use std::sync::atomic::Ordering;
use std::sync::{Arc, Mutex};
use std::thread;

use stcep::engine::{Engine, EngineSettings, Source};
use stcep::MatchNotification;

fn frame(producer: &str, i: u64, t: u64, dets: &str) -> String {
    format!(r#"{{"producer_id":"{producer}","frame_index":{i},"timestamp_ms":{t},"detections":[{dets}]}}"#)
}

const CAR: &str = r#"{"label":"Car","confidence":0.9,"bbox":[10,10,40,20]}"#;
const PERSON: &str = r#"{"label":"Person","confidence":0.8,"bbox":[200,10,20,40]}"#;

fn object_query(producer: &str, label: &str, window: &str) -> String {
    format!("SELECT Object FROM {producer} WHERE Object.label = '{label}' WITHIN TIMEFRAME_WINDOW({window})")
}

fn collecting() -> Engine {
    Engine::new(EngineSettings {
        collect_notifications: true,
        ..EngineSettings::default()
    })
}

fn stream(producer: &str, n: u64, step: u64, dets: &str) -> String {
    (0..n).map(|i| frame(producer, i, i * step, dets)).collect::<Vec<_>>().join("\n")
}

#[test]
fn tiny_queues_lose_nothing() {
    let mut e = Engine::new(EngineSettings {
        queue_capacity: 1,
        producer_queue_capacity: 1,
        ..EngineSettings::default()
    });
    e.add_producer("P", Source::from_bytes(stream("P", 2000, 33, CAR))).unwrap();
    for (id, w) in [("a", "1"), ("b", "2, 1"), ("c", "5")] {
        e.register_query(id, &object_query("P", "Car", w)).unwrap();
    }
    let r = e.run(Box::new(io::sink())).unwrap();
    assert_eq!(r.frames_processed(), 2000);
    for q in &r.queries {
        assert_eq!(q.states_dropped, 0);
        // 2 s windows every 1 s hold each frame twice, except the 31
        // frames of the first second.
        let expected = if q.query_id == "b" { 2 * 2000 - 31 } else { 2000 };
        assert_eq!(q.graphs_in_windows, expected, "{}", q.query_id);
    }
}

#[test]
fn queries_only_see_their_producer() {
    let mut p1 = stream("P1", 10, 1000, CAR);
    p1.push('\n');
    p1.push_str(&frame("P2", 99, 99_000, CAR));
    p1.push_str("\nnot json\n");
    let mut e = collecting();
    e.add_producer("P1", Source::from_bytes(p1)).unwrap();
    e.add_producer("P2", Source::from_bytes(stream("P2", 10, 1000, PERSON))).unwrap();
    e.register_query("cars2", &object_query("P2", "Car", "10")).unwrap();
    e.register_query("people2", &object_query("P2", "Person", "10")).unwrap();
    e.register_query("cars1", &object_query("P1", "Car", "10")).unwrap();
    let r = e.run(Box::new(io::sink())).unwrap();
    let count = |id: &str| r.notifications.iter().filter(|n| n.query_id == id).count();
    assert_eq!(count("cars2"), 0);
    assert_eq!(count("people2"), 10);
    assert_eq!(count("cars1"), 10);
    let p1 = r.producers.iter().find(|p| p.producer_id == "P1").unwrap();
    assert_eq!((p1.frames_ingested, p1.frames_dropped), (10, 2));
}

#[test]
fn sliding_frame_notifies_in_both_windows() {
    let mut e = collecting();
    let lines = [frame("Cam", 0, 7000, CAR), frame("Cam", 1, 16_000, "")].join("\n");
    e.add_producer("Cam", Source::from_bytes(lines)).unwrap();
    e.register_query("s", &object_query("Cam", "Car", "10, 5")).unwrap();
    let r = e.run(Box::new(io::sink())).unwrap();
    let mut windows: Vec<(u64, u64)> = r.notifications.iter().map(|n| n.window).collect();
    windows.sort();
    assert_eq!(windows, vec![(0, 10_000), (5000, 15_000)]);
}

#[test]
fn state_dump_lists_every_sealed_window() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("states.csv");
    let mut e = Engine::new(EngineSettings {
        state_dump: Some(dump.clone()),
        ..EngineSettings::default()
    });
    e.add_producer("P", Source::from_bytes(stream("P", 95, 100, CAR))).unwrap();
    e.register_query("q", &object_query("P", "Car", "1")).unwrap();
    e.run(Box::new(io::sink())).unwrap();
    let text = std::fs::read_to_string(dump).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("query_id,producer_id,window_start_ms,window_end_ms,graphs"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 10);
    assert_eq!(rows[0], "q,P,0,1000,10");
    assert_eq!(rows[9], "q,P,9000,10000,5");
}

struct Broken;

impl Write for Broken {
    fn write(&mut self, _: &[u8]) -> io::Result<usize> {
        Err(io::Error::new(io::ErrorKind::BrokenPipe, "gone"))
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

#[test]
fn failing_sink_is_reported() {
    let mut e = Engine::new(EngineSettings::default());
    e.add_producer("P", Source::from_bytes(stream("P", 500, 100, CAR))).unwrap();
    e.register_query("q", &object_query("P", "Car", "1")).unwrap();
    let r = e.run(Box::new(Broken)).unwrap();
    assert!(r.sink_error.is_some());
}

#[test]
fn preset_stop_flag_ends_quickly() {
    let mut e = Engine::new(EngineSettings::default());
    e.add_producer("P", Source::from_bytes(stream("P", 5000, 10, CAR))).unwrap();
    e.register_query("q", &object_query("P", "Car", "1")).unwrap();
    e.stop_flag().store(true, Ordering::Relaxed);
    let r = e.run(Box::new(io::sink())).unwrap();
    assert!(r.interrupted);
    assert!(r.frames_processed() < 5000);
}

#[test]
fn reads_from_tcp() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let server = thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        for i in 0..20 {
            writeln!(s, "{}", frame("Cam", i, i * 500, CAR)).unwrap();
        }
    });
    let mut e = collecting();
    e.add_producer("Cam", Source::Tcp(addr)).unwrap();
    e.register_query("q", &object_query("Cam", "Car", "5")).unwrap();
    let r = e.run(Box::new(io::sink())).unwrap();
    server.join().unwrap();
    assert_eq!(r.notifications.len(), 20);
    let windows: Vec<(u64, u64)> = r.notifications.iter().map(|n| n.window).collect();
    assert!(windows.iter().all(|w| *w == (0, 5000) || *w == (5000, 10_000)));
}

struct Shared(Arc<Mutex<Vec<u8>>>);

impl Write for Shared {
    fn write(&mut self, b: &[u8]) -> io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(b);
        Ok(b.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

#[test]
fn sink_lines_parse_back() {
    let buf = Arc::new(Mutex::new(Vec::new()));
    let mut e = Engine::new(EngineSettings::default());
    let lines = [frame("Cam", 0, 0, CAR), frame("Cam", 1, 3000, PERSON)].join("\n");
    e.add_producer("Cam", Source::from_bytes(lines)).unwrap();
    e.register_query(
        "seq",
        "SELECT SEQ(A, B) FROM Cam WHERE A.label = 'Car' AND B.label = 'Person' WITHIN TIMEFRAME_WINDOW(10)",
    )
    .unwrap();
    e.run(Box::new(Shared(Arc::clone(&buf)))).unwrap();
    let text = String::from_utf8(buf.lock().unwrap().clone()).unwrap();
    let notes: Vec<MatchNotification> = text.lines().map(|l| MatchNotification::from_json_line(l).unwrap()).collect();
    assert_eq!(notes.len(), 1);
    let n = &notes[0];
    assert_eq!(n.window, (0, 10_000));
    assert_eq!(n.events.len(), 2);
    assert_eq!((n.events[0].timestamp_ms, n.events[1].timestamp_ms), (0, 3000));
    let m = stcep::confidence_score(&[0.9, 0.8]);
    assert!((n.confidence - m).abs() < 1e-12);
}
