use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use tigload::extraneous::{
    extraneous_load, QueryScorer, RemoteConfig, RemoteScorer, ScoreCache, Transport, TransportError,
};
use tigload::model::{query, tool, DepEdge, EntityRef, GraphNode, TaskInstance, ToolGraph};
use tigload::Error;

/// Replays canned replies and counts calls.
#[derive(Clone)]
struct Scripted {
    replies: Arc<Mutex<VecDeque<Result<String, String>>>>,
    calls: Arc<AtomicUsize>,
}

impl Scripted {
    fn new(replies: Vec<Result<&str, &str>>) -> Self {
        Self {
            replies: Arc::new(Mutex::new(
                replies
                    .into_iter()
                    .map(|r| r.map(String::from).map_err(String::from))
                    .collect(),
            )),
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Transport for Scripted {
    fn complete(&self, _prompt: &str) -> Result<String, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match self.replies.lock().unwrap().pop_front() {
            Some(Ok(s)) => Ok(s),
            Some(Err(e)) => Err(TransportError(e)),
            None => Err(TransportError("script exhausted".into())),
        }
    }
}

const GOOD: &str = "```scores\nambiguity: 0.40\ndistraction: 0.10\n```";

fn task() -> TaskInstance {
    let u = EntityRef::new("user_id", "u1");
    TaskInstance::new(
        "remote-1",
        vec![query(0, "look up u1", vec![u.clone()])],
        vec![tool("get_user", "fetch a user", vec![])],
        ToolGraph {
            nodes: vec![
                GraphNode::query("q0", 0).at(0),
                GraphNode::call("f1", "get_user").at(1).consuming(u.clone()),
            ],
            edges: vec![DepEdge::data("q0", "f1", u)],
            ..Default::default()
        },
    )
}

fn cfg(dir: &std::path::Path) -> RemoteConfig {
    RemoteConfig {
        model: "mock".into(),
        max_retries: 2,
        backoff_ms: 20,
        cache_path: Some(dir.join("cache.jsonl")),
        provenance_path: Some(dir.join("provenance.jsonl")),
        ..Default::default()
    }
}

#[test]
fn retries_with_backoff_then_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let t = Scripted::new(vec![Err("timeout"), Err("429"), Ok(GOOD)]);
    let scorer = RemoteScorer::with_transport(cfg(dir.path()), Box::new(t.clone())).unwrap();
    let start = Instant::now();
    let r = extraneous_load(&task(), &scorer).unwrap();
    // 20 ms then 40 ms
    assert!(start.elapsed().as_millis() >= 60);
    assert_eq!(t.calls(), 3);
    assert_eq!(r.total, 0.5);
    assert_eq!(r.scorer_id, "remote/mock");

    let log = std::fs::read_to_string(dir.path().join("provenance.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.lines().last().unwrap().contains("\"attempt\":2"));
}

#[test]
fn gives_up_after_max_retries() {
    let dir = tempfile::tempdir().unwrap();
    let t = Scripted::new(vec![Err("down"); 5]);
    let scorer = RemoteScorer::with_transport(cfg(dir.path()), Box::new(t.clone())).unwrap();
    match extraneous_load(&task(), &scorer) {
        Err(Error::ScorerUnavailable { attempts, reason }) => {
            assert_eq!(attempts, 3);
            assert_eq!(reason, "down");
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(t.calls(), 3);
}

#[test]
fn malformed_reply_is_an_error_not_a_guess() {
    let dir = tempfile::tempdir().unwrap();
    let t = Scripted::new(vec![Ok("ambiguity is about 0.4, distraction low")]);
    let scorer = RemoteScorer::with_transport(cfg(dir.path()), Box::new(t)).unwrap();
    match extraneous_load(&task(), &scorer) {
        Err(Error::MalformedScore { key, .. }) => assert_eq!(key, "remote/mock|remote-1|0"),
        other => panic!("{other:?}"),
    }
    assert!(ScoreCache::open(&dir.path().join("cache.jsonl")).unwrap().is_empty());
}

#[test]
fn cache_makes_reruns_free_and_identical() {
    let dir = tempfile::tempdir().unwrap();
    let first = Scripted::new(vec![Ok(GOOD)]);
    let a = {
        let s = RemoteScorer::with_transport(cfg(dir.path()), Box::new(first.clone())).unwrap();
        extraneous_load(&task(), &s).unwrap()
    };
    let second = Scripted::new(vec![]);
    let s = RemoteScorer::with_transport(cfg(dir.path()), Box::new(second.clone())).unwrap();
    let b = extraneous_load(&task(), &s).unwrap();
    assert_eq!(a, b);
    assert_eq!(first.calls(), 1);
    assert_eq!(second.calls(), 0);
    assert_eq!(s.cache().unwrap().len(), 1);
}

#[test]
fn concurrency_is_capped() {
    struct Gauge {
        now: AtomicUsize,
        peak: AtomicUsize,
    }
    struct Slow(Arc<Gauge>);
    impl Transport for Slow {
        fn complete(&self, _: &str) -> Result<String, TransportError> {
            let n = self.0.now.fetch_add(1, Ordering::SeqCst) + 1;
            self.0.peak.fetch_max(n, Ordering::SeqCst);
            std::thread::sleep(std::time::Duration::from_millis(15));
            self.0.now.fetch_sub(1, Ordering::SeqCst);
            Ok(GOOD.to_string())
        }
    }
    let gauge = Arc::new(Gauge {
        now: AtomicUsize::new(0),
        peak: AtomicUsize::new(0),
    });
    let cfg = RemoteConfig {
        max_concurrency: 2,
        ..Default::default()
    };
    let scorer = RemoteScorer::with_transport(cfg, Box::new(Slow(gauge.clone()))).unwrap();
    assert_eq!(scorer.max_in_flight(), Some(2));
    let tasks: Vec<TaskInstance> = (0..12)
        .map(|i| {
            let mut t = task();
            t.id = format!("t{i}");
            t
        })
        .collect();
    let out = tigload::extraneous::extraneous_load_batch(&tasks, &scorer);
    assert!(out.iter().all(Result::is_ok));
    assert!(gauge.peak.load(Ordering::SeqCst) <= 2);
}
