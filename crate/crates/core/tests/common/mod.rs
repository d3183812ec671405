//! Local HTTP fixture for the remote oracle client.
#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};
use skillgraph::memory::AtomicAction;
use skillgraph::oracle::{
    ObservationView, Oracle, RemoteConfig, RemoteOracle, SkillView, TransitionSummary, VisibleObject, PROTOCOL_VERSION,
};
use skillgraph::{ObjectId, SkillId};

pub struct Reply {
    pub status: u16,
    pub body: String,
    pub delay: Duration,
}

impl Reply {
    pub fn ok(body: Value) -> Self {
        Reply {
            status: 200,
            body: body.to_string(),
            delay: Duration::ZERO,
        }
    }

    pub fn status(status: u16) -> Self {
        Reply {
            status,
            body: "fixture fault".into(),
            delay: Duration::ZERO,
        }
    }

    pub fn slow(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

pub type Handler = dyn Fn(&str, Value, usize) -> Reply + Send + Sync;

/// Local server; `handler` gets the path, the request JSON and the
/// zero-based index of the request.
pub struct Fixture {
    server: Arc<tiny_http::Server>,
    hits: Arc<AtomicUsize>,
    pub paths: Arc<Mutex<Vec<String>>>,
}

impl Fixture {
    pub fn start(handler: impl Fn(&str, Value, usize) -> Reply + Send + Sync + 'static) -> Fixture {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let paths = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        let (s, h, p) = (server.clone(), hits.clone(), paths.clone());
        thread::spawn(move || {
            for mut req in s.incoming_requests() {
                let n = h.fetch_add(1, Ordering::SeqCst);
                let path = req.url().to_string();
                p.lock().unwrap().push(path.clone());
                let mut body = String::new();
                req.as_reader().read_to_string(&mut body).unwrap();
                let handler = handler.clone();
                thread::spawn(move || {
                    let value: Value = serde_json::from_str(&body).unwrap_or(Value::Null);
                    let reply = handler(&path, value, n);
                    thread::sleep(reply.delay);
                    let resp = tiny_http::Response::from_string(reply.body).with_status_code(reply.status);
                    let _ = req.respond(resp);
                });
            }
        });
        Fixture { server, hits, paths }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.server.server_addr().to_ip().unwrap())
    }

    pub fn oracle(&self, deadline_ms: u64, retries: u32) -> Oracle {
        let mut cfg = RemoteConfig::new(self.url());
        cfg.deadline = Duration::from_millis(deadline_ms);
        cfg.retries = retries;
        RemoteOracle::new(cfg).into_oracle()
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

impl Drop for Fixture {
    fn drop(&mut self) {
        self.server.unblock();
    }
}

pub fn envelope(kind: &str, payload: Value, cost: u64) -> Value {
    json!({"format_version": PROTOCOL_VERSION, "kind": kind, "payload": payload, "cost_units": cost})
}

pub fn obs() -> ObservationView {
    ObservationView {
        step: 3,
        handle: "screen-3".into(),
        objects: [11, 24]
            .iter()
            .map(|&i| VisibleObject {
                id: ObjectId(i),
                name: format!("o{i}"),
                salience: 0.5,
                highlighted: false,
            })
            .collect(),
        truth: None,
    }
}

pub fn library() -> Vec<SkillView> {
    (0..3)
        .map(|i| SkillView {
            id: SkillId(i),
            name: format!("s{i}"),
            descriptor: "fixture".into(),
            actions: vec![AtomicAction::click(ObjectId(11), "o11"), AtomicAction::click(ObjectId(24), "o24")],
            fitness: i as f64,
        })
        .collect()
}

pub fn summary() -> TransitionSummary {
    TransitionSummary {
        delta: 0.4,
        screen_changed: true,
        grounding_failed: false,
        milestone: None,
        frontier: false,
    }
}

/// Well-formed answer for each request kind, costing 2 + the request's
/// position.
pub fn echo(path: &str, req: Value, n: usize) -> Reply {
    let kind = req["kind"].as_str().unwrap_or_default().to_string();
    assert_eq!(path, format!("/{kind}"));
    assert_eq!(req["format_version"], PROTOCOL_VERSION);
    let p = &req["payload"];
    let payload = match kind.as_str() {
        "invoke" => json!({"skill_ids": [p["library"][0]["id"].clone()]}),
        "augment" => json!({"action": {"operate": "Click", "object_id": p["objects"][1].clone(), "object_name": "o24"},
                            "descriptor": "press o24"}),
        "refine" => json!({"actions": [p["skill"]["actions"][0].clone()], "descriptor": "shorter"}),
        "evaluate" => json!({"progress": 0.25, "semantics": 0.75, "rationale": "fixture"}),
        _ => return Reply::status(404),
    };
    Reply::ok(envelope(&kind, payload, 2 + n as u64))
}

