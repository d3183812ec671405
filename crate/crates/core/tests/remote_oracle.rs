//! The HTTP client against a local fixture server with injected faults.

mod common;

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use common::{echo, envelope, library, obs, summary, Fixture, Reply};
use serde_json::{json, Value};
use skillgraph::engine::{fresh_stores, run_episode, EngineConfig, Episode};
use skillgraph::envsim::{generate_world, Profile};
use skillgraph::memory::Operation;
use skillgraph::oracle::{
    Envelope, Oracle, OracleBackend, OracleRequest, Persona, RemoteConfig, RemoteOracle, ScriptedOracle, PROTOCOL_VERSION,
};
use skillgraph::{ObjectId, OracleError, SkillId};

#[test]
fn all_four_kinds_round_trip_and_costs_add_up() {
    let fx = Fixture::start(echo);
    let mut o = fx.oracle(2000, 0);
    assert_eq!(o.invoke(&obs(), &library()).unwrap(), vec![SkillId(0)]);
    let (a, d) = o.augment(&obs(), &Operation::ALL, &[], &[]).unwrap().unwrap();
    assert_eq!((a.object_id, d.as_str()), (ObjectId(24), "press o24"));
    let (acts, d) = o.refine(&obs(), &library()[1], &[]).unwrap().unwrap();
    assert_eq!((acts.len(), d.as_str()), (1, "shorter"));
    assert_eq!(o.evaluate(&obs(), &obs(), &[], &summary()).unwrap(), Some((0.25, 0.75)));
    // 2 + 3 + 4 + 5 units reported by the server
    assert_eq!(o.cost_total(), 14);
    assert_eq!(o.usage().calls, 4);
    assert_eq!(*fx.paths.lock().unwrap(), vec!["/invoke", "/augment", "/refine", "/evaluate"]);
}

#[test]
fn closed_world_violations_are_protocol_errors() {
    let cases: Vec<(&str, Value)> = vec![
        ("invoke", json!({"skill_ids": [7]})),
        ("invoke", json!({"skill_ids": [1, 1]})),
        ("augment", json!({"action": {"operate": "Click", "object_id": 99, "object_name": "ghost"}, "descriptor": "x"})),
        ("refine", json!({"actions": [], "descriptor": "x"})),
        ("refine", json!({"actions": [{"operate": "Click", "object_id": 99, "object_name": "ghost"}], "descriptor": "x"})),
        ("evaluate", json!({"progress": 1.2, "semantics": 0.0})),
        ("evaluate", json!({"progress": 0.5, "semantics": -0.1})),
    ];
    for (kind, payload) in cases {
        let body = envelope(kind, payload.clone(), 1);
        let fx = Fixture::start(move |_, _, _| Reply::ok(body.clone()));
        let mut o = fx.oracle(2000, 1);
        let err = match kind {
            "invoke" => o.invoke(&obs(), &library()).err(),
            "augment" => o.augment(&obs(), &Operation::ALL, &[], &[]).err(),
            "refine" => o.refine(&obs(), &library()[0], &[]).err(),
            _ => o.evaluate(&obs(), &obs(), &[], &summary()).err(),
        };
        assert!(matches!(err, Some(OracleError::Protocol(_))), "{kind} {payload}: {err:?}");
        assert_eq!(o.cost_total(), 0);
    }
}

#[test]
fn wrong_kind_version_or_garbage_is_rejected() {
    for body in [
        envelope("evaluate", json!({"progress": 0.5, "semantics": 0.5}), 1).to_string(),
        json!({"format_version": 2, "kind": "invoke", "payload": {"skill_ids": []}}).to_string(),
        "not json".to_string(),
    ] {
        let fx = Fixture::start(move |_, _, _| Reply {
            status: 200,
            body: body.clone(),
            delay: Duration::ZERO,
        });
        let mut o = fx.oracle(2000, 0);
        assert!(matches!(o.invoke(&obs(), &library()), Err(OracleError::Protocol(_))));
    }
}

#[test]
fn deadline_turns_into_retries_then_fallback() {
    let fx = Fixture::start(|p, r, n| echo(p, r, n).slow(Duration::from_millis(600)));
    let mut o = fx.oracle(100, 2);
    let started = Instant::now();
    assert_eq!(o.evaluate(&obs(), &obs(), &[], &summary()).unwrap(), None);
    assert!(started.elapsed() < Duration::from_millis(1500), "{:?}", started.elapsed());
    assert_eq!(o.usage().calls, 3);
    assert_eq!(o.usage().failures, 3);
    // an invoke that times out degrades to "no candidates"
    assert_eq!(o.invoke(&obs(), &library()).unwrap(), vec![]);
    assert_eq!(o.augment(&obs(), &Operation::ALL, &[], &[]).unwrap(), None);
}

#[test]
fn server_errors_are_retried_until_one_succeeds() {
    let fx = Fixture::start(|p, r, n| if n < 2 { Reply::status(503) } else { echo(p, r, n) });
    let mut o = fx.oracle(2000, 2);
    assert_eq!(o.evaluate(&obs(), &obs(), &[], &summary()).unwrap(), Some((0.25, 0.75)));
    assert_eq!(fx.hits(), 3);
    assert_eq!(o.usage().failures, 2);
    assert_eq!(o.cost_total(), 4);
}

#[test]
fn exhausted_retries_fall_back_and_client_errors_do_not_degrade() {
    let fx = Fixture::start(|_, _, _| Reply::status(500));
    let mut o = fx.oracle(2000, 1);
    assert_eq!(o.refine(&obs(), &library()[0], &[]).unwrap(), None);
    assert_eq!(fx.hits(), 2);

    let fx = Fixture::start(|_, _, _| Reply::status(400));
    let mut o = fx.oracle(2000, 1);
    assert!(matches!(o.refine(&obs(), &library()[0], &[]), Err(OracleError::Protocol(_))));
}

#[test]
fn unreachable_endpoint_falls_back() {
    // bind then drop to get a port nobody listens on
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut cfg = RemoteConfig::new(format!("http://127.0.0.1:{port}/"));
    cfg.deadline = Duration::from_millis(200);
    cfg.retries = 1;
    let mut o = RemoteOracle::new(cfg).into_oracle();
    assert_eq!(o.evaluate(&obs(), &obs(), &[], &summary()).unwrap(), None);
    assert_eq!(o.usage().calls, 2);
}

#[test]
fn remote_episode_matches_the_scripted_persona() {
    // the server wraps a scripted persona; an episode through HTTP must
    // match one run in-process
    let scripted = Arc::new(Mutex::new(ScriptedOracle::new(Persona::Perfect, 5)));
    let fx = Fixture::start(move |_, req, _| {
        let env: Envelope<OracleRequest> = serde_json::from_value(req).unwrap();
        let (resp, cost) = scripted.lock().unwrap().call(&env.body).unwrap();
        let out = Envelope {
            format_version: PROTOCOL_VERSION,
            body: resp,
            cost_units: cost,
        };
        Reply::ok(serde_json::to_value(out).unwrap())
    });
    let cfg = EngineConfig::default();
    let world = generate_world(Profile::ComboHeavy, 5).unwrap();
    let ep = Episode {
        seed: 5,
        steps: 40,
        start_step: 0,
    };
    let (mut g, mut m) = fresh_stores(&cfg, &world).unwrap();
    let mut remote = fx.oracle(5000, 0);
    let over_http = run_episode(&world, &mut remote, &mut m, &mut g, &cfg, ep).unwrap();
    let (mut g, mut m) = fresh_stores(&cfg, &world).unwrap();
    let mut local = Oracle::scripted(Persona::Perfect, 5);
    let in_process = run_episode(&world, &mut local, &mut m, &mut g, &cfg, ep).unwrap();
    assert_eq!(over_http, in_process);
    assert_eq!(fx.hits() as u64, in_process.summary.unwrap().oracle_calls);
}
