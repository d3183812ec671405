use std::io::Write;
use std::path::Path;

use serde_json::{json, Value};
use skillgraph::engine::{fresh_stores, run_episode, EngineConfig, Episode};
use skillgraph::envsim::{generate_world, Profile};
use skillgraph::graph::GraphConfig;
use skillgraph::oracle::{Oracle, Persona};
use skillgraph::persistence::{load_snapshot, save_snapshot, Snapshot, StagedFile, SNAPSHOT_FORMAT_VERSION};
use skillgraph::{Error, ProceduralMemory, StateGraph};

fn trained() -> (StateGraph, ProceduralMemory, EngineConfig, u64) {
    let cfg = EngineConfig::default();
    let world = generate_world(Profile::ComboHeavy, 7).unwrap();
    let (mut g, mut m) = fresh_stores(&cfg, &world).unwrap();
    let mut start = 0;
    for round in 0..2 {
        let mut o = Oracle::scripted(Persona::Perfect, round);
        let ep = Episode {
            seed: round,
            steps: 100,
            start_step: start,
        };
        start += run_episode(&world, &mut o, &mut m, &mut g, &cfg, ep).unwrap().steps.len() as u64;
    }
    (g, m, cfg, start)
}

fn saved(dir: &Path) -> (std::path::PathBuf, Value) {
    let (g, m, cfg, step) = trained();
    let path = dir.join("snap.json");
    save_snapshot(&path, &g, &m, &cfg, step).unwrap();
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    (path, v)
}

#[test]
fn save_load_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let (g, m, cfg, step) = trained();
    assert!(m.skills().iter().any(|s| !s.is_active()), "fixture should include pruned skills");
    let path = dir.path().join("snap.json");
    save_snapshot(&path, &g, &m, &cfg, step).unwrap();
    let r = load_snapshot(&path).unwrap();
    assert_eq!(r.graph.stats(), g.stats());
    assert_eq!(r.memory.skills(), m.skills());
    assert_eq!(r.memory.all_tree_stats().collect::<Vec<_>>(), m.all_tree_stats().collect::<Vec<_>>());
    assert_eq!(r.memory.counters(), m.counters());
    assert_eq!(r.config, cfg);
    assert_eq!(r.created_step, step);
    // embeddings come back bit for bit
    for (a, b) in g.nodes().iter().zip(r.graph.nodes()) {
        let bits = |n: &skillgraph::graph::StateNode| n.embedding.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
    for (a, b) in m.clusters().iter().zip(r.memory.clusters()) {
        assert_eq!(a.centroid, b.centroid);
    }
    // and saving the loaded stores reproduces the file byte for byte
    let again = dir.path().join("again.json");
    save_snapshot(&again, &r.graph, &r.memory, &r.config, r.created_step).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn interrupted_save_leaves_prior_snapshot_intact() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = saved(dir.path());
    let before = std::fs::read(&path).unwrap();
    {
        let mut staged = StagedFile::new(&path).unwrap();
        staged.write_all(b"{\"format_version\": 1, \"graph\": {").unwrap();
        // dropped without commit, as if the process died mid-write
    }
    assert_eq!(std::fs::read(&path).unwrap(), before);
    load_snapshot(&path).unwrap();
    // no stray temporaries left behind
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

type Edit = Box<dyn FnOnce(&mut Value)>;

fn tampered(edit: impl FnOnce(&mut Value)) -> Error {
    let dir = tempfile::tempdir().unwrap();
    let (path, mut v) = saved(dir.path());
    edit(&mut v);
    std::fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
    load_snapshot(&path).expect_err("tampered snapshot loaded")
}

fn invariant(e: Error) -> &'static str {
    match e {
        Error::Corrupt { invariant, .. } => invariant,
        other => panic!("expected a corrupt-snapshot error, got {other}"),
    }
}

#[test]
fn duplicate_node_pair_is_rejected() {
    let e = tampered(|v| {
        let emb = v["graph"]["nodes"][0]["embedding"].clone();
        v["graph"]["nodes"][1]["embedding"] = emb;
    });
    assert_eq!(invariant(e), "no-merge-pair");
}

#[test]
fn tampered_snapshots_name_the_broken_invariant() {
    let cases: Vec<(&str, Edit)> = vec![
        (
            "pruned skills have no edges",
            Box::new(|v| {
                let s = v["graph"]["skill_edges"][0]["skill_id"].as_u64().unwrap() as usize;
                v["memory"]["skills"][s]["status"] = json!("Pruned");
                // a clean prune also leaves its cluster
                for c in v["memory"]["clusters"].as_array_mut().unwrap() {
                    c["skill_ids"].as_array_mut().unwrap().retain(|id| id.as_u64() != Some(s as u64));
                }
            }),
        ),
        (
            "edge skills exist",
            Box::new(|v| v["graph"]["skill_edges"][0]["skill_id"] = json!(4096)),
        ),
        (
            "skill weight in (0,1)",
            Box::new(|v| v["graph"]["skill_edges"][0]["weight"] = json!(1.5)),
        ),
        (
            "skill weight in [0.5, 1)",
            Box::new(|v| v["graph"]["skill_edges"][0]["weight"] = json!(0.25)),
        ),
        (
            "similarity weight equals cosine",
            Box::new(|v| v["graph"]["similarity_edges"][0]["weight"] = json!(0.9)),
        ),
        (
            "one similarity edge per pair",
            Box::new(|v| {
                let e = v["graph"]["similarity_edges"][0].clone();
                v["graph"]["similarity_edges"].as_array_mut().unwrap().push(e);
            }),
        ),
        (
            "dense node ids",
            Box::new(|v| v["graph"]["nodes"][2]["id"] = json!(7)),
        ),
        (
            "tree arms exist",
            Box::new(|v| {
                let trees = v["memory"]["tree_stats"].as_array_mut().unwrap();
                trees[0]["arms"] = json!({"9999": {"visits": 1, "value_sum": 1.0}});
                trees[0]["total_visits"] = json!(1);
            }),
        ),
        (
            "tree states exist",
            Box::new(|v| v["memory"]["tree_stats"][0]["state"] = json!(100_000)),
        ),
        (
            "shared thresholds",
            Box::new(|v| v["memory"]["thresholds"]["merge"] = json!(0.97)),
        ),
        (
            "config echo matches graph",
            Box::new(|v| v["config"]["ablation"]["similarity_edges"] = json!(false)),
        ),
        (
            "created_step covers contents",
            Box::new(|v| v["created_step"] = json!(0)),
        ),
        (
            "fitness >= 0",
            Box::new(|v| v["memory"]["skills"][0]["fitness"] = json!(-1.0)),
        ),
    ];
    for (want, edit) in cases {
        assert_eq!(invariant(tampered(edit)), want);
    }
}

#[test]
fn unsupported_versions_are_rejected() {
    let e = tampered(|v| v["format_version"] = json!(SNAPSHOT_FORMAT_VERSION + 1));
    assert!(matches!(e, Error::UnsupportedVersion { found: 2, supported: 1 }), "{e}");
    let e = tampered(|v| v["graph"]["config"]["format_version"] = json!(9));
    assert!(matches!(e, Error::UnsupportedVersion { found: 9, .. }), "{e}");
}

#[test]
fn truncated_and_missing_files_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = saved(dir.path());
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, &text[..text.len() / 2]).unwrap();
    assert!(matches!(load_snapshot(&path), Err(Error::Json(_))));
    assert!(matches!(load_snapshot(dir.path().join("absent.json")), Err(Error::NotFound { .. })));
}

#[test]
fn empty_stores_round_trip() {
    let cfg = EngineConfig::default();
    let g = StateGraph::new(GraphConfig::default()).unwrap();
    let m = ProceduralMemory::new(g.config().thresholds);
    let snap = Snapshot::capture(&g, &m, &cfg, 0);
    let r = snap.restore().unwrap();
    assert_eq!(r.graph.stats(), g.stats());
    assert!(r.memory.skills().is_empty());
}
