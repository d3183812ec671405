//! Snapshots of the graph and memory, and JSON Lines episode traces.
//!
//! Floats are written as shortest round-trip decimals, so embeddings and
//! weights survive a save/load cycle bit for bit.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use crate::engine::{EngineConfig, EpisodeSummary, EpisodeTrace, StepRecord, TraceHeader, TRACE_FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::graph::{GraphDocument, StateGraph};
use crate::memory::{MemoryDocument, ProceduralMemory};

pub const SNAPSHOT_FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub format_version: u64,
    pub created_step: u64,
    /// Training rounds behind this snapshot, so a resumed run keeps
    /// numbering (and seeding) rounds where the previous one stopped.
    #[serde(default)]
    pub rounds_completed: u64,
    pub graph: GraphDocument,
    pub memory: MemoryDocument,
    pub config: EngineConfig,
}

impl Snapshot {
    pub fn capture(graph: &StateGraph, memory: &ProceduralMemory, config: &EngineConfig, created_step: u64) -> Self {
        Snapshot {
            format_version: SNAPSHOT_FORMAT_VERSION,
            created_step,
            rounds_completed: 0,
            graph: graph.to_document(),
            memory: memory.to_document(),
            config: config.clone(),
        }
    }

    pub fn with_rounds(mut self, rounds_completed: u64) -> Self {
        self.rounds_completed = rounds_completed;
        self
    }

    /// Rebuild both stores, re-validating each one and the links between
    /// them.
    pub fn restore(self) -> Result<Restored> {
        if self.format_version > SNAPSHOT_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: self.format_version,
                supported: SNAPSHOT_FORMAT_VERSION,
            });
        }
        self.config.validate()?;
        let graph = StateGraph::from_document(self.graph)?;
        let memory = ProceduralMemory::from_document(self.memory)?;
        check_consistency(&graph, &memory, &self.config, self.created_step)?;
        Ok(Restored {
            graph,
            memory,
            config: self.config,
            created_step: self.created_step,
            rounds_completed: self.rounds_completed,
        })
    }
}

/// Stores rebuilt from a snapshot.
#[derive(Debug, Clone)]
pub struct Restored {
    pub graph: StateGraph,
    pub memory: ProceduralMemory,
    pub config: EngineConfig,
    pub created_step: u64,
    pub rounds_completed: u64,
}

fn check_consistency(graph: &StateGraph, memory: &ProceduralMemory, config: &EngineConfig, created_step: u64) -> Result<()> {
    let gcfg = graph.config();
    if gcfg.thresholds != *memory.thresholds() {
        return Err(Error::corrupt("shared thresholds", "graph and memory disagree on similarity thresholds"));
    }
    if gcfg.similarity_edges != config.ablation.similarity_edges {
        return Err(Error::corrupt(
            "config echo matches graph",
            format!(
                "graph similarity_edges={} but config says {}",
                gcfg.similarity_edges, config.ablation.similarity_edges
            ),
        ));
    }
    for e in graph.skill_edges() {
        match memory.skills().get(e.skill.index()) {
            None => return Err(Error::corrupt("edge skills exist", format!("{}->{} uses {}", e.src, e.dst, e.skill))),
            Some(s) if !s.is_active() => {
                return Err(Error::corrupt(
                    "pruned skills have no edges",
                    format!("{}->{} uses pruned {}", e.src, e.dst, e.skill),
                ))
            }
            Some(_) => {}
        }
        if e.weight < 0.5 {
            return Err(Error::corrupt(
                "skill weight in [0.5, 1)",
                format!("{}->{} weight {}", e.src, e.dst, e.weight),
            ));
        }
    }
    for t in memory.all_tree_stats() {
        if graph.node(t.state).is_err() {
            return Err(Error::corrupt("tree states exist", format!("{} has no node", t.state)));
        }
        if let Some(s) = t.arms.keys().find(|s| s.index() >= memory.skills().len()) {
            return Err(Error::corrupt("tree arms exist", format!("{} tracks unknown {s}", t.state)));
        }
    }
    for c in memory.clusters() {
        if c.centroid.dimension() != gcfg.dimension {
            return Err(Error::corrupt(
                "embedding dimension",
                format!("{} has dimension {}", c.id, c.centroid.dimension()),
            ));
        }
    }
    if let Some(n) = graph.nodes().iter().find(|n| n.first_seen_step > created_step) {
        return Err(Error::corrupt(
            "created_step covers contents",
            format!("{} first seen at {} after snapshot step {created_step}", n.id, n.first_seen_step),
        ));
    }
    if let Some(s) = memory.skills().iter().find(|s| s.created_step > created_step) {
        return Err(Error::corrupt(
            "created_step covers contents",
            format!("{} created at {} after snapshot step {created_step}", s.id, s.created_step),
        ));
    }
    Ok(())
}

/// A file write that only becomes visible on [`StagedFile::commit`].
/// Dropping it without committing leaves the destination untouched.
pub struct StagedFile {
    dest: PathBuf,
    temp: BufWriter<NamedTempFile>,
}

impl StagedFile {
    pub fn new(dest: impl AsRef<Path>) -> Result<Self> {
        let dest = dest.as_ref().to_path_buf();
        let dir = match dest.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let temp = NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(StagedFile {
            dest,
            temp: BufWriter::new(temp),
        })
    }

    pub fn commit(self) -> Result<()> {
        let dest = self.dest;
        let temp = self.temp.into_inner().map_err(|e| Error::io(&dest, e.into_error()))?;
        temp.as_file().sync_all().map_err(|e| Error::io(&dest, e))?;
        temp.persist(&dest).map_err(|e| Error::io(&dest, e.error))?;
        Ok(())
    }
}

impl Write for StagedFile {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.temp.write(buf)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.temp.flush()
    }
}

/// Pretty JSON, written atomically.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut staged = StagedFile::new(path)?;
    serde_json::to_writer_pretty(&mut staged, value)?;
    staged.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    staged.commit()
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let file = open(path)?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::not_found("file", path.display()),
        _ => Error::io(path, e),
    })
}

pub fn save_snapshot(
    path: impl AsRef<Path>,
    graph: &StateGraph,
    memory: &ProceduralMemory,
    config: &EngineConfig,
    created_step: u64,
) -> Result<()> {
    write_json(path, &Snapshot::capture(graph, memory, config, created_step))
}

pub fn load_snapshot(path: impl AsRef<Path>) -> Result<Restored> {
    let path = path.as_ref();
    let value: serde_json::Value = read_json(path)?;
    // check the version before the schema so newer files fail on version
    let version = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0);
    if version > SNAPSHOT_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: SNAPSHOT_FORMAT_VERSION,
        });
    }
    let snapshot: Snapshot = serde_json::from_value(value)?;
    snapshot.restore()
}

/// One JSON object per line: the header, each step, then the summary if
/// the episode finished.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TraceLine {
    Header(TraceHeader),
    Step(Box<StepRecord>),
    Summary(EpisodeSummary),
}

pub fn write_trace(path: impl AsRef<Path>, trace: &EpisodeTrace) -> Result<()> {
    let path = path.as_ref();
    let mut staged = StagedFile::new(path)?;
    let mut line = |l: &TraceLine| -> Result<()> {
        serde_json::to_writer(&mut staged, l)?;
        staged.write_all(b"\n").map_err(|e| Error::io(path, e))
    };
    line(&TraceLine::Header(trace.header.clone()))?;
    for s in &trace.steps {
        line(&TraceLine::Step(Box::new(s.clone())))?;
    }
    if let Some(s) = &trace.summary {
        line(&TraceLine::Summary(s.clone()))?;
    }
    staged.commit()
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<EpisodeTrace> {
    let path = path.as_ref();
    let reader = BufReader::new(open(path)?);
    let mut header = None;
    let mut steps = Vec::new();
    let mut summary = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 {
            let version = serde_json::from_str::<serde_json::Value>(&line)?
                .get("format_version")
                .and_then(|v| v.as_u64())
                .unwrap_or(0);
            if version > TRACE_FORMAT_VERSION {
                return Err(Error::UnsupportedVersion {
                    found: version,
                    supported: TRACE_FORMAT_VERSION,
                });
            }
        }
        match serde_json::from_str(&line)? {
            TraceLine::Header(h) if i == 0 => header = Some(h),
            TraceLine::Header(_) => return Err(Error::corrupt("one trace header", format!("header on line {}", i + 1))),
            TraceLine::Step(_) | TraceLine::Summary(_) if header.is_none() => {
                return Err(Error::corrupt("trace header first", "first line is not a header"))
            }
            TraceLine::Step(_) if summary.is_some() => {
                return Err(Error::corrupt("summary last", format!("step after summary on line {}", i + 1)))
            }
            TraceLine::Step(s) => steps.push(*s),
            TraceLine::Summary(_) if summary.is_some() => {
                return Err(Error::corrupt("one trace summary", format!("second summary on line {}", i + 1)))
            }
            TraceLine::Summary(s) => summary = Some(s),
        }
    }
    let header = header.ok_or_else(|| Error::corrupt("trace header first", "empty trace file"))?;
    Ok(EpisodeTrace { header, steps, summary })
}

pub fn ensure_dir(path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{fresh_stores, run_episode, Episode};
    use crate::envsim::{generate_world, Profile};
    use crate::oracle::{Oracle, Persona};

    fn trained() -> (StateGraph, ProceduralMemory, EngineConfig, EpisodeTrace) {
        let world = generate_world(Profile::ComboHeavy, 7).unwrap();
        let cfg = EngineConfig::default();
        let (mut g, mut m) = fresh_stores(&cfg, &world).unwrap();
        let mut o = Oracle::scripted(Persona::Perfect, 7);
        let ep = Episode {
            seed: 7,
            steps: 30,
            start_step: 0,
        };
        let t = run_episode(&world, &mut o, &mut m, &mut g, &cfg, ep).unwrap();
        (g, m, cfg, t)
    }

    #[test]
    fn snapshot_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let (g, m, cfg, _) = trained();
        let path = dir.path().join("snap.json");
        save_snapshot(&path, &g, &m, &cfg, 30).unwrap();
        let r = load_snapshot(&path).unwrap();
        assert_eq!(r.graph.to_document(), g.to_document());
        assert_eq!(r.memory.to_document(), m.to_document());
        assert_eq!(r.config, cfg);
        assert_eq!(r.created_step, 30);
    }

    #[test]
    fn trace_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let (_, _, _, t) = trained();
        let path = dir.path().join("trace.jsonl");
        write_trace(&path, &t).unwrap();
        assert_eq!(read_trace(&path).unwrap(), t);
    }

    #[test]
    fn missing_file_is_not_found() {
        let err = load_snapshot("/nonexistent/snap.json").unwrap_err();
        assert!(matches!(err, Error::NotFound { .. }), "{err}");
    }

    #[test]
    fn dropped_stage_leaves_destination_alone() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.json");
        write_json(&path, &1u32).unwrap();
        {
            let mut s = StagedFile::new(&path).unwrap();
            s.write_all(b"{ half").unwrap();
        }
        assert_eq!(read_json::<u32>(&path).unwrap(), 1);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
