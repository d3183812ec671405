//! Operator commands behind the `skillgraph` binary. Everything here is a
//! plain function over paths and values so tests can drive it without a
//! subprocess.

use std::fmt::{self, Write as _};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{fresh_stores, run_episode, Ablation, EngineConfig, Episode, EpisodeSummary, EpisodeTrace};
use crate::envsim::{generate_world, Profile, World, WorldSpec};
use crate::error::{Error, Result};
use crate::oracle::{Oracle, Persona, RemoteConfig, RemoteOracle};
use crate::persistence::{self, Restored, Snapshot, StagedFile};

pub const DEFAULT_STEPS: u64 = 100;

/// Where the world comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldSource {
    Profile { profile: Profile, seed: u64 },
    File { path: PathBuf },
}

impl WorldSource {
    /// A profile name if it parses as one, otherwise a file path.
    pub fn parse(value: &str, seed: u64) -> Self {
        match value.parse::<Profile>() {
            Ok(profile) => WorldSource::Profile { profile, seed },
            Err(_) => WorldSource::File { path: value.into() },
        }
    }

    pub fn build(&self) -> Result<World> {
        match self {
            WorldSource::Profile { profile, seed } => generate_world(*profile, *seed),
            WorldSource::File { path } => {
                if !path.is_file() {
                    return Err(Error::Config(format!(
                        "--world `{}` is neither a profile (linear, branching, combo-heavy) nor a file",
                        path.display()
                    )));
                }
                World::new(WorldSpec::load(path)?)
            }
        }
    }
}

/// Scripted persona or remote endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleTarget {
    Persona(String),
    Remote(String),
}

impl FromStr for OracleTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.starts_with("http://") || s.starts_with("https://") {
            return Ok(OracleTarget::Remote(s.to_string()));
        }
        let persona: Persona = s.parse()?;
        Ok(OracleTarget::Persona(persona.as_str().to_string()))
    }
}

impl fmt::Display for OracleTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OracleTarget::Persona(p) => f.write_str(p),
            OracleTarget::Remote(u) => f.write_str(u),
        }
    }
}

impl OracleTarget {
    fn connect(&self, seed: u64) -> Result<Oracle> {
        match self {
            OracleTarget::Persona(p) => Ok(Oracle::scripted(p.parse()?, seed)),
            OracleTarget::Remote(url) => Ok(RemoteOracle::new(RemoteConfig::new(url).with_env_overrides()?).into_oracle()),
        }
    }
}

/// Everything a training run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub world: WorldSource,
    pub seed: u64,
    pub oracle: OracleTarget,
    pub engine: EngineConfig,
    pub rounds: u64,
    pub steps: u64,
    pub out: PathBuf,
    /// Snapshot to continue from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resume: Option<PathBuf>,
}

impl RunManifest {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        RunManifest {
            world: WorldSource::Profile {
                profile: Profile::ComboHeavy,
                seed: 0,
            },
            seed: 0,
            oracle: OracleTarget::Persona(Persona::Perfect.as_str().into()),
            engine: EngineConfig::default(),
            rounds: 1,
            steps: DEFAULT_STEPS,
            out: out.into(),
            resume: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be positive".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be positive".into()));
        }
        self.engine.validate()?;
        if let OracleTarget::Persona(p) = &self.oracle {
            p.parse::<Persona>()?;
        }
        if let Some(r) = &self.resume {
            if !r.is_file() {
                return Err(Error::Config(format!("resume snapshot {} does not exist", r.display())));
            }
        }
        Ok(())
    }
}

/// Optional settings read from a JSON config file. Flags override these,
/// and these override the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub world: Option<String>,
    pub world_seed: Option<u64>,
    pub seed: Option<u64>,
    pub oracle: Option<String>,
    pub rounds: Option<u64>,
    pub steps: Option<u64>,
    pub ablate: Option<String>,
    pub out: Option<PathBuf>,
    pub engine: Option<EngineConfig>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        persistence::read_json(path).map_err(|e| match e {
            Error::Json(j) => Error::Config(format!("{}: {j}", path.display())),
            other => other,
        })
    }
}

/// Command-line values for `run`; `None` means "not given".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFlags {
    pub config: Option<PathBuf>,
    pub world: Option<String>,
    pub world_seed: Option<u64>,
    pub seed: Option<u64>,
    pub oracle: Option<String>,
    pub rounds: Option<u64>,
    pub steps: Option<u64>,
    pub ablate: Option<String>,
    pub out: Option<PathBuf>,
    pub resume: Option<PathBuf>,
}

impl RunFlags {
    /// Merge flags over the config file over defaults.
    pub fn resolve(&self) -> Result<RunManifest> {
        let file = match &self.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        let out = self
            .out
            .clone()
            .or(file.out)
            .ok_or_else(|| Error::Config("an output directory is required (--out)".into()))?;
        let mut m = RunManifest::new(out);
        m.seed = self.seed.or(file.seed).unwrap_or(0);
        // the world follows the run seed unless pinned separately
        let world_seed = self.world_seed.or(file.world_seed).unwrap_or(m.seed);
        if let Some(w) = self.world.as_ref().or(file.world.as_ref()) {
            m.world = WorldSource::parse(w, world_seed);
        } else {
            m.world = WorldSource::Profile {
                profile: Profile::ComboHeavy,
                seed: world_seed,
            };
        }
        if let Some(o) = self.oracle.as_ref().or(file.oracle.as_ref()) {
            m.oracle = o.parse()?;
        }
        if let Some(e) = file.engine {
            m.engine = e;
        }
        if let Some(a) = self.ablate.as_ref().or(file.ablate.as_ref()) {
            m.engine.ablation = a.parse::<Ablation>()?;
        }
        m.rounds = self.rounds.or(file.rounds).unwrap_or(1);
        m.steps = self.steps.or(file.steps).unwrap_or(DEFAULT_STEPS);
        m.resume = self.resume.clone();
        m.validate()?;
        Ok(m)
    }
}

/// One row of the per-round stats table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub round: u64,
    pub library: usize,
    pub augmented: u64,
    pub pruned: u64,
    pub nodes: usize,
    pub skill_edges: usize,
    pub sim_edges: usize,
    pub progression: usize,
    pub responsive_rate: f64,
    pub oracle_cost: u64,
}

impl StatsRow {
    pub fn from_summary(round: u64, s: &EpisodeSummary) -> Self {
        StatsRow {
            round,
            library: s.library_size,
            augmented: s.augmented,
            pruned: s.pruned,
            nodes: s.graph.nodes,
            skill_edges: s.graph.skill_edges,
            sim_edges: s.graph.similarity_edges,
            progression: s.progression,
            responsive_rate: s.responsive_rate,
            oracle_cost: s.oracle_cost,
        }
    }

    fn cells(&self) -> [String; 10] {
        [
            self.round.to_string(),
            self.library.to_string(),
            self.augmented.to_string(),
            self.pruned.to_string(),
            self.nodes.to_string(),
            self.skill_edges.to_string(),
            self.sim_edges.to_string(),
            self.progression.to_string(),
            format!("{:.4}", self.responsive_rate),
            self.oracle_cost.to_string(),
        ]
    }
}

const COLUMNS: [&str; 10] = [
    "round",
    "library",
    "augmented",
    "pruned",
    "nodes",
    "skill_edges",
    "sim_edges",
    "progression",
    "responsive_rate",
    "oracle_cost",
];

/// Right-aligned text table.
pub fn stats_text(rows: &[StatsRow]) -> String {
    let cells: Vec<[String; 10]> = rows.iter().map(StatsRow::cells).collect();
    let widths: Vec<usize> = (0..COLUMNS.len())
        .map(|i| cells.iter().map(|c| c[i].len()).chain([COLUMNS[i].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let line = |out: &mut String, vals: &[&str]| {
        let parts: Vec<String> = vals.iter().zip(&widths).map(|(v, w)| format!("{v:>w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  "));
    };
    line(&mut out, &COLUMNS);
    for c in &cells {
        let vals: Vec<&str> = c.iter().map(String::as_str).collect();
        line(&mut out, &vals);
    }
    out
}

pub fn stats_csv(rows: &[StatsRow]) -> String {
    let mut out = COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.cells().join(","));
        out.push('\n');
    }
    out
}

/// Seed of the episode at absolute round `round`. Depends only on the run
/// seed and the round, so resumed runs replay the same episodes.
pub fn episode_seed(seed: u64, round: u64) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(round)
}

pub fn trace_path(out: &Path, round: u64) -> PathBuf {
    out.join(format!("trace-round{round}.jsonl"))
}

pub fn snapshot_path(out: &Path, round: u64) -> PathBuf {
    out.join(format!("snapshot-round{round}.json"))
}

/// What `cmd_run` produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub rows: Vec<StatsRow>,
    pub snapshots: Vec<PathBuf>,
    pub traces: Vec<PathBuf>,
}

/// Run the manifest's rounds in order, snapshotting after each, and write
/// `stats.txt`, `stats.csv` and `manifest.json` into the output directory.
pub fn cmd_run(manifest: &RunManifest) -> Result<RunReport> {
    manifest.validate()?;
    let world = manifest.world.build()?;
    persistence::ensure_dir(&manifest.out)?;
    let (mut graph, mut memory, first_round, mut next_step) = match &manifest.resume {
        Some(path) => {
            let Restored {
                graph,
                memory,
                config,
                created_step,
                rounds_completed,
            } = persistence::load_snapshot(path)?;
            if config.ablation != manifest.engine.ablation {
                return Err(Error::Config(format!(
                    "snapshot was trained as `{}` but this run is `{}`",
                    config.ablation.label(),
                    manifest.engine.ablation.label()
                )));
            }
            (graph, memory, rounds_completed, created_step)
        }
        None => {
            let (g, m) = fresh_stores(&manifest.engine, &world)?;
            (g, m, 0, 0)
        }
    };

    let mut report = RunReport {
        rows: Vec::new(),
        snapshots: Vec::new(),
        traces: Vec::new(),
    };
    for round in first_round..first_round + manifest.rounds {
        let seed = episode_seed(manifest.seed, round);
        let mut oracle = manifest.oracle.connect(seed)?;
        let trace = run_episode(
            &world,
            &mut oracle,
            &mut memory,
            &mut graph,
            &manifest.engine,
            Episode {
                seed,
                steps: manifest.steps,
                start_step: next_step,
            },
        )?;
        next_step += trace.steps.len() as u64;
        let summary = trace
            .summary
            .as_ref()
            .ok_or_else(|| Error::Contract("episode returned without a summary".into()))?;
        report.rows.push(StatsRow::from_summary(round, summary));

        let tpath = trace_path(&manifest.out, round);
        persistence::write_trace(&tpath, &trace)?;
        let spath = snapshot_path(&manifest.out, round);
        let snap = Snapshot::capture(&graph, &memory, &manifest.engine, next_step).with_rounds(round + 1);
        persistence::write_json(&spath, &snap)?;
        report.traces.push(tpath);
        report.snapshots.push(spath);
    }

    write_text(&manifest.out.join("stats.txt"), &stats_text(&report.rows))?;
    write_text(&manifest.out.join("stats.csv"), &stats_csv(&report.rows))?;
    persistence::write_json(manifest.out.join("manifest.json"), manifest)?;
    Ok(report)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = StagedFile::new(path)?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    f.commit()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    Json,
    Dot,
}

impl FromStr for GraphFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(GraphFormat::Json),
            "dot" => Ok(GraphFormat::Dot),
            other => Err(Error::Config(format!("unknown graph format `{other}` (json or dot)"))),
        }
    }
}

/// Render the snapshot's graph as JSON or DOT.
pub fn cmd_export_graph(snapshot: &Path, format: GraphFormat) -> Result<String> {
    let r = persistence::load_snapshot(snapshot)?;
    Ok(match format {
        GraphFormat::Json => {
            let mut s = serde_json::to_string_pretty(&r.graph.to_document())?;
            s.push('\n');
            s
        }
        GraphFormat::Dot => r.graph.to_dot(&|id| {
            r.memory
                .skill(id)
                .map_or_else(|_| id.to_string(), |s| s.name.clone())
        }),
    })
}

/// One row of the `top-skills` table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopSkill {
    pub skill: crate::ids::SkillId,
    pub name: String,
    pub max_weight: f64,
}

/// The `k` skills with the heaviest edge, by their best edge weight
/// descending, ties broken by skill id.
pub fn top_skills(graph: &crate::graph::StateGraph, memory: &crate::memory::ProceduralMemory, k: usize) -> Vec<TopSkill> {
    let mut best: std::collections::BTreeMap<crate::ids::SkillId, f64> = Default::default();
    for e in graph.skill_edges() {
        let w = best.entry(e.skill).or_insert(f64::NEG_INFINITY);
        *w = w.max(e.weight);
    }
    let mut rows: Vec<TopSkill> = best
        .into_iter()
        .filter_map(|(id, w)| {
            let s = memory.skill(id).ok().filter(|s| s.is_active())?;
            Some(TopSkill {
                skill: id,
                name: s.name.clone(),
                max_weight: w,
            })
        })
        .collect();
    rows.sort_by(|a, b| b.max_weight.total_cmp(&a.max_weight).then(a.skill.cmp(&b.skill)));
    rows.truncate(k);
    rows
}

pub fn cmd_top_skills(snapshot: &Path, k: usize) -> Result<String> {
    let r = persistence::load_snapshot(snapshot)?;
    let rows = top_skills(&r.graph, &r.memory, k);
    let width = rows.iter().map(|t| t.name.len()).chain(["skill".len()]).max().unwrap_or(5);
    let mut out = format!("{:>4}  {:>6}  {:<width$}  {:>10}\n", "rank", "id", "skill", "max_weight");
    for (i, t) in rows.iter().enumerate() {
        let _ = writeln!(out, "{:>4}  {:>6}  {:<width$}  {:>10.6}", i + 1, t.skill.to_string(), t.name, t.max_weight);
    }
    Ok(out)
}

/// Step-by-step narrative of a trace file.
pub fn cmd_replay(trace: &Path) -> Result<String> {
    let t = persistence::read_trace(trace)?;
    Ok(narrate(&t))
}

pub fn narrate(t: &EpisodeTrace) -> String {
    let h = &t.header;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "trace v{} seed {} world_seed {} profile {} start_step {} ablation {}",
        h.format_version,
        h.seed,
        h.world_seed,
        h.profile.as_deref().unwrap_or("-"),
        h.start_step,
        h.config.ablation.label()
    );
    for s in &t.steps {
        let _ = writeln!(
            out,
            "step {} at {} ({} graph candidates){}",
            s.step,
            s.node,
            s.kg_candidates,
            if s.stage1_exhausted { ", graph attempts exhausted" } else { "" }
        );
        // the oracle is asked once graph sampling is over
        let mut invoke_line = s.invoked.as_ref().map(|inv| {
            let ids: Vec<String> = inv.iter().map(ToString::to_string).collect();
            format!("  invoke -> [{}]\n", ids.join(", "))
        });
        for x in &s.executions {
            if x.stage != crate::engine::Stage::KgSample {
                out.push_str(&invoke_line.take().unwrap_or_default());
            }
            let names: Vec<&str> = x.actions.iter().map(|a| a.object_name.as_str()).collect();
            let skill = x.skill.map_or_else(|| "new".to_string(), |id| id.to_string());
            let r = &x.reward;
            let _ = writeln!(
                out,
                "  {:<12} {:<6} [{}] {} -> {}{} delta {:.6} | progress {:.6} + semantics {:.6} + state {:.6} + novel {:.6} = {:.6}{}",
                x.stage.label(),
                skill,
                names.join(", "),
                x.src,
                x.dst,
                if x.dst_is_new { " (new)" } else { "" },
                x.outcome.delta,
                r.progress,
                r.semantics,
                r.state,
                r.novel,
                r.total,
                if x.outcome.grounding_failed { " grounding failed" } else { "" }
            );
            if let Some(m) = x.outcome.milestone {
                let _ = writeln!(out, "    milestone screen {m}");
            }
            if let Some(id) = x.registered {
                let _ = writeln!(out, "    registered {id}");
            }
            for id in &x.pruned {
                let _ = writeln!(out, "    pruned {id}");
            }
            if x.success && x.stage == crate::engine::Stage::KgSample {
                let _ = writeln!(out, "    break on success");
            }
        }
        out.push_str(&invoke_line.unwrap_or_default());
        if let Some(rf) = &s.refine {
            match rf.replacement {
                Some(new) => {
                    let _ = writeln!(out, "  refine {} -> {}", rf.original, new);
                }
                None => {
                    let _ = writeln!(out, "  refine {} -> nothing", rf.original);
                }
            }
        }
    }
    if let Some(s) = &t.summary {
        let _ = writeln!(
            out,
            "summary: {} steps, {:?}, progression {}, responsive {:.4}, oracle cost {}, augmented {}, pruned {}, library {}",
            s.steps, s.termination, s.progression, s.responsive_rate, s.oracle_cost, s.augmented, s.pruned, s.library_size
        );
    }
    out
}

/// Stats table from a run directory's traces, or library and graph
/// totals for a single snapshot.
pub fn cmd_stats(path: &Path, csv: bool) -> Result<String> {
    if path.is_dir() {
        let mut rows = Vec::new();
        for round in 0.. {
            let p = trace_path(path, round);
            if !p.exists() {
                break;
            }
            let t = persistence::read_trace(&p)?;
            let s = t
                .summary
                .as_ref()
                .ok_or_else(|| Error::corrupt("trace summary", format!("{} has no summary", p.display())))?;
            rows.push(StatsRow::from_summary(round, s));
        }
        if rows.is_empty() {
            return Err(Error::not_found("trace", trace_path(path, 0).display()));
        }
        return Ok(if csv { stats_csv(&rows) } else { stats_text(&rows) });
    }
    let r = persistence::load_snapshot(path)?;
    let g = r.graph.stats();
    let c = r.memory.counters();
    let mut out = String::new();
    let _ = writeln!(out, "rounds_completed  {}", r.rounds_completed);
    let _ = writeln!(out, "created_step      {}", r.created_step);
    let _ = writeln!(out, "ablation          {}", r.config.ablation.label());
    let _ = writeln!(out, "library           {}", r.memory.library_size());
    let _ = writeln!(out, "skills_total      {}", r.memory.skills().len());
    let _ = writeln!(out, "augmented         {}", c.augmented);
    let _ = writeln!(out, "pruned            {}", c.pruned);
    let _ = writeln!(out, "nodes             {}", g.nodes);
    let _ = writeln!(out, "skill_edges       {}", g.skill_edges);
    let _ = writeln!(out, "sim_edges         {}", g.similarity_edges);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn world_source_falls_back_to_path() {
        assert_eq!(
            WorldSource::parse("linear", 3),
            WorldSource::Profile {
                profile: Profile::Linear,
                seed: 3
            }
        );
        assert!(matches!(WorldSource::parse("w.json", 3), WorldSource::File { .. }));
        assert!(matches!(WorldSource::parse("nope", 0).build(), Err(Error::Config(_))));
    }

    #[test]
    fn oracle_target_parsing() {
        assert_eq!("noisy".parse::<OracleTarget>().unwrap(), OracleTarget::Persona("noisy".into()));
        assert!(matches!("http://x:1".parse::<OracleTarget>().unwrap(), OracleTarget::Remote(_)));
        assert!("oracle9".parse::<OracleTarget>().is_err());
    }

    #[test]
    fn flags_beat_config_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"rounds": 3, "steps": 40, "seed": 9, "out": "from-file"}"#).unwrap();
        let flags = RunFlags {
            config: Some(cfg),
            steps: Some(7),
            ..Default::default()
        };
        let m = flags.resolve().unwrap();
        assert_eq!((m.rounds, m.steps, m.seed), (3, 7, 9));
        assert_eq!(m.out, PathBuf::from("from-file"));
        assert_eq!(m.engine, EngineConfig::default());
        let m = RunFlags {
            out: Some("x".into()),
            ..Default::default()
        }
        .resolve()
        .unwrap();
        assert_eq!((m.rounds, m.steps), (1, DEFAULT_STEPS));
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"roundz": 3}"#).unwrap();
        let flags = RunFlags {
            config: Some(cfg),
            out: Some("x".into()),
            ..Default::default()
        };
        assert!(matches!(flags.resolve(), Err(Error::Config(_))));
    }

    #[test]
    fn zero_rounds_is_a_config_error() {
        let mut m = RunManifest::new("x");
        m.rounds = 0;
        assert!(matches!(m.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn table_columns_line_up() {
        let row = StatsRow {
            round: 0,
            library: 12,
            augmented: 3,
            pruned: 0,
            nodes: 100,
            skill_edges: 7,
            sim_edges: 2,
            progression: 4,
            responsive_rate: 0.5,
            oracle_cost: 40,
        };
        let text = stats_text(std::slice::from_ref(&row));
        let lens: Vec<usize> = text.lines().map(str::len).collect();
        assert_eq!(lens[0], lens[1]);
        assert_eq!(stats_csv(&[row]).lines().nth(1).unwrap(), "0,12,3,0,100,7,2,4,0.5000,40");
    }
}
