//! The state-action knowledge graph.
//!
//! Nodes are perceptual states. Two edge families connect them:
//! undirected similarity edges between states that look alike without
//! being the same, and directed skill edges recording which skill took
//! the agent from one state to another. Skill edges carry a weight that
//! blends the visual change of the transition with the skill's
//! accumulated fitness; the sum of a node's outgoing weights is its
//! potential, and potential differences drive the state-value reward.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, Embedding, SimilarityClass, SimilarityThresholds, DEFAULT_DIMENSION};
use crate::error::{Error, Result};
use crate::ids::{NodeId, SkillId};
use crate::memory::{Skill, SkillStatus};

pub const GRAPH_FORMAT_VERSION: u64 = 1;

/// Reward for reaching a state the graph has never held.
pub const NOVEL_STATE_REWARD: f64 = 1.0;
/// Reward for reaching a state the graph already knows.
pub const KNOWN_STATE_REWARD: f64 = 0.015;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub thresholds: SimilarityThresholds,
    /// Weight of visual change against fitness in the skill-edge weight.
    pub alpha: f64,
    /// Fitness at which the fitness term reaches half saturation.
    pub c0: f64,
    pub dimension: usize,
    /// When off, every observation becomes its own node: no merging and
    /// no similarity edges.
    #[serde(default = "default_true")]
    pub similarity_edges: bool,
}

fn default_true() -> bool {
    true
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            thresholds: SimilarityThresholds::default(),
            alpha: 0.7,
            c0: 5.0,
            dimension: DEFAULT_DIMENSION,
            similarity_edges: true,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.c0 > 0.0 && self.c0.is_finite()) {
            return Err(Error::Config(format!("c0 {} must be positive", self.c0)));
        }
        if self.dimension == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateNode {
    pub id: NodeId,
    pub embedding: Embedding,
    pub visit_count: u64,
    pub first_seen_step: u64,
}

/// Undirected; stored with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityEdge {
    pub a: NodeId,
    pub b: NodeId,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkillEdge {
    pub src: NodeId,
    pub dst: NodeId,
    #[serde(rename = "skill_id")]
    pub skill: SkillId,
    pub weight: f64,
    pub traversal_count: u64,
    pub last_delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub skill_edges: usize,
    pub similarity_edges: usize,
}

/// Outcome of ingesting one observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ingested {
    pub node: NodeId,
    pub is_new: bool,
}

type EdgeKey = (NodeId, NodeId, SkillId);

#[derive(Debug, Clone)]
pub struct StateGraph {
    config: GraphConfig,
    nodes: Vec<StateNode>,
    similarity: Vec<SimilarityEdge>,
    similar_to: Vec<BTreeSet<NodeId>>,
    skill_edges: BTreeMap<EdgeKey, SkillEdge>,
}

/// `sigmoid(alpha * delta + (1 - alpha) * fitness / (fitness + c0))`.
pub fn skill_edge_weight(delta: f64, fitness: f64, cfg: &GraphConfig) -> f64 {
    debug_assert!((0.0..=1.0).contains(&delta), "delta {delta} outside [0, 1]");
    debug_assert!(fitness >= 0.0, "negative fitness {fitness}");
    let saturation = fitness / (fitness + cfg.c0);
    let z = cfg.alpha * delta + (1.0 - cfg.alpha) * saturation;
    1.0 / (1.0 + (-z).exp())
}

pub fn reward_novel(is_new_node: bool) -> f64 {
    if is_new_node {
        NOVEL_STATE_REWARD
    } else {
        KNOWN_STATE_REWARD
    }
}

/// Draw one skill with probability proportional to its weight.
pub fn sample_skill<R: Rng + ?Sized>(candidates: &[(SkillId, f64)], rng: &mut R) -> Result<SkillId> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    if let Some((id, w)) = candidates.iter().find(|(_, w)| !(*w > 0.0 && w.is_finite())) {
        return Err(Error::Contract(format!("candidate {id} has non-positive weight {w}")));
    }
    let dist = WeightedIndex::new(candidates.iter().map(|(_, w)| *w))
        .map_err(|e| Error::Contract(e.to_string()))?;
    Ok(candidates[dist.sample(rng)].0)
}

impl StateGraph {
    pub fn new(config: GraphConfig) -> Result<Self> {
        config.validate()?;
        Ok(StateGraph {
            config,
            nodes: Vec::new(),
            similarity: Vec::new(),
            similar_to: Vec::new(),
            skill_edges: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &GraphConfig {
        &self.config
    }

    pub fn node(&self, id: NodeId) -> Result<&StateNode> {
        self.nodes.get(id.index()).ok_or_else(|| Error::not_found("node", id))
    }

    pub fn nodes(&self) -> &[StateNode] {
        &self.nodes
    }

    pub fn similarity_edges(&self) -> &[SimilarityEdge] {
        &self.similarity
    }

    pub fn skill_edges(&self) -> impl Iterator<Item = &SkillEdge> {
        self.skill_edges.values()
    }

    pub fn skill_edge(&self, src: NodeId, dst: NodeId, skill: SkillId) -> Option<&SkillEdge> {
        self.skill_edges.get(&(src, dst, skill))
    }

    pub fn outgoing(&self, src: NodeId) -> impl Iterator<Item = &SkillEdge> {
        let lo = (src, NodeId(0), SkillId(0));
        let hi = (src, NodeId(u32::MAX), SkillId(u32::MAX));
        self.skill_edges.range(lo..=hi).map(|(_, e)| e)
    }

    fn check_dimension(&self, e: &Embedding) -> Result<()> {
        if e.dimension() != self.config.dimension {
            return Err(Error::Contract(format!(
                "embedding dimension {} does not match graph dimension {}",
                e.dimension(),
                self.config.dimension
            )));
        }
        Ok(())
    }

    /// Merge the observation into the closest node above the merge
    /// threshold, or create a node linked to every node in the
    /// similarity band.
    pub fn ingest_observation(&mut self, embedding: Embedding, step: u64) -> Result<Ingested> {
        self.check_dimension(&embedding)?;
        let mut similar = Vec::new();
        let mut best: Option<(NodeId, f64)> = None;
        if self.config.similarity_edges {
            for node in &self.nodes {
                let sim = cosine(&node.embedding, &embedding)?;
                match self.config.thresholds.classify(sim) {
                    SimilarityClass::Merge => {
                        if best.is_none_or(|(_, b)| sim > b) {
                            best = Some((node.id, sim));
                        }
                    }
                    SimilarityClass::SimilarEdge => similar.push((node.id, sim)),
                    SimilarityClass::Unrelated => {}
                }
            }
        }
        if let Some((id, _)) = best {
            self.nodes[id.index()].visit_count += 1;
            return Ok(Ingested { node: id, is_new: false });
        }

        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(StateNode {
            id,
            embedding,
            visit_count: 1,
            first_seen_step: step,
        });
        self.similar_to.push(BTreeSet::new());
        for (other, weight) in similar {
            self.link_similar(other, id, weight);
        }
        Ok(Ingested { node: id, is_new: true })
    }

    fn link_similar(&mut self, x: NodeId, y: NodeId, weight: f64) {
        let (a, b) = if x < y { (x, y) } else { (y, x) };
        self.similarity.push(SimilarityEdge { a, b, weight });
        self.similar_to[a.index()].insert(b);
        self.similar_to[b.index()].insert(a);
    }

    /// Create or refresh the `(src, dst, skill)` edge from the skill's
    /// current fitness and the transition's visual change.
    pub fn record_transition(&mut self, src: NodeId, dst: NodeId, skill: &Skill, delta: f64) -> Result<&SkillEdge> {
        self.node(src)?;
        self.node(dst)?;
        if skill.status == SkillStatus::Pruned {
            return Err(Error::Pruned(skill.id.0));
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::Contract(format!("delta {delta} outside [0, 1]")));
        }
        let weight = skill_edge_weight(delta, skill.fitness, &self.config);
        let edge = self
            .skill_edges
            .entry((src, dst, skill.id))
            .or_insert(SkillEdge {
                src,
                dst,
                skill: skill.id,
                weight,
                traversal_count: 0,
                last_delta: delta,
            });
        edge.weight = weight;
        edge.last_delta = delta;
        edge.traversal_count += 1;
        Ok(edge)
    }

    /// The node itself plus every node sharing a similarity edge with it.
    pub fn neighborhood(&self, node: NodeId) -> Result<Vec<NodeId>> {
        self.node(node)?;
        let mut out: BTreeSet<NodeId> = self.similar_to[node.index()].clone();
        out.insert(node);
        Ok(out.into_iter().collect())
    }

    /// Skills found on outgoing edges anywhere in the neighborhood, each
    /// with its best edge weight, ordered by skill id.
    pub fn high_quality_skills(&self, node: NodeId) -> Result<Vec<(SkillId, f64)>> {
        let mut best: BTreeMap<SkillId, f64> = BTreeMap::new();
        for v in self.neighborhood(node)? {
            for e in self.outgoing(v) {
                let w = best.entry(e.skill).or_insert(e.weight);
                if e.weight > *w {
                    *w = e.weight;
                }
            }
        }
        Ok(best.into_iter().collect())
    }

    /// Sum of outgoing skill-edge weights, self-loops included.
    pub fn state_potential(&self, node: NodeId) -> Result<f64> {
        self.node(node)?;
        Ok(self.outgoing(node).map(|e| e.weight).sum())
    }

    /// Potential gained by moving from `src` to `dst`.
    pub fn reward_state(&self, src: NodeId, dst: NodeId) -> Result<f64> {
        if src == dst {
            self.node(src)?;
            return Ok(0.0);
        }
        Ok(self.state_potential(dst)? - self.state_potential(src)?)
    }

    pub fn stats(&self) -> GraphStats {
        GraphStats {
            nodes: self.nodes.len(),
            skill_edges: self.skill_edges.len(),
            similarity_edges: self.similarity.len(),
        }
    }

    /// Drop every edge that carries `skill`. Returns how many were removed.
    pub fn remove_skill_edges(&mut self, skill: SkillId) -> usize {
        let before = self.skill_edges.len();
        self.skill_edges.retain(|(_, _, s), _| *s != skill);
        before - self.skill_edges.len()
    }

    /// Recompute every edge weight from current fitness values.
    pub fn refresh_weights(&mut self, fitness_of: impl Fn(SkillId) -> Option<f64>) {
        let cfg = self.config;
        for edge in self.skill_edges.values_mut() {
            if let Some(f) = fitness_of(edge.skill) {
                edge.weight = skill_edge_weight(edge.last_delta, f, &cfg);
            }
        }
    }

    /// Top `k` skill edges by weight, ties broken by skill id then endpoints.
    pub fn top_edges(&self, k: usize) -> Vec<SkillEdge> {
        let mut edges: Vec<SkillEdge> = self.skill_edges.values().copied().collect();
        edges.sort_by(|x, y| {
            y.weight
                .total_cmp(&x.weight)
                .then(x.skill.cmp(&y.skill))
                .then(x.src.cmp(&y.src))
                .then(x.dst.cmp(&y.dst))
        });
        edges.truncate(k);
        edges
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            config: ConfigHeader {
                format_version: GRAPH_FORMAT_VERSION,
                graph: self.config,
            },
            nodes: self.nodes.clone(),
            similarity_edges: self.similarity.clone(),
            skill_edges: self.skill_edges.values().copied().collect(),
        }
    }

    /// Rebuild a graph, re-checking every structural invariant.
    pub fn from_document(doc: GraphDocument) -> Result<Self> {
        if doc.config.format_version > GRAPH_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: doc.config.format_version,
                supported: GRAPH_FORMAT_VERSION,
            });
        }
        let config = doc.config.graph;
        config.validate()?;
        let mut graph = StateGraph::new(config)?;
        for (i, node) in doc.nodes.into_iter().enumerate() {
            if node.id.index() != i {
                return Err(Error::corrupt("dense node ids", format!("node at position {i} has id {}", node.id)));
            }
            if node.embedding.dimension() != config.dimension {
                return Err(Error::corrupt(
                    "embedding dimension",
                    format!("{} has dimension {}", node.id, node.embedding.dimension()),
                ));
            }
            if node.visit_count == 0 {
                return Err(Error::corrupt("visit_count >= 1", format!("{} has zero visits", node.id)));
            }
            graph.nodes.push(node);
            graph.similar_to.push(BTreeSet::new());
        }

        if config.similarity_edges {
            for i in 0..graph.nodes.len() {
                for j in (i + 1)..graph.nodes.len() {
                    let sim = cosine(&graph.nodes[i].embedding, &graph.nodes[j].embedding)?;
                    if sim > config.thresholds.merge() {
                        return Err(Error::corrupt(
                            "no-merge-pair",
                            format!("v{i} and v{j} have cosine {sim} above the merge threshold"),
                        ));
                    }
                }
            }
        } else if !doc.similarity_edges.is_empty() {
            return Err(Error::corrupt(
                "similarity edges disabled",
                format!("{} similarity edges present", doc.similarity_edges.len()),
            ));
        }

        for e in doc.similarity_edges {
            let (a, b) = (e.a, e.b);
            if a == b {
                return Err(Error::corrupt("no similarity self-loops", format!("{a}")));
            }
            if a > b {
                return Err(Error::corrupt("similarity edge ordering", format!("{a} > {b}")));
            }
            let (na, nb) = match (graph.nodes.get(a.index()), graph.nodes.get(b.index())) {
                (Some(x), Some(y)) => (x, y),
                _ => return Err(Error::corrupt("edge endpoints exist", format!("{a}-{b}"))),
            };
            let sim = cosine(&na.embedding, &nb.embedding)?;
            if sim != e.weight {
                return Err(Error::corrupt(
                    "similarity weight equals cosine",
                    format!("{a}-{b}: stored {} vs cosine {sim}", e.weight),
                ));
            }
            if config.thresholds.classify(sim) != SimilarityClass::SimilarEdge {
                return Err(Error::corrupt("similarity band", format!("{a}-{b}: cosine {sim}")));
            }
            if !graph.similar_to[a.index()].insert(b) {
                return Err(Error::corrupt("one similarity edge per pair", format!("{a}-{b}")));
            }
            graph.similar_to[b.index()].insert(a);
            graph.similarity.push(e);
        }

        for e in doc.skill_edges {
            if graph.nodes.get(e.src.index()).is_none() || graph.nodes.get(e.dst.index()).is_none() {
                return Err(Error::corrupt("edge endpoints exist", format!("{}->{}", e.src, e.dst)));
            }
            if !(e.weight > 0.0 && e.weight < 1.0) {
                return Err(Error::corrupt("skill weight in (0,1)", format!("{}->{} weight {}", e.src, e.dst, e.weight)));
            }
            if e.traversal_count == 0 {
                return Err(Error::corrupt("traversal_count >= 1", format!("{}->{}", e.src, e.dst)));
            }
            if !(0.0..=1.0).contains(&e.last_delta) {
                return Err(Error::corrupt("delta in [0,1]", format!("{}->{}", e.src, e.dst)));
            }
            if graph.skill_edges.insert((e.src, e.dst, e.skill), e).is_some() {
                return Err(Error::corrupt(
                    "one skill edge per (src, dst, skill)",
                    format!("{}->{} {}", e.src, e.dst, e.skill),
                ));
            }
        }
        Ok(graph)
    }

    /// Graphviz rendering: skill edges red and directed, similarity edges
    /// blue and undirected.
    pub fn to_dot(&self, skill_label: &dyn Fn(SkillId) -> String) -> String {
        let mut out = String::from("digraph stategraph {\n  node [shape=circle];\n");
        for n in &self.nodes {
            let _ = writeln!(out, "  {} [label=\"{}\\n×{}\"];", n.id, n.id, n.visit_count);
        }
        for e in &self.similarity {
            let _ = writeln!(
                out,
                "  {} -> {} [dir=none, color=blue, label=\"{:.3}\"];",
                e.a, e.b, e.weight
            );
        }
        for e in self.skill_edges.values() {
            let label = skill_label(e.skill).replace('"', "'");
            let _ = writeln!(
                out,
                "  {} -> {} [color=red, label=\"{} {:.4}\"];",
                e.src, e.dst, label, e.weight
            );
        }
        out.push_str("}\n");
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigHeader {
    pub format_version: u64,
    #[serde(flatten)]
    pub graph: GraphConfig,
}

/// Serialized graph: config header plus node and edge arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub config: ConfigHeader,
    pub nodes: Vec<StateNode>,
    pub similarity_edges: Vec<SimilarityEdge>,
    pub skill_edges: Vec<SkillEdge>,
}
