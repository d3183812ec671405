//! Procedural memory: the skill library, action clusters, the objects
//! table and cached per-state selection statistics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, Embedding, SimilarityThresholds};
use crate::error::{Error, Result};
use crate::graph::StateGraph;
use crate::ids::{ClusterId, NodeId, ObjectId, SkillId};

pub const MEMORY_FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Operation {
    Click,
    Drag,
    Scroll,
    Type,
}

impl Operation {
    pub const ALL: [Operation; 4] = [Operation::Click, Operation::Drag, Operation::Scroll, Operation::Type];
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AtomicAction {
    pub operate: Operation,
    pub object_id: ObjectId,
    pub object_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
}

impl AtomicAction {
    pub fn click(object_id: ObjectId, name: impl Into<String>) -> Self {
        AtomicAction {
            operate: Operation::Click,
            object_id,
            object_name: name.into(),
            payload: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SkillStatus {
    Active,
    Pruned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skill {
    pub id: SkillId,
    pub name: String,
    pub descriptor: String,
    pub actions: Vec<AtomicAction>,
    pub fitness: f64,
    pub exec_count: u64,
    pub created_step: u64,
    pub status: SkillStatus,
    /// Total reward of the most recent execution.
    #[serde(default)]
    pub last_reward: Option<f64>,
}

impl Skill {
    pub fn is_active(&self) -> bool {
        self.status == SkillStatus::Active
    }

    pub fn object_ids(&self) -> impl Iterator<Item = ObjectId> + '_ {
        self.actions.iter().map(|a| a.object_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionCluster {
    pub id: ClusterId,
    pub centroid: Embedding,
    /// Number of state embeddings folded into the centroid.
    pub samples: u64,
    pub skill_ids: BTreeSet<SkillId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UIObject {
    pub id: ObjectId,
    pub name: String,
    /// Stand-in for the element's reference image.
    pub reference_descriptor: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub visits: u64,
    pub value_sum: f64,
}

/// Depth-one search statistics cached for one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTreeStats {
    pub state: NodeId,
    pub total_visits: u64,
    pub arms: BTreeMap<SkillId, ArmStats>,
    /// Objects already proposed as first actions during augmentation here.
    #[serde(default)]
    pub expanded: BTreeSet<ObjectId>,
}

impl SearchTreeStats {
    pub fn new(state: NodeId) -> Self {
        SearchTreeStats {
            state,
            total_visits: 0,
            arms: BTreeMap::new(),
            expanded: BTreeSet::new(),
        }
    }

    pub fn visits(&self, skill: SkillId) -> u64 {
        self.arms.get(&skill).map_or(0, |a| a.visits)
    }

    pub fn record(&mut self, skill: SkillId, value: f64) {
        let arm = self.arms.entry(skill).or_default();
        arm.visits += 1;
        arm.value_sum += value;
        self.total_visits += 1;
    }
}

/// Library size and lifecycle counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibraryCounters {
    pub augmented: u64,
    pub pruned: u64,
}

#[derive(Debug, Clone)]
pub struct ProceduralMemory {
    thresholds: SimilarityThresholds,
    skills: Vec<Skill>,
    clusters: Vec<ActionCluster>,
    objects: BTreeMap<ObjectId, UIObject>,
    trees: BTreeMap<NodeId, SearchTreeStats>,
    counters: LibraryCounters,
}

impl ProceduralMemory {
    /// `thresholds.similar()` doubles as the cluster admission threshold.
    pub fn new(thresholds: SimilarityThresholds) -> Self {
        ProceduralMemory {
            thresholds,
            skills: Vec::new(),
            clusters: Vec::new(),
            objects: BTreeMap::new(),
            trees: BTreeMap::new(),
            counters: LibraryCounters::default(),
        }
    }

    pub fn skill(&self, id: SkillId) -> Result<&Skill> {
        self.skills.get(id.index()).ok_or_else(|| Error::not_found("skill", id))
    }

    pub fn skills(&self) -> &[Skill] {
        &self.skills
    }

    pub fn active_skills(&self) -> impl Iterator<Item = &Skill> {
        self.skills.iter().filter(|s| s.is_active())
    }

    pub fn library_size(&self) -> usize {
        self.active_skills().count()
    }

    pub fn counters(&self) -> LibraryCounters {
        self.counters
    }

    pub fn clusters(&self) -> &[ActionCluster] {
        &self.clusters
    }

    pub fn objects(&self) -> impl Iterator<Item = &UIObject> {
        self.objects.values()
    }

    pub fn object(&self, id: ObjectId) -> Option<&UIObject> {
        self.objects.get(&id)
    }

    pub fn register_object(&mut self, object: UIObject) {
        self.objects.entry(object.id).or_insert(object);
    }

    /// Add a skill learned at a state with embedding `state`, or return
    /// the active skill with the identical action sequence.
    /// The flag is true when a new entry was created.
    pub fn add_skill(
        &mut self,
        name: impl Into<String>,
        descriptor: impl Into<String>,
        actions: Vec<AtomicAction>,
        step: u64,
        state: Option<&Embedding>,
    ) -> Result<(SkillId, bool)> {
        if actions.is_empty() {
            return Err(Error::Contract("a skill needs at least one action".into()));
        }
        if let Some(existing) = self.active_skills().find(|s| s.actions == actions) {
            return Ok((existing.id, false));
        }
        let id = SkillId(self.skills.len() as u32);
        self.skills.push(Skill {
            id,
            name: name.into(),
            descriptor: descriptor.into(),
            actions,
            fitness: 0.0,
            exec_count: 0,
            created_step: step,
            status: SkillStatus::Active,
            last_reward: None,
        });
        self.counters.augmented += 1;
        if let Some(state) = state {
            self.assign_cluster(id, state)?;
        }
        Ok((id, true))
    }

    fn assign_cluster(&mut self, skill: SkillId, state: &Embedding) -> Result<()> {
        match self.best_cluster(state)? {
            Some(idx) => {
                let c = &mut self.clusters[idx];
                let n = c.samples as f64;
                let merged: Vec<f64> = c
                    .centroid
                    .values()
                    .iter()
                    .zip(state.values())
                    .map(|(m, x)| (m * n + x) / (n + 1.0))
                    .collect();
                // a mean of in-band vectors can still cancel to zero in
                // degenerate cases; keep the old centroid then
                if let Ok(e) = Embedding::new(merged) {
                    c.centroid = e;
                }
                c.samples += 1;
                c.skill_ids.insert(skill);
            }
            None => {
                let id = ClusterId(self.clusters.len() as u32);
                self.clusters.push(ActionCluster {
                    id,
                    centroid: state.clone(),
                    samples: 1,
                    skill_ids: BTreeSet::from([skill]),
                });
            }
        }
        Ok(())
    }

    fn best_cluster(&self, query: &Embedding) -> Result<Option<usize>> {
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in self.clusters.iter().enumerate() {
            let sim = cosine(&c.centroid, query)?;
            if sim > self.thresholds.similar() && best.is_none_or(|(_, b)| sim > b) {
                best = Some((i, sim));
            }
        }
        Ok(best.map(|(i, _)| i))
    }

    /// The cluster whose centroid is most similar to `query`, if any
    /// clears the admission threshold.
    pub fn cluster_for_state(&self, query: &Embedding) -> Result<Option<&ActionCluster>> {
        Ok(self.best_cluster(query)?.map(|i| &self.clusters[i]))
    }

    /// Clip-positive fitness accumulation.
    pub fn update_fitness(&mut self, id: SkillId, total_reward: f64) -> Result<f64> {
        let skill = self
            .skills
            .get_mut(id.index())
            .ok_or_else(|| Error::not_found("skill", id))?;
        if !skill.is_active() {
            return Err(Error::Pruned(id.0));
        }
        skill.fitness += total_reward.max(0.0);
        skill.exec_count += 1;
        skill.last_reward = Some(total_reward);
        Ok(skill.fitness)
    }

    /// Mark pruned, drop its graph edges and cluster membership. Returns
    /// the number of graph edges removed; pruning twice is a no-op.
    pub fn prune_skill(&mut self, id: SkillId, graph: &mut StateGraph) -> Result<usize> {
        let skill = self
            .skills
            .get_mut(id.index())
            .ok_or_else(|| Error::not_found("skill", id))?;
        if !skill.is_active() {
            return Ok(0);
        }
        skill.status = SkillStatus::Pruned;
        self.counters.pruned += 1;
        for c in &mut self.clusters {
            c.skill_ids.remove(&id);
        }
        Ok(graph.remove_skill_edges(id))
    }

    pub fn tree_stats(&mut self, state: NodeId) -> &mut SearchTreeStats {
        self.trees.entry(state).or_insert_with(|| SearchTreeStats::new(state))
    }

    pub fn all_tree_stats(&self) -> impl Iterator<Item = &SearchTreeStats> {
        self.trees.values()
    }

    pub fn thresholds(&self) -> &SimilarityThresholds {
        &self.thresholds
    }

    pub fn peek_tree_stats(&self, state: NodeId) -> Option<&SearchTreeStats> {
        self.trees.get(&state)
    }

    pub fn to_document(&self) -> MemoryDocument {
        MemoryDocument {
            format_version: MEMORY_FORMAT_VERSION,
            thresholds: self.thresholds,
            counters: self.counters,
            skills: self.skills.clone(),
            clusters: self.clusters.clone(),
            objects: self.objects.values().cloned().collect(),
            tree_stats: self.trees.values().cloned().collect(),
        }
    }

    pub fn from_document(doc: MemoryDocument) -> Result<Self> {
        if doc.format_version > MEMORY_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: doc.format_version,
                supported: MEMORY_FORMAT_VERSION,
            });
        }
        let mut mem = ProceduralMemory::new(doc.thresholds);
        mem.counters = doc.counters;
        for (i, s) in doc.skills.into_iter().enumerate() {
            if s.id.index() != i {
                return Err(Error::corrupt("dense skill ids", format!("position {i} holds {}", s.id)));
            }
            if s.actions.is_empty() {
                return Err(Error::corrupt("skill actions nonempty", format!("{}", s.id)));
            }
            if !(s.fitness >= 0.0 && s.fitness.is_finite()) {
                return Err(Error::corrupt("fitness >= 0", format!("{} has fitness {}", s.id, s.fitness)));
            }
            mem.skills.push(s);
        }
        let mut seen = BTreeSet::new();
        for (i, c) in doc.clusters.into_iter().enumerate() {
            if c.id.index() != i {
                return Err(Error::corrupt("dense cluster ids", format!("position {i} holds {}", c.id)));
            }
            for s in &c.skill_ids {
                match mem.skills.get(s.index()) {
                    Some(skill) if skill.is_active() => {}
                    _ => {
                        return Err(Error::corrupt(
                            "cluster members active",
                            format!("{} lists {s}", c.id),
                        ))
                    }
                }
                if !seen.insert(*s) {
                    return Err(Error::corrupt("clusters disjoint", format!("{s} in several clusters")));
                }
            }
            mem.clusters.push(c);
        }
        for o in doc.objects {
            if mem.objects.insert(o.id, o.clone()).is_some() {
                return Err(Error::corrupt("object ids unique", format!("{}", o.id)));
            }
        }
        for t in doc.tree_stats {
            let sum: u64 = t.arms.values().map(|a| a.visits).sum();
            if sum != t.total_visits {
                return Err(Error::corrupt(
                    "N_i equals the sum of per-skill counts",
                    format!("{}: total {} vs sum {sum}", t.state, t.total_visits),
                ));
            }
            if mem.trees.insert(t.state, t.clone()).is_some() {
                return Err(Error::corrupt("one tree per state", format!("{}", t.state)));
            }
        }
        Ok(mem)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryDocument {
    pub format_version: u64,
    pub thresholds: SimilarityThresholds,
    #[serde(default)]
    pub counters: LibraryCounters,
    pub skills: Vec<Skill>,
    pub clusters: Vec<ActionCluster>,
    pub objects: Vec<UIObject>,
    pub tree_stats: Vec<SearchTreeStats>,
}

#[cfg(test)]
pub(crate) fn test_skill(id: u32) -> Skill {
    Skill {
        id: SkillId(id),
        name: format!("skill {id}"),
        descriptor: String::new(),
        actions: vec![AtomicAction::click(ObjectId(id), format!("button {id}"))],
        fitness: 0.0,
        exec_count: 0,
        created_step: 0,
        status: SkillStatus::Active,
        last_reward: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphConfig;

    fn click(i: u32) -> AtomicAction {
        AtomicAction::click(ObjectId(i), format!("b{i}"))
    }

    fn emb(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn mem() -> ProceduralMemory {
        ProceduralMemory::new(SimilarityThresholds::default())
    }

    #[test]
    fn add_initialises_and_dedups_by_actions() {
        let mut m = mem();
        let (a, new_a) = m.add_skill("open", "opens the menu", vec![click(1)], 3, None).unwrap();
        assert!(new_a);
        let s = m.skill(a).unwrap();
        assert_eq!((s.fitness, s.exec_count, s.status), (0.0, 0, SkillStatus::Active));
        let (b, new_b) = m.add_skill("other name", "different words", vec![click(1)], 4, None).unwrap();
        assert_eq!((a, new_b), (b, false));
        assert_eq!(m.library_size(), 1);
        assert!(m.add_skill("x", "y", vec![], 0, None).is_err());
    }

    #[test]
    fn fitness_is_clipped_cumulative() {
        let mut m = mem();
        let (id, _) = m.add_skill("a", "a", vec![click(1)], 0, None).unwrap();
        assert_eq!(m.update_fitness(id, 2.0).unwrap(), 2.0);
        assert_eq!(m.update_fitness(id, -0.5).unwrap(), 2.0);
        assert_eq!(m.skill(id).unwrap().exec_count, 2);
        assert_eq!(m.update_fitness(id, 0.0).unwrap(), 2.0);
        assert_eq!(m.skill(id).unwrap().exec_count, 3);
        assert!(matches!(m.update_fitness(SkillId(9), 1.0), Err(Error::NotFound { .. })));
    }

    #[test]
    fn prune_cascades_and_is_idempotent() {
        let mut g = StateGraph::new(GraphConfig { dimension: 2, ..Default::default() }).unwrap();
        let a = g.ingest_observation(emb(&[1.0, 0.0]), 0).unwrap().node;
        let b = g.ingest_observation(emb(&[0.0, 1.0]), 1).unwrap().node;
        let mut m = mem();
        let (s, _) = m.add_skill("a", "a", vec![click(1)], 0, Some(&emb(&[1.0, 0.0]))).unwrap();
        let (t, _) = m.add_skill("b", "b", vec![click(2)], 0, Some(&emb(&[1.0, 0.0]))).unwrap();
        g.record_transition(a, b, m.skill(s).unwrap(), 0.5).unwrap();
        g.record_transition(b, a, m.skill(s).unwrap(), 0.5).unwrap();
        g.record_transition(a, a, m.skill(t).unwrap(), 0.0).unwrap();
        assert_eq!(m.prune_skill(s, &mut g).unwrap(), 2);
        assert_eq!(g.stats().skill_edges, 1);
        assert!(g.skill_edges().all(|e| e.skill != s));
        assert_eq!(m.prune_skill(s, &mut g).unwrap(), 0);
        assert_eq!(m.counters().pruned, 1);
        let cluster = m.cluster_for_state(&emb(&[1.0, 0.0])).unwrap().unwrap();
        assert!(!cluster.skill_ids.contains(&s));
        assert!(cluster.skill_ids.contains(&t));
        assert!(matches!(m.update_fitness(s, 1.0), Err(Error::Pruned(_))));
        // a pruned sequence can be learned again under a fresh id
        let (again, fresh) = m.add_skill("a", "a", vec![click(1)], 9, None).unwrap();
        assert!(fresh);
        assert_ne!(again, s);
    }

    #[test]
    fn clusters_by_similarity() {
        let mut m = mem();
        assert!(m.cluster_for_state(&emb(&[1.0, 0.0, 0.0])).unwrap().is_none());
        m.add_skill("a", "a", vec![click(1)], 0, Some(&emb(&[1.0, 0.0, 0.0]))).unwrap();
        // cosine 0.95 to the centroid
        let near = emb(&[0.95, (1.0f64 - 0.9025).sqrt(), 0.0]);
        assert!(m.cluster_for_state(&near).unwrap().is_some());
        let far = emb(&[0.5, (0.75f64).sqrt(), 0.0]);
        assert!(m.cluster_for_state(&far).unwrap().is_none());
        m.add_skill("b", "b", vec![click(2)], 0, Some(&far)).unwrap();
        assert_eq!(m.clusters().len(), 2);
        m.add_skill("c", "c", vec![click(3)], 0, Some(&near)).unwrap();
        assert_eq!(m.clusters().len(), 2);
        assert_eq!(m.clusters()[0].skill_ids.len(), 2);
    }

    #[test]
    fn tree_stats_fetch_or_create() {
        let mut m = mem();
        assert_eq!(m.tree_stats(NodeId(4)).total_visits, 0);
        for _ in 0..3 {
            m.tree_stats(NodeId(4)).record(SkillId(0), 1.0);
        }
        for _ in 0..2 {
            m.tree_stats(NodeId(4)).record(SkillId(1), 0.5);
        }
        let t = m.tree_stats(NodeId(4)).clone();
        assert_eq!(t.total_visits, 5);
        assert_eq!(t.visits(SkillId(0)), 3);

        let back = ProceduralMemory::from_document(m.to_document()).unwrap();
        assert_eq!(back.peek_tree_stats(NodeId(4)), Some(&t));
    }

    #[test]
    fn load_rejects_inconsistent_tree() {
        let mut m = mem();
        m.tree_stats(NodeId(0)).record(SkillId(0), 1.0);
        let mut doc = m.to_document();
        doc.tree_stats[0].total_visits = 7;
        assert!(matches!(ProceduralMemory::from_document(doc), Err(Error::Corrupt { .. })));
    }
}
