//! The decision loop: graph-first skill invocation, oracle-guided UCT
//! fallback, augmentation by sequence growth, pruning and refinement.

use std::collections::BTreeSet;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::envsim::{Observation, Simulator, World};
use crate::error::{Error, Result};
use crate::graph::{sample_skill, GraphStats, StateGraph};
use crate::ids::{NodeId, SkillId};
use crate::memory::{AtomicAction, Operation, ProceduralMemory, SearchTreeStats, Skill};
use crate::oracle::{Oracle, SkillView, TrajectoryStep, TransitionSummary};
use crate::rewards::{evaluate_transition, RewardBreakdown, RewardSwitches};

pub const TRACE_FORMAT_VERSION: u64 = 1;

/// Run-level toggles for the ablation rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub similarity_edges: bool,
    pub reward_state: bool,
    pub reward_novel: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            similarity_edges: true,
            reward_state: true,
            reward_novel: true,
        }
    }
}

impl Ablation {
    pub fn switches(&self) -> RewardSwitches {
        RewardSwitches {
            state: self.reward_state,
            novel: self.reward_novel,
        }
    }

    /// Turn off one named switch.
    pub fn disable(&mut self, name: &str) -> Result<()> {
        match name.trim() {
            "similarity_edges" | "similarity-edges" | "sim" => self.similarity_edges = false,
            "reward_state" | "reward.state" | "r_state" | "state" => self.reward_state = false,
            "reward_novel" | "reward.novel" | "r_novel" | "novel" => self.reward_novel = false,
            other => return Err(Error::Config(format!("unknown ablation switch `{other}`"))),
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        let mut off = Vec::new();
        if !self.similarity_edges {
            off.push("similarity_edges");
        }
        if !self.reward_state {
            off.push("reward_state");
        }
        if !self.reward_novel {
            off.push("reward_novel");
        }
        if off.is_empty() {
            "full".into()
        } else {
            format!("w/o {}", off.join(","))
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    /// Comma-separated switches to turn off.
    fn from_str(s: &str) -> Result<Self> {
        let mut a = Ablation::default();
        for part in s.split(',').filter(|p| !p.trim().is_empty()) {
            a.disable(part)?;
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Stage-one execution attempts per step.
    pub max_attempts: usize,
    pub success_threshold: f64,
    pub removal_threshold: f64,
    /// Refine when fewer practicable skills than this remain.
    pub refine_trigger_count: usize,
    pub c1: f64,
    pub tau: f64,
    pub k_max: usize,
    /// Penalty per skill object missing from the screen.
    pub missing_object_penalty: f64,
    pub episode_cap: u64,
    pub ablation: Ablation,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            max_attempts: 5,
            success_threshold: 1.0,
            removal_threshold: 0.1,
            refine_trigger_count: 3,
            c1: 5.0,
            tau: 1.0,
            k_max: 3,
            missing_object_penalty: 1.0,
            episode_cap: 500,
            ablation: Ablation::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive")))
            }
        };
        positive("max_attempts", self.max_attempts > 0)?;
        positive("refine_trigger_count", self.refine_trigger_count > 0)?;
        positive("k_max", self.k_max > 0)?;
        positive("episode_cap", self.episode_cap > 0)?;
        positive("c1", self.c1 > 0.0 && self.c1.is_finite())?;
        positive("tau", self.tau > 0.0 && self.tau.is_finite())?;
        if self.missing_object_penalty.is_nan() || self.missing_object_penalty < 0.0 {
            return Err(Error::Config("missing_object_penalty must be nonnegative".into()));
        }
        if !self.success_threshold.is_finite() || !self.removal_threshold.is_finite() {
            return Err(Error::Config("thresholds must be finite".into()));
        }
        Ok(())
    }
}

/// `fitness + c1 * sqrt(ln(n_i) / n_k) - penalty`; unvisited arms score +inf.
pub fn uct_score(fitness: f64, n_i: u64, n_k: u64, penalty: f64, c1: f64) -> f64 {
    if n_k == 0 {
        return f64::INFINITY;
    }
    let n_i = n_i.max(1) as f64;
    fitness + c1 * (n_i.ln() / n_k as f64).sqrt() - penalty
}

/// Temperature-scaled softmax over finite scores.
pub fn softmax(scores: &[f64], tau: f64) -> Vec<f64> {
    if scores.is_empty() {
        return Vec::new();
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| ((s - max) / tau).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Draw an index from `softmax(scores, tau)`; also returns the
/// probabilities.
pub fn sample_softmax<R: Rng + ?Sized>(scores: &[f64], tau: f64, rng: &mut R) -> Result<(usize, Vec<f64>)> {
    if scores.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let p = softmax(scores, tau);
    let dist = WeightedIndex::new(&p).map_err(|e| Error::Contract(e.to_string()))?;
    Ok((dist.sample(rng), p))
}

/// A stage-two candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UctArm {
    pub skill: SkillId,
    pub fitness: f64,
    pub penalty: f64,
}

/// Pick a stage-two skill: any unvisited arm first (lowest id), otherwise
/// a softmax draw over UCT scores. Returns the pick and the probability
/// of every arm.
pub fn select_uct<R: Rng + ?Sized>(
    arms: &[UctArm],
    tree: &SearchTreeStats,
    c1: f64,
    tau: f64,
    rng: &mut R,
) -> Result<(SkillId, Vec<(SkillId, f64)>)> {
    if arms.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let scored: Vec<(SkillId, f64)> = arms
        .iter()
        .map(|a| (a.skill, uct_score(a.fitness, tree.total_visits, tree.visits(a.skill), a.penalty, c1)))
        .collect();
    if let Some(id) = scored.iter().filter(|(_, e)| e.is_infinite()).map(|(id, _)| *id).min() {
        let probs = scored.iter().map(|(s, _)| (*s, if *s == id { 1.0 } else { 0.0 })).collect();
        return Ok((id, probs));
    }
    let etas: Vec<f64> = scored.iter().map(|(_, e)| *e).collect();
    let (i, p) = sample_softmax(&etas, tau, rng)?;
    Ok((scored[i].0, scored.iter().map(|(s, _)| *s).zip(p).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    KgSample,
    UctFallback,
    Augment,
    RefineTrial,
}

impl Stage {
    pub fn label(self) -> &'static str {
        match self {
            Stage::KgSample => "KG-sample",
            Stage::UctFallback => "UCT-fallback",
            Stage::Augment => "Augment",
            Stage::RefineTrial => "Refine-trial",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub latent_changed: bool,
    pub delta: f64,
    pub grounding_failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub milestone: Option<u32>,
    pub frontier: bool,
    pub screen_before: u32,
    pub screen_after: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skill: Option<SkillId>,
    pub actions: Vec<AtomicAction>,
    pub src: NodeId,
    pub dst: NodeId,
    pub dst_is_new: bool,
    pub outcome: OutcomeRecord,
    pub reward: RewardBreakdown,
    /// Total reward cleared the success threshold.
    pub success: bool,
    /// Softmax over the oracle's candidates, for fallback selections.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<Vec<(SkillId, f64)>>,
    pub edge_recorded: bool,
    /// Skill created from this execution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registered: Option<SkillId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pruned: Vec<SkillId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineRecord {
    pub original: SkillId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replacement: Option<SkillId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub node: NodeId,
    /// Size of the graph candidate set at the step's entry node.
    pub kg_candidates: usize,
    pub stage1_exhausted: bool,
    /// Candidates returned by the oracle, when it was consulted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invoked: Option<Vec<SkillId>>,
    pub executions: Vec<ExecutionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine: Option<RefineRecord>,
    pub library_size: usize,
    pub graph: GraphStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MilestonesComplete,
    StepCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format_version: u64,
    pub seed: u64,
    pub world_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    pub start_step: u64,
    pub config: EngineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub steps: u64,
    pub termination: Termination,
    pub progression: usize,
    pub responsive_rate: f64,
    pub oracle_cost: u64,
    pub oracle_calls: u64,
    pub augmented: u64,
    pub pruned: u64,
    pub library_size: usize,
    pub graph: GraphStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub header: TraceHeader,
    pub steps: Vec<StepRecord>,
    pub summary: Option<EpisodeSummary>,
}

impl EpisodeTrace {
    pub fn executions(&self) -> impl Iterator<Item = &ExecutionRecord> {
        self.steps.iter().flat_map(|s| s.executions.iter())
    }
}

/// Per-episode parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Episode {
    pub seed: u64,
    /// Steps to run, clipped to the configured cap.
    pub steps: u64,
    /// Global step index of the first step, so stores keep increasing
    /// timestamps across rounds.
    pub start_step: u64,
}

/// Fresh graph and memory consistent with `cfg` and `world`.
pub fn fresh_stores(cfg: &EngineConfig, world: &World) -> Result<(StateGraph, ProceduralMemory)> {
    let gcfg = crate::graph::GraphConfig {
        dimension: world.dimension(),
        similarity_edges: cfg.ablation.similarity_edges,
        ..Default::default()
    };
    let memory = ProceduralMemory::new(gcfg.thresholds);
    Ok((StateGraph::new(gcfg)?, memory))
}

const OPERATIONS: [Operation; 4] = Operation::ALL;

struct Exec {
    record: ExecutionRecord,
    before: Observation,
}

struct Agent<'a> {
    cfg: &'a EngineConfig,
    graph: &'a mut StateGraph,
    memory: &'a mut ProceduralMemory,
    oracle: &'a mut Oracle,
    sim: Simulator,
    rng: ChaCha8Rng,
    step: u64,
    cur: NodeId,
    refined: BTreeSet<SkillId>,
}

/// Run one episode against `world`, mutating the stores in place.
pub fn run_episode(
    world: &World,
    oracle: &mut Oracle,
    memory: &mut ProceduralMemory,
    graph: &mut StateGraph,
    cfg: &EngineConfig,
    episode: Episode,
) -> Result<EpisodeTrace> {
    cfg.validate()?;
    if graph.config().similarity_edges != cfg.ablation.similarity_edges {
        return Err(Error::Config(
            "graph similarity-edge setting disagrees with the ablation switch".into(),
        ));
    }
    if graph.config().dimension != world.dimension() {
        return Err(Error::Config(format!(
            "graph dimension {} but world dimension {}",
            graph.config().dimension,
            world.dimension()
        )));
    }
    let header = TraceHeader {
        format_version: TRACE_FORMAT_VERSION,
        seed: episode.seed,
        world_seed: world.spec().seed,
        profile: world.spec().profile.map(|p| p.as_str().to_string()),
        start_step: episode.start_step,
        config: cfg.clone(),
    };
    let cost0 = oracle.usage();
    let counters0 = memory.counters();
    let sim = Simulator::new(world.clone(), episode.seed ^ 0x51b_u64.rotate_left(40));
    let first = sim.observation().clone();
    let entry = graph.ingest_observation(first.embedding.clone(), episode.start_step)?;
    let mut agent = Agent {
        cfg,
        graph,
        memory,
        oracle,
        sim,
        rng: ChaCha8Rng::seed_from_u64(episode.seed),
        step: episode.start_step,
        cur: entry.node,
        refined: BTreeSet::new(),
    };
    agent.register_objects(&first);

    let budget = episode.steps.min(cfg.episode_cap);
    let mut steps = Vec::new();
    let mut termination = Termination::StepCap;
    for i in 0..budget {
        if agent.sim.all_milestones_reached() {
            termination = Termination::MilestonesComplete;
            break;
        }
        agent.step = episode.start_step + i;
        steps.push(agent.run_step()?);
    }
    if agent.sim.all_milestones_reached() {
        termination = Termination::MilestonesComplete;
    }

    let mut trace = EpisodeTrace {
        header,
        steps,
        summary: None,
    };
    let usage = agent.oracle.usage();
    let counters = agent.memory.counters();
    let m = crate::envsim::metrics(&trace);
    trace.summary = Some(EpisodeSummary {
        steps: trace.steps.len() as u64,
        termination,
        progression: m.progression,
        responsive_rate: m.responsive_rate,
        oracle_cost: usage.cost_units - cost0.cost_units,
        oracle_calls: usage.calls - cost0.calls,
        augmented: counters.augmented - counters0.augmented,
        pruned: counters.pruned - counters0.pruned,
        library_size: agent.memory.library_size(),
        graph: agent.graph.stats(),
    });
    Ok(trace)
}

impl Agent<'_> {
    fn register_objects(&mut self, obs: &Observation) {
        for o in &obs.objects {
            if self.memory.object(o.id).is_none() {
                if let Some(u) = self.sim.world().ui_object(o.id) {
                    self.memory.register_object(u);
                }
            }
        }
    }

    fn skill_view(skill: &Skill) -> SkillView {
        SkillView {
            id: skill.id,
            name: skill.name.clone(),
            descriptor: skill.descriptor.clone(),
            actions: skill.actions.clone(),
            fitness: skill.fitness,
        }
    }

    /// Execute a sequence, ingest the result and score it. Fitness and
    /// edges are left to the caller so the reward sees the graph as it
    /// was before this transition.
    fn execute(&mut self, stage: Stage, skill: Option<SkillId>, actions: &[AtomicAction]) -> Result<Exec> {
        let src = self.cur;
        let before = self.sim.observation().clone();
        let out = self.sim.execute(actions);
        let after = out.next_observation.clone();
        let ing = self.graph.ingest_observation(after.embedding.clone(), self.step)?;
        self.register_objects(&after);
        self.cur = ing.node;
        let summary = TransitionSummary {
            delta: out.delta,
            screen_changed: out.latent_changed,
            grounding_failed: out.grounding_failed,
            milestone: out.milestone_reached,
            frontier: out.frontier,
        };
        let scores = if out.grounding_failed {
            (0.0, 0.0)
        } else {
            self.oracle
                .evaluate(&before.view(), &after.view(), actions, &summary)?
                .unwrap_or((0.0, 0.0))
        };
        let reward = evaluate_transition(
            self.graph,
            src,
            ing.node,
            ing.is_new,
            scores,
            self.cfg.ablation.switches(),
        )?;
        let record = ExecutionRecord {
            stage,
            skill,
            actions: actions.to_vec(),
            src,
            dst: ing.node,
            dst_is_new: ing.is_new,
            outcome: OutcomeRecord {
                latent_changed: out.latent_changed,
                delta: out.delta,
                grounding_failed: out.grounding_failed,
                milestone: out.milestone_reached,
                frontier: out.frontier,
                screen_before: before.truth.screen,
                screen_after: after.truth.screen,
            },
            success: reward.total > self.cfg.success_threshold,
            reward,
            probabilities: None,
            edge_recorded: false,
            registered: None,
            pruned: Vec::new(),
        };
        Ok(Exec { record, before })
    }

    /// Fitness first, then the edge. Failed groundings leave no edge.
    fn credit(&mut self, skill: SkillId, rec: &mut ExecutionRecord) -> Result<()> {
        self.memory.update_fitness(skill, rec.reward.total)?;
        if !rec.outcome.grounding_failed {
            let s = self.memory.skill(skill)?.clone();
            self.graph.record_transition(rec.src, rec.dst, &s, rec.outcome.delta)?;
            rec.edge_recorded = true;
        }
        Ok(())
    }

    fn prune(&mut self, skill: SkillId, rec: &mut ExecutionRecord) -> Result<()> {
        if self.memory.skill(skill)?.is_active() {
            self.memory.prune_skill(skill, self.graph)?;
            rec.pruned.push(skill);
        }
        Ok(())
    }

    fn run_step(&mut self) -> Result<StepRecord> {
        let entry = self.cur;
        let mut record = StepRecord {
            step: self.step,
            node: entry,
            kg_candidates: 0,
            stage1_exhausted: true,
            invoked: None,
            executions: Vec::new(),
            refine: None,
            library_size: 0,
            graph: GraphStats::default(),
        };

        let candidates: Vec<(SkillId, f64)> = self
            .graph
            .high_quality_skills(entry)?
            .into_iter()
            .filter(|(s, _)| self.memory.skill(*s).is_ok_and(|k| k.is_active()))
            .collect();
        record.kg_candidates = candidates.len();
        if !candidates.is_empty() {
            for _ in 0..self.cfg.max_attempts {
                let skill = sample_skill(&candidates, &mut self.rng)?;
                let actions = self.memory.skill(skill)?.actions.clone();
                let mut x = self.execute(Stage::KgSample, Some(skill), &actions)?.record;
                self.credit(skill, &mut x)?;
                let done = x.success;
                record.executions.push(x);
                if done {
                    record.stage1_exhausted = false;
                    break;
                }
                if self.sim.all_milestones_reached() {
                    break;
                }
            }
        }

        if record.stage1_exhausted && !self.sim.all_milestones_reached() {
            self.stage2(&mut record)?;
            if !self.sim.all_milestones_reached() {
                self.maybe_refine(&mut record)?;
            }
        }
        record.library_size = self.memory.library_size();
        record.graph = self.graph.stats();
        Ok(record)
    }

    fn cluster_skills(&self, embedding: &Embedding) -> Result<Vec<SkillId>> {
        Ok(match self.memory.cluster_for_state(embedding)? {
            Some(c) => c
                .skill_ids
                .iter()
                .copied()
                .filter(|s| self.memory.skill(*s).is_ok_and(|k| k.is_active()))
                .collect(),
            None => Vec::new(),
        })
    }

    fn stage2(&mut self, record: &mut StepRecord) -> Result<()> {
        let obs = self.sim.observation().clone();
        let view: Vec<SkillView> = self
            .cluster_skills(&obs.embedding)?
            .into_iter()
            .map(|s| self.memory.skill(s).map(Self::skill_view))
            .collect::<Result<_>>()?;
        let chosen = if view.is_empty() {
            Vec::new()
        } else {
            let ids = self.oracle.invoke(&obs.view(), &view)?;
            record.invoked = Some(ids.clone());
            ids
        };
        if chosen.is_empty() {
            return self.augment(record);
        }

        let node = self.cur;
        let tree = self.memory.tree_stats(node).clone();
        let mut arms = Vec::with_capacity(chosen.len());
        for id in &chosen {
            let s = self.memory.skill(*id)?;
            let objects: BTreeSet<_> = s.object_ids().collect();
            let missing = objects.iter().filter(|o| !obs.has_object(**o)).count();
            arms.push(UctArm {
                skill: *id,
                fitness: s.fitness,
                penalty: self.cfg.missing_object_penalty * missing as f64,
            });
        }
        let (pick, probs) = select_uct(&arms, &tree, self.cfg.c1, self.cfg.tau, &mut self.rng)?;
        let actions = self.memory.skill(pick)?.actions.clone();
        let mut x = self.execute(Stage::UctFallback, Some(pick), &actions)?.record;
        x.probabilities = Some(probs);
        self.memory.tree_stats(node).record(pick, x.reward.total);
        self.credit(pick, &mut x)?;
        if x.reward.total < self.cfg.removal_threshold {
            self.prune(pick, &mut x)?;
        }
        record.executions.push(x);
        Ok(())
    }

    /// Grow a sequence one proposed action at a time until something
    /// recognizable happens or `k_max` proposals are spent.
    fn augment(&mut self, record: &mut StepRecord) -> Result<()> {
        // tried objects belong to the node augmentation started from, so a
        // run of freshly created nodes cannot reset them mid-call
        let origin = self.cur;
        let mut prefix: Vec<AtomicAction> = Vec::new();
        for _ in 0..self.cfg.k_max {
            let obs = self.sim.observation().clone();
            let visible: BTreeSet<_> = obs.objects.iter().map(|o| o.id).collect();
            let tree = self.memory.tree_stats(origin);
            if !visible.is_empty() && visible.iter().all(|o| tree.expanded.contains(o)) {
                tree.expanded.clear();
            }
            let tried: Vec<_> = tree.expanded.iter().copied().collect();
            let Some((action, descriptor)) = self.oracle.augment(&obs.view(), &OPERATIONS, &prefix, &tried)? else {
                break;
            };
            self.memory.tree_stats(origin).expanded.insert(action.object_id);
            let mut candidate = prefix.clone();
            candidate.push(action);
            let Exec { record: mut x, before } = self.execute(Stage::Augment, None, &candidate)?;
            let recognizable = !x.outcome.grounding_failed && (x.outcome.latent_changed || x.success);
            if recognizable {
                let name = candidate.iter().map(|a| a.object_name.as_str()).collect::<Vec<_>>().join("+");
                let (id, _) = self
                    .memory
                    .add_skill(name, descriptor, candidate, self.step, Some(&before.embedding))?;
                x.registered = Some(id);
                x.skill = Some(id);
                self.credit(id, &mut x)?;
                if x.reward.total < self.cfg.removal_threshold {
                    self.prune(id, &mut x)?;
                }
                record.executions.push(x);
                break;
            }
            // keep the action only if the screen reacted at all
            let reacted = !x.outcome.grounding_failed && x.outcome.delta > 0.0;
            if reacted {
                prefix = candidate;
            }
            record.executions.push(x);
            if self.sim.all_milestones_reached() {
                break;
            }
        }
        Ok(())
    }

    fn maybe_refine(&mut self, record: &mut StepRecord) -> Result<()> {
        let obs = self.sim.observation().clone();
        let cluster = self.cluster_skills(&obs.embedding)?;
        let practicable = cluster
            .iter()
            .filter(|s| {
                self.memory
                    .skill(**s)
                    .ok()
                    .and_then(|k| k.actions.first())
                    .is_some_and(|a| obs.has_object(a.object_id))
            })
            .count();
        if practicable >= self.cfg.refine_trigger_count {
            return Ok(());
        }
        let target = cluster
            .iter()
            .filter_map(|s| self.memory.skill(*s).ok())
            .filter(|k| k.actions.len() > 1 && !self.refined.contains(&k.id))
            .min_by(|a, b| a.fitness.total_cmp(&b.fitness).then(a.id.cmp(&b.id)))
            .cloned();
        let Some(target) = target else {
            return Ok(());
        };
        self.refined.insert(target.id);
        let trajectory: Vec<TrajectoryStep> = record
            .executions
            .iter()
            .map(|x| TrajectoryStep {
                actions: x.actions.clone(),
                outcome: TransitionSummary {
                    delta: x.outcome.delta,
                    screen_changed: x.outcome.latent_changed,
                    grounding_failed: x.outcome.grounding_failed,
                    milestone: x.outcome.milestone,
                    frontier: x.outcome.frontier,
                },
            })
            .collect();
        let answer = match self.oracle.refine(&obs.view(), &Self::skill_view(&target), &trajectory) {
            Ok(a) => a,
            // a bad refinement costs this step's refinement, nothing more
            Err(_) => return Ok(()),
        };
        let Some((actions, descriptor)) = answer else {
            return Ok(());
        };
        let mut refine = RefineRecord {
            original: target.id,
            replacement: None,
        };
        if actions == target.actions {
            record.refine = Some(refine);
            return Ok(());
        }
        let Exec { record: mut x, before } = self.execute(Stage::RefineTrial, None, &actions)?;
        let bar = target.last_reward.unwrap_or(f64::NEG_INFINITY);
        if !x.outcome.grounding_failed && x.reward.total > bar {
            let name = actions.iter().map(|a| a.object_name.as_str()).collect::<Vec<_>>().join("+");
            let (id, _) = self
                .memory
                .add_skill(name, descriptor, actions, self.step, Some(&before.embedding))?;
            if id != target.id {
                x.registered = Some(id);
                x.skill = Some(id);
                self.credit(id, &mut x)?;
                self.prune(target.id, &mut x)?;
                refine.replacement = Some(id);
            }
        }
        record.executions.push(x);
        record.refine = Some(refine);
        Ok(())
    }
}
