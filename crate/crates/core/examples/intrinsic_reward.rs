//! Break a transition's reward into its four parts, with and without the
//! graph-derived terms.

use skillgraph::rewards::evaluate_transition;
use skillgraph::{AtomicAction, Embedding, GraphConfig, ObjectId, ProceduralMemory, RewardSwitches, StateGraph};

fn main() -> skillgraph::Result<()> {
    let cfg = GraphConfig { dimension: 3, ..Default::default() };
    let mut memory = ProceduralMemory::new(cfg.thresholds);
    let mut graph = StateGraph::new(cfg)?;
    let a = graph.ingest_observation(Embedding::new(vec![1.0, 0.0, 0.0])?, 0)?.node;
    let b = graph.ingest_observation(Embedding::new(vec![0.0, 1.0, 0.0])?, 1)?.node;
    let (onward, _) = memory.add_skill("onward", "leave b", vec![AtomicAction::click(ObjectId(9), "next")], 1, None)?;
    graph.record_transition(b, b, memory.skill(onward)?, 0.6)?;

    let scores = (0.5, 0.8);
    let full = evaluate_transition(&graph, a, b, false, scores, RewardSwitches::default())?;
    let bare = evaluate_transition(&graph, a, b, false, scores, RewardSwitches { state: false, novel: false })?;
    println!("full:     {full:?}");
    println!("ablated:  {bare:?}");
    let c = graph.ingest_observation(Embedding::new(vec![0.0, 0.0, 1.0])?, 2)?;
    let fresh = evaluate_transition(&graph, a, c.node, c.is_new, scores, RewardSwitches::default())?;
    println!("new node: {fresh:?}");
    Ok(())
}
