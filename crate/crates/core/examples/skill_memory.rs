//! Register skills, reuse identical action sequences, update fitness and
//! prune.

use skillgraph::{AtomicAction, Embedding, GraphConfig, ObjectId, ProceduralMemory, StateGraph};

fn main() -> skillgraph::Result<()> {
    let cfg = GraphConfig { dimension: 2, ..Default::default() };
    let mut graph = StateGraph::new(cfg)?;
    let mut memory = ProceduralMemory::new(cfg.thresholds);
    let screen = Embedding::new(vec![1.0, 0.0])?;
    let here = graph.ingest_observation(screen.clone(), 0)?.node;

    let combo = vec![AtomicAction::click(ObjectId(3), "select"), AtomicAction::click(ObjectId(4), "confirm")];
    let (id, created) = memory.add_skill("select then confirm", "arm and fire", combo.clone(), 0, Some(&screen))?;
    let (again, created_again) = memory.add_skill("duplicate", "same actions", combo, 1, Some(&screen))?;
    println!("{id} created: {created}; second add returns {again} created: {created_again}");

    for reward in [2.48, 0.9, 0.05] {
        println!("fitness after reward {reward}: {:.3}", memory.update_fitness(id, reward)?);
    }
    graph.record_transition(here, here, memory.skill(id)?, 0.3)?;
    let cluster = memory.cluster_for_state(&screen)?.map(|c| c.skill_ids.clone());
    println!("cluster at this screen: {cluster:?}");

    let removed = memory.prune_skill(id, &mut graph)?;
    println!("pruned {id}, {removed} edge(s) removed, library size {}", memory.library_size());
    Ok(())
}
