//! Record skill transitions and read back edge weights, potentials and the
//! state reward.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skillgraph::graph::sample_skill;
use skillgraph::{AtomicAction, Embedding, GraphConfig, ObjectId, ProceduralMemory, StateGraph};

fn basis(i: usize) -> Embedding {
    let mut v = vec![0.0; 3];
    v[i] = 1.0;
    Embedding::new(v).unwrap()
}

fn main() -> skillgraph::Result<()> {
    let cfg = GraphConfig { dimension: 3, ..Default::default() };
    let mut memory = ProceduralMemory::new(cfg.thresholds);
    let mut graph = StateGraph::new(cfg)?;
    let ids: Vec<_> = (0..3).map(|i| graph.ingest_observation(basis(i), 0).map(|x| x.node)).collect::<Result<_, _>>()?;

    let (open, _) = memory.add_skill("open menu", "open the menu", vec![AtomicAction::click(ObjectId(0), "menu")], 0, None)?;
    let (hover, _) = memory.add_skill("hover", "hover a tile", vec![AtomicAction::click(ObjectId(1), "tile")], 0, None)?;
    memory.update_fitness(open, 2.5)?;
    let w1 = graph.record_transition(ids[0], ids[1], memory.skill(open)?, 0.8)?.weight;
    let w2 = graph.record_transition(ids[0], ids[2], memory.skill(hover)?, 0.02)?.weight;
    println!("weights: open {:.4}, hover {:.4}", w1, w2);
    println!("V(start) = {:.4}", graph.state_potential(ids[0])?);
    println!("reward_state(start -> menu) = {:.4}", graph.reward_state(ids[0], ids[1])?);

    let candidates: Vec<_> = graph.outgoing(ids[0]).map(|e| (e.skill, e.weight)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let picks: Vec<_> = (0..8).map(|_| sample_skill(&candidates, &mut rng).unwrap()).collect();
    println!("weighted draws: {picks:?}");
    Ok(())
}
