//! Train briefly, save a snapshot, load it back and print the top skills.

use skillgraph::cli::top_skills;
use skillgraph::engine::{fresh_stores, run_episode, EngineConfig, Episode};
use skillgraph::envsim::{generate_world, Profile};
use skillgraph::oracle::{Oracle, Persona};
use skillgraph::persistence::{ensure_dir, load_snapshot, save_snapshot};

fn main() -> skillgraph::Result<()> {
    let cfg = EngineConfig::default();
    let world = generate_world(Profile::Branching, 1)?;
    let (mut graph, mut memory) = fresh_stores(&cfg, &world)?;
    let ep = Episode { seed: 1, steps: 80, start_step: 0 };
    let trace = run_episode(&world, &mut Oracle::scripted(Persona::Noisy, 1), &mut memory, &mut graph, &cfg, ep)?;

    let dir = std::env::temp_dir().join("skillgraph-snapshot-example");
    ensure_dir(&dir)?;
    let path = dir.join("snapshot.json");
    save_snapshot(&path, &graph, &memory, &cfg, trace.steps.len() as u64)?;
    let restored = load_snapshot(&path)?;
    println!("saved {} and loaded {:?}", path.display(), restored.graph.stats());
    for t in top_skills(&restored.graph, &restored.memory, 5) {
        println!("{:>6.4}  {}  {}", t.max_weight, t.skill, t.name);
    }
    Ok(())
}
