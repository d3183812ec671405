//! Several rounds of the decision loop on one memory: augmentation falls
//! off as the library and the graph fill in.

use skillgraph::engine::{fresh_stores, run_episode, EngineConfig, Episode};
use skillgraph::envsim::{generate_world, Profile};
use skillgraph::oracle::{Oracle, Persona};

fn main() -> skillgraph::Result<()> {
    let cfg = EngineConfig::default();
    let world = generate_world(Profile::ComboHeavy, 7)?;
    let (mut graph, mut memory) = fresh_stores(&cfg, &world)?;
    let mut start_step = 0;
    for round in 0..4 {
        let mut oracle = Oracle::scripted(Persona::Perfect, round);
        let ep = Episode { seed: round, steps: 100, start_step };
        let trace = run_episode(&world, &mut oracle, &mut memory, &mut graph, &cfg, ep)?;
        start_step += trace.steps.len() as u64;
        let s = trace.summary.expect("finished episode");
        println!(
            "round {round}: {} steps, progression {}, augmented {}, pruned {}, library {}, {:?}",
            s.steps, s.progression, s.augmented, s.pruned, s.library_size, s.graph
        );
    }
    Ok(())
}
