//! Generate a combo-heavy world and drive it by hand: a setup click alone
//! barely changes the screen, the trigger after it moves on.

use skillgraph::envsim::{generate_world, Profile, Simulator, StepOutcome};
use skillgraph::AtomicAction;

fn missed(out: &StepOutcome) -> &'static str {
    if out.grounding_failed {
        ", grounding failed"
    } else {
        ""
    }
}

fn main() -> skillgraph::Result<()> {
    let world = generate_world(Profile::ComboHeavy, 7)?;
    let spec = world.spec().clone();
    println!("{} screens, {} elements, milestones {:?}", spec.screens.len(), spec.elements.len(), spec.milestones);
    let mut sim = Simulator::new(world, 7);
    // walk the main line, arming combos on the way
    for _ in 0..40 {
        let screen = sim.screen();
        let Some(combo) = spec.combos.iter().find(|c| c.screen == screen) else {
            let Some(&next) = spec.progressing_elements(screen).first() else { break };
            let name = &spec.element(next).unwrap().name;
            let out = sim.execute(&[AtomicAction::click(next, name.clone())]);
            println!("screen {screen}: {name} -> screen {} (delta {:.3}{})", sim.screen(), out.delta, missed(&out));
            continue;
        };
        for id in [combo.setup, combo.trigger] {
            let name = spec.element(id).unwrap().name.clone();
            let out = sim.execute(&[AtomicAction::click(id, name.clone())]);
            println!(
                "screen {screen}: {name} -> screen {} (delta {:.3}, milestone {:?}{})",
                sim.screen(),
                out.delta,
                out.milestone_reached,
                missed(&out)
            );
        }
        if sim.all_milestones_reached() {
            break;
        }
    }
    println!("milestones reached: {:?}", sim.milestones_reached());
    Ok(())
}
