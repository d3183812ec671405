//! Query an oracle directly. Uses the remote endpoint in
//! SKILLGRAPH_ORACLE_URL when set, otherwise the scripted perfect persona.

use skillgraph::envsim::{generate_world, Profile, Simulator};
use skillgraph::oracle::{Oracle, Persona, RemoteConfig, RemoteOracle, TransitionSummary};
use skillgraph::Operation;

fn main() -> skillgraph::Result<()> {
    let mut oracle = match std::env::var(skillgraph::oracle::URL_VAR) {
        Ok(_) => RemoteOracle::new(RemoteConfig::from_env()?).into_oracle(),
        Err(_) => Oracle::scripted(Persona::Perfect, 0),
    };
    let world = generate_world(Profile::Linear, 0)?;
    let mut sim = Simulator::new(world, 0);
    let before = sim.observation().view();

    let (action, descriptor) = oracle.augment(&before, &Operation::ALL, &[], &[])?.expect("an action");
    println!("augment proposes {} ({descriptor})", action.object_name);
    let out = sim.execute(std::slice::from_ref(&action));
    let summary = TransitionSummary {
        delta: out.delta,
        screen_changed: out.latent_changed,
        grounding_failed: out.grounding_failed,
        milestone: out.milestone_reached,
        frontier: out.frontier,
    };
    let scores = oracle.evaluate(&before, &sim.observation().view(), &[action], &summary)?;
    println!("evaluate: {scores:?}");
    println!("usage: {:?}, cost {}", oracle.usage(), oracle.cost_total());
    Ok(())
}
