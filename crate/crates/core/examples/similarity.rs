//! Classify observation pairs and watch the graph merge, link or add nodes.

use skillgraph::{cosine, Embedding, GraphConfig, SimilarityThresholds, StateGraph};

fn at_cosine(c: f64) -> Embedding {
    let mut v = vec![0.0; 8];
    v[0] = c;
    v[1] = (1.0 - c * c).sqrt();
    Embedding::new(v).unwrap()
}

fn main() -> skillgraph::Result<()> {
    let t = SimilarityThresholds::default();
    let mut graph = StateGraph::new(GraphConfig { dimension: 8, ..Default::default() })?;
    let home = at_cosine(1.0);
    graph.ingest_observation(home.clone(), 0)?;
    for (step, c) in [0.99, 0.92, 0.4].into_iter().enumerate() {
        let e = at_cosine(c);
        let ing = graph.ingest_observation(e.clone(), step as u64 + 1)?;
        println!(
            "cosine {:.2} -> {:?}: node {} (new: {})",
            cosine(&home, &e)?,
            t.classify(c),
            ing.node,
            ing.is_new
        );
    }
    println!("{:?}", graph.stats());
    Ok(())
}
