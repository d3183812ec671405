//! The hybrid per-transition reward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{reward_novel, StateGraph};
use crate::ids::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub progress: f64,
    pub semantics: f64,
    pub state: f64,
    pub novel: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn new(progress: f64, semantics: f64, state: f64, novel: f64) -> Self {
        RewardBreakdown {
            progress,
            semantics,
            state,
            novel,
            total: progress + semantics + state + novel,
        }
    }
}

/// Ablation switches for the graph-derived components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardSwitches {
    pub state: bool,
    pub novel: bool,
}

impl Default for RewardSwitches {
    fn default() -> Self {
        RewardSwitches { state: true, novel: true }
    }
}

fn check_score(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Contract(format!("{name} score {v} outside [0, 1]")))
    }
}

/// Combine oracle scores with the state and novelty terms. Must run before
/// the transition's own skill edge is recorded.
pub fn evaluate_transition(
    graph: &StateGraph,
    src: NodeId,
    dst: NodeId,
    is_new_dst: bool,
    scores: (f64, f64),
    switches: RewardSwitches,
) -> Result<RewardBreakdown> {
    let (progress, semantics) = scores;
    check_score("progress", progress)?;
    check_score("semantics", semantics)?;
    let state = if switches.state { graph.reward_state(src, dst)? } else { 0.0 };
    let novel = if switches.novel { reward_novel(is_new_dst) } else { 0.0 };
    Ok(RewardBreakdown::new(progress, semantics, state, novel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Embedding;
    use crate::graph::GraphConfig;
    use crate::memory::test_skill;

    fn graph() -> (StateGraph, NodeId, NodeId) {
        let mut g = StateGraph::new(GraphConfig { dimension: 2, ..Default::default() }).unwrap();
        let a = g.ingest_observation(Embedding::new(vec![1.0, 0.0]).unwrap(), 0).unwrap().node;
        let b = g.ingest_observation(Embedding::new(vec![0.0, 1.0]).unwrap(), 1).unwrap().node;
        (g, a, b)
    }

    #[test]
    fn sums_components() {
        let r = RewardBreakdown::new(0.5, 0.8, -0.3, 1.0);
        assert!((r.total - 2.0).abs() < 1e-12);
    }

    #[test]
    fn known_state_floor() {
        let (g, a, _) = graph();
        let r = evaluate_transition(&g, a, a, false, (0.0, 0.0), RewardSwitches::default()).unwrap();
        assert_eq!(r.total, 0.015);
    }

    #[test]
    fn switches_zero_components() {
        let (mut g, a, b) = graph();
        g.record_transition(a, b, &test_skill(0), 1.0).unwrap();
        let on = evaluate_transition(&g, a, b, true, (0.2, 0.3), RewardSwitches::default()).unwrap();
        assert!(on.state < 0.0);
        assert_eq!(on.novel, 1.0);
        let off = RewardSwitches { state: false, novel: false };
        let r = evaluate_transition(&g, a, b, true, (0.2, 0.3), off).unwrap();
        assert_eq!((r.state, r.novel), (0.0, 0.0));
        assert!((r.total - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_out_of_range_scores() {
        let (g, a, b) = graph();
        let s = RewardSwitches::default();
        assert!(evaluate_transition(&g, a, b, false, (1.2, 0.0), s).is_err());
        assert!(evaluate_transition(&g, a, b, false, (0.0, -0.1), s).is_err());
        assert!(evaluate_transition(&g, a, b, false, (f64::NAN, 0.0), s).is_err());
    }
}
