//! State-action knowledge graph agent with procedural skill memory, a
//! hybrid intrinsic reward and a two-stage skill evolution loop, plus a
//! deterministic synthetic GUI world to drive it.

pub mod cli;
pub mod embedding;
pub mod engine;
pub mod envsim;
pub mod error;
pub mod graph;
pub mod ids;
pub mod memory;
pub mod oracle;
pub mod persistence;
pub mod rewards;

pub use embedding::{cosine, Embedding, SimilarityClass, SimilarityThresholds};
pub use error::{Error, OracleError, Result};
pub use graph::{GraphConfig, GraphStats, StateGraph};
pub use ids::{ClusterId, NodeId, ObjectId, SkillId};
pub use memory::{AtomicAction, Operation, ProceduralMemory, Skill, SkillStatus};
pub use rewards::{RewardBreakdown, RewardSwitches};
