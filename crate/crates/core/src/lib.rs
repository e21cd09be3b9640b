//! Translation-based knowledge graph embeddings trained jointly on triples and
//! mined logic rules.

pub mod cli;
pub mod error;
pub mod evaluator;
pub mod kg;
pub mod models;
pub mod rules;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
pub use kg::{ColumnOrder, DatasetSplits, EntityId, KnowledgeGraph, RelationId, Triple, Vocab};
pub use rules::{GroundRule, GroundingMode, Rule, RuleCandidate, RuleType, Thresholds};
pub use models::{init_params, ModelKind, ModelParams, Norm, Sample, SampleKind};
pub use trainer::{train, TrainConfig};
