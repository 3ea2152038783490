//! Complex logical query answering over knowledge graphs with particle
//! query embeddings.
//!
//! The crate is organised bottom-up:
//!
//! - [`kg`]: triple loading and the indexed graph store with nested splits
//! - [`query`]: query DAGs, the s-expression DSL and structure classification
//! - [`oracle`]: exact set-semantics answers used as ground truth
//! - [`sampler`]: benchmark-style query datasets with easy/hard answers
//! - [`tensor`]: dense matrices, autodiff tape and finite-difference checks
//! - [`model`]: the particle model's neural operations, scoring and loss
//! - [`train`]: optimizer, training loop and checkpoints
//! - [`eval`]: filtered ranking metrics
//! - [`synthetic`]: a deterministic toy graph with learnable structure

pub mod diagnostics;
pub mod error;
pub mod eval;
pub mod kg;
pub mod model;
pub mod oracle;
pub mod query;
pub mod rng;
pub mod sampler;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use kg::{EntityId, GraphSplits, KnowledgeGraph, RelationId, Split, Triple, Vocabularies};
pub use model::{Mode, ModelConfig, ModelParams, ParticleState};
pub use oracle::AnswerSet;
pub use query::{Query, QueryType};
pub use sampler::{QueryInstance, SampleConfig};
pub use tensor::{Tape, Tensor};
pub use train::TrainConfig;
