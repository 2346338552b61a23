//! Citation recommendation as directed link prediction.
//!
//! A corpus of documents becomes a directed citation graph with TF-IDF node
//! features. A stacked graph transformer with a learned residual gate embeds
//! each node, a bilinear head scores ordered pairs, and ranked candidates are
//! evaluated with MAP@k / MAR@k against held-out (masked) citations.

pub mod autodiff;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod training;

pub use checkpoint::Checkpoint;
pub use corpus::{Document, SyntheticConfig, Vocabulary};
pub use error::{CoreError, Result};
pub use eval::{CrossReferenceMatrix, DomainPairMode, MetricsReport, ThresholdReport};
pub use graph::{AdjMatrix, CitationGraph, NodeSplit};
pub use linalg::Matrix;
pub use model::{ModelConfig, Mode, ParameterSet, Scorer};
pub use training::{NegativeScope, TrainConfig, TrainResult};
