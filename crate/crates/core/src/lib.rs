//! Cross-lingual consistency of token attributions.
//!
//! Given a sentence and its translation, this crate attributes a classifier's
//! prediction to the tokens of each side with integrated gradients, compares
//! tokens in a shared context-free embedding space, and scores how well the
//! two attribution distributions line up by solving an earth mover's
//! transportation problem. Scores aggregate per language and can be
//! correlated with task performance.
//!
//! Modules follow the data flow:
//! [`corpus`] -> [`model`] -> [`attribution`] -> [`alignment`] -> [`transport`]
//! -> [`analysis`], with [`pipeline`] wiring them together.

pub mod alignment;
pub mod analysis;
pub mod attribution;
pub mod corpus;
pub mod error;
pub mod model;
pub mod pipeline;
pub mod transport;

pub use alignment::{cosine, similarity_matrix, EmbeddingSpace, EmbeddingTable, SimilarityMatrix};
pub use analysis::{
    aggregate, correlate, pearson, render_report, ConsistencyReport, PerformanceTable,
    ReportFormat, ScoredPair,
};
pub use attribution::{
    integrated_gradients, make_baseline, AttributionSettings, AttributionVector, Head,
    QuadratureRule, Side,
};
pub use corpus::{tokenize, ParallelPair, Sentence, Token, TokenKind, TokenizerPolicy};
pub use error::{Error, ErrorKind, Result};
pub use model::{DifferentiableScorer, Pooling, ToyModel};
pub use pipeline::RunConfig;
pub use transport::{build_instance, consistency, solve, TransportInstance, TransportPlan};
