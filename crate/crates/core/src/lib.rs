//! Batch correction of OCR word errors.
//!
//! Error words are grouped by feature-space or string similarity and each
//! group is corrected with one editorial action. The crate covers corpus I/O,
//! a synthetic corpus generator, dictionary lookup, clustering, correction
//! strategies, the cost model and end-to-end pipelines.

pub mod clustering;
pub mod correction;
pub mod corpus;
pub mod costing;
pub mod lexicon;
pub mod pipeline;
pub mod synthgen;

pub use clustering::{ClusterConfig, ClusterError, Clustering};
pub use correction::{Action, ActionKind, ActionLog, CorrectionConfig, CorrectionError, CorrectionResult, Scope, Source};
pub use corpus::{Corpus, CorpusError, EmbeddingMatrix, WordInstance};
pub use costing::{CostBreakdown, CostError, CostModel, CostReport};
pub use lexicon::{Categories, Category, DetectionFlags, Dictionary, DictionaryMode, LexiconError, SuggestParams, Suggestion};
pub use pipeline::{run_pipeline, scaling_experiment, CorrectionMode, Method, PipelineConfig, PipelineError, ScalingConfig};
pub use synthgen::{GeneratorConfig, GeneratorError, Script};
