//! Support toolkit for cross-lingual abstractive summarization transfer:
//! bilingual embedding alignment, summarization-corpus construction,
//! character-level perplexity modeling, beam-hypothesis reranking, and
//! evaluation reporting.
//!
//! The neural summarizer itself is external; it consumes aligned embeddings
//! and produces hypothesis beams that enter here through JSON Lines files
//! (see [`rerank`]).

pub mod alignment;
pub mod charlm;
pub mod corpus;
pub mod embedding;
pub mod harness;
pub mod metrics;
pub mod rerank;
pub mod shuffle;

pub use alignment::{BilingualLexicon, OrthogonalMap};
pub use charlm::{CharLm, PerplexityScore};
pub use corpus::{SplitSpec, SummaryPair};
pub use embedding::{EmbeddingTable, Vocabulary};
pub use harness::{EvalReport, PipelineConfig};
pub use metrics::Prf;
pub use rerank::{Hypothesis, HypothesisSet, SelectionStrategy};
