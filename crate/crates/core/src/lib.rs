//! Sense-level consistency analysis for contextualized word embeddings.
//!
//! The crate measures how stable per-occurrence embeddings are for a given
//! word sense across contexts: mean pairwise cosine for same-word and
//! different-word pairs of one sense, a random-pair baseline, faceted
//! breakdowns, frozen-feature probes, position-bias analysis with prompt
//! shifts, and a cosine-threshold word-in-context classifier.
//!
//! Embeddings arrive pre-computed in the binary format of [`embstore`]; no
//! model inference happens here.

pub mod bias;
pub mod buckets;
pub mod corpus;
pub mod embstore;
#[cfg(feature = "fs")]
pub mod fsutil;
pub mod metrics;
pub mod probe;
pub mod reduce;
pub mod synth;
pub mod wsd;

pub use buckets::Buckets;
pub use corpus::{Corpus, CorpusStats, OccId, OccurrenceKey, Pos, SenseId, Sentence, Token, WordIdentity};
pub use embstore::{EmbeddingManifest, EmbeddingStore, Variant};
pub use metrics::{cosine, Aggregation, Facet, FacetSpec, MetricsError, Relation, SamplerConfig, SimReport};
