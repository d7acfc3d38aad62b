//! Continuous top-k text search over a sliding window of a document stream.
//!
//! The [`IncrementalEngine`] keeps each registered query's top-k exact as
//! documents arrive and expire, touching only the queries an event can
//! affect. [`NaiveEngine`] and [`KmaxEngine`] are full-rescan baselines,
//! [`ShardedEngine`] splits the window across document-partitioned shards,
//! and [`stream_bench`] generates synthetic workloads and times them.

pub mod baseline;
pub mod coordinator;
pub mod dedup;
pub mod engine;
pub mod error;
pub mod feedback;
pub mod io;
pub mod model;
pub mod monitor;
pub mod stream_bench;
pub mod window;

pub use baseline::{naive_top_k, KmaxEngine, NaiveEngine};
pub use coordinator::{merge_results, ShardedEngine};
pub use dedup::{cosine, DedupConfig, DuplicateMatch};
pub use engine::{EngineConfig, EngineStats, IncrementalEngine, QueryState};
#[doc(hidden)]
pub use engine::Fault;
pub use error::{Error, Result};
pub use feedback::FeedbackStore;
pub use model::{
    score, tokenize, CompositionList, DocId, Document, Query, QueryId, RankKey, ScoredDoc, Term, TermId, Vocabulary,
};
pub use monitor::{Event, EventOutcome, Monitor};
pub use window::{WindowKind, WindowPolicy};
