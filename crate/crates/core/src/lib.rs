//! Building blocks for an LLM-reranked sequential recommender.
//!
//! The pipeline runs in stages, each owned by one module:
//!
//! * [`catalog`] parses MovieLens / Amazon dumps, binarizes, deduplicates,
//!   applies k-core filtering and builds chronological user sequences.
//! * [`splitter`] produces leave-one-out splits and the fine-tuning user sample.
//! * [`retrieval`] trains candidate generators (BPR-MF, co-occurrence,
//!   popularity) and imports externally computed candidate lists.
//! * [`instructgen`] writes instruction-tuning corpora for an external
//!   fine-tuning job.
//! * [`llm_client`] talks to a completion service (or a deterministic mock).
//! * [`profiler`] asks the LLM for a keyword summary of a user's taste.
//! * [`ranker`] builds the ranking prompt, parses and grounds the completion.
//! * [`metrics`] computes HR@K / NDCG@K over the full item set.

pub mod catalog;
pub mod instructgen;
pub mod llm_client;
pub mod metrics;
pub mod profiler;
pub mod ranker;
pub mod retrieval;
pub mod rng;
pub mod snapshot;
pub mod splitter;
pub mod synthetic;
pub mod text;

pub use catalog::{
    DatasetKind, DatasetStats, Interaction, InteractionLog, Item, ItemCatalog, ItemId, UserId,
    UserSequence,
};
pub use instructgen::{InstructionExample, RenderStyle, Renderer, Task};
pub use llm_client::{CompletionClient, CompletionRequest, CompletionResponse, LlmError};
pub use metrics::{MetricsReport, TargetRank};
pub use ranker::RankedList;
pub use retrieval::{CandidateSet, ItemIndex, Retriever};
pub use splitter::{EvalSplit, UserSample, UserSplit};
