//! Session-based re-ranking of the impression list shown at a clickout.
//!
//! The crate is organised bottom-up:
//!
//! - [`session`]: domain types (events, sessions, clickout instances) and corpus statistics.
//! - [`ingest`]: the 12-column challenge CSV format, item metadata, train/validation split.
//! - [`baselines`]: association rules, Markov chains, sequential rules and item-KNN.
//! - [`rules`]: the recency re-ranker that lifts previously interacted impressions.
//! - [`neural`]: the GRU click scorer, its trainer and grid search.
//! - [`pipeline`]: two-stage composition of a scorer with the recency rules.
//! - [`eval`]: reciprocal rank, MRR reports and the submission file.
//! - [`synth`]: a seeded generator of session logs with a planted interact-then-click pattern.

pub mod baselines;
pub mod config;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod io;
pub mod neural;
pub mod pipeline;
pub mod rules;
pub mod session;
pub mod synth;

pub use error::{Error, Result};
pub use eval::{EvalReport, RankedList};
pub use pipeline::{IdentityRanker, Ranker};
pub use session::{ActionType, ClickoutInstance, CorpusStats, Session, SessionEvent};
