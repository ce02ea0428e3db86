//! Casualty-count discovery from crowdsourced earthquake reports.
//!
//! The crate is organised as a pipeline of stages:
//!
//! - [`ingest`]: event triggering, query generation, replay files, source
//!   clients and exact deduplication.
//! - [`classify`]: the two-stage relevance filter (event, then casualty
//!   statistics) with a hashed character n-gram logistic baseline.
//! - [`extract`]: few-shot prompt construction, answer-key parsing, number
//!   conversion, a completion-backend client and a deterministic rule
//!   extractor.
//! - [`truth`]: physically constrained dynamic truth discovery over scored
//!   claims with per-source reliabilities.
//! - [`project`]: grid-posterior Bayesian updating of the exponential
//!   reported-loss curve and fatality-bin probabilities.

pub mod classify;
pub mod extract;
pub mod ingest;
pub mod project;
pub mod text;
pub mod truth;

pub use classify::{ClassificationResult, ClassifierModel, Stage};
pub use extract::{CasualtyClaim, CasualtyKind, ExtractionAnswer, PromptTemplate};
pub use ingest::{EarthquakeEvent, Platform, QuerySpec, RawPost};
pub use project::{BinReport, LossModelParams, Observation, PosteriorGrid, PriorSpec};
pub use truth::{ScoredClaim, TruthPoint, TruthState, TruthStatus};
