//! Identity-free evaluation of anomalous sound detection systems.
//!
//! The crate is organised around the evaluation flow:
//!
//! * [`metrics`]: AUC, McClish-standardized pAUC, normalized degradation and
//!   chance-normalized identification accuracy.
//! * [`protocol`]: the recording/score data model, merging of per-machine test
//!   sets, min-aggregation over machine-specific scores, and the known-ID and
//!   unknown-ID evaluation paths.
//! * [`scorers`]: small reference-set scorers (k-nearest reference distance,
//!   Mahalanobis) with an optional score-normalization layer.
//! * [`simulate`]: a seeded Gaussian-cluster generator and separation sweeps.
//!
//! Scores are oriented so that higher means more anomalous everywhere.

pub mod metrics;
pub mod protocol;
pub mod rng;
pub mod scorers;
pub mod simulate;
pub mod stats;

pub use metrics::{Averaging, LabeledScores, MetricPair, MetricsError};
pub use protocol::{
    EvalConfig, EvalReport, MachineId, MergedTestSet, ProtocolError, Recording, ScoreMatrix, Split,
};
pub use scorers::{NormalizerSpec, ReferenceSet, Scorer, ScorerError, ScorerKind, ScorerSpec};
pub use simulate::{SimConfig, SimError, SweepResult};
