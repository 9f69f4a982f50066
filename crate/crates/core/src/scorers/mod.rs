//! Reference-set-backed anomaly scorers producing `s_m(x)`.
//!
//! Two raw scorers are provided, mean distance to the k nearest reference
//! vectors and Mahalanobis distance to the reference mean, each optionally
//! wrapped by a [`NormalizerSpec`].

mod normalize;
mod reference;

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{MachineId, ProtocolError, ScoreMatrix, TestInput};

pub use normalize::{normalize, NormalizedScorer, NormalizerSpec};
pub use reference::{euclidean, Moments, ReferenceSet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScorerError {
    #[error("reference set for `{0}` is empty")]
    EmptyReference(MachineId),
    #[error("reference set for `{0}` has zero-dimensional vectors")]
    ZeroDimension(MachineId),
    #[error("reference vector {index} of `{machine}` has dimension {found}, expected {expected}")]
    RaggedReference {
        machine: MachineId,
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("reference vector {index} of `{machine}` is not finite")]
    NonFiniteReference { machine: MachineId, index: usize },
    #[error("reference recording `{id}` of `{machine}` is anomalous; references must be normal")]
    AnomalousReference { machine: MachineId, id: String },
    #[error("input has dimension {found}, reference set of `{machine}` has {expected}")]
    DimensionMismatch {
        machine: MachineId,
        expected: usize,
        found: usize,
    },
    #[error("input vector is not finite")]
    NonFiniteInput,
    #[error("neighbour count {k} must be between 1 and {available}")]
    InvalidNeighborCount { k: usize, available: usize },
    #[error("covariance regularization must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("reference set of `{machine}` has {available} vectors, need at least {required}")]
    ReferenceTooSmall {
        machine: MachineId,
        required: usize,
        available: usize,
    },
    #[error("regularized covariance of `{0}` is not positive definite")]
    NotPositiveDefinite(MachineId),
    #[error("reference scores of `{0}` have zero spread; z-score normalization undefined")]
    ZeroSpread(MachineId),
    #[error("local reference spacing around the input is zero for `{0}`")]
    DegenerateDensity(MachineId),
    #[error("recordings without features: {}", .0.join(", "))]
    MissingFeatures(Vec<String>),
    #[error("no scorers given")]
    NoScorers,
    #[error("scorer for machine `{0}` given more than once")]
    DuplicateMachine(MachineId),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

pub type Result<T> = std::result::Result<T, ScorerError>;

/// Relative covariance regularization used when none is given:
/// `epsilon = DEFAULT_RELATIVE_EPSILON * trace / d`.
pub const DEFAULT_RELATIVE_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorerKind {
    /// Mean Euclidean distance to the `k` nearest reference vectors.
    NearestReference { k: usize },
    /// Mahalanobis distance to the reference mean under `covariance + epsilon * I`.
    Mahalanobis {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        epsilon: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorerSpec {
    #[serde(flatten)]
    pub kind: ScorerKind,
    #[serde(default)]
    pub normalizer: NormalizerSpec,
}

impl ScorerSpec {
    pub fn new(kind: ScorerKind) -> Self {
        Self {
            kind,
            normalizer: NormalizerSpec::None,
        }
    }

    pub fn with_normalizer(mut self, normalizer: NormalizerSpec) -> Self {
        self.normalizer = normalizer;
        self
    }
}

/// Unnormalized score of `x` against `reference`. Higher is more anomalous.
pub fn raw_score(kind: &ScorerKind, reference: &ReferenceSet, x: &[f64]) -> Result<f64> {
    reference.check_dim(x)?;
    match *kind {
        ScorerKind::NearestReference { k } => {
            if k == 0 || k > reference.len() {
                return Err(ScorerError::InvalidNeighborCount {
                    k,
                    available: reference.len(),
                });
            }
            let nn = reference.neighbors(x, None);
            Ok(nn[..k].iter().map(|(d, _)| d).sum::<f64>() / k as f64)
        }
        ScorerKind::Mahalanobis { epsilon } => mahalanobis(reference, x, epsilon),
    }
}

fn mahalanobis(reference: &ReferenceSet, x: &[f64], epsilon: Option<f64>) -> Result<f64> {
    let moments = reference.moments()?;
    let d = reference.dim();
    let eps = match epsilon {
        Some(e) if e > 0.0 && e.is_finite() => e,
        Some(e) => return Err(ScorerError::InvalidEpsilon(e)),
        None => {
            let scaled = DEFAULT_RELATIVE_EPSILON * moments.covariance.trace() / d as f64;
            // all reference vectors identical
            if scaled > 0.0 {
                scaled
            } else {
                DEFAULT_RELATIVE_EPSILON
            }
        }
    };
    let regularized = &moments.covariance + DMatrix::<f64>::identity(d, d) * eps;
    let chol = regularized
        .cholesky()
        .ok_or_else(|| ScorerError::NotPositiveDefinite(reference.machine().clone()))?;
    let centered = DVector::from_column_slice(x) - &moments.mean;
    let solved = chol.solve(&centered);
    Ok(centered.dot(&solved).max(0.0).sqrt())
}

type RawFn = Box<dyn Fn(&ReferenceSet, &[f64]) -> Result<f64> + Send + Sync>;

/// A fitted machine-specific scorer.
pub struct Scorer {
    spec: ScorerSpec,
    inner: NormalizedScorer<RawFn>,
}

impl std::fmt::Debug for Scorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scorer")
            .field("spec", &self.spec)
            .field("inner", &self.inner)
            .finish()
    }
}

impl Scorer {
    pub fn fit(spec: ScorerSpec, reference: ReferenceSet) -> Result<Self> {
        let kind = spec.kind;
        match kind {
            ScorerKind::NearestReference { k } if k == 0 || k > reference.len() => {
                return Err(ScorerError::InvalidNeighborCount {
                    k,
                    available: reference.len(),
                })
            }
            ScorerKind::Mahalanobis { .. } => {
                reference.moments()?;
            }
            _ => {}
        }
        let raw: RawFn = Box::new(move |r: &ReferenceSet, x: &[f64]| raw_score(&kind, r, x));
        let inner = normalize(&spec.normalizer, &reference, raw)?;
        Ok(Self { spec, inner })
    }

    pub fn machine(&self) -> &MachineId {
        self.inner.reference().machine()
    }

    pub fn spec(&self) -> &ScorerSpec {
        &self.spec
    }

    pub fn reference(&self) -> &ReferenceSet {
        self.inner.reference()
    }

    pub fn raw_score(&self, x: &[f64]) -> Result<f64> {
        self.inner.raw_score(x)
    }

    /// Normalized score `s_m(x)`.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        self.inner.score(x)
    }
}

/// One-shot convenience: fit `spec` on `reference` and score `x`.
pub fn score(spec: &ScorerSpec, reference: &ReferenceSet, x: &[f64]) -> Result<f64> {
    Scorer::fit(*spec, reference.clone())?.score(x)
}

/// Fits one scorer per `(spec, reference)` pair; column order follows input
/// order.
pub fn fit_scorers(entries: Vec<(ScorerSpec, ReferenceSet)>) -> Result<Vec<Scorer>> {
    let mut seen = HashSet::new();
    for (_, r) in &entries {
        if !seen.insert(r.machine().clone()) {
            return Err(ScorerError::DuplicateMachine(r.machine().clone()));
        }
    }
    entries
        .into_par_iter()
        .map(|(spec, reference)| Scorer::fit(spec, reference))
        .collect()
}

/// Scores every test input against every machine. Rows follow input order.
pub fn build_score_matrix(scorers: &[Scorer], inputs: &[TestInput]) -> Result<ScoreMatrix> {
    if scorers.is_empty() {
        return Err(ScorerError::NoScorers);
    }
    let missing: Vec<String> = inputs
        .iter()
        .filter(|i| i.features.is_none())
        .map(|i| i.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(ScorerError::MissingFeatures(missing));
    }
    let rows = inputs
        .par_iter()
        .map(|input| {
            let x = input.features.as_deref().expect("checked above");
            let row = scorers
                .iter()
                .map(|s| s.score(x))
                .collect::<Result<Vec<f64>>>()?;
            Ok((input.id.clone(), row))
        })
        .collect::<Result<Vec<_>>>()?;
    let machines = scorers.iter().map(|s| s.machine().clone()).collect();
    Ok(ScoreMatrix::from_rows(machines, rows)?)
}
