//! Reference-based score normalization.
//!
//! A normalizer wraps a raw scoring function `raw(reference, x)` and rescales
//! its output using statistics of the same machine's reference set.

use serde::{Deserialize, Serialize};

use super::reference::ReferenceSet;
use super::{Result, ScorerError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NormalizerSpec {
    #[default]
    None,
    /// `(raw(x) - mu) / sigma` with leave-one-out reference statistics.
    ZscoreReference,
    /// `raw(x)` divided by the mean neighbour spacing around `x`'s
    /// `k_norm` nearest reference vectors.
    LocalDensity { k_norm: usize },
}

#[derive(Debug, Clone, PartialEq)]
enum Fitted {
    Identity,
    ZScore { mean: f64, std: f64 },
    LocalDensity { k_norm: usize, spacing: Vec<f64> },
}

/// A raw scoring function together with fitted normalization statistics.
pub struct NormalizedScorer<F> {
    reference: ReferenceSet,
    raw: F,
    fitted: Fitted,
}

impl<F> std::fmt::Debug for NormalizedScorer<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NormalizedScorer")
            .field("machine", self.reference.machine())
            .field("fitted", &self.fitted)
            .finish_non_exhaustive()
    }
}

/// Fits `spec` on `reference` and returns the normalized scoring function.
pub fn normalize<F>(
    spec: &NormalizerSpec,
    reference: &ReferenceSet,
    raw: F,
) -> Result<NormalizedScorer<F>>
where
    F: Fn(&ReferenceSet, &[f64]) -> Result<f64>,
{
    let fitted = match *spec {
        NormalizerSpec::None => Fitted::Identity,
        NormalizerSpec::ZscoreReference => {
            let mut held_out = Vec::with_capacity(reference.len());
            for (i, v) in reference.vectors().iter().enumerate() {
                let rest = reference.without(i).map_err(|_| ScorerError::ReferenceTooSmall {
                    machine: reference.machine().clone(),
                    required: 2,
                    available: reference.len(),
                })?;
                held_out.push(raw(&rest, v)?);
            }
            let n = held_out.len() as f64;
            let mean = held_out.iter().sum::<f64>() / n;
            let var = held_out.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            if std == 0.0 || !std.is_finite() {
                return Err(ScorerError::ZeroSpread(reference.machine().clone()));
            }
            Fitted::ZScore { mean, std }
        }
        NormalizerSpec::LocalDensity { k_norm } => {
            if k_norm == 0 {
                return Err(ScorerError::InvalidNeighborCount {
                    k: 0,
                    available: reference.len(),
                });
            }
            if reference.len() < k_norm + 1 {
                return Err(ScorerError::ReferenceTooSmall {
                    machine: reference.machine().clone(),
                    required: k_norm + 1,
                    available: reference.len(),
                });
            }
            let spacing = reference
                .vectors()
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let nn = reference.neighbors(v, Some(i));
                    nn[..k_norm].iter().map(|(d, _)| d).sum::<f64>() / k_norm as f64
                })
                .collect();
            Fitted::LocalDensity { k_norm, spacing }
        }
    };
    Ok(NormalizedScorer {
        reference: reference.clone(),
        raw,
        fitted,
    })
}

impl<F> NormalizedScorer<F>
where
    F: Fn(&ReferenceSet, &[f64]) -> Result<f64>,
{
    pub fn reference(&self) -> &ReferenceSet {
        &self.reference
    }

    pub fn raw_score(&self, x: &[f64]) -> Result<f64> {
        self.reference.check_dim(x)?;
        (self.raw)(&self.reference, x)
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        let raw = self.raw_score(x)?;
        match &self.fitted {
            Fitted::Identity => Ok(raw),
            Fitted::ZScore { mean, std } => Ok((raw - mean) / std),
            Fitted::LocalDensity { k_norm, spacing } => {
                let nn = self.reference.neighbors(x, None);
                let density =
                    nn[..*k_norm].iter().map(|&(_, i)| spacing[i]).sum::<f64>() / *k_norm as f64;
                if density == 0.0 {
                    return Err(ScorerError::DegenerateDensity(
                        self.reference.machine().clone(),
                    ));
                }
                Ok(raw / density)
            }
        }
    }
}
