use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use super::{Result, ScorerError};
use crate::protocol::{MachineId, Recording};

/// Normal-only feature vectors defining one machine's normality.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    machine: MachineId,
    dim: usize,
    vectors: Vec<Vec<f64>>,
    moments: OnceLock<Moments>,
}

/// Sample mean and unbiased covariance of a reference set.
#[derive(Debug, Clone)]
pub struct Moments {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl PartialEq for ReferenceSet {
    fn eq(&self, other: &Self) -> bool {
        self.machine == other.machine && self.vectors == other.vectors
    }
}

impl ReferenceSet {
    pub fn new(machine: MachineId, vectors: Vec<Vec<f64>>) -> Result<Self> {
        let dim = match vectors.first() {
            Some(v) if !v.is_empty() => v.len(),
            Some(_) => return Err(ScorerError::ZeroDimension(machine)),
            None => return Err(ScorerError::EmptyReference(machine)),
        };
        for (index, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(ScorerError::RaggedReference {
                    machine,
                    index,
                    expected: dim,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(ScorerError::NonFiniteReference { machine, index });
            }
        }
        Ok(Self {
            machine,
            dim,
            vectors,
            moments: OnceLock::new(),
        })
    }

    /// Builds from training recordings, which must all be normal and carry
    /// features.
    pub fn from_recordings(machine: MachineId, recordings: &[Recording]) -> Result<Self> {
        let mut vectors = Vec::with_capacity(recordings.len());
        for rec in recordings {
            if rec.is_anomaly {
                return Err(ScorerError::AnomalousReference {
                    machine,
                    id: rec.id.clone(),
                });
            }
            match &rec.features {
                Some(f) => vectors.push(f.clone()),
                None => return Err(ScorerError::MissingFeatures(vec![rec.id.clone()])),
            }
        }
        Self::new(machine, vectors)
    }

    pub fn machine(&self) -> &MachineId {
        &self.machine
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    /// Copy without the vector at `index`.
    pub fn without(&self, index: usize) -> Result<Self> {
        let vectors = self
            .vectors
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != index)
            .map(|(_, v)| v.clone())
            .collect();
        Self::new(self.machine.clone(), vectors)
    }

    pub(crate) fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(ScorerError::DimensionMismatch {
                machine: self.machine.clone(),
                expected: self.dim,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ScorerError::NonFiniteInput);
        }
        Ok(())
    }

    /// Cached mean and covariance. Needs at least two vectors.
    pub fn moments(&self) -> Result<&Moments> {
        if self.vectors.len() < 2 {
            return Err(ScorerError::ReferenceTooSmall {
                machine: self.machine.clone(),
                required: 2,
                available: self.vectors.len(),
            });
        }
        Ok(self.moments.get_or_init(|| {
            let n = self.vectors.len();
            let mut mean = DVector::zeros(self.dim);
            for v in &self.vectors {
                mean += DVector::from_column_slice(v);
            }
            mean /= n as f64;
            let mut covariance = DMatrix::zeros(self.dim, self.dim);
            for v in &self.vectors {
                let centered = DVector::from_column_slice(v) - &mean;
                covariance += &centered * centered.transpose();
            }
            covariance /= (n - 1) as f64;
            Moments { mean, covariance }
        }))
    }

    /// Reference indices sorted by Euclidean distance to `x`, ties by index,
    /// optionally skipping one index.
    pub(crate) fn neighbors(&self, x: &[f64], skip: Option<usize>) -> Vec<(f64, usize)> {
        let mut dists: Vec<(f64, usize)> = self
            .vectors
            .iter()
            .enumerate()
            .filter(|&(i, _)| Some(i) != skip)
            .map(|(i, v)| (euclidean(x, v), i))
            .collect();
        dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        dists
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
