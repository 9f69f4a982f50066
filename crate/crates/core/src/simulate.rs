//! Seeded Gaussian-cluster benchmark with a single separability knob.
//!
//! Machine centers sit on a regular simplex, so every pair of machines is
//! equally confusable and `separation` alone controls how often the
//! min-aggregation picks the wrong machine.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{
    full_report, merge_test_sets, EvalConfig, EvalReport, MachineId, MergedTestSet,
    ProtocolError, Recording, Split,
};
use crate::rng::{derive_seed, stream, StreamRng};
use crate::scorers::{build_score_matrix, fit_scorers, ReferenceSet, ScorerError, ScorerKind, ScorerSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("feature dimension {d} cannot hold a simplex of {k} machines (need d >= k - 1)")]
    DimensionTooSmall { k: usize, d: usize },
    #[error("sweep needs at least one separation")]
    NoSeparations,
    #[error("sweep needs at least one repeat")]
    NoRepeats,
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

pub type Result<T> = std::result::Result<T, SimError>;

// stream purposes within one machine
const STREAM_REFERENCE: u64 = 0;
const STREAM_NORMAL: u64 = 1;
const STREAM_ANOMALY: u64 = 2;
const STREAM_IDS: u64 = 3;
// top-level stream for repeat seeds
const STREAM_REPEAT: u64 = 0x5EED;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Number of machines.
    pub k: usize,
    /// Feature dimension.
    pub d: usize,
    /// Reference (normal training) vectors per machine.
    pub n_ref: usize,
    /// Normal test recordings per machine.
    pub n_norm: usize,
    /// Anomalous test recordings per machine.
    pub n_anom: usize,
    /// Distance between any two machine centers.
    pub separation: f64,
    /// Within-machine standard deviation.
    pub spread: f64,
    /// Radial shift of anomalous recordings away from their center.
    pub anomaly_offset: f64,
    pub seed: u64,
    pub scorer: ScorerSpec,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            k: 5,
            d: 8,
            n_ref: 100,
            n_norm: 50,
            n_anom: 50,
            separation: 6.0,
            spread: 1.0,
            anomaly_offset: 4.0,
            seed: 20_260_101,
            scorer: ScorerSpec::new(ScorerKind::NearestReference { k: 5 }),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(SimError::InvalidConfig(msg.to_string()));
        if self.k == 0 {
            return fail("k must be at least 1");
        }
        if self.d == 0 {
            return fail("d must be at least 1");
        }
        if self.d + 1 < self.k {
            return Err(SimError::DimensionTooSmall {
                k: self.k,
                d: self.d,
            });
        }
        if self.n_ref < 2 {
            return fail("n_ref must be at least 2");
        }
        if self.n_norm == 0 || self.n_anom == 0 {
            return fail("n_norm and n_anom must be at least 1");
        }
        if !(self.separation.is_finite() && self.separation >= 0.0) {
            return fail("separation must be finite and non-negative");
        }
        if !(self.spread.is_finite() && self.spread > 0.0) {
            return fail("spread must be finite and positive");
        }
        if !(self.anomaly_offset.is_finite() && self.anomaly_offset > 0.0) {
            return fail("anomaly_offset must be finite and positive");
        }
        Ok(())
    }
}

/// `k` mutually equidistant points in `d` dimensions with pairwise distance
/// `separation`, centered at the origin.
pub fn simplex_centers(k: usize, d: usize, separation: f64) -> Result<Vec<Vec<f64>>> {
    if k == 0 {
        return Err(SimError::InvalidConfig("k must be at least 1".into()));
    }
    if d + 1 < k {
        return Err(SimError::DimensionTooSmall { k, d });
    }
    // Helmert basis of the sum-zero subspace of R^k; the standard basis
    // vectors projected onto it are pairwise sqrt(2) apart.
    let scale = separation / std::f64::consts::SQRT_2;
    let mut centers = vec![vec![0.0; d]; k];
    for j in 1..k {
        let norm = ((j * (j + 1)) as f64).sqrt();
        for (i, center) in centers.iter_mut().enumerate() {
            let h = match i.cmp(&j) {
                std::cmp::Ordering::Less => 1.0 / norm,
                std::cmp::Ordering::Equal => -(j as f64) / norm,
                std::cmp::Ordering::Greater => 0.0,
            };
            center[j - 1] = scale * h;
        }
    }
    Ok(centers)
}

fn gaussian(rng: &mut StreamRng, center: &[f64], spread: f64) -> Vec<f64> {
    center
        .iter()
        .map(|c| c + spread * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn unit_direction(rng: &mut StreamRng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub fn machine_id(index: usize) -> MachineId {
    MachineId::new(format!("machine_{index:02}"))
}

/// Generated references and merged test set.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub centers: Vec<Vec<f64>>,
    pub references: Vec<ReferenceSet>,
    pub test_set: MergedTestSet,
}

/// Draws one synthetic dataset. Identical configs give identical data.
pub fn generate(config: &SimConfig) -> Result<SimulatedData> {
    config.validate()?;
    let centers = simplex_centers(config.k, config.d, config.separation)?;
    let mut references = Vec::with_capacity(config.k);
    let mut per_machine = BTreeMap::new();

    for (m, center) in centers.iter().enumerate() {
        let machine = machine_id(m);
        let key = m as u64;

        let mut rng = stream(config.seed, &[key, STREAM_REFERENCE]);
        let vectors = (0..config.n_ref)
            .map(|_| gaussian(&mut rng, center, config.spread))
            .collect();
        references.push(ReferenceSet::new(machine.clone(), vectors)?);

        let mut normal_rng = stream(config.seed, &[key, STREAM_NORMAL]);
        let mut anomaly_rng = stream(config.seed, &[key, STREAM_ANOMALY]);
        let mut recordings = Vec::with_capacity(config.n_norm + config.n_anom);
        for i in 0..config.n_norm + config.n_anom {
            let is_anomaly = i >= config.n_norm;
            let features = if is_anomaly {
                let dir = unit_direction(&mut anomaly_rng, config.d);
                let shifted: Vec<f64> = center
                    .iter()
                    .zip(&dir)
                    .map(|(c, u)| c + config.anomaly_offset * u)
                    .collect();
                gaussian(&mut anomaly_rng, &shifted, config.spread)
            } else {
                gaussian(&mut normal_rng, center, config.spread)
            };
            // opaque ids carry neither machine nor label
            let id = format!(
                "{:016x}",
                derive_seed(config.seed, &[key, STREAM_IDS, i as u64])
            );
            recordings.push(Recording {
                id,
                true_machine: machine.clone(),
                is_anomaly,
                split: Split::Dev,
                domain: None,
                features: Some(features),
            });
        }
        per_machine.insert(machine, recordings);
    }

    Ok(SimulatedData {
        centers,
        references,
        test_set: merge_test_sets(per_machine)?,
    })
}

/// Generates data, scores it and runs both evaluation paths.
pub fn simulate_report(config: &SimConfig, eval: &EvalConfig) -> Result<EvalReport> {
    let data = generate(config)?;
    let scorers = fit_scorers(
        data.references
            .into_iter()
            .map(|r| (config.scorer, r))
            .collect(),
    )?;
    let matrix = build_score_matrix(&scorers, data.test_set.inputs())?;
    let eval = EvalConfig {
        seed: Some(config.seed),
        ..*eval
    };
    Ok(full_report(&matrix, &data.test_set, &eval)?)
}

/// One point of the degradation-vs-identification scatter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub separation: f64,
    pub seed: u64,
    pub id_accuracy_raw: f64,
    pub id_accuracy_normalized: Option<f64>,
    pub delta_norm: Option<f64>,
    pub a_known: Option<f64>,
    pub a_unknown: Option<f64>,
    pub misid_probability: f64,
}

pub fn run_point(config: &SimConfig, eval: &EvalConfig) -> Result<SweepPoint> {
    let report = simulate_report(config, eval)?;
    Ok(SweepPoint {
        separation: config.separation,
        seed: config.seed,
        id_accuracy_raw: report.identification.accuracy.raw,
        id_accuracy_normalized: report.identification.accuracy.normalized,
        delta_norm: report.degradation.and_then(|d| d.delta_norm),
        a_known: report.known.aggregate,
        a_unknown: report.unknown.aggregate,
        misid_probability: report.identification.misid_probability,
    })
}

/// Outcome of one `(separation, repeat)` cell; failures keep their cause.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub separation_index: usize,
    pub repeat: usize,
    pub separation: f64,
    pub seed: u64,
    pub point: Option<SweepPoint>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub base: SimConfig,
    pub eval: EvalConfig,
    pub separations: Vec<f64>,
    pub repeats: usize,
    pub entries: Vec<SweepEntry>,
}

impl SweepResult {
    pub fn points(&self) -> impl Iterator<Item = &SweepPoint> {
        self.entries.iter().filter_map(|e| e.point.as_ref())
    }

    /// Spearman correlation between normalized identification accuracy and
    /// normalized degradation over points where both are defined.
    pub fn identification_degradation_correlation(&self) -> Option<f64> {
        let (x, y): (Vec<f64>, Vec<f64>) = self
            .points()
            .filter_map(|p| Some((p.id_accuracy_normalized?, p.delta_norm?)))
            .unzip();
        crate::stats::spearman(&x, &y)
    }

    /// Spearman correlation between misidentification probability and
    /// normalized degradation.
    pub fn misid_degradation_correlation(&self) -> Option<f64> {
        let (x, y): (Vec<f64>, Vec<f64>) = self
            .points()
            .filter_map(|p| Some((p.misid_probability, p.delta_norm?)))
            .unzip();
        crate::stats::spearman(&x, &y)
    }
}

/// Seed of repeat `repeat`; shared by every separation so points along the
/// sweep differ only in geometry.
pub fn repeat_seed(base_seed: u64, repeat: usize) -> u64 {
    derive_seed(base_seed, &[STREAM_REPEAT, repeat as u64])
}

/// Default separation grid, in units of `spread`.
///
/// Starts where the default anomaly offset makes confusion costliest and ends
/// where identification is essentially perfect. Below that range machines
/// become interchangeable and losing identity costs little again.
pub fn default_separations() -> Vec<f64> {
    (0..10).map(|i| 4.0 + 0.6 * i as f64).collect()
}

pub const DEFAULT_REPEATS: usize = 5;

/// Runs every `(separation, repeat)` cell in parallel. Entry order is
/// `(separation index, repeat)` regardless of thread count.
pub fn sweep(
    base: &SimConfig,
    separations: &[f64],
    repeats: usize,
    eval: &EvalConfig,
) -> Result<SweepResult> {
    if separations.is_empty() {
        return Err(SimError::NoSeparations);
    }
    if repeats == 0 {
        return Err(SimError::NoRepeats);
    }
    let cells: Vec<(usize, usize)> = (0..separations.len())
        .flat_map(|s| (0..repeats).map(move |r| (s, r)))
        .collect();
    let entries = cells
        .into_par_iter()
        .map(|(s, r)| {
            let config = SimConfig {
                separation: separations[s],
                seed: repeat_seed(base.seed, r),
                ..*base
            };
            let (point, error) = match run_point(&config, eval) {
                Ok(p) => (Some(p), None),
                Err(e) => (None, Some(e.to_string())),
            };
            SweepEntry {
                separation_index: s,
                repeat: r,
                separation: config.separation,
                seed: config.seed,
                point,
                error,
            }
        })
        .collect();
    Ok(SweepResult {
        base: *base,
        eval: *eval,
        separations: separations.to_vec(),
        repeats,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorers::euclidean;

    #[test]
    fn simplex_is_equidistant() {
        for k in 1..=7 {
            let centers = simplex_centers(k, 8, 3.0).unwrap();
            for i in 0..k {
                for j in i + 1..k {
                    assert!((euclidean(&centers[i], &centers[j]) - 3.0).abs() < 1e-12);
                }
            }
        }
        assert!(matches!(
            simplex_centers(5, 3, 1.0),
            Err(SimError::DimensionTooSmall { k: 5, d: 3 })
        ));
        assert!(simplex_centers(5, 4, 1.0).is_ok());
    }

    #[test]
    fn single_machine_sizes() {
        let config = SimConfig {
            k: 1,
            n_norm: 7,
            n_anom: 3,
            ..SimConfig::default()
        };
        let data = generate(&config).unwrap();
        assert_eq!(data.test_set.len(), 10);
        assert_eq!(data.references.len(), 1);
        assert_eq!(data.references[0].len(), config.n_ref);
    }

    #[test]
    fn generation_is_deterministic() {
        let config = SimConfig::default();
        let a = generate(&config).unwrap();
        let b = generate(&config).unwrap();
        assert_eq!(a.references, b.references);
        assert_eq!(a.test_set, b.test_set);
        let other = generate(&SimConfig { seed: 1, ..config }).unwrap();
        assert_ne!(a.references, other.references);
    }

    #[test]
    fn adding_machines_keeps_existing_streams() {
        // same separation => machine 0 center differs between k, so compare
        // the noise: centered draws of machine 0 must match
        let small = SimConfig { k: 2, separation: 0.0, ..SimConfig::default() };
        let large = SimConfig { k: 4, ..small };
        let a = generate(&small).unwrap();
        let b = generate(&large).unwrap();
        assert_eq!(a.references[0], b.references[0]);
        assert_eq!(a.references[1], b.references[1]);
    }

    #[test]
    fn config_validation() {
        let base = SimConfig::default();
        assert!(SimConfig { n_ref: 1, ..base }.validate().is_err());
        assert!(SimConfig { n_anom: 0, ..base }.validate().is_err());
        assert!(SimConfig { spread: 0.0, ..base }.validate().is_err());
        assert!(SimConfig { separation: -1.0, ..base }.validate().is_err());
        assert!(SimConfig { anomaly_offset: f64::NAN, ..base }.validate().is_err());
        assert!(matches!(
            generate(&SimConfig { k: 10, d: 8, ..base }),
            Err(SimError::DimensionTooSmall { .. })
        ));
    }

    #[test]
    fn sweep_argument_errors() {
        let eval = EvalConfig::default();
        let base = SimConfig::default();
        assert_eq!(sweep(&base, &[], 1, &eval), Err(SimError::NoSeparations));
        assert_eq!(sweep(&base, &[1.0], 0, &eval), Err(SimError::NoRepeats));
    }

    #[test]
    fn failed_points_are_recorded() {
        let base = SimConfig {
            n_ref: 2,
            scorer: ScorerSpec::new(ScorerKind::NearestReference { k: 5 }),
            ..SimConfig::default()
        };
        let result = sweep(&base, &[1.0, 2.0], 1, &EvalConfig::default()).unwrap();
        assert_eq!(result.entries.len(), 2);
        for entry in &result.entries {
            assert!(entry.point.is_none());
            assert!(entry.error.as_deref().unwrap().contains("neighbour count"));
        }
    }
}
