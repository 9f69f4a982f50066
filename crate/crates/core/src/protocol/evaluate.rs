use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{aggregate_score, GroundTruth, MachineId, MergedTestSet, ProtocolError, Result, ScoreMatrix, Split};
use crate::metrics::{
    self, Averaging, IdAccuracy, LabeledScores, MetricPair, MetricsError, NormalizedDegradation,
    DEFAULT_MAX_FPR,
};

/// Settings shared by both evaluation paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// pAUC false-positive-rate cap.
    pub max_fpr: f64,
    pub averaging: Averaging,
    /// Echoed into reports; evaluation itself is deterministic.
    pub seed: Option<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            max_fpr: DEFAULT_MAX_FPR,
            averaging: Averaging::default(),
            seed: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_fpr > 0.0 && self.max_fpr <= 1.0 {
            Ok(())
        } else {
            Err(MetricsError::InvalidMaxFpr(self.max_fpr).into())
        }
    }
}

/// Which score a recording is evaluated with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// `s_{m*}(x)`, the column of the true machine.
    Known,
    /// `min_m s_m(x)`.
    Unknown,
}

/// Scores and labels of one machine's test recordings, in merged order.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineScores {
    pub machine: MachineId,
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineResult {
    pub machine: MachineId,
    pub n_normal: usize,
    pub n_anomalous: usize,
    /// `None` when the machine's test labels hold a single class.
    pub metrics: Option<MetricPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub per_machine: Vec<MachineResult>,
    /// Pooled AUC/pAUC over the machines with defined metrics.
    pub aggregate: Option<f64>,
    pub excluded: Vec<MachineId>,
}

impl ModeReport {
    pub fn defined_metrics(&self) -> Vec<MetricPair> {
        self.per_machine.iter().filter_map(|m| m.metrics).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationStats {
    pub n_recordings: usize,
    pub correct: usize,
    pub accuracy: IdAccuracy,
    pub misid_probability: f64,
    /// Rows whose minimum was attained by more than one machine.
    pub ties: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnknownEvaluation {
    pub detection: ModeReport,
    pub identification: IdentificationStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub machines: Vec<MachineId>,
    pub config: EvalConfig,
    pub known: ModeReport,
    pub unknown: ModeReport,
    /// Present when both aggregates are defined.
    pub degradation: Option<NormalizedDegradation>,
    pub identification: IdentificationStats,
    pub warnings: Vec<String>,
}

/// Argmin machine per recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Identification {
    pub assignments: BTreeMap<String, MachineId>,
    pub ties: usize,
}

fn missing_rows(matrix: &ScoreMatrix, merged: &MergedTestSet) -> Vec<String> {
    merged
        .inputs()
        .iter()
        .filter(|input| matrix.row(&input.id).is_none())
        .map(|input| input.id.clone())
        .collect()
}

/// Per-recording `(score row, true machine column)`.
fn resolve<'a>(matrix: &'a ScoreMatrix, merged: &MergedTestSet) -> Result<Vec<(&'a [f64], usize)>> {
    let missing = missing_rows(matrix, merged);
    if !missing.is_empty() {
        return Err(ProtocolError::MissingRows(missing));
    }
    merged
        .ground_truth()
        .iter()
        .map(|(id, label)| {
            let col = matrix
                .machine_index(&label.machine)
                .ok_or_else(|| ProtocolError::UnknownMachine {
                    id: id.to_string(),
                    machine: label.machine.clone(),
                })?;
            let row = matrix.row(id).expect("coverage checked above");
            Ok((row, col))
        })
        .collect()
}

/// Collects each machine's scores under the given mode, partitioned post hoc
/// by the hidden true machine. Output follows the matrix column order.
pub fn partition_scores(
    matrix: &ScoreMatrix,
    merged: &MergedTestSet,
    mode: Mode,
) -> Result<Vec<MachineScores>> {
    let resolved = resolve(matrix, merged)?;
    let mut buckets: Vec<MachineScores> = matrix
        .machines()
        .iter()
        .map(|m| MachineScores {
            machine: m.clone(),
            scores: Vec::new(),
            labels: Vec::new(),
        })
        .collect();
    for (i, (row, col)) in resolved.into_iter().enumerate() {
        let score = match mode {
            Mode::Known => row[col],
            Mode::Unknown => aggregate_score(row)?.score,
        };
        let bucket = &mut buckets[col];
        bucket.scores.push(score);
        bucket.labels.push(merged.ground_truth().label(i).is_anomaly);
    }
    Ok(buckets)
}

fn score_buckets(buckets: &[MachineScores], config: &EvalConfig) -> Result<ModeReport> {
    let per_machine = buckets
        .par_iter()
        .map(|bucket| {
            let n_anomalous = bucket.labels.iter().filter(|&&l| l).count();
            let n_normal = bucket.labels.len() - n_anomalous;
            let metrics = if n_normal > 0 && n_anomalous > 0 {
                let data = LabeledScores::new(bucket.scores.clone(), bucket.labels.clone())?;
                Some(MetricPair::compute(&data, config.max_fpr)?)
            } else {
                None
            };
            Ok(MachineResult {
                machine: bucket.machine.clone(),
                n_normal,
                n_anomalous,
                metrics,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let excluded: Vec<MachineId> = per_machine
        .iter()
        .filter(|m| m.metrics.is_none())
        .map(|m| m.machine.clone())
        .collect();
    let defined: Vec<MetricPair> = per_machine.iter().filter_map(|m| m.metrics).collect();
    let aggregate = if defined.is_empty() {
        None
    } else {
        Some(metrics::aggregate(&defined, config.averaging)?)
    };
    Ok(ModeReport {
        per_machine,
        aggregate,
        excluded,
    })
}

/// Standard machine-wise evaluation: each recording is scored by its own
/// machine's column.
pub fn evaluate_known(
    matrix: &ScoreMatrix,
    merged: &MergedTestSet,
    config: &EvalConfig,
) -> Result<ModeReport> {
    config.validate()?;
    let buckets = partition_scores(matrix, merged, Mode::Known)?;
    score_buckets(&buckets, config)
}

pub fn identify(matrix: &ScoreMatrix, merged: &MergedTestSet) -> Result<Identification> {
    let missing = missing_rows(matrix, merged);
    if !missing.is_empty() {
        return Err(ProtocolError::MissingRows(missing));
    }
    let mut assignments = BTreeMap::new();
    let mut ties = 0;
    for input in merged.inputs() {
        let row = matrix.row(&input.id).expect("coverage checked above");
        let selection = aggregate_score(row)?;
        if selection.tied {
            ties += 1;
        }
        assignments.insert(input.id.clone(), matrix.machines()[selection.index].clone());
    }
    Ok(Identification { assignments, ties })
}

/// Fraction of recordings whose identified machine differs from the true one.
pub fn misid_probability(
    identified: &BTreeMap<String, MachineId>,
    truth: &GroundTruth,
) -> Result<f64> {
    let (wrong, total) = count_errors(identified, truth)?;
    Ok(wrong as f64 / total as f64)
}

fn count_errors(identified: &BTreeMap<String, MachineId>, truth: &GroundTruth) -> Result<(usize, usize)> {
    let truth_ids: BTreeSet<&str> = truth.iter().map(|(id, _)| id).collect();
    let missing: Vec<String> = truth_ids
        .iter()
        .filter(|id| !identified.contains_key(**id))
        .map(|id| id.to_string())
        .collect();
    let extra: Vec<String> = identified
        .keys()
        .filter(|id| !truth_ids.contains(id.as_str()))
        .cloned()
        .collect();
    if !missing.is_empty() || !extra.is_empty() || truth.is_empty() {
        return Err(ProtocolError::CoverageMismatch { missing, extra });
    }
    let wrong = truth
        .iter()
        .filter(|(id, label)| identified[*id] != label.machine)
        .count();
    Ok((wrong, truth.len()))
}

/// Identity-free evaluation: every recording is scored with `min_m s_m(x)`,
/// then the scores are partitioned by the hidden true machine and evaluated
/// exactly as in [`evaluate_known`].
pub fn evaluate_unknown(
    matrix: &ScoreMatrix,
    merged: &MergedTestSet,
    config: &EvalConfig,
) -> Result<UnknownEvaluation> {
    config.validate()?;
    let buckets = partition_scores(matrix, merged, Mode::Unknown)?;
    let detection = score_buckets(&buckets, config)?;

    let identification = identify(matrix, merged)?;
    let (wrong, total) = count_errors(&identification.assignments, merged.ground_truth())?;
    let correct = total - wrong;
    let accuracy = IdAccuracy::new(correct as f64 / total as f64, matrix.k())?;
    Ok(UnknownEvaluation {
        detection,
        identification: IdentificationStats {
            n_recordings: total,
            correct,
            accuracy,
            misid_probability: wrong as f64 / total as f64,
            ties: identification.ties,
        },
    })
}

/// Both evaluation paths plus normalized degradation on the aggregates.
pub fn full_report(
    matrix: &ScoreMatrix,
    merged: &MergedTestSet,
    config: &EvalConfig,
) -> Result<EvalReport> {
    let known = evaluate_known(matrix, merged, config)?;
    let UnknownEvaluation {
        detection: unknown,
        identification,
    } = evaluate_unknown(matrix, merged, config)?;

    let degradation = match (known.aggregate, unknown.aggregate) {
        (Some(a_known), Some(a_unknown)) => Some(NormalizedDegradation::new(a_known, a_unknown)),
        _ => None,
    };
    let warnings = known
        .per_machine
        .iter()
        .filter(|m| m.metrics.is_none())
        .map(|m| {
            format!(
                "machine `{}` has {} normal and {} anomalous test recordings in split {}; metrics undefined and excluded from aggregation",
                m.machine,
                m.n_normal,
                m.n_anomalous,
                merged.split()
            )
        })
        .collect();

    Ok(EvalReport {
        split: merged.split(),
        machines: matrix.machines().to_vec(),
        config: *config,
        known,
        unknown,
        degradation,
        identification,
        warnings,
    })
}
