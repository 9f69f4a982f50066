//! Rank-based detection metrics and the chance-normalized quantities built on
//! top of them.
//!
//! All values are fractions in `[0, 1]`. Rendering as percentages is left to
//! the caller.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default false-positive-rate cap for pAUC.
pub const DEFAULT_MAX_FPR: f64 = 0.1;

/// Chance level shared by AUC and standardized pAUC.
pub const CHANCE_LEVEL: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("score list is empty")]
    Empty,
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score at position {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("metric undefined for {normals} normal and {anomalies} anomalous samples; both classes are required")]
    SingleClass { normals: usize, anomalies: usize },
    #[error("pAUC false-positive-rate cap must lie in (0, 1], got {0}")]
    InvalidMaxFpr(f64),
    #[error("identification accuracy normalization needs at least two machines, got {0}")]
    TooFewMachines(usize),
    #[error("raw identification accuracy must lie in [0, 1], got {0}")]
    AccuracyOutOfRange(f64),
    #[error("nothing to aggregate")]
    EmptyAggregate,
    #[error("harmonic mean needs strictly positive values, got {0}")]
    NonPositiveHarmonic(f64),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Anomaly scores with parallel ground-truth labels (`true` = anomalous).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScores {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl LabeledScores {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(MetricsError::LengthMismatch {
                scores: scores.len(),
                labels: labels.len(),
            });
        }
        if scores.is_empty() {
            return Err(MetricsError::Empty);
        }
        if let Some((index, &value)) = scores.iter().enumerate().find(|(_, s)| !s.is_finite()) {
            return Err(MetricsError::NonFinite { index, value });
        }
        Ok(Self { scores, labels })
    }

    /// Builds from separate normal and anomalous score groups.
    pub fn from_groups(normals: &[f64], anomalies: &[f64]) -> Result<Self> {
        let scores = normals.iter().chain(anomalies).copied().collect();
        let labels = std::iter::repeat_n(false, normals.len())
            .chain(std::iter::repeat_n(true, anomalies.len()))
            .collect();
        Self::new(scores, labels)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// `(normals, anomalies)`
    pub fn class_counts(&self) -> (usize, usize) {
        let anomalies = self.labels.iter().filter(|&&l| l).count();
        (self.labels.len() - anomalies, anomalies)
    }

    /// Same scores with every label inverted.
    pub fn flipped(&self) -> Self {
        Self {
            scores: self.scores.clone(),
            labels: self.labels.iter().map(|l| !l).collect(),
        }
    }

    fn require_both_classes(&self) -> Result<(usize, usize)> {
        let (normals, anomalies) = self.class_counts();
        if normals == 0 || anomalies == 0 {
            return Err(MetricsError::SingleClass { normals, anomalies });
        }
        Ok((normals, anomalies))
    }

    /// Groups of equal scores in ascending score order.
    fn tie_groups_ascending(&self) -> Vec<TieGroup> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| self.scores[a].total_cmp(&self.scores[b]));

        let mut groups: Vec<TieGroup> = Vec::new();
        let mut current: Option<f64> = None;
        for idx in order {
            let score = self.scores[idx];
            if current != Some(score) {
                groups.push(TieGroup::default());
                current = Some(score);
            }
            let group = groups.last_mut().expect("group pushed above");
            if self.labels[idx] {
                group.anomalies += 1;
            } else {
                group.normals += 1;
            }
        }
        groups
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct TieGroup {
    normals: u64,
    anomalies: u64,
}

/// Area under the ROC curve as the Mann-Whitney probability that a random
/// anomalous score exceeds a random normal one, ties counting one half.
pub fn auc(data: &LabeledScores) -> Result<f64> {
    let (normals, anomalies) = data.require_both_classes()?;
    // Twice the U statistic so half-credit for ties stays integral.
    let mut twice_u: u64 = 0;
    let mut normals_below: u64 = 0;
    for group in data.tie_groups_ascending() {
        twice_u += 2 * group.anomalies * normals_below + group.anomalies * group.normals;
        normals_below += group.normals;
    }
    let twice_pairs = 2 * normals as u64 * anomalies as u64;
    Ok(twice_u as f64 / twice_pairs as f64)
}

/// One vertex of an empirical ROC curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// Empirical ROC vertices from `(0, 0)` to `(1, 1)`, sweeping the threshold
/// from the highest score down. A tie group spanning both classes becomes a
/// single diagonal segment.
pub fn roc_curve(data: &LabeledScores) -> Result<Vec<RocPoint>> {
    let (normals, anomalies) = data.require_both_classes()?;
    let (normals, anomalies) = (normals as f64, anomalies as f64);
    let groups = data.tie_groups_ascending();

    let mut points = Vec::with_capacity(groups.len() + 1);
    points.push(RocPoint { fpr: 0.0, tpr: 0.0 });
    let (mut fp, mut tp) = (0u64, 0u64);
    for group in groups.iter().rev() {
        fp += group.normals;
        tp += group.anomalies;
        points.push(RocPoint {
            fpr: fp as f64 / normals,
            tpr: tp as f64 / anomalies,
        });
    }
    Ok(points)
}

fn check_max_fpr(max_fpr: f64) -> Result<()> {
    if max_fpr > 0.0 && max_fpr <= 1.0 {
        Ok(())
    } else {
        Err(MetricsError::InvalidMaxFpr(max_fpr))
    }
}

/// Unstandardized area under the empirical ROC curve over `FPR ∈ [0, max_fpr]`.
pub fn partial_area(data: &LabeledScores, max_fpr: f64) -> Result<f64> {
    check_max_fpr(max_fpr)?;
    let roc = roc_curve(data)?;
    let mut area = 0.0;
    for pair in roc.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if a.fpr >= max_fpr {
            break;
        }
        if b.fpr <= max_fpr {
            area += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0;
        } else {
            let tpr_at_cap = a.tpr + (b.tpr - a.tpr) * (max_fpr - a.fpr) / (b.fpr - a.fpr);
            area += (max_fpr - a.fpr) * (a.tpr + tpr_at_cap) / 2.0;
            break;
        }
    }
    Ok(area)
}

/// McClish-standardized partial AUC: chance maps to 0.5, perfect ranking to 1.
pub fn pauc(data: &LabeledScores, max_fpr: f64) -> Result<f64> {
    let area = partial_area(data, max_fpr)?;
    Ok(mcclish(area, max_fpr))
}

fn mcclish(area: f64, max_fpr: f64) -> f64 {
    let min_area = max_fpr * max_fpr / 2.0;
    let max_area = max_fpr;
    0.5 * (1.0 + (area - min_area) / (max_area - min_area))
}

/// AUC and pAUC of one machine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub auc: f64,
    pub pauc: f64,
    /// FPR cap used for `pauc`.
    pub max_fpr: f64,
}

impl MetricPair {
    pub fn compute(data: &LabeledScores, max_fpr: f64) -> Result<Self> {
        Ok(Self {
            auc: auc(data)?,
            pauc: pauc(data, max_fpr)?,
            max_fpr,
        })
    }
}

/// Fraction of above-chance performance lost without machine identity.
///
/// `None` when `a_known` is not above chance.
pub fn delta_norm(a_known: f64, a_unknown: f64) -> Option<f64> {
    if a_known > CHANCE_LEVEL && a_unknown.is_finite() {
        Some(1.0 - (a_unknown - CHANCE_LEVEL) / (a_known - CHANCE_LEVEL))
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedDegradation {
    pub a_known: f64,
    pub a_unknown: f64,
    pub delta_norm: Option<f64>,
}

impl NormalizedDegradation {
    pub fn new(a_known: f64, a_unknown: f64) -> Self {
        Self {
            a_known,
            a_unknown,
            delta_norm: delta_norm(a_known, a_unknown),
        }
    }
}

/// Chance-normalized identification accuracy `(raw - 1/k) / (1 - 1/k)`.
///
/// Negative when `raw` is below chance.
pub fn normalize_id_accuracy(raw: f64, k: usize) -> Result<f64> {
    if k < 2 {
        return Err(MetricsError::TooFewMachines(k));
    }
    if !(0.0..=1.0).contains(&raw) {
        return Err(MetricsError::AccuracyOutOfRange(raw));
    }
    let chance = 1.0 / k as f64;
    Ok((raw - chance) / (1.0 - chance))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdAccuracy {
    pub raw: f64,
    pub k: usize,
    /// Absent for a single machine, where chance normalization is undefined.
    pub normalized: Option<f64>,
}

impl IdAccuracy {
    pub fn new(raw: f64, k: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&raw) {
            return Err(MetricsError::AccuracyOutOfRange(raw));
        }
        let normalized = if k >= 2 {
            Some(normalize_id_accuracy(raw, k)?)
        } else {
            None
        };
        Ok(Self { raw, k, normalized })
    }
}

/// How per-machine values are pooled into one figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    #[default]
    Harmonic,
    Arithmetic,
}

impl fmt::Display for Averaging {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Averaging::Harmonic => "harmonic",
            Averaging::Arithmetic => "arithmetic",
        })
    }
}

impl FromStr for Averaging {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "harmonic" => Ok(Averaging::Harmonic),
            "arithmetic" => Ok(Averaging::Arithmetic),
            other => Err(format!(
                "unknown averaging mode `{other}` (expected harmonic or arithmetic)"
            )),
        }
    }
}

/// Pools every AUC and pAUC value of the given machines into one mean.
pub fn aggregate(per_machine: &[MetricPair], mode: Averaging) -> Result<f64> {
    let values: Vec<f64> = per_machine.iter().flat_map(|m| [m.auc, m.pauc]).collect();
    pooled_mean(&values, mode)
}

pub fn pooled_mean(values: &[f64], mode: Averaging) -> Result<f64> {
    if values.is_empty() {
        return Err(MetricsError::EmptyAggregate);
    }
    let n = values.len() as f64;
    match mode {
        Averaging::Arithmetic => Ok(values.iter().sum::<f64>() / n),
        Averaging::Harmonic => {
            if let Some(&bad) = values.iter().find(|&&v| v <= 0.0 || v.is_nan()) {
                return Err(MetricsError::NonPositiveHarmonic(bad));
            }
            Ok(n / values.iter().map(|v| 1.0 / v).sum::<f64>())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-9;

    fn brute_force_auc(normals: &[f64], anomalies: &[f64]) -> f64 {
        let mut credit = 0.0;
        for &a in anomalies {
            for &n in normals {
                if a > n {
                    credit += 1.0;
                } else if a == n {
                    credit += 0.5;
                }
            }
        }
        credit / (normals.len() * anomalies.len()) as f64
    }

    #[test]
    fn auc_perfect_separation() {
        let data = LabeledScores::from_groups(&[0.1, 0.2], &[0.8, 0.9]).unwrap();
        assert_eq!(auc(&data).unwrap(), 1.0);
    }

    #[test]
    fn auc_all_ties_is_chance() {
        let data = LabeledScores::from_groups(&[0.3, 0.3], &[0.3, 0.3]).unwrap();
        assert_eq!(auc(&data).unwrap(), 0.5);
    }

    #[test]
    fn auc_interleaved_matches_pair_count() {
        let (normals, anomalies) = ([1.0, 3.0], [2.0, 4.0]);
        let expected = brute_force_auc(&normals, &anomalies);
        assert_eq!(expected, 0.75);
        let data = LabeledScores::from_groups(&normals, &anomalies).unwrap();
        assert_eq!(auc(&data).unwrap(), expected);
    }

    #[test]
    fn auc_rejects_single_class() {
        let data = LabeledScores::from_groups(&[0.1, 0.2], &[]).unwrap();
        assert_eq!(
            auc(&data),
            Err(MetricsError::SingleClass {
                normals: 2,
                anomalies: 0
            })
        );
        assert!(pauc(&data, 0.1).is_err());
    }

    #[test]
    fn labeled_scores_validation() {
        assert_eq!(
            LabeledScores::new(vec![], vec![]),
            Err(MetricsError::Empty)
        );
        assert!(matches!(
            LabeledScores::new(vec![1.0], vec![true, false]),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert!(matches!(
            LabeledScores::new(vec![1.0, f64::NAN], vec![true, false]),
            Err(MetricsError::NonFinite { index: 1, .. })
        ));
    }

    #[test]
    fn pauc_perfect_and_chance() {
        let perfect = LabeledScores::from_groups(&[0.1, 0.2, 0.3], &[0.8, 0.9]).unwrap();
        let constant = LabeledScores::from_groups(&[0.5; 4], &[0.5; 3]).unwrap();
        for p in [0.05, 0.1, 0.5, 1.0] {
            assert_eq!(pauc(&perfect, p).unwrap(), 1.0);
            assert_eq!(pauc(&constant, p).unwrap(), 0.5);
        }
    }

    #[test]
    fn pauc_reversed_has_zero_partial_area() {
        let reversed = LabeledScores::from_groups(&[0.8, 0.9], &[0.1, 0.2, 0.3]).unwrap();
        for p in [0.05, 0.1, 0.5, 1.0] {
            assert_eq!(partial_area(&reversed, p).unwrap(), 0.0);
            // McClish floor for an all-wrong ranking
            let floor = 0.5 * (1.0 - p / (2.0 - p));
            assert!((pauc(&reversed, p).unwrap() - floor).abs() < TOL);
        }
        assert_eq!(pauc(&reversed, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn pauc_rejects_bad_cap() {
        let data = LabeledScores::from_groups(&[0.1], &[0.9]).unwrap();
        for p in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(pauc(&data, p), Err(MetricsError::InvalidMaxFpr(_))));
        }
    }

    #[test]
    fn partial_area_hand_example() {
        // normals {1, 3}, anomalies {2, 4}: ROC (0,0) (0,.5) (.5,.5) (.5,1) (1,1)
        let data = LabeledScores::from_groups(&[1.0, 3.0], &[2.0, 4.0]).unwrap();
        let roc = roc_curve(&data).unwrap();
        assert_eq!(roc.len(), 5);
        // over [0, 0.25] the curve sits at tpr = 0.5
        assert!((partial_area(&data, 0.25).unwrap() - 0.125).abs() < TOL);
        assert!((partial_area(&data, 1.0).unwrap() - 0.75).abs() < TOL);
    }

    #[test]
    fn pauc_tie_group_is_diagonal() {
        // one normal tied with one anomaly at the top: first segment is (0,0)->(0.5,0.5)
        let data = LabeledScores::from_groups(&[0.9, 0.1], &[0.9, 0.5]).unwrap();
        let area = partial_area(&data, 0.1).unwrap();
        assert!((area - 0.1 * 0.1 / 2.0).abs() < 1e-15);
        assert_eq!(pauc(&data, 0.1).unwrap(), 0.5);
    }

    #[test]
    fn delta_norm_table_rows() {
        let d = delta_norm(0.7031, 0.6966).unwrap();
        assert!((d * 100.0 - 3.20).abs() <= 0.005);
        let d = delta_norm(0.5671, 0.5540).unwrap();
        assert!((d * 100.0 - 19.52).abs() <= 0.005);
    }

    #[test]
    fn delta_norm_edges() {
        assert_eq!(delta_norm(0.8, 0.8), Some(0.0));
        assert_eq!(delta_norm(0.8, 0.5), Some(1.0));
        assert_eq!(delta_norm(0.5, 0.6), None);
        assert_eq!(delta_norm(0.3, 0.6), None);
        let report = NormalizedDegradation::new(0.5, 0.6);
        assert_eq!(report.delta_norm, None);
    }

    #[test]
    fn id_accuracy_normalization() {
        assert_eq!(normalize_id_accuracy(1.0, 7).unwrap(), 1.0);
        for k in 2..=21 {
            assert_eq!(normalize_id_accuracy(1.0 / k as f64, k).unwrap(), 0.0);
        }
        // (0.9 - 0.1) / 0.9 = 8/9
        assert!((normalize_id_accuracy(0.9, 10).unwrap() - 8.0 / 9.0).abs() < TOL);
        assert!(normalize_id_accuracy(0.0, 4).unwrap() < 0.0);
        assert_eq!(
            normalize_id_accuracy(0.5, 1),
            Err(MetricsError::TooFewMachines(1))
        );
        assert!(normalize_id_accuracy(1.2, 3).is_err());
        assert_eq!(IdAccuracy::new(1.0, 1).unwrap().normalized, None);
    }

    #[test]
    fn aggregation_modes() {
        let single = [MetricPair {
            auc: 0.7,
            pauc: 0.7,
            max_fpr: 0.1,
        }];
        assert!((aggregate(&single, Averaging::Arithmetic).unwrap() - 0.7).abs() < TOL);
        assert!((aggregate(&single, Averaging::Harmonic).unwrap() - 0.7).abs() < TOL);

        let pair = [MetricPair {
            auc: 0.5,
            pauc: 1.0,
            max_fpr: 0.1,
        }];
        assert_eq!(aggregate(&pair, Averaging::Arithmetic).unwrap(), 0.75);
        let harmonic = 2.0 / (1.0 / 0.5 + 1.0 / 1.0);
        assert!((aggregate(&pair, Averaging::Harmonic).unwrap() - harmonic).abs() < TOL);
        assert!((harmonic - 2.0 / 3.0).abs() < TOL);
    }

    #[test]
    fn aggregation_errors() {
        assert_eq!(
            aggregate(&[], Averaging::Harmonic),
            Err(MetricsError::EmptyAggregate)
        );
        let zero = [MetricPair {
            auc: 0.0,
            pauc: 0.4,
            max_fpr: 0.1,
        }];
        assert_eq!(
            aggregate(&zero, Averaging::Harmonic),
            Err(MetricsError::NonPositiveHarmonic(0.0))
        );
        assert_eq!(aggregate(&zero, Averaging::Arithmetic).unwrap(), 0.2);
    }

    #[test]
    fn averaging_parses() {
        assert_eq!("harmonic".parse::<Averaging>().unwrap(), Averaging::Harmonic);
        assert_eq!(
            "arithmetic".parse::<Averaging>().unwrap(),
            Averaging::Arithmetic
        );
        assert!("mean".parse::<Averaging>().is_err());
        assert_eq!(Averaging::default(), Averaging::Harmonic);
    }
}
