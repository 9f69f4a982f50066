//! Machine-wise data model and the two evaluation paths.
//!
//! Test recordings from several machines are merged into one
//! [`MergedTestSet`]. Scorers only ever see its [`TestInput`] view; the true
//! machine and anomaly label live in a separate [`GroundTruth`] that only the
//! evaluation functions read.

mod evaluate;
mod matrix;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::MetricsError;

pub use evaluate::{
    evaluate_known, evaluate_unknown, full_report, identify, misid_probability, partition_scores,
    EvalConfig, EvalReport, Identification, IdentificationStats, MachineResult, MachineScores,
    Mode, ModeReport, UnknownEvaluation,
};
pub use matrix::{aggregate_score, MinSelection, ScoreMatrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("no per-machine test sets to merge")]
    NothingToMerge,
    #[error("test set for machine `{0}` is empty")]
    EmptyMachineSet(MachineId),
    #[error("recording id `{0}` appears more than once")]
    DuplicateRecording(String),
    #[error("recording `{id}` is filed under machine `{filed}` but labelled `{labelled}`")]
    MachineMismatch {
        id: String,
        filed: MachineId,
        labelled: MachineId,
    },
    #[error("merged test set must come from one split, found both {0} and {1}")]
    MixedSplits(Split, Split),
    #[error("score matrix needs at least one machine")]
    NoMachines,
    #[error("machine `{0}` listed more than once")]
    DuplicateMachine(MachineId),
    #[error("row `{id}` has {found} scores, expected {expected}")]
    RowLength {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("row `{id}` has a non-finite score for machine `{machine}`")]
    NonFiniteScore { id: String, machine: MachineId },
    #[error("score row `{0}` appears more than once")]
    DuplicateRow(String),
    #[error("empty score row")]
    EmptyRow,
    #[error("non-finite entry {value} at machine index {index}")]
    NonFiniteEntry { index: usize, value: f64 },
    #[error("score matrix has no row for recording(s): {}", .0.join(", "))]
    MissingRows(Vec<String>),
    #[error("recording `{id}` belongs to machine `{machine}`, which is not a score column")]
    UnknownMachine { id: String, machine: MachineId },
    #[error("machine `{0}` is not a column of the score matrix")]
    MissingColumn(MachineId),
    #[error("identification covers different recordings than the ground truth (missing: [{}], extra: [{}])", .missing.join(", "), .extra.join(", "))]
    CoverageMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

/// Identifier of one physical machine; fixed and known before evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MachineId(String);

impl MachineId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for MachineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for MachineId {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Dev,
    Eval,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Dev => "dev",
            Split::Eval => "eval",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "dev" => Ok(Split::Dev),
            "eval" => Ok(Split::Eval),
            other => Err(format!("unknown split `{other}` (expected dev or eval)")),
        }
    }
}

/// Domain-shift tag. Recorded as metadata only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(format!(
                "unknown domain `{other}` (expected source or target)"
            )),
        }
    }
}

/// A labelled test recording as it exists before merging.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub id: String,
    pub true_machine: MachineId,
    pub is_anomaly: bool,
    pub split: Split,
    pub domain: Option<Domain>,
    pub features: Option<Vec<f64>>,
}

/// What a scorer is allowed to see of a merged recording.
#[derive(Debug, Clone, PartialEq)]
pub struct TestInput {
    pub id: String,
    pub split: Split,
    pub features: Option<Vec<f64>>,
}

/// Evaluation-only labels of a merged recording.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HiddenLabel {
    pub machine: MachineId,
    pub is_anomaly: bool,
    pub domain: Option<Domain>,
}

/// Hidden labels aligned index-for-index with [`MergedTestSet::inputs`].
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    ids: Vec<String>,
    labels: Vec<HiddenLabel>,
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &HiddenLabel)> {
        self.ids.iter().map(String::as_str).zip(&self.labels)
    }

    pub fn label(&self, index: usize) -> &HiddenLabel {
        &self.labels[index]
    }

    /// Sorted set of machines that own at least one recording.
    pub fn machines(&self) -> Vec<MachineId> {
        let mut machines: Vec<MachineId> = self.labels.iter().map(|l| l.machine.clone()).collect();
        machines.sort();
        machines.dedup();
        machines
    }
}

/// Test recordings of several machines within one split, ordered by id.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedTestSet {
    split: Split,
    inputs: Vec<TestInput>,
    truth: GroundTruth,
}

impl MergedTestSet {
    pub fn split(&self) -> Split {
        self.split
    }

    pub fn inputs(&self) -> &[TestInput] {
        &self.inputs
    }

    pub fn ground_truth(&self) -> &GroundTruth {
        &self.truth
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Post hoc partition back into per-machine recordings, each list in
    /// merged (id) order.
    pub fn partition(&self) -> BTreeMap<MachineId, Vec<Recording>> {
        let mut out: BTreeMap<MachineId, Vec<Recording>> = BTreeMap::new();
        for (input, label) in self.inputs.iter().zip(&self.truth.labels) {
            out.entry(label.machine.clone()).or_default().push(Recording {
                id: input.id.clone(),
                true_machine: label.machine.clone(),
                is_anomaly: label.is_anomaly,
                split: input.split,
                domain: label.domain,
                features: input.features.clone(),
            });
        }
        out
    }
}

/// Merges per-machine test sets of one split into a single set sorted by
/// recording id.
pub fn merge_test_sets(per_machine: BTreeMap<MachineId, Vec<Recording>>) -> Result<MergedTestSet> {
    if per_machine.is_empty() {
        return Err(ProtocolError::NothingToMerge);
    }
    let mut split = None;
    let mut seen = HashSet::new();
    let mut all = Vec::new();
    for (machine, recordings) in per_machine {
        if recordings.is_empty() {
            return Err(ProtocolError::EmptyMachineSet(machine));
        }
        for rec in recordings {
            if rec.true_machine != machine {
                return Err(ProtocolError::MachineMismatch {
                    id: rec.id,
                    filed: machine,
                    labelled: rec.true_machine,
                });
            }
            match split {
                None => split = Some(rec.split),
                Some(s) if s != rec.split => return Err(ProtocolError::MixedSplits(s, rec.split)),
                Some(_) => {}
            }
            if !seen.insert(rec.id.clone()) {
                return Err(ProtocolError::DuplicateRecording(rec.id));
            }
            all.push(rec);
        }
    }
    all.sort_by(|a, b| a.id.cmp(&b.id));

    let mut inputs = Vec::with_capacity(all.len());
    let mut ids = Vec::with_capacity(all.len());
    let mut labels = Vec::with_capacity(all.len());
    for rec in all {
        ids.push(rec.id.clone());
        labels.push(HiddenLabel {
            machine: rec.true_machine,
            is_anomaly: rec.is_anomaly,
            domain: rec.domain,
        });
        inputs.push(TestInput {
            id: rec.id,
            split: rec.split,
            features: rec.features,
        });
    }
    Ok(MergedTestSet {
        split: split.expect("at least one recording"),
        inputs,
        truth: GroundTruth { ids, labels },
    })
}
