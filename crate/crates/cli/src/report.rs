//! JSON report documents and atomic output writing.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use idfree_asd_core::protocol::EvalConfig;
use idfree_asd_core::simulate::SweepPoint;
use idfree_asd_core::{EvalReport, SimConfig, Split, SweepResult};

use crate::error::{CliError, Result};
use crate::formats::{Expected, InputFile, FORMAT_TAG};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Content hash of one input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub role: String,
    pub name: String,
    pub sha256: String,
}

impl InputDigest {
    pub fn of(role: &str, file: &InputFile) -> Self {
        Self {
            role: role.to_string(),
            name: file.name(),
            sha256: file.sha256(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub format: String,
    pub tool_version: String,
    pub inputs: Vec<InputDigest>,
    pub warnings: Vec<String>,
    pub body: ReportBody,
}

impl ReportDocument {
    pub fn new(inputs: Vec<InputDigest>, warnings: Vec<String>, body: ReportBody) -> Self {
        Self {
            format: FORMAT_TAG.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            inputs,
            warnings,
            body,
        }
    }

    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Internal(format!("cannot serialize report: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Self =
            serde_json::from_str(text).map_err(|e| CliError::Data(format!("invalid report: {e}")))?;
        if doc.format != FORMAT_TAG {
            return Err(CliError::Data(format!(
                "unsupported report format `{}`",
                doc.format
            )));
        }
        Ok(doc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
#[allow(clippy::large_enum_variant)]
pub enum ReportBody {
    Evaluate(EvaluationBody),
    CheckTable(TableCheckBody),
    Simulate(SimulationBody),
    Sweep(SweepBody),
}

/// Fractions rendered as percentages with two decimals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PercentView {
    pub known_id: Option<String>,
    pub unknown_id: Option<String>,
    pub delta_norm: Option<String>,
    pub id_accuracy_normalized: Option<String>,
}

pub fn percent(v: f64) -> String {
    format!("{:.2}%", v * 100.0)
}

impl PercentView {
    pub fn new(
        known: Option<f64>,
        unknown: Option<f64>,
        delta: Option<f64>,
        id_norm: Option<f64>,
    ) -> Self {
        Self {
            known_id: known.map(percent),
            unknown_id: unknown.map(percent),
            delta_norm: delta.map(percent),
            id_accuracy_normalized: id_norm.map(percent),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSection {
    pub report: EvalReport,
    pub percent: PercentView,
}

/// Results pooled over all evaluated splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub splits: Vec<Split>,
    pub a_known: Option<f64>,
    pub a_unknown: Option<f64>,
    pub delta_norm: Option<f64>,
    /// Mean of the per-split normalized accuracies.
    pub id_accuracy_normalized: Option<f64>,
    pub misid_probability: f64,
    pub percent: PercentView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationBody {
    pub config: EvalConfig,
    pub higher_is_anomalous: bool,
    pub splits: Vec<SplitSection>,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCheckRow {
    pub label: String,
    pub a_known: f64,
    pub a_unknown: f64,
    pub expected: Expected,
    /// Recomputed degradation in percent.
    pub computed: Option<f64>,
    pub difference: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCheckBody {
    pub tolerance_percentage_points: f64,
    pub rows: Vec<TableCheckRow>,
    pub all_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationBody {
    pub config: SimConfig,
    pub point: SweepPoint,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepBody {
    pub result: SweepResult,
    pub identification_degradation_spearman: Option<f64>,
    pub misid_degradation_spearman: Option<f64>,
}

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let fail = |source| CliError::Write {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(bytes).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}
