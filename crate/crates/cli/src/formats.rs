//! Versioned CSV and JSON input formats.
//!
//! Every CSV file starts with the line `# format: idfree-asd/1`, optionally
//! followed by `# key: value` directive lines, then a header row.

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use csv::{ReaderBuilder, Trim};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use idfree_asd_core::protocol::Domain;
use idfree_asd_core::{MachineId, ScorerSpec, Split};

use crate::error::{CliError, Result};

pub const FORMAT_TAG: &str = "idfree-asd/1";
pub const FORMAT_LINE: &str = "# format: idfree-asd/1";

/// Raw bytes of an input file together with its path.
#[derive(Debug, Clone)]
pub struct InputFile {
    pub path: PathBuf,
    pub bytes: Vec<u8>,
}

impl InputFile {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let bytes = std::fs::read(&path).map_err(|source| CliError::Read {
            path: path.clone(),
            source,
        })?;
        Ok(Self { path, bytes })
    }

    pub fn text(&self) -> Result<&str> {
        std::str::from_utf8(&self.bytes)
            .map_err(|e| CliError::parse(&self.path, None, format!("not valid UTF-8: {e}")))
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(&self.bytes))
    }

    /// File name without directories, so reports do not depend on where
    /// inputs live.
    pub fn name(&self) -> String {
        self.path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.path.display().to_string())
    }
}

/// A parsed CSV table with file line numbers attached to each row.
#[derive(Debug, Clone)]
struct Table {
    path: PathBuf,
    directives: Vec<(u64, String, String)>,
    header_line: u64,
    headers: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    fn parse(file: &InputFile) -> Result<Self> {
        let text = file.text()?;
        let path = file.path.clone();
        let mut lines = text.split_inclusive('\n');
        let first = lines.next().unwrap_or("");
        if first.trim_end() != FORMAT_LINE {
            return Err(CliError::parse(
                &path,
                Some(1),
                format!("expected `{FORMAT_LINE}` as the first line"),
            ));
        }
        let mut consumed = first.len();
        let mut directives = Vec::new();
        let mut line_no = 1u64;
        for line in lines {
            if !line.starts_with('#') {
                break;
            }
            line_no += 1;
            consumed += line.len();
            let body = line[1..].trim();
            let Some((key, value)) = body.split_once(':') else {
                return Err(CliError::parse(
                    &path,
                    Some(line_no),
                    "directive lines must read `# key: value`",
                ));
            };
            directives.push((line_no, key.trim().to_string(), value.trim().to_string()));
        }
        let offset = line_no;

        let mut reader = ReaderBuilder::new()
            .has_headers(true)
            .trim(Trim::All)
            .from_reader(&text.as_bytes()[consumed..]);
        let csv_error = |e: csv::Error| {
            let line = e.position().map(|p| offset + p.line());
            let message = match e.kind() {
                csv::ErrorKind::UnequalLengths {
                    expected_len, len, ..
                } => format!("row has {len} fields, header has {expected_len}"),
                _ => e.to_string(),
            };
            CliError::parse(&path, line, message)
        };
        let headers: Vec<String> = reader
            .headers()
            .map_err(csv_error)?
            .iter()
            .map(str::to_string)
            .collect();
        if headers.iter().all(String::is_empty) {
            return Err(CliError::parse(&path, Some(offset + 1), "missing header row"));
        }
        let mut seen = HashSet::new();
        for h in &headers {
            if !seen.insert(h.as_str()) {
                return Err(CliError::parse(
                    &path,
                    Some(offset + 1),
                    format!("duplicate column `{h}`"),
                ));
            }
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(csv_error)?;
            let line = record
                .position()
                .map(|p| offset + p.line())
                .unwrap_or_default();
            rows.push((line, record.iter().map(str::to_string).collect()));
        }
        Ok(Self {
            path,
            directives,
            header_line: offset + 1,
            headers,
            rows,
        })
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.column(name).ok_or_else(|| {
            CliError::parse(
                &self.path,
                Some(self.header_line),
                format!("missing required column `{name}`"),
            )
        })
    }

    fn error(&self, line: u64, message: impl Into<String>) -> CliError {
        CliError::parse(&self.path, Some(line), message)
    }

    fn number(&self, line: u64, column: &str, value: &str) -> Result<f64> {
        let v: f64 = value
            .parse()
            .map_err(|_| self.error(line, format!("column `{column}`: `{value}` is not a number")))?;
        if !v.is_finite() {
            return Err(self.error(line, format!("column `{column}`: `{value}` is not finite")));
        }
        Ok(v)
    }

    fn unknown_columns(&self, known: &[&str]) -> Vec<String> {
        self.headers
            .iter()
            .filter(|h| !known.contains(&h.as_str()))
            .map(|h| {
                format!(
                    "{}: ignoring unknown column `{h}`",
                    self.path.file_name().unwrap_or_default().to_string_lossy()
                )
            })
            .collect()
    }

    fn check_unique_ids(&self, id_col: usize) -> Result<()> {
        let mut seen = HashSet::new();
        for (line, row) in &self.rows {
            let id = &row[id_col];
            if id.is_empty() {
                return Err(self.error(*line, "empty recording id"));
            }
            if !seen.insert(id.as_str()) {
                return Err(self.error(*line, format!("duplicate recording id `{id}`")));
            }
        }
        Ok(())
    }
}

fn parse_bool(value: &str) -> Option<bool> {
    match value {
        "1" | "true" => Some(true),
        "0" | "false" => Some(false),
        _ => None,
    }
}

/// Wide score table: `recording_id,<machine_1>,...,<machine_K>`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoresFile {
    pub machines: Vec<MachineId>,
    pub rows: Vec<(String, Vec<f64>)>,
    /// Orientation declared by a `# higher-is-anomalous:` directive.
    pub higher_is_anomalous: Option<bool>,
    pub warnings: Vec<String>,
}

impl ScoresFile {
    pub fn parse(file: &InputFile) -> Result<Self> {
        let table = Table::parse(file)?;
        let mut warnings = Vec::new();
        let mut higher_is_anomalous = None;
        for (line, key, value) in &table.directives {
            match key.as_str() {
                "higher-is-anomalous" => {
                    higher_is_anomalous = Some(parse_bool(value).ok_or_else(|| {
                        table.error(*line, format!("`{value}` is not true or false"))
                    })?);
                }
                _ => warnings.push(format!("{}: ignoring directive `{key}`", file.name())),
            }
        }
        if table.headers[0] != "recording_id" {
            return Err(table.error(table.header_line, "first column must be `recording_id`"));
        }
        let machines: Vec<MachineId> = table.headers[1..].iter().map(MachineId::new).collect();
        if machines.is_empty() {
            return Err(table.error(table.header_line, "no machine columns"));
        }
        if machines.iter().any(|m| m.as_str().is_empty()) {
            return Err(table.error(table.header_line, "empty machine column name"));
        }
        table.check_unique_ids(0)?;
        let rows = table
            .rows
            .iter()
            .map(|(line, row)| {
                let values = row[1..]
                    .iter()
                    .zip(&table.headers[1..])
                    .map(|(v, h)| table.number(*line, h, v))
                    .collect::<Result<Vec<f64>>>()?;
                Ok((row[0].clone(), values))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            machines,
            rows,
            higher_is_anomalous,
            warnings,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub id: String,
    pub machine: MachineId,
    pub is_anomaly: bool,
    pub split: Split,
    pub domain: Option<Domain>,
}

/// `recording_id,true_machine,is_anomaly,split[,domain]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelsFile {
    pub rows: Vec<LabelRow>,
    pub warnings: Vec<String>,
}

impl LabelsFile {
    pub fn parse(file: &InputFile) -> Result<Self> {
        let table = Table::parse(file)?;
        let id = table.require("recording_id")?;
        let machine = table.require("true_machine")?;
        let anomaly = table.require("is_anomaly")?;
        let split = table.require("split")?;
        let domain = table.column("domain");
        let mut warnings = table.unknown_columns(&[
            "recording_id",
            "true_machine",
            "is_anomaly",
            "split",
            "domain",
        ]);
        for (_, key, _) in &table.directives {
            warnings.push(format!("{}: ignoring directive `{key}`", file.name()));
        }
        table.check_unique_ids(id)?;
        let rows = table
            .rows
            .iter()
            .map(|(line, row)| {
                if row[machine].is_empty() {
                    return Err(table.error(*line, "empty `true_machine`"));
                }
                let is_anomaly = parse_bool(&row[anomaly]).ok_or_else(|| {
                    table.error(
                        *line,
                        format!("`is_anomaly` must be 0, 1, true or false, got `{}`", row[anomaly]),
                    )
                })?;
                let split = Split::from_str(&row[split]).map_err(|e| table.error(*line, e))?;
                let domain = match domain.map(|c| row[c].as_str()) {
                    None | Some("") => None,
                    Some(d) => Some(Domain::from_str(d).map_err(|e| table.error(*line, e))?),
                };
                Ok(LabelRow {
                    id: row[id].clone(),
                    machine: MachineId::new(row[machine].clone()),
                    is_anomaly,
                    split,
                    domain,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Err(table.error(table.header_line, "labels file has no rows"));
        }
        Ok(Self { rows, warnings })
    }

    /// Splits present, in `dev`, `eval` order.
    pub fn splits(&self) -> Vec<Split> {
        self.rows
            .iter()
            .map(|r| r.split)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

/// `recording_id,f_0,...,f_{d-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturesFile {
    pub dim: usize,
    pub rows: Vec<(String, Vec<f64>)>,
    pub warnings: Vec<String>,
}

impl FeaturesFile {
    pub fn parse(file: &InputFile) -> Result<Self> {
        let table = Table::parse(file)?;
        let id = table.require("recording_id")?;
        let mut feature_cols = Vec::new();
        while let Some(c) = table.column(&format!("f_{}", feature_cols.len())) {
            feature_cols.push(c);
        }
        if feature_cols.is_empty() {
            return Err(table.error(table.header_line, "no feature columns `f_0`, `f_1`, ..."));
        }
        let names: Vec<String> = (0..feature_cols.len()).map(|i| format!("f_{i}")).collect();
        let mut known: Vec<&str> = names.iter().map(String::as_str).collect();
        known.push("recording_id");
        let mut warnings = table.unknown_columns(&known);
        for (_, key, _) in &table.directives {
            warnings.push(format!("{}: ignoring directive `{key}`", file.name()));
        }
        table.check_unique_ids(id)?;
        let rows = table
            .rows
            .iter()
            .map(|(line, row)| {
                let values = feature_cols
                    .iter()
                    .zip(&names)
                    .map(|(&c, name)| table.number(*line, name, &row[c]))
                    .collect::<Result<Vec<f64>>>()?;
                Ok((row[id].clone(), values))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dim: feature_cols.len(),
            rows,
            warnings,
        })
    }
}

/// Expected normalized degradation of a published row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expected {
    /// Percentage points, e.g. `3.20` for 3.20%.
    Percent(f64),
    Undefined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub a_known: f64,
    pub a_unknown: f64,
    pub expected: Expected,
}

/// `label,a_known,a_unknown,expected_delta`; aggregates as fractions,
/// the expectation in percent (`3.20%` or `3.20`) or `undefined`.
pub fn parse_table(file: &InputFile) -> Result<Vec<TableRow>> {
    let table = Table::parse(file)?;
    let label = table.require("label")?;
    let known = table.require("a_known")?;
    let unknown = table.require("a_unknown")?;
    let expected = table.require("expected_delta")?;
    let rows = table
        .rows
        .iter()
        .map(|(line, row)| {
            let fraction = |c: usize, name: &str| -> Result<f64> {
                let v = table.number(*line, name, &row[c])?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(table.error(*line, format!("`{name}` must lie in [0, 1]")));
                }
                Ok(v)
            };
            let exp = match row[expected].as_str() {
                "undefined" => Expected::Undefined,
                s => Expected::Percent(table.number(
                    *line,
                    "expected_delta",
                    s.strip_suffix('%').unwrap_or(s).trim(),
                )?),
            };
            Ok(TableRow {
                label: row[label].clone(),
                a_known: fraction(known, "a_known")?,
                a_unknown: fraction(unknown, "a_unknown")?,
                expected: exp,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Err(table.error(table.header_line, "table has no rows"));
    }
    Ok(rows)
}

/// Scorer-driven evaluation inputs. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub scorer: ScorerSpec,
    pub machines: Vec<ManifestMachine>,
    pub test_features: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestMachine {
    pub id: MachineId,
    pub reference: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub machine_type: Option<String>,
}

impl Manifest {
    pub fn parse(file: &InputFile) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(&file.bytes).map_err(|e| {
            CliError::parse(&file.path, Some(e.line() as u64), e.to_string())
        })?;
        if manifest.format != FORMAT_TAG {
            return Err(CliError::parse(
                &file.path,
                None,
                format!("unsupported format `{}`, expected `{FORMAT_TAG}`", manifest.format),
            ));
        }
        if manifest.machines.is_empty() {
            return Err(CliError::parse(&file.path, None, "manifest lists no machines"));
        }
        Ok(manifest)
    }

    pub fn resolve(&self, manifest_path: &Path, path: &Path) -> PathBuf {
        match manifest_path.parent() {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.to_path_buf(),
        }
    }
}
