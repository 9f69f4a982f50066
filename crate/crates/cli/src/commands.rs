//! Subcommand implementations. Each returns a report document; writing files
//! is left to the caller.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;

use idfree_asd_core::metrics::{aggregate, delta_norm, MetricPair};
use idfree_asd_core::protocol::{full_report, merge_test_sets, EvalConfig, TestInput};
use idfree_asd_core::scorers::{build_score_matrix, fit_scorers};
use idfree_asd_core::simulate::{simulate_report, sweep, SweepPoint};
use idfree_asd_core::{MachineId, Recording, ReferenceSet, ScoreMatrix, SimConfig, Split, SweepResult};

use crate::error::{CliError, Result};
use crate::formats::{
    parse_table, Expected, FeaturesFile, InputFile, LabelsFile, Manifest, ScoresFile, FORMAT_LINE,
};
use crate::report::{
    EvaluationBody, InputDigest, PercentView, ReportBody, ReportDocument, SimulationBody,
    SplitSection, Summary, SweepBody, TableCheckBody, TableCheckRow,
};
use crate::svg;

/// Allowed deviation from a published degradation, in percentage points.
pub const TABLE_TOLERANCE_PP: f64 = 0.005;
// absorbs binary rounding of decimal inputs at the tolerance boundary
const FLOAT_SLACK: f64 = 1e-9;

/// Where machine-specific scores come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreSource {
    /// Precomputed wide score table.
    Table(PathBuf),
    /// Reference sets and test features scored by a built-in scorer.
    Manifest(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateOptions {
    pub source: ScoreSource,
    pub labels: PathBuf,
    pub eval: EvalConfig,
    /// Overrides any orientation declared in the scores file.
    pub higher_is_anomalous: Option<bool>,
}

/// Scores keyed by recording id with their column order.
struct Scores {
    machines: Vec<MachineId>,
    rows: Vec<(String, Vec<f64>)>,
}

pub fn cmd_evaluate(opts: &EvaluateOptions) -> Result<ReportDocument> {
    opts.eval.validate()?;
    let labels_file = InputFile::read(&opts.labels)?;
    let labels = LabelsFile::parse(&labels_file)?;
    let mut warnings = labels.warnings.clone();
    let mut inputs = Vec::new();

    let (scores, higher_is_anomalous) = match &opts.source {
        ScoreSource::Table(path) => {
            let file = InputFile::read(path)?;
            let parsed = ScoresFile::parse(&file)?;
            inputs.push(InputDigest::of("scores", &file));
            warnings.extend(parsed.warnings.iter().cloned());
            let higher = match (opts.higher_is_anomalous, parsed.higher_is_anomalous) {
                (Some(flag), Some(header)) if flag != header => {
                    warnings.push(format!(
                        "--higher-is-anomalous {flag} overrides the scores file header ({header})"
                    ));
                    flag
                }
                (flag, header) => flag.or(header).unwrap_or(true),
            };
            let mut rows = parsed.rows;
            if !higher {
                for (_, row) in &mut rows {
                    row.iter_mut().for_each(|v| *v = -*v);
                }
            }
            (
                Scores {
                    machines: parsed.machines,
                    rows,
                },
                higher,
            )
        }
        ScoreSource::Manifest(path) => {
            if opts.higher_is_anomalous == Some(false) {
                return Err(CliError::Usage(
                    "--higher-is-anomalous false applies to score files, not manifests".into(),
                ));
            }
            let (scores, digests, w) = score_manifest(path, &labels)?;
            inputs.extend(digests);
            warnings.extend(w);
            (scores, true)
        }
    };
    inputs.push(InputDigest::of("labels", &labels_file));

    let (sections, w) = evaluate_splits(&scores, &labels, &opts.eval)?;
    warnings.extend(w);
    let summary = summarize(&sections, &opts.eval)?;
    Ok(ReportDocument::new(
        inputs,
        warnings,
        ReportBody::Evaluate(EvaluationBody {
            config: opts.eval,
            higher_is_anomalous,
            splits: sections,
            summary,
        }),
    ))
}

fn score_manifest(
    path: &PathBuf,
    labels: &LabelsFile,
) -> Result<(Scores, Vec<InputDigest>, Vec<String>)> {
    let file = InputFile::read(path)?;
    let manifest = Manifest::parse(&file)?;
    let mut digests = vec![InputDigest::of("manifest", &file)];
    let mut warnings = Vec::new();

    let mut entries = Vec::new();
    for m in &manifest.machines {
        let ref_file = InputFile::read(manifest.resolve(path, &m.reference))?;
        let parsed = FeaturesFile::parse(&ref_file)?;
        digests.push(InputDigest::of(&format!("reference:{}", m.id), &ref_file));
        warnings.extend(parsed.warnings);
        let vectors = parsed.rows.into_iter().map(|(_, v)| v).collect();
        entries.push((manifest.scorer, ReferenceSet::new(m.id.clone(), vectors)?));
    }
    let scorers = fit_scorers(entries)?;

    let test_file = InputFile::read(manifest.resolve(path, &manifest.test_features))?;
    let test = FeaturesFile::parse(&test_file)?;
    digests.push(InputDigest::of("test_features", &test_file));
    warnings.extend(test.warnings);
    let split_of: HashMap<&str, Split> =
        labels.rows.iter().map(|r| (r.id.as_str(), r.split)).collect();
    let test_inputs: Vec<TestInput> = test
        .rows
        .into_iter()
        .map(|(id, features)| TestInput {
            split: split_of.get(id.as_str()).copied().unwrap_or(Split::Dev),
            id,
            features: Some(features),
        })
        .collect();
    let matrix = build_score_matrix(&scorers, &test_inputs)?;
    let scores = Scores {
        machines: matrix.machines().to_vec(),
        rows: matrix
            .rows()
            .map(|(id, row)| (id.to_string(), row.to_vec()))
            .collect(),
    };
    Ok((scores, digests, warnings))
}

fn evaluate_splits(
    scores: &Scores,
    labels: &LabelsFile,
    eval: &EvalConfig,
) -> Result<(Vec<SplitSection>, Vec<String>)> {
    let mut warnings = Vec::new();
    let columns: BTreeSet<&MachineId> = scores.machines.iter().collect();
    let labelled: BTreeSet<&MachineId> = labels.rows.iter().map(|r| &r.machine).collect();
    if let Some(missing) = labelled.iter().find(|m| !columns.contains(*m)) {
        return Err(CliError::MissingColumn {
            machine: missing.to_string(),
        });
    }
    for unused in scores.machines.iter().filter(|m| !labelled.contains(m)) {
        warnings.push(format!(
            "score column `{unused}` has no labelled recordings and is ignored"
        ));
    }

    let score_ids: BTreeSet<&str> = scores.rows.iter().map(|(id, _)| id.as_str()).collect();
    let label_ids: BTreeSet<&str> = labels.rows.iter().map(|r| r.id.as_str()).collect();
    let only_labels: Vec<String> = label_ids.difference(&score_ids).map(|s| s.to_string()).collect();
    let only_scores: Vec<String> = score_ids.difference(&label_ids).map(|s| s.to_string()).collect();
    if !only_labels.is_empty() || !only_scores.is_empty() {
        let message = format!(
            "recording ids differ between scores and labels ({} only in labels, {} only in scores)",
            only_labels.len(),
            only_scores.len()
        );
        let mut ids = only_labels;
        ids.extend(only_scores);
        return Err(CliError::IdMismatch { message, ids });
    }

    let full = ScoreMatrix::from_rows(scores.machines.clone(), scores.rows.iter().cloned())?;
    let mut sections = Vec::new();
    for split in labels.splits() {
        let rows: Vec<_> = labels.rows.iter().filter(|r| r.split == split).collect();
        let present: BTreeSet<&MachineId> = rows.iter().map(|r| &r.machine).collect();
        let machines: Vec<MachineId> = scores
            .machines
            .iter()
            .filter(|m| present.contains(m))
            .cloned()
            .collect();
        let split_matrix = ScoreMatrix::from_rows(
            machines.clone(),
            rows.iter().map(|r| {
                let row = full.row(&r.id).expect("ids checked above");
                let picked = machines
                    .iter()
                    .map(|m| row[full.machine_index(m).expect("columns checked above")])
                    .collect();
                (r.id.clone(), picked)
            }),
        )?;
        let mut per_machine: BTreeMap<MachineId, Vec<Recording>> = BTreeMap::new();
        for r in &rows {
            per_machine.entry(r.machine.clone()).or_default().push(Recording {
                id: r.id.clone(),
                true_machine: r.machine.clone(),
                is_anomaly: r.is_anomaly,
                split,
                domain: r.domain,
                features: None,
            });
        }
        let merged = merge_test_sets(per_machine)?;
        let report = full_report(&split_matrix, &merged, eval)?;
        warnings.extend(report.warnings.iter().map(|w| format!("{split}: {w}")));
        let percent = PercentView::new(
            report.known.aggregate,
            report.unknown.aggregate,
            report.degradation.and_then(|d| d.delta_norm),
            report.identification.accuracy.normalized,
        );
        sections.push(SplitSection { report, percent });
    }
    Ok((sections, warnings))
}

fn summarize(sections: &[SplitSection], eval: &EvalConfig) -> Result<Summary> {
    let pool = |f: fn(&SplitSection) -> Vec<MetricPair>| -> Result<Option<f64>> {
        let pairs: Vec<MetricPair> = sections.iter().flat_map(f).collect();
        if pairs.is_empty() {
            Ok(None)
        } else {
            Ok(Some(aggregate(&pairs, eval.averaging)?))
        }
    };
    let a_known = pool(|s| s.report.known.defined_metrics())?;
    let a_unknown = pool(|s| s.report.unknown.defined_metrics())?;
    let delta = match (a_known, a_unknown) {
        (Some(k), Some(u)) => delta_norm(k, u),
        _ => None,
    };
    let normalized: Vec<f64> = sections
        .iter()
        .filter_map(|s| s.report.identification.accuracy.normalized)
        .collect();
    let id_norm = (!normalized.is_empty())
        .then(|| normalized.iter().sum::<f64>() / normalized.len() as f64);
    let (wrong, total) = sections.iter().fold((0, 0), |(w, t), s| {
        let id = &s.report.identification;
        (w + id.n_recordings - id.correct, t + id.n_recordings)
    });
    Ok(Summary {
        splits: sections.iter().map(|s| s.report.split).collect(),
        a_known,
        a_unknown,
        delta_norm: delta,
        id_accuracy_normalized: id_norm,
        misid_probability: wrong as f64 / total as f64,
        percent: PercentView::new(a_known, a_unknown, delta, id_norm),
    })
}

/// Recomputes normalized degradation for each row of a published table.
pub fn cmd_check_table(path: &PathBuf) -> Result<ReportDocument> {
    let file = InputFile::read(path)?;
    let rows = parse_table(&file)?;
    let checked: Vec<TableCheckRow> = rows
        .into_iter()
        .map(|row| {
            let computed = delta_norm(row.a_known, row.a_unknown).map(|d| d * 100.0);
            let (difference, pass) = match (row.expected, computed) {
                (Expected::Percent(e), Some(c)) => {
                    let diff = c - e;
                    (Some(diff), diff.abs() <= TABLE_TOLERANCE_PP + FLOAT_SLACK)
                }
                (Expected::Undefined, None) => (None, true),
                _ => (None, false),
            };
            TableCheckRow {
                label: row.label,
                a_known: row.a_known,
                a_unknown: row.a_unknown,
                expected: row.expected,
                computed,
                difference,
                pass,
            }
        })
        .collect();
    let all_pass = checked.iter().all(|r| r.pass);
    Ok(ReportDocument::new(
        vec![InputDigest::of("table", &file)],
        Vec::new(),
        ReportBody::CheckTable(TableCheckBody {
            tolerance_percentage_points: TABLE_TOLERANCE_PP,
            rows: checked,
            all_pass,
        }),
    ))
}

/// One line per table row, e.g. `PASS Direct-ACT: expected 3.20%, computed 3.2004%`.
pub fn table_lines(body: &TableCheckBody) -> Vec<String> {
    body.rows
        .iter()
        .map(|r| {
            let expected = match r.expected {
                Expected::Percent(e) => format!("{e:.2}%"),
                Expected::Undefined => "undefined".into(),
            };
            let computed = r
                .computed
                .map(|c| format!("{c:.4}%"))
                .unwrap_or_else(|| "undefined".into());
            format!(
                "{} {}: expected {expected}, computed {computed}",
                if r.pass { "PASS" } else { "FAIL" },
                r.label
            )
        })
        .collect()
}

pub const SWEEP_CSV_HEADER: [&str; 10] = [
    "separation",
    "repeat",
    "seed",
    "id_accuracy_raw",
    "id_accuracy_normalized",
    "delta_norm",
    "a_known",
    "a_unknown",
    "misid_probability",
    "error",
];

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "undefined".into())
}

fn point_cells(p: Option<&SweepPoint>) -> [String; 6] {
    [
        cell(p.map(|p| p.id_accuracy_raw)),
        cell(p.and_then(|p| p.id_accuracy_normalized)),
        cell(p.and_then(|p| p.delta_norm)),
        cell(p.and_then(|p| p.a_known)),
        cell(p.and_then(|p| p.a_unknown)),
        cell(p.map(|p| p.misid_probability)),
    ]
}

fn csv_document(records: impl Iterator<Item = Vec<String>>) -> Result<String> {
    let internal = |e: csv::Error| CliError::Internal(format!("cannot write CSV: {e}"));
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(SWEEP_CSV_HEADER).map_err(internal)?;
    for r in records {
        writer.write_record(&r).map_err(internal)?;
    }
    let body = writer
        .into_inner()
        .map_err(|e| CliError::Internal(format!("cannot write CSV: {e}")))?;
    let body = String::from_utf8(body).map_err(|e| CliError::Internal(e.to_string()))?;
    Ok(format!("{FORMAT_LINE}\n{body}"))
}

/// Scatter table, one row per `(separation, repeat)` cell.
pub fn sweep_csv(result: &SweepResult) -> Result<String> {
    csv_document(result.entries.iter().map(|e| {
        let mut row = vec![
            e.separation.to_string(),
            e.repeat.to_string(),
            e.seed.to_string(),
        ];
        row.extend(point_cells(e.point.as_ref()));
        row.push(e.error.clone().unwrap_or_default());
        row
    }))
}

pub fn sweep_svg(result: &SweepResult) -> String {
    let points: Vec<(f64, f64)> = result
        .points()
        .filter_map(|p| Some((p.id_accuracy_normalized?, p.delta_norm?)))
        .collect();
    svg::scatter(
        &points,
        "normalized identification accuracy",
        "normalized degradation",
    )
}

/// Output of `simulate`: the report and a one-row scatter table.
pub struct SimulateOutput {
    pub document: ReportDocument,
    pub csv: String,
}

pub fn cmd_simulate(config: &SimConfig, eval: &EvalConfig) -> Result<SimulateOutput> {
    eval.validate()?;
    let report = simulate_report(config, eval)?;
    let point = SweepPoint {
        separation: config.separation,
        seed: config.seed,
        id_accuracy_raw: report.identification.accuracy.raw,
        id_accuracy_normalized: report.identification.accuracy.normalized,
        delta_norm: report.degradation.and_then(|d| d.delta_norm),
        a_known: report.known.aggregate,
        a_unknown: report.unknown.aggregate,
        misid_probability: report.identification.misid_probability,
    };
    let csv = csv_document(std::iter::once({
        let mut row = vec![
            config.separation.to_string(),
            "0".into(),
            config.seed.to_string(),
        ];
        row.extend(point_cells(Some(&point)));
        row.push(String::new());
        row
    }))?;
    let warnings = report.warnings.clone();
    Ok(SimulateOutput {
        document: ReportDocument::new(
            Vec::new(),
            warnings,
            ReportBody::Simulate(SimulationBody {
                config: *config,
                point,
                report,
            }),
        ),
        csv,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub base: SimConfig,
    pub separations: Vec<f64>,
    pub repeats: usize,
    pub eval: EvalConfig,
}

pub struct SweepOutput {
    pub document: ReportDocument,
    pub csv: String,
    pub svg: String,
}

pub fn cmd_sweep(opts: &SweepOptions) -> Result<SweepOutput> {
    opts.eval.validate()?;
    opts.base.validate()?;
    let result = sweep(&opts.base, &opts.separations, opts.repeats, &opts.eval)?;
    let warnings = result
        .entries
        .iter()
        .filter_map(|e| {
            e.error.as_ref().map(|err| {
                format!(
                    "separation {} repeat {} failed: {err}",
                    e.separation, e.repeat
                )
            })
        })
        .collect();
    let csv = sweep_csv(&result)?;
    let svg = sweep_svg(&result);
    let body = SweepBody {
        identification_degradation_spearman: result.identification_degradation_correlation(),
        misid_degradation_spearman: result.misid_degradation_correlation(),
        result,
    };
    Ok(SweepOutput {
        document: ReportDocument::new(Vec::new(), warnings, ReportBody::Sweep(body)),
        csv,
        svg,
    })
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| CliError::Internal(format!("cannot start thread pool: {e}"))),
    }
}
