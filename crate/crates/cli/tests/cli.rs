use std::path::{Path, PathBuf};
use std::process::Command;

use idfree_asd_cli::commands::{cmd_simulate, sweep_csv, SWEEP_CSV_HEADER};
use idfree_asd_cli::report::ReportBody;
use idfree_asd_cli::{
    cmd_check_table, cmd_evaluate, cmd_sweep, CliError, EvaluateOptions, ReportDocument,
    ScoreSource, SweepOptions,
};
use idfree_asd_core::protocol::{evaluate_known, merge_test_sets, EvalConfig};
use idfree_asd_core::simulate::{generate, simulate_report};
use idfree_asd_core::{MachineId, Recording, ScoreMatrix, SimConfig, Split};

const BIN: &str = env!("CARGO_BIN_EXE_idfree-asd");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/golden")
        .join(name)
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn evaluate(scores: &Path, labels: &Path) -> Result<ReportDocument, CliError> {
    cmd_evaluate(&EvaluateOptions {
        source: ScoreSource::Table(scores.to_path_buf()),
        labels: labels.to_path_buf(),
        eval: EvalConfig::default(),
        higher_is_anomalous: None,
    })
}

fn evaluation(doc: &ReportDocument) -> &idfree_asd_cli::report::EvaluationBody {
    match &doc.body {
        ReportBody::Evaluate(b) => b,
        other => panic!("unexpected body {other:?}"),
    }
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(BIN).args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn stderr_json(stderr: &str) -> serde_json::Value {
    serde_json::from_str(stderr.trim()).expect("stderr carries one JSON object")
}

#[test]
fn golden_fixture_matches_hand_computed_metrics() {
    let doc = evaluate(&fixture("scores.csv"), &fixture("labels.csv")).unwrap();
    let report = &evaluation(&doc).splits[0].report;
    // fan: 5 normals, 3 anomalies; pump: 4 and 4. Fractions counted by hand.
    let known: Vec<(f64, f64)> = report
        .known
        .per_machine
        .iter()
        .map(|m| (m.metrics.unwrap().auc, m.metrics.unwrap().pauc))
        .collect();
    let unknown: Vec<(f64, f64)> = report
        .unknown
        .per_machine
        .iter()
        .map(|m| (m.metrics.unwrap().auc, m.metrics.unwrap().pauc))
        .collect();
    let close = |a: f64, b: f64| (a - b).abs() < 1e-15;
    assert!(close(known[0].0, 5.0 / 6.0) && close(known[0].1, 37.0 / 57.0));
    assert_eq!(known[1], (1.0, 1.0));
    assert!(close(unknown[0].0, 23.0 / 30.0) && close(unknown[0].1, 9.0 / 19.0));
    assert!(close(unknown[1].0, 29.0 / 32.0) && close(unknown[1].1, 33.0 / 38.0));
    let harmonic = |v: [f64; 4]| 4.0 / v.iter().map(|x| 1.0 / x).sum::<f64>();
    let a_known = harmonic([5.0 / 6.0, 37.0 / 57.0, 1.0, 1.0]);
    let a_unknown = harmonic([23.0 / 30.0, 9.0 / 19.0, 29.0 / 32.0, 33.0 / 38.0]);
    assert!(close(report.known.aggregate.unwrap(), a_known));
    assert!(close(report.unknown.aggregate.unwrap(), a_unknown));
    let delta = report.degradation.unwrap().delta_norm.unwrap();
    assert!((delta - (1.0 - (a_unknown - 0.5) / (a_known - 0.5))).abs() < 1e-14);
    assert_eq!(report.identification.correct, 13);
    assert_eq!(report.identification.ties, 1);
    assert_eq!(report.identification.accuracy.normalized, Some(0.625));
}

#[test]
fn golden_report_is_frozen() {
    let doc = evaluate(&fixture("scores.csv"), &fixture("labels.csv")).unwrap();
    let expected = std::fs::read_to_string(fixture("expected_report.json")).unwrap();
    assert_eq!(doc.to_json().unwrap(), expected);
}

#[test]
fn report_round_trips() {
    let doc = evaluate(&fixture("scores.csv"), &fixture("labels.csv")).unwrap();
    let text = doc.to_json().unwrap();
    let back = ReportDocument::from_json(&text).unwrap();
    assert_eq!(back, doc);
    assert_eq!(back.to_json().unwrap(), text);
}

#[test]
fn binary_writes_the_golden_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let (code, _, stderr) = run(&[
        "evaluate",
        "--scores",
        fixture("scores.csv").to_str().unwrap(),
        "--labels",
        fixture("labels.csv").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{stderr}");
    assert_eq!(
        std::fs::read_to_string(out).unwrap(),
        std::fs::read_to_string(fixture("expected_report.json")).unwrap()
    );
}

#[test]
fn cli_known_id_equals_library() {
    let doc = evaluate(&fixture("scores.csv"), &fixture("labels.csv")).unwrap();
    let cli_known = &evaluation(&doc).splits[0].report.known;

    // independent parse of the fixture with plain string handling
    let data_lines = |name: &str| -> Vec<Vec<String>> {
        std::fs::read_to_string(fixture(name))
            .unwrap()
            .lines()
            .skip(2)
            .map(|l| l.split(',').map(str::to_string).collect())
            .collect()
    };
    let machines = vec![MachineId::new("fan"), MachineId::new("pump")];
    let matrix = ScoreMatrix::from_rows(
        machines,
        data_lines("scores.csv")
            .into_iter()
            .map(|r| (r[0].clone(), vec![r[1].parse().unwrap(), r[2].parse().unwrap()])),
    )
    .unwrap();
    let mut per_machine = std::collections::BTreeMap::new();
    for r in data_lines("labels.csv") {
        per_machine
            .entry(MachineId::new(r[1].clone()))
            .or_insert_with(Vec::new)
            .push(Recording {
                id: r[0].clone(),
                true_machine: MachineId::new(r[1].clone()),
                is_anomaly: r[2] == "1",
                split: Split::Dev,
                domain: None,
                features: None,
            });
    }
    let merged = merge_test_sets(per_machine).unwrap();
    let library = evaluate_known(&matrix, &merged, &EvalConfig::default()).unwrap();
    assert_eq!(&library, cli_known);
}

#[test]
fn single_machine_labels_give_identical_sections() {
    let dir = tempfile::tempdir().unwrap();
    let labels: String = std::fs::read_to_string(fixture("labels.csv"))
        .unwrap()
        .lines()
        .filter(|l| !l.contains(",pump,"))
        .map(|l| format!("{l}\n"))
        .collect();
    let keep: Vec<String> = labels
        .lines()
        .skip(2)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    let scores: String = std::fs::read_to_string(fixture("scores.csv"))
        .unwrap()
        .lines()
        .enumerate()
        .filter(|(i, l)| *i < 2 || keep.iter().any(|k| l.starts_with(&format!("{k},"))))
        .map(|(_, l)| format!("{l}\n"))
        .collect();
    let labels = write(dir.path(), "labels.csv", &labels);
    let scores = write(dir.path(), "scores.csv", &scores);
    let doc = evaluate(&scores, &labels).unwrap();
    let report = &evaluation(&doc).splits[0].report;
    assert_eq!(report.machines, vec![MachineId::new("fan")]);
    assert_eq!(report.known, report.unknown);
    assert_eq!(report.degradation.unwrap().delta_norm, Some(0.0));
    assert_eq!(report.identification.accuracy.normalized, None);
    assert!(doc.warnings.iter().any(|w| w.contains("`pump`")));
}

#[test]
fn missing_score_column_names_the_machine() {
    let dir = tempfile::tempdir().unwrap();
    let labels = std::fs::read_to_string(fixture("labels.csv"))
        .unwrap()
        .replace("rec16,pump", "rec16,valve");
    let labels = write(dir.path(), "labels.csv", &labels);
    let (code, _, stderr) = run(&[
        "evaluate",
        "--scores",
        fixture("scores.csv").to_str().unwrap(),
        "--labels",
        labels.to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    let err = stderr_json(&stderr);
    assert_eq!(err["error"]["kind"], "data");
    assert_eq!(err["error"]["machine"], "valve");
}

#[test]
fn mismatched_ids_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    let scores = std::fs::read_to_string(fixture("scores.csv"))
        .unwrap()
        .replace("rec07,", "rec99,");
    let scores = write(dir.path(), "scores.csv", &scores);
    let (code, _, stderr) = run(&[
        "evaluate",
        "--scores",
        scores.to_str().unwrap(),
        "--labels",
        fixture("labels.csv").to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    let err = stderr_json(&stderr);
    assert_eq!(err["error"]["ids"], serde_json::json!(["rec07", "rec99"]));
}

#[test]
fn malformed_rows_report_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let scores = std::fs::read_to_string(fixture("scores.csv"))
        .unwrap()
        .replace("rec05,0.30", "rec05,abc");
    let scores = write(dir.path(), "scores.csv", &scores);
    let (code, _, stderr) = run(&[
        "evaluate",
        "--scores",
        scores.to_str().unwrap(),
        "--labels",
        fixture("labels.csv").to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    assert_eq!(stderr_json(&stderr)["error"]["line"], 7);
}

#[test]
fn usage_errors_and_help() {
    let (code, _, stderr) = run(&["evaluate", "--labels", "x.csv"]);
    assert_eq!(code, 1);
    assert_eq!(stderr_json(&stderr)["error"]["kind"], "usage");
    let (code, stdout, _) = run(&["--help"]);
    assert_eq!(code, 0);
    assert!(stdout.contains("check-table"));
    let (code, _, _) = run(&["sweep", "--threads", "0", "--separations", "1"]);
    assert_eq!(code, 1);
    let (code, _, _) = run(&["simulate", "--k", "9", "--d", "3"]);
    assert_eq!(code, 1);
    let (code, _, _) = run(&["evaluate", "--scores", "nope.csv", "--labels", "nope.csv"]);
    assert_eq!(code, 2);
}

#[test]
fn lower_is_anomalous_header_and_flag() {
    let dir = tempfile::tempdir().unwrap();
    let original = std::fs::read_to_string(fixture("scores.csv")).unwrap();
    let mut negated = String::from("# format: idfree-asd/1\n# higher-is-anomalous: false\n");
    for (i, line) in original.lines().skip(1).enumerate() {
        if i == 0 {
            negated.push_str(line);
        } else {
            let f: Vec<&str> = line.split(',').collect();
            negated.push_str(&format!("{},-{},-{}", f[0], f[1], f[2]));
        }
        negated.push('\n');
    }
    let negated = write(dir.path(), "negated.csv", &negated);
    let base = evaluate(&fixture("scores.csv"), &fixture("labels.csv")).unwrap();
    let flipped = evaluate(&negated, &fixture("labels.csv")).unwrap();
    assert_eq!(evaluation(&base).splits[0].report, evaluation(&flipped).splits[0].report);
    assert!(!evaluation(&flipped).higher_is_anomalous);

    // the flag wins over the header and is noted; reversed scores reach
    // AUC 0, which only the arithmetic mean accepts
    let forced = cmd_evaluate(&EvaluateOptions {
        source: ScoreSource::Table(negated),
        labels: fixture("labels.csv"),
        eval: EvalConfig {
            averaging: idfree_asd_core::Averaging::Arithmetic,
            ..EvalConfig::default()
        },
        higher_is_anomalous: Some(true),
    })
    .unwrap();
    assert!(evaluation(&forced).higher_is_anomalous);
    assert!(forced.warnings.iter().any(|w| w.contains("overrides")));
}

#[test]
fn splits_are_evaluated_separately_and_pooled() {
    let dir = tempfile::tempdir().unwrap();
    let labels = std::fs::read_to_string(fixture("labels.csv"))
        .unwrap()
        .lines()
        .enumerate()
        .map(|(i, l)| {
            // odd recordings move to the evaluation split
            if i >= 2 && i % 2 == 1 {
                format!("{}\n", l.replace(",dev", ",eval"))
            } else {
                format!("{l}\n")
            }
        })
        .collect::<String>();
    let labels = write(dir.path(), "labels.csv", &labels);
    let doc = cmd_evaluate(&EvaluateOptions {
        source: ScoreSource::Table(fixture("scores.csv")),
        labels,
        eval: EvalConfig {
            averaging: idfree_asd_core::Averaging::Arithmetic,
            ..EvalConfig::default()
        },
        higher_is_anomalous: None,
    })
    .unwrap();
    let body = evaluation(&doc);
    assert_eq!(body.splits.len(), 2);
    assert_eq!(body.summary.splits, vec![Split::Dev, Split::Eval]);
    let pairs: Vec<f64> = body
        .splits
        .iter()
        .flat_map(|s| s.report.known.defined_metrics())
        .flat_map(|m| [m.auc, m.pauc])
        .collect();
    let mean = pairs.iter().sum::<f64>() / pairs.len() as f64;
    assert!((body.summary.a_known.unwrap() - mean).abs() < 1e-15);
    let ids: Vec<f64> = body
        .splits
        .iter()
        .map(|s| s.report.identification.accuracy.normalized.unwrap())
        .collect();
    assert_eq!(
        body.summary.id_accuracy_normalized,
        Some((ids[0] + ids[1]) / 2.0)
    );
}

#[test]
fn manifest_scoring_matches_library_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let config = SimConfig {
        k: 3,
        d: 4,
        n_ref: 25,
        n_norm: 12,
        n_anom: 8,
        separation: 4.0,
        ..SimConfig::default()
    };
    let data = generate(&config).unwrap();
    let header = |d: usize| {
        let mut h = String::from("# format: idfree-asd/1\nrecording_id");
        for i in 0..d {
            h.push_str(&format!(",f_{i}"));
        }
        h.push('\n');
        h
    };
    let row = |id: &str, v: &[f64]| {
        let mut s = id.to_string();
        for x in v {
            s.push_str(&format!(",{x}"));
        }
        s.push('\n');
        s
    };
    let mut machines = Vec::new();
    for r in &data.references {
        let mut text = header(config.d);
        for (i, v) in r.vectors().iter().enumerate() {
            text.push_str(&row(&format!("ref{i}"), v));
        }
        let name = format!("{}.csv", r.machine());
        write(dir.path(), &name, &text);
        machines.push(serde_json::json!({"id": r.machine().as_str(), "reference": name}));
    }
    let mut features = header(config.d);
    let mut labels = String::from("# format: idfree-asd/1\nrecording_id,true_machine,is_anomaly,split\n");
    for (input, (id, label)) in data
        .test_set
        .inputs()
        .iter()
        .zip(data.test_set.ground_truth().iter())
    {
        features.push_str(&row(id, input.features.as_ref().unwrap()));
        labels.push_str(&format!("{id},{},{},dev\n", label.machine, label.is_anomaly as u8));
    }
    write(dir.path(), "test.csv", &features);
    let labels = write(dir.path(), "labels.csv", &labels);
    let manifest = serde_json::json!({
        "format": "idfree-asd/1",
        "scorer": {"kind": "nearest_reference", "k": 5},
        "machines": machines,
        "test_features": "test.csv",
    });
    let manifest = write(dir.path(), "manifest.json", &manifest.to_string());

    let doc = cmd_evaluate(&EvaluateOptions {
        source: ScoreSource::Manifest(manifest),
        labels,
        eval: EvalConfig::default(),
        higher_is_anomalous: None,
    })
    .unwrap();
    let cli = &evaluation(&doc).splits[0].report;
    let library = simulate_report(&config, &EvalConfig::default()).unwrap();
    // `{x}` prints the shortest representation that parses back exactly
    assert_eq!(cli.known, library.known);
    assert_eq!(cli.unknown, library.unknown);
    assert_eq!(cli.identification, library.identification);
    assert_eq!(doc.inputs.len(), 3 + 3);
}

#[test]
fn check_table_flags_bad_rows() {
    let dir = tempfile::tempdir().unwrap();
    let table = write(
        dir.path(),
        "t.csv",
        "# format: idfree-asd/1\nlabel,a_known,a_unknown,expected_delta\n\
         good,0.7031,0.6966,3.20%\n\
         off,0.7031,0.6966,3.21%\n\
         chance,0.5,0.49,undefined\n\
         chance-with-number,0.5,0.49,1.00%\n",
    );
    let doc = cmd_check_table(&table).unwrap();
    let ReportBody::CheckTable(body) = &doc.body else {
        panic!("unexpected body")
    };
    let pass: Vec<bool> = body.rows.iter().map(|r| r.pass).collect();
    assert_eq!(pass, vec![true, false, true, false]);
    assert!(!body.all_pass);

    let (code, stdout, _) = run(&["check-table", "--table", table.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("FAIL")).count(), 2);
}

#[test]
fn simulate_at_perfect_separation() {
    let config = SimConfig {
        k: 3,
        separation: 50.0,
        anomaly_offset: 6.0,
        ..SimConfig::default()
    };
    let out = cmd_simulate(&config, &EvalConfig::default()).unwrap();
    let lines: Vec<&str> = out.csv.lines().collect();
    assert_eq!(lines.len(), 3);
    let header: Vec<&str> = lines[1].split(',').collect();
    let row: Vec<&str> = lines[2].split(',').collect();
    let delta = header.iter().position(|h| *h == "delta_norm").unwrap();
    assert_eq!(row[delta], "0");
}

#[test]
fn sweep_csv_shape() {
    let opts = SweepOptions {
        base: SimConfig {
            k: 3,
            n_ref: 20,
            n_norm: 10,
            n_anom: 10,
            ..SimConfig::default()
        },
        separations: vec![1.0, 3.0, 5.0],
        repeats: 2,
        eval: EvalConfig::default(),
    };
    let out = cmd_sweep(&opts).unwrap();
    let lines: Vec<&str> = out.csv.lines().collect();
    assert_eq!(lines[0], "# format: idfree-asd/1");
    assert_eq!(lines[1], SWEEP_CSV_HEADER.join(","));
    assert_eq!(lines.len(), 2 + 3 * 2);
    let ReportBody::Sweep(body) = &out.document.body else {
        panic!("unexpected body")
    };
    assert_eq!(sweep_csv(&body.result).unwrap(), out.csv);
    assert_eq!(out.svg.matches("<circle").count(), 6);
}

#[test]
fn sweep_binary_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let csv = dir.path().join(format!("s{threads}.csv"));
        let json = dir.path().join(format!("s{threads}.json"));
        let (code, _, stderr) = run(&[
            "sweep",
            "--k",
            "3",
            "--n-ref",
            "20",
            "--separations",
            "2,4",
            "--repeats",
            "2",
            "--threads",
            threads,
            "--csv",
            csv.to_str().unwrap(),
            "--out",
            json.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "{stderr}");
        outputs.push((std::fs::read(csv).unwrap(), std::fs::read(json).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}
