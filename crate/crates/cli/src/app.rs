//! Argument parsing and dispatch for the `idfree-asd` binary.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use idfree_asd_core::protocol::EvalConfig;
use idfree_asd_core::simulate::{default_separations, DEFAULT_REPEATS};
use idfree_asd_core::{Averaging, NormalizerSpec, ScorerKind, ScorerSpec, SimConfig};

use crate::commands::{
    cmd_check_table, cmd_evaluate, cmd_simulate, cmd_sweep, table_lines, with_threads,
    EvaluateOptions, ScoreSource, SweepOptions,
};
use crate::error::{CliError, Result};
use crate::report::{write_atomic, ReportBody, ReportDocument};

#[derive(Debug, Parser)]
#[command(name = "idfree-asd", version, about = "Evaluate anomalous sound detection with and without machine identity")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Known-ID and unknown-ID evaluation of a score table or scorer manifest.
    Evaluate(EvaluateArgs),
    /// Recompute normalized degradation for rows of published aggregates.
    CheckTable(CheckTableArgs),
    /// Run one simulated configuration.
    Simulate(SimulateArgs),
    /// Sweep machine separation and record identification against degradation.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct MetricArgs {
    /// Upper false-positive-rate bound of the partial AUC.
    #[arg(long, default_value_t = 0.1)]
    pub pauc_p: f64,
    /// Pooling of per-machine AUC and pAUC values.
    #[arg(long, value_enum, default_value_t = AvgArg::Harmonic)]
    pub avg: AvgArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AvgArg {
    Harmonic,
    Arithmetic,
}

impl MetricArgs {
    fn config(&self, seed: Option<u64>) -> EvalConfig {
        EvalConfig {
            max_fpr: self.pauc_p,
            averaging: match self.avg {
                AvgArg::Harmonic => Averaging::Harmonic,
                AvgArg::Arithmetic => Averaging::Arithmetic,
            },
            seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Wide score table `recording_id,<machine>...`.
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    pub scores: Option<PathBuf>,
    /// JSON manifest of reference sets, scorer and test features.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Labels `recording_id,true_machine,is_anomaly,split[,domain]`.
    #[arg(long)]
    pub labels: PathBuf,
    #[command(flatten)]
    pub metrics: MetricArgs,
    /// Score orientation; overrides the scores file header.
    #[arg(long, action = clap::ArgAction::Set)]
    pub higher_is_anomalous: Option<bool>,
    /// Recorded in the report; evaluation itself is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckTableArgs {
    /// CSV `label,a_known,a_unknown,expected_delta`.
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScorerArg {
    Knn,
    Mahalanobis,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NormalizerArg {
    None,
    Zscore,
    LocalDensity,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Number of machines.
    #[arg(long)]
    pub k: Option<usize>,
    /// Feature dimension.
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub n_ref: Option<usize>,
    #[arg(long)]
    pub n_norm: Option<usize>,
    #[arg(long)]
    pub n_anom: Option<usize>,
    #[arg(long)]
    pub spread: Option<f64>,
    #[arg(long)]
    pub anomaly_offset: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub scorer: Option<ScorerArg>,
    /// Neighbour count of the knn scorer.
    #[arg(long)]
    pub knn_k: Option<usize>,
    /// Covariance regularization of the Mahalanobis scorer.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, value_enum, default_value_t = NormalizerArg::None)]
    pub normalizer: NormalizerArg,
    /// Neighbourhood size of the local-density normalizer.
    #[arg(long, default_value_t = 5)]
    pub k_norm: usize,
    #[command(flatten)]
    pub metrics: MetricArgs,
}

impl SimArgs {
    fn config(&self) -> Result<SimConfig> {
        let d = SimConfig::default();
        let kind = match (self.scorer, self.knn_k, self.epsilon) {
            (Some(ScorerArg::Mahalanobis), Some(_), _) => {
                return Err(CliError::Usage("--knn-k applies to the knn scorer".into()))
            }
            (Some(ScorerArg::Mahalanobis), None, epsilon) => ScorerKind::Mahalanobis { epsilon },
            (_, _, Some(_)) => {
                return Err(CliError::Usage(
                    "--epsilon applies to the mahalanobis scorer".into(),
                ))
            }
            (Some(ScorerArg::Knn), k, None) | (None, k, None) => match (k, d.scorer.kind) {
                (Some(k), _) => ScorerKind::NearestReference { k },
                (None, kind) => kind,
            },
        };
        let normalizer = match self.normalizer {
            NormalizerArg::None => NormalizerSpec::None,
            NormalizerArg::Zscore => NormalizerSpec::ZscoreReference,
            NormalizerArg::LocalDensity => NormalizerSpec::LocalDensity {
                k_norm: self.k_norm,
            },
        };
        let config = SimConfig {
            k: self.k.unwrap_or(d.k),
            d: self.d.unwrap_or(d.d),
            n_ref: self.n_ref.unwrap_or(d.n_ref),
            n_norm: self.n_norm.unwrap_or(d.n_norm),
            n_anom: self.n_anom.unwrap_or(d.n_anom),
            spread: self.spread.unwrap_or(d.spread),
            anomaly_offset: self.anomaly_offset.unwrap_or(d.anomaly_offset),
            seed: self.seed.unwrap_or(d.seed),
            scorer: ScorerSpec::new(kind).with_normalizer(normalizer),
            separation: d.separation,
        };
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    /// Distance between machine centers.
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// One-row scatter table.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    /// Comma-separated separations; a built-in grid when omitted.
    #[arg(long, value_delimiter = ',')]
    pub separations: Option<Vec<f64>>,
    #[arg(long, default_value_t = DEFAULT_REPEATS)]
    pub repeats: usize,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Scatter table, one row per separation and repeat.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Static scatter plot.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

fn emit(doc: &ReportDocument, out: Option<&PathBuf>, stdout: &mut dyn Write) -> Result<()> {
    let json = doc.to_json()?;
    match out {
        Some(path) => write_atomic(path, json.as_bytes()),
        None => stdout
            .write_all(json.as_bytes())
            .map_err(|e| CliError::Internal(format!("cannot write to stdout: {e}"))),
    }
}

/// Runs a parsed command. Returns the exit status for successful runs that
/// still signal failure (a table row that does not reproduce).
pub fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Evaluate(a) => {
            let source = match (a.scores, a.manifest) {
                (Some(s), None) => ScoreSource::Table(s),
                (None, Some(m)) => ScoreSource::Manifest(m),
                _ => {
                    return Err(CliError::Usage(
                        "give exactly one of --scores or --manifest".into(),
                    ))
                }
            };
            let doc = cmd_evaluate(&EvaluateOptions {
                source,
                labels: a.labels,
                eval: a.metrics.config(a.seed),
                higher_is_anomalous: a.higher_is_anomalous,
            })?;
            emit(&doc, a.out.as_ref(), stdout)?;
            Ok(0)
        }
        Command::CheckTable(a) => {
            let doc = cmd_check_table(&a.table)?;
            let ReportBody::CheckTable(body) = &doc.body else {
                return Err(CliError::Internal("unexpected report body".into()));
            };
            let pass = body.all_pass;
            let mut text = table_lines(body).join("\n");
            text.push('\n');
            if let Some(out) = &a.out {
                emit(&doc, Some(out), stdout)?;
            }
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| CliError::Internal(format!("cannot write to stdout: {e}")))?;
            Ok(if pass { 0 } else { 2 })
        }
        Command::Simulate(a) => {
            let mut config = a.sim.config()?;
            if let Some(s) = a.separation {
                config.separation = s;
            }
            let output = cmd_simulate(&config, &a.sim.metrics.config(Some(config.seed)))?;
            if let Some(path) = &a.csv {
                write_atomic(path, output.csv.as_bytes())?;
            }
            emit(&output.document, a.out.as_ref(), stdout)?;
            Ok(0)
        }
        Command::Sweep(a) => {
            let base = a.sim.config()?;
            let opts = SweepOptions {
                base,
                separations: a.separations.unwrap_or_else(default_separations),
                repeats: a.repeats,
                eval: a.sim.metrics.config(None),
            };
            let output = with_threads(a.threads, || cmd_sweep(&opts))??;
            if let Some(path) = &a.csv {
                write_atomic(path, output.csv.as_bytes())?;
            }
            if let Some(path) = &a.svg {
                write_atomic(path, output.svg.as_bytes())?;
            }
            emit(&output.document, a.out.as_ref(), stdout)?;
            Ok(0)
        }
    }
}

/// Parses `args`, runs the command and returns the process exit status.
/// Errors are written to `stderr` as a JSON object.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let err = CliError::Usage(e.to_string().trim_end().to_string());
            let _ = writeln!(stderr, "{}", err.to_json());
            return err.kind().exit_code();
        }
    };
    match execute(cli, stdout) {
        Ok(code) => code,
        Err(err) => {
            let _ = writeln!(stderr, "{}", err.to_json());
            err.kind().exit_code()
        }
    }
}
