//! The `qrfvimp` command-line tool.

mod manifest;
mod table;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::error::{Error, Result};
use crate::forest::{fit_forest, ForestConfig, ModelDocument, Subsample};
use crate::pinball::QuantileLevel;
use crate::quantile;
use crate::simlab::{run_campaign, SimConfig};
use crate::vimp::{cross_fitted_vimp, FeatureSubset, VimpOptions};

pub use manifest::{InputRecord, RunManifest};
pub use table::Table;

pub const MODEL_FILE: &str = "model.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const VIMP_FILE: &str = "vimp.json";
pub const PER_POINT_FILE: &str = "vimp_per_point.csv";
pub const SIM_RESULTS_FILE: &str = "sim_results.csv";
pub const SIM_SUMMARY_FILE: &str = "sim_summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const INTERNAL: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const IO: u8 = 3;
    pub const MALFORMED_CSV: u8 = 4;
    pub const NON_NUMERIC: u8 = 5;
    pub const SCHEMA: u8 = 6;
    pub const CONFIG: u8 = 7;
    pub const NUMERICAL: u8 = 8;
    pub const CORRUPT_MODEL: u8 = 9;
}

const EXIT_HELP: &str = "\
Exit codes:
  0  success
  1  internal error
  2  usage error (bad or missing flags)
  3  I/O error (missing input, unwritable output)
  4  malformed CSV
  5  non-numeric or non-finite CSV cell
  6  schema error (missing target or feature column, dimension mismatch)
  7  invalid configuration (flags, subset, fold sizes, simulation config)
  8  numerical failure (including simulation failure-rate abort)
  9  corrupt or incompatible model file";

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => exit::IO,
        Error::MalformedCsv(_) => exit::MALFORMED_CSV,
        Error::NonNumeric { .. } => exit::NON_NUMERIC,
        Error::Schema(_) | Error::DimensionMismatch { .. } => exit::SCHEMA,
        Error::Config(_) | Error::InvalidInput(_) | Error::Data(_) | Error::FoldLeakage(_) => {
            exit::CONFIG
        }
        Error::Numerical(_) => exit::NUMERICAL,
        Error::CorruptModel(_) => exit::CORRUPT_MODEL,
        Error::Json(_) => exit::INTERNAL,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "qrfvimp",
    version,
    about = "Honest quantile regression forests with variable-importance inference"
)]
#[command(after_help = EXIT_HELP)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "QRFVIMP_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a forest and write model.json.
    #[command(after_help = EXIT_HELP)]
    Fit {
        /// Training CSV with a header row.
        data: PathBuf,
        #[command(flatten)]
        forest: ForestArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Predict quantiles with intervals and write predictions.csv.
    #[command(after_help = EXIT_HELP)]
    Predict {
        /// Model file written by `fit`.
        model: PathBuf,
        /// Query CSV containing the model's feature columns.
        queries: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Cross-fitted importance of a feature subset; writes vimp.json.
    #[command(after_help = EXIT_HELP)]
    Vimp {
        data: PathBuf,
        /// Comma-separated 1-based feature positions; may be empty.
        #[arg(long, default_value = "", allow_hyphen_values = true)]
        subset: String,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        /// Also write per-point loss differences.
        #[arg(long)]
        per_point: bool,
        #[command(flatten)]
        forest: ForestArgs,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run a simulation campaign from a JSON config.
    #[command(after_help = EXIT_HELP)]
    Simulate {
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Response column.
    #[arg(long, default_value = "y")]
    pub target: String,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ForestArgs {
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    /// Subsampling rate: s = round(n^beta), rounded down to even.
    #[arg(long, conflicts_with = "subsample")]
    pub beta: Option<f64>,
    /// Subsample size (rounded down to even).
    #[arg(long)]
    pub subsample: Option<usize>,
    #[arg(long, default_value_t = ForestConfig::default().num_trees)]
    pub trees: usize,
    #[arg(long, default_value_t = ForestConfig::default().alpha)]
    pub alpha: f64,
    /// Minimum estimation rows per leaf.
    #[arg(long, default_value_t = ForestConfig::default().min_leaf_est)]
    pub min_leaf: usize,
    #[arg(long)]
    pub mtry: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ForestArgs {
    pub fn config(&self) -> Result<ForestConfig> {
        let subsample = match (self.beta, self.subsample) {
            (_, Some(s)) => Subsample::Size(s),
            (Some(b), None) => Subsample::Rate(b),
            (None, None) => ForestConfig::default().subsample,
        };
        Ok(ForestConfig {
            num_trees: self.trees,
            subsample,
            alpha: self.alpha,
            min_leaf_est: self.min_leaf,
            mtry: self.mtry,
            seed: self.seed,
            tau: QuantileLevel::new(self.tau).map_err(|e| Error::Config(e.to_string()))?,
        })
    }
}

/// Entry point used by the binary.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                exit::USAGE
            } else {
                exit::OK
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(report) => {
            for w in report.warnings {
                eprintln!("warning: {w}");
            }
            for a in report.artifacts {
                println!("{}", a.display());
            }
            ExitCode::from(exit::OK)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// What a successful command produced.
#[derive(Debug, Default)]
pub struct Outcome {
    pub artifacts: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

/// Runs a parsed command inside a pool of the requested size.
pub fn execute(cli: &Cli) -> Result<Outcome> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let threads = pool.current_num_threads();
    pool.install(|| dispatch(&cli.command, threads))
}

fn dispatch(command: &Command, threads: usize) -> Result<Outcome> {
    let started = Instant::now();
    let mut m = RunManifest::start(command_name(command), threads);
    let outcome = match command {
        Command::Fit {
            data,
            forest,
            common,
        } => cmd_fit(data, forest, common, &mut m)?,
        Command::Predict {
            model,
            queries,
            level,
            out,
        } => cmd_predict(model, queries, *level, out, &mut m)?,
        Command::Vimp {
            data,
            subset,
            level,
            per_point,
            forest,
            common,
        } => cmd_vimp(data, subset, *level, *per_point, forest, common, &mut m)?,
        Command::Simulate { config, out } => cmd_simulate(config, out, &mut m)?,
    };
    m.finish(started.elapsed().as_secs_f64(), &outcome);
    let path = out_dir(command).join(MANIFEST_FILE);
    write(&path, &m.to_json()?)?;
    let mut outcome = outcome;
    outcome.artifacts.push(path);
    Ok(outcome)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Fit { .. } => "fit",
        Command::Predict { .. } => "predict",
        Command::Vimp { .. } => "vimp",
        Command::Simulate { .. } => "simulate",
    }
}

fn out_dir(c: &Command) -> &Path {
    match c {
        Command::Fit { common, .. } | Command::Vimp { common, .. } => &common.out,
        Command::Predict { out, .. } | Command::Simulate { out, .. } => out,
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn cmd_fit(
    data: &Path,
    forest: &ForestArgs,
    common: &CommonArgs,
    m: &mut RunManifest,
) -> Result<Outcome> {
    let bytes = read_bytes(data)?;
    let dataset = Table::parse(&bytes)?.into_dataset(&common.target)?;
    m.add_input(data, &bytes, dataset.n(), dataset.p() + 1);
    let cfg = forest.config()?;
    let model = fit_forest(&dataset, &cfg)?;
    m.config = json!({ "target": common.target, "forest": model.config() });
    m.seeds.insert("forest".into(), cfg.seed);
    let warnings = model.warnings();
    let doc = ModelDocument::new(model, &dataset)?;
    let path = common.out.join(MODEL_FILE);
    write(&path, &doc.to_json()?)?;
    Ok(Outcome {
        artifacts: vec![path],
        warnings,
    })
}

fn cmd_predict(
    model: &Path,
    queries: &Path,
    level: f64,
    out: &Path,
    m: &mut RunManifest,
) -> Result<Outcome> {
    let model_bytes = read_bytes(model)?;
    let text =
        String::from_utf8(model_bytes.clone()).map_err(|e| Error::CorruptModel(e.to_string()))?;
    let doc = ModelDocument::from_json(&text)?;
    m.add_input(model, &model_bytes, doc.model.n_train(), doc.model.dim());
    let q_bytes = read_bytes(queries)?;
    let table = Table::parse(&q_bytes)?;
    m.add_input(queries, &q_bytes, table.rows, table.headers.len());
    crate::numeric::two_sided_z(level).map_err(|e| Error::Config(e.to_string()))?;
    let rows = table.queries(&doc.feature_names)?;
    let preds = rows
        .iter()
        .map(|x| quantile::predict_with_interval_from(&doc.model, &doc.responses, x, level))
        .collect::<Result<Vec<_>>>()?;
    m.config = json!({ "level": level, "forest": doc.model.config() });
    m.seeds.insert("forest".into(), doc.model.config().seed);
    let path = out.join(PREDICTIONS_FILE);
    write(&path, &table::predictions_csv(&preds))?;
    let floored = preds.iter().filter(|p| p.density_floored).count();
    let warnings = (floored > 0)
        .then(|| {
            format!(
                "density floor engaged for {floored} of {} queries",
                preds.len()
            )
        })
        .into_iter()
        .collect();
    Ok(Outcome {
        artifacts: vec![path],
        warnings,
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_vimp(
    data: &Path,
    subset: &str,
    level: f64,
    per_point: bool,
    forest: &ForestArgs,
    common: &CommonArgs,
    m: &mut RunManifest,
) -> Result<Outcome> {
    let bytes = read_bytes(data)?;
    let dataset = Table::parse(&bytes)?.into_dataset(&common.target)?;
    m.add_input(data, &bytes, dataset.n(), dataset.p() + 1);
    let subset =
        FeatureSubset::parse_one_based(subset).map_err(|e| Error::Config(e.to_string()))?;
    subset
        .validate(dataset.p())
        .map_err(|e| Error::Config(e.to_string()))?;
    let cfg = forest.config()?;
    let options = VimpOptions {
        level,
        keep_per_point: true,
        ..VimpOptions::seeded_from(cfg.seed)
    };
    let mut outcome = cross_fitted_vimp(&dataset, &subset, &cfg, &options)?;
    let resolved = cfg.resolve(outcome.report.n_train, dataset.p())?;
    m.config = json!({
        "target": common.target,
        "subset": subset.one_based(),
        "level": level,
        "forest": resolved,
    });
    m.seeds.insert("forest".into(), cfg.seed);
    m.seeds.insert("split".into(), options.split_seed);
    let mut artifacts = Vec::new();
    let losses = outcome.report.per_point_losses.take();
    if per_point {
        let path = common.out.join(PER_POINT_FILE);
        write(
            &path,
            &table::per_point_csv(losses.as_deref().unwrap_or_default()),
        )?;
        artifacts.push(path);
    }
    let path = common.out.join(VIMP_FILE);
    write(&path, &serde_json::to_string_pretty(&outcome.report)?)?;
    artifacts.insert(0, path);
    Ok(Outcome {
        artifacts,
        warnings: outcome.report.warnings.clone(),
    })
}

fn cmd_simulate(config: &Path, out: &Path, m: &mut RunManifest) -> Result<Outcome> {
    let bytes = read_bytes(config)?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| Error::Config(e.to_string()))?;
    let cfg = SimConfig::from_json(&text)?;
    m.add_input(config, &bytes, 0, 0);
    m.config = serde_json::to_value(&cfg)?;
    m.seeds.insert("master".into(), cfg.seed);
    let result = run_campaign(&cfg)?;
    let csv_path = out.join(SIM_RESULTS_FILE);
    write(&csv_path, &result.csv_string())?;
    let summary_path = out.join(SIM_SUMMARY_FILE);
    write(&summary_path, &result.summary_json()?)?;
    let warnings = (result.summary.replications_failed > 0)
        .then(|| format!("{} replications failed", result.summary.replications_failed))
        .into_iter()
        .collect();
    Ok(Outcome {
        artifacts: vec![csv_path, summary_path],
        warnings,
    })
}
