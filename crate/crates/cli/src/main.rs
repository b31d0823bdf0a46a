//! `ensdiv` command-line harness.

mod config;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use ensdiv::corr_metrics::{
    is_valid_correlation_matrix, summarize, CorrelationMatrix, PSD_TOLERANCE,
};
use ensdiv::datasets::{kfold_split, train_test_indices};
use ensdiv::decorate_baseline::{evaluate_decorate_cv, MlpFactory};
use ensdiv::diverse_train::{
    evaluate_cv, write_trace_csv, Combiner, ExperimentResult, TrainingConfig,
};
use ensdiv::theory_bounds::{
    boundary_curve, is_feasible, write_boundary_csv, FEASIBILITY_TOLERANCE,
};
use ensdiv::tree_ensemble::{gap_accuracy_spearman, rf_study, write_study_csv, StudyRow};
use ensdiv::verify::{verify_theorems, VerificationReport};
use ensdiv::vote_theory::{vote_curves, write_vote_curves_csv};
use serde::Serialize;

use config::{read_config, ExperimentConfig, Overrides, RfStudyConfig};

const OUT_ENV: &str = "ENSDIV_OUT_DIR";
const DEFAULT_OUT: &str = "results";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config files or input data; exit code 2.
    Config(String),
    /// A verification suite found a violation; exit code 1.
    Verification(String),
    /// Anything else that stopped a run; exit code 1.
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Verification(_) | CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<ensdiv::Error> for CliError {
    fn from(e: ensdiv::Error) -> Self {
        match e {
            ensdiv::Error::Config(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "ensdiv",
    version,
    about = "Correlation-based ensemble diversity experiments"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// JSON config file (train, decorate, rf-study).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; defaults to $ENSDIV_OUT_DIR, then ./results.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Comma-separated lambda values, one training run each.
    #[arg(long, global = true, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    /// Prediction combiner.
    #[arg(long, global = true, value_parser = ["avg", "vote"])]
    combiner: Option<String>,
    /// Skip feature standardization.
    #[arg(long, global = true)]
    no_scaling: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Random checks of the correlation bounds and the accuracy formula.
    VerifyTheorems {
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Also check this correlation matrix (JSON array of rows).
        #[arg(long)]
        matrix: Option<PathBuf>,
    },
    /// Upper and lower truth-learner bounds over the feasible r_ll range.
    Boundary {
        #[arg(long, default_value_t = 5)]
        n: usize,
        #[arg(long, default_value_t = 101)]
        grid: usize,
    },
    /// Balanced majority-vote accuracy against r_tl at fixed r_ll levels.
    VoteCurves {
        #[arg(long, default_value_t = 5)]
        n: usize,
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            default_value = "-0.2,0,0.2,0.4,0.6,0.8"
        )]
        levels: Vec<f64>,
        #[arg(long, default_value_t = 101)]
        grid: usize,
    },
    /// Cross-validated correlation-loss ensembles, one run per lambda.
    Train,
    /// Cross-validated DECORATE baseline on the same folds.
    Decorate,
    /// Random-forest variants placed in the correlation plane.
    RfStudy,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn out_dir(flag: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = flag
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(f, value).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value, CliError> {
    serde_json::to_value(v).map_err(|e| CliError::Runtime(e.to_string()))
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[derive(Serialize)]
struct MatrixCheck {
    path: PathBuf,
    valid: bool,
    min_eigenvalue: f64,
    /// Whether the averaged correlations respect both bounds.
    feasible_summary: Option<bool>,
}

#[derive(Serialize)]
struct VerifyOutput {
    #[serde(flatten)]
    report: VerificationReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    matrix_check: Option<MatrixCheck>,
    created_unix: u64,
}

fn check_matrix(path: &Path) -> Result<MatrixCheck, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("--matrix {}: {e}", path.display())))?;
    let m: CorrelationMatrix = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("--matrix {}: {e}", path.display())))?;
    let valid = is_valid_correlation_matrix(&m, PSD_TOLERANCE)
        .map_err(|e| CliError::Config(format!("--matrix {}: {e}", path.display())))?;
    let feasible_summary = summarize(&m)
        .ok()
        .map(|s| is_feasible(&s, FEASIBILITY_TOLERANCE));
    Ok(MatrixCheck {
        path: path.to_path_buf(),
        valid,
        min_eigenvalue: m.min_eigenvalue(),
        feasible_summary,
    })
}

fn cmd_verify_theorems(
    g: &GlobalArgs,
    samples: usize,
    matrix: &Option<PathBuf>,
) -> Result<(), CliError> {
    if samples == 0 {
        return Err(CliError::Config("--samples: must be >= 1".into()));
    }
    let matrix_check = matrix.as_deref().map(check_matrix).transpose()?;
    let report = verify_theorems(samples, g.seed.unwrap_or(7))?;
    println!(
        "bounds: {} matrices, {} violations, min slack {:e}",
        report.bound_suite.instances, report.bound_suite.violations, report.bound_suite.min_slack
    );
    println!(
        "cauchy-schwarz: {} instances, {} violations, min slack {:e}",
        report.cauchy_schwarz_suite.instances,
        report.cauchy_schwarz_suite.violations,
        report.cauchy_schwarz_suite.min_slack
    );
    println!(
        "accuracy formula: {} pairs, {} violations, max error {:e}, corr(p, r) {:.4}",
        report.accuracy_suite.pairs,
        report.accuracy_suite.violations,
        report.accuracy_suite.max_abs_error,
        report.accuracy_suite.p_r_correlation
    );
    if let Some(c) = &matrix_check {
        println!(
            "matrix {}: {} (min eigenvalue {:.6})",
            c.path.display(),
            if c.valid { "valid" } else { "invalid" },
            c.min_eigenvalue
        );
    }
    let passed = report.passed && matrix_check.as_ref().is_none_or(|c| c.valid);
    let dir = out_dir(&g.out)?;
    write_json(
        &dir.join("verify_theorems.json"),
        &VerifyOutput {
            report,
            matrix_check,
            created_unix: now_unix(),
        },
    )?;
    if passed {
        Ok(())
    } else {
        Err(CliError::Verification("see verify_theorems.json".into()))
    }
}

fn cmd_boundary(g: &GlobalArgs, n: usize, grid: usize) -> Result<(), CliError> {
    let points = boundary_curve(n, grid).map_err(|e| CliError::Config(e.to_string()))?;
    let path = out_dir(&g.out)?.join(format!("boundary_n{n}.csv"));
    write_boundary_csv(&points, create(&path)?)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_vote_curves(g: &GlobalArgs, n: usize, levels: &[f64], grid: usize) -> Result<(), CliError> {
    let points = vote_curves(n, levels, grid).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(p) = points.iter().find(|p| !p.accuracy_raw.is_finite()) {
        return Err(CliError::Runtime(format!("non-finite accuracy at {p:?}")));
    }
    let path = out_dir(&g.out)?.join(format!("vote_curves_n{n}.csv"));
    write_vote_curves_csv(&points, create(&path)?)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn overrides(g: &GlobalArgs) -> Result<Overrides, CliError> {
    Ok(Overrides {
        seed: g.seed,
        lambda_grid: g.lambda_grid.clone(),
        combiner: g
            .combiner
            .as_deref()
            .map(str::parse::<Combiner>)
            .transpose()?,
        no_scaling: g.no_scaling,
    })
}

fn experiment_config(g: &GlobalArgs) -> Result<ExperimentConfig, CliError> {
    let path = g
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let (c, base) = read_config::<ExperimentConfig>(path)?;
    c.resolve(&base, &overrides(g)?)
}

fn save_result(dir: &Path, stem: &str, mut result: ExperimentResult) -> Result<(), CliError> {
    result.created_unix = now_unix();
    println!(
        "{stem}: mean error {:.4} over {} folds",
        result.mean_error, result.folds
    );
    write_json(&dir.join(format!("{stem}.json")), &result)?;
    let trace = dir.join(format!("{stem}_trace.csv"));
    write_trace_csv(&result, create(&trace)?)?;
    println!("wrote {}", trace.display());
    Ok(())
}

fn cmd_train(g: &GlobalArgs) -> Result<(), CliError> {
    let config = experiment_config(g)?;
    let dataset = config.dataset.load()?;
    let dir = out_dir(&g.out)?;
    for lambda in config.lambdas() {
        let training = TrainingConfig {
            lambda,
            ..config.training.clone()
        };
        training
            .validate()
            .map_err(|e| CliError::Config(format!("lambda_grid: {e}")))?;
        let mut result = evaluate_cv(&training, &dataset, config.folds, config.seed)?;
        let resolved = ExperimentConfig {
            lambda_grid: None,
            training,
            ..config.clone()
        };
        result.config = to_value(&resolved)?;
        save_result(
            &dir,
            &format!("train_{}_lambda{lambda}", slug(&dataset.name)),
            result,
        )?;
    }
    Ok(())
}

fn cmd_decorate(g: &GlobalArgs) -> Result<(), CliError> {
    let config = experiment_config(g)?;
    let dataset = config.dataset.load()?;
    let factory = config
        .base_learner
        .clone()
        .unwrap_or_else(|| MlpFactory::matching(&config.training));
    let mut result = evaluate_decorate_cv(
        &config.decorate,
        &factory,
        &dataset,
        config.folds,
        config.seed,
        config.training.stratify,
        config.training.standardize,
    )?;
    result.config = to_value(&config)?;
    save_result(
        &out_dir(&g.out)?,
        &format!("decorate_{}", slug(&dataset.name)),
        result,
    )
}

#[derive(Serialize)]
struct RfStudyOutput {
    config: RfStudyConfig,
    dataset: String,
    rows: Vec<StudyRow>,
    all_feasible: bool,
    gap_accuracy_spearman: f64,
    created_unix: u64,
}

fn cmd_rf_study(g: &GlobalArgs) -> Result<(), CliError> {
    let (config, base) = match g.config.as_deref() {
        Some(p) => read_config::<RfStudyConfig>(p)?,
        None => (RfStudyConfig::default(), PathBuf::new()),
    };
    let config = config.resolve(&base, &overrides(g)?)?;
    let dataset = config.dataset.load()?;
    let folds = kfold_split(dataset.n_samples(), config.holdout_folds, config.seed, None)
        .map_err(|e| CliError::Config(format!("holdout_folds: {e}")))?;
    let (train_idx, eval_idx) = train_test_indices(&folds, 0);
    let (train, eval) = (dataset.subset(&train_idx), dataset.subset(&eval_idx));
    let rows = rf_study(
        &train.x,
        &train.labels,
        &eval.x,
        &eval.labels,
        dataset.n_classes,
        &config.feature_grid,
        &config.depth_grid,
        config.seed,
    )
    .map_err(|e| match e {
        ensdiv::Error::TooManyFeatures { .. } => CliError::Config(format!("feature_grid: {e}")),
        other => other.into(),
    })?;
    let all_feasible = rows
        .iter()
        .all(|r| is_feasible(&r.summary(), FEASIBILITY_TOLERANCE));
    let rho = gap_accuracy_spearman(&rows)?;
    for r in &rows {
        println!(
            "{:<14} r_ll {:.4}  r_tl {:.4}  accuracy {:.4}  gap {:.4}",
            r.label, r.r_ll_ave, r.r_tl_ave, r.majority_accuracy, r.optimality_gap
        );
    }
    println!("spearman(gap, accuracy) = {rho:.4}");
    let dir = out_dir(&g.out)?;
    let csv_path = dir.join("rf_study.csv");
    write_study_csv(&rows, create(&csv_path)?)?;
    println!("wrote {}", csv_path.display());
    write_json(
        &dir.join("rf_study.json"),
        &RfStudyOutput {
            config,
            dataset: dataset.name,
            rows,
            all_feasible,
            gap_accuracy_spearman: rho,
            created_unix: now_unix(),
        },
    )
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.global.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs: must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let g = &cli.global;
    match &cli.command {
        Command::VerifyTheorems { samples, matrix } => cmd_verify_theorems(g, *samples, matrix),
        Command::Boundary { n, grid } => cmd_boundary(g, *n, *grid),
        Command::VoteCurves { n, levels, grid } => cmd_vote_curves(g, *n, levels, *grid),
        Command::Train => cmd_train(g),
        Command::Decorate => cmd_decorate(g),
        Command::RfStudy => cmd_rf_study(g),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ensdiv: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
