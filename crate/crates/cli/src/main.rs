//! `etel`: estimate, test, dump implied probabilities, and run Monte Carlo
//! studies from the command line.
//!
//! Exit codes: 0 success, 1 I/O or parse error, 2 no convergence,
//! 3 too many discarded replications.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use etel::inference::{infer, lr_statistic, overid_statistic};
use etel::montecarlo::{output, run_study_with, weights_dump, Execution, StudyConfig, StudyFailure};
use etel::{estimate, model_from_id, Dataset, Design, Error, EstimateOptions, Family, MomentModel};

#[derive(Parser)]
#[command(name = "etel", version, about = "Exponentially tilted empirical likelihood and friends")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate θ and report classical/robust inference as JSON.
    Estimate(EstimateArgs),
    /// Run a Monte Carlo study over a built-in design.
    Mc(McArgs),
    /// Write per-observation implied probabilities n·w as CSV.
    Weights(WeightsArgs),
    /// Likelihood-ratio test of θ = θ₀ plus the overidentification test.
    Test(TestArgs),
}

#[derive(Args)]
struct EstimateArgs {
    /// Model id: hall_horowitz:K, mean_known_variance:SIGMA or location.
    #[arg(long)]
    model: String,
    /// el, et, cu, etel or ecr:GAMMA.
    #[arg(long)]
    family: String,
    /// CSV file, one observation per row.
    #[arg(long)]
    data: PathBuf,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct McArgs {
    /// hall_horowitz:K or mean_known_variance:SIGMA.
    #[arg(long)]
    design: String,
    #[arg(long)]
    n: usize,
    /// Number of valid replications.
    #[arg(long)]
    reps: usize,
    #[arg(long)]
    seed: u64,
    /// Comma-separated families.
    #[arg(long, default_value = "el,et,etel")]
    families: String,
    /// Directory for summary.json, replications.csv and ecdf.csv; the
    /// summary goes to standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cap on drawn samples (default 3 × reps).
    #[arg(long)]
    max_attempts: Option<usize>,
    /// Worker threads; output does not depend on this.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct WeightsArgs {
    #[arg(long)]
    model: String,
    #[arg(long)]
    family: String,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated θ; the family's estimate when absent.
    #[arg(long)]
    theta: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long)]
    model: String,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated null value θ₀.
    #[arg(long, allow_hyphen_values = true)]
    theta0: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn io(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NoConvexHull
            | Error::ConvexHullFailure
            | Error::DomainFailure
            | Error::MaxIter
            | Error::SingularHessian(_) => 2,
            Error::TooManyDiscards { .. } => 3,
            _ => 1,
        };
        Self { code, message: e.to_string() }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Estimate(a) => cmd_estimate(&a),
        Command::Mc(a) => cmd_mc(&a),
        Command::Weights(a) => cmd_weights(&a),
        Command::Test(a) => cmd_test(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("etel: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_data(path: &Path) -> Result<Dataset, Failure> {
    if !path.exists() {
        return Err(Failure::io(format!("{}: no such file", path.display())));
    }
    Dataset::from_csv_path(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn parse_family(s: &str) -> Result<Family, Failure> {
    s.parse().map_err(|e: Error| Failure::io(e.to_string()))
}

fn parse_model(s: &str) -> Result<Box<dyn MomentModel>, Failure> {
    model_from_id(s).map_err(|e| Failure::io(e.to_string()))
}

fn parse_vector(s: &str, dim: usize, what: &str) -> Result<Vec<f64>, Failure> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::io(format!("{what}: expected comma-separated numbers, got {s:?}")))?;
    if v.len() != dim {
        return Err(Failure::io(format!("{what}: expected {dim} values, got {}", v.len())));
    }
    Ok(v)
}

fn write_output(out: Option<&Path>, text: &str) -> CmdResult {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::io(format!("{}: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::io(format!("standard output: {e}"))),
    }
}

fn to_json(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// Converged estimate or the matching failure.
fn converged_estimate(
    family: Family,
    model: &dyn MomentModel,
    data: &Dataset,
) -> Result<etel::EstimateResult, Failure> {
    let est = estimate(family, model, data, &EstimateOptions::default())?;
    if !est.is_converged() {
        return Err(Error::MaxIter.into());
    }
    Ok(est)
}

fn cmd_estimate(a: &EstimateArgs) -> CmdResult {
    let model = parse_model(&a.model)?;
    let family = parse_family(&a.family)?;
    let data = load_data(&a.data)?;
    let est = converged_estimate(family, model.as_ref(), &data)?;
    let report = infer(model.as_ref(), &data, &est)?;
    let value = serde_json::to_value(&report).map_err(|e| Failure::io(e.to_string()))?;
    write_output(a.out.as_deref(), &to_json(&value))
}

fn cmd_mc(a: &McArgs) -> CmdResult {
    let design: Design = a.design.parse().map_err(|e: Error| Failure::io(e.to_string()))?;
    let families = a.families.split(',').map(parse_family).collect::<Result<Vec<_>, _>>()?;
    let config = StudyConfig { max_attempts: a.max_attempts, ..StudyConfig::new(design, a.n, a.reps, families, a.seed) };
    let exec = match a.workers {
        Some(1) => Execution::Sequential,
        workers => Execution::Parallel { workers },
    };
    let (summary, failure) = match run_study_with(&config, exec) {
        Ok(s) => (s, None),
        Err(StudyFailure { error, partial: Some(p) }) => (*p, Some(error)),
        Err(StudyFailure { error, partial: None }) => return Err(Failure::io(error.to_string())),
    };
    match &a.out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Failure::io(format!("{}: {e}", dir.display())))?;
            write_output(Some(&dir.join("summary.json")), &output::summary_json(&summary))?;
            write_output(Some(&dir.join("replications.csv")), &output::replications_csv(&summary))?;
            write_output(Some(&dir.join("ecdf.csv")), &output::ecdf_csv(&summary))?;
        }
        None => write_output(None, &output::summary_json(&summary))?,
    }
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn cmd_weights(a: &WeightsArgs) -> CmdResult {
    let model = parse_model(&a.model)?;
    let family = parse_family(&a.family)?;
    let data = load_data(&a.data)?;
    let theta = match &a.theta {
        Some(t) => parse_vector(t, model.n_theta(), "--theta")?,
        None => converged_estimate(family, model.as_ref(), &data)?.theta_hat,
    };
    let rows = weights_dump(family, model.as_ref(), &data, &theta)?;
    write_output(a.out.as_deref(), &output::weights_csv(&rows))
}

fn cmd_test(a: &TestArgs) -> CmdResult {
    let model = parse_model(&a.model)?;
    let data = load_data(&a.data)?;
    let theta0 = parse_vector(&a.theta0, model.n_theta(), "--theta0")?;
    let est = converged_estimate(Family::Etel, model.as_ref(), &data)?;
    let lr = lr_statistic(model.as_ref(), &data, &theta0, &est.theta_hat)?;
    let overid = match overid_statistic(model.as_ref(), &data, &est.theta_hat) {
        Ok(t) => json!({ "stat": t.stat, "p_value": t.p_value, "df": t.df }),
        Err(Error::DegenerateDf) => {
            eprintln!("etel: note: {}", Error::DegenerateDf);
            json!({ "stat": 0.0, "p_value": 1.0, "df": 0 })
        }
        Err(e) => return Err(e.into()),
    };
    let report = json!({
        "theta0": theta0,
        "theta_hat": est.theta_hat,
        "lr": { "stat": lr.stat, "p_value": lr.p_value, "df": lr.df },
        "overid": overid,
    });
    write_output(a.out.as_deref(), &to_json(&report))
}
