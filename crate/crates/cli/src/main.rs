use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use itrboost::bench::{self, BenchConfig};
use itrboost::boosting::HyperParams;
use itrboost::data::{load_covariates_csv, load_csv, read_csv_column, write_csv, ExtraColumn, PropensitySpec};
use itrboost::eval::{estimate_value, misclassification, welch_test, EvalReport};
use itrboost::itr::{
    fit, select_common_effect_penalty, FitOptions, ItrPolicy, LassoConfig, Method, MuEstimator,
};
use itrboost::sim::{generate, ScenarioSpec};
use itrboost::tune::{cross_validate, fit_candidate, Grid, TuneResult};

/// Fractions of `λ_max` searched when a lasso penalty is chosen by CV.
const LASSO_FRACTIONS: [f64; 5] = [0.001, 0.01, 0.03, 0.1, 0.3];
/// D-learning uses the lasso above this many covariates unless told otherwise.
const D_LASSO_ABOVE_P: usize = 10;

#[derive(Parser)]
#[command(name = "itrboost", version, about = "Tree boosting for individualized treatment rules")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic trial and write it as CSV with an `oracle` column.
    Simulate(SimulateArgs),
    /// Fit a treatment rule and save it as JSON.
    Train(TrainArgs),
    /// Write one decision per row of a covariate file.
    Predict(PredictArgs),
    /// Estimate the value of a saved rule on a trial.
    Evaluate(EvaluateArgs),
    /// Cross-validate a method over a hyperparameter grid.
    Cv(CvArgs),
    /// Run a simulation study from a JSON config.
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: u8,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PropensityArgs {
    /// Constant propensity of the received treatment.
    #[arg(long, default_value_t = 0.5, conflicts_with = "propensity_col")]
    propensity: f64,
    /// Column holding per-row propensities.
    #[arg(long)]
    propensity_col: Option<String>,
}

impl PropensityArgs {
    fn spec(&self) -> PropensitySpec {
        match &self.propensity_col {
            Some(col) => PropensitySpec::Column(col.clone()),
            None => PropensitySpec::Constant(self.propensity),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MuKind {
    Linear,
    Lasso,
    Null,
}

#[derive(Args)]
struct FitArgs {
    /// Common-effect estimator for direct-boosting-2.
    #[arg(long, value_enum, default_value = "linear")]
    mu: MuKind,
    /// Absolute lasso penalty for `--mu lasso`; chosen by CV when omitted.
    #[arg(long)]
    mu_penalty: Option<f64>,
    /// Absolute lasso penalty for d-linear; chosen by CV when omitted and
    /// p > 10.
    #[arg(long, conflicts_with = "no_lasso")]
    d_penalty: Option<f64>,
    /// Fit d-linear without a penalty regardless of p.
    #[arg(long)]
    no_lasso: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_parser = parse_method)]
    method: Method,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    propensity: PropensityArgs,
    /// Fixed hyperparameters, e.g. `rounds=100,eta=0.1,depth=3`.
    #[arg(long, value_parser = parse_params, conflicts_with = "cv")]
    params: Option<HyperParams>,
    /// Choose hyperparameters by k-fold cross validation.
    #[arg(long)]
    cv: bool,
    /// JSON grid for `--cv`; the default grid otherwise.
    #[arg(long, requires = "cv")]
    grid: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long)]
    model_out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    propensity: PropensityArgs,
    /// Column holding the optimal decisions, for misclassification.
    #[arg(long)]
    oracle_col: Option<String>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct CvArgs {
    #[arg(long, value_parser = parse_method)]
    method: Method,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    propensity: PropensityArgs,
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    fit: FitArgs,
    /// Write the per-candidate table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "bench-out")]
    out: PathBuf,
    /// Use 100 replications per cell.
    #[arg(long, conflicts_with = "replications")]
    full: bool,
    #[arg(long)]
    replications: Option<usize>,
    /// Tune every replication instead of only the first.
    #[arg(long)]
    tune_every_rep: bool,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: itrboost::Error| e.to_string())
}

fn parse_params(s: &str) -> std::result::Result<HyperParams, String> {
    let mut p = HyperParams::default();
    for part in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| format!("expected key=value, got {part:?}"))?;
        let num = |v: &str| v.parse::<f64>().map_err(|e| format!("{key}: {e}"));
        let int = |v: &str| v.parse::<usize>().map_err(|e| format!("{key}: {e}"));
        match key.trim() {
            "rounds" | "k" => p.rounds = int(value)?,
            "eta" => p.eta = num(value)?,
            "depth" | "max_depth" => p.max_depth = int(value)?,
            "gamma" => p.gamma = num(value)?,
            "lambda" => p.lambda = num(value)?,
            "min_child_hessian" => p.min_child_hessian = num(value)?,
            other => return Err(format!("unknown hyperparameter {other:?}")),
        }
    }
    p.validate().map_err(|e| e.to_string())?;
    Ok(p)
}

fn read_grid(path: Option<&Path>) -> Result<Grid> {
    match path {
        None => Ok(Grid::default()),
        Some(p) => {
            let s = std::fs::read_to_string(p).with_context(|| format!("reading grid {}", p.display()))?;
            Ok(Grid::from_json(&s)?)
        }
    }
}

/// Resolves the method options, running the penalty searches that the
/// defaults call for.
fn fit_options(
    method: Method,
    args: &FitArgs,
    data: &itrboost::data::Dataset,
    k: usize,
    seed: u64,
) -> Result<FitOptions> {
    let mu = match args.mu {
        MuKind::Linear => MuEstimator::Linear,
        MuKind::Null => MuEstimator::Null,
        MuKind::Lasso if method != Method::DirectBoosting2 => MuEstimator::Linear,
        MuKind::Lasso => {
            let cfg = match args.mu_penalty {
                Some(pen) => LassoConfig::new(pen),
                None => {
                    let cfg = select_common_effect_penalty(data, &LASSO_FRACTIONS, k, seed)?;
                    eprintln!("common-effect lasso penalty: {}", cfg.penalty);
                    cfg
                }
            };
            MuEstimator::Lasso(cfg)
        }
    };
    Ok(FitOptions {
        mu,
        d_lasso: args.d_penalty,
    })
}

fn wants_d_lasso_search(method: Method, args: &FitArgs, p: usize) -> bool {
    method == Method::DLearning && args.d_penalty.is_none() && !args.no_lasso && p > D_LASSO_ABOVE_P
}

fn print_tuned(result: &TuneResult) -> Result<()> {
    let best = result.best_score();
    println!(
        "{}",
        serde_json::json!({
            "best": result.best,
            "mean_value": best.mean_value,
            "std_error": best.std_error,
        })
    );
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let trial = generate(&ScenarioSpec {
        scenario: a.scenario,
        n: a.n,
        p: a.p,
        seed: a.seed,
    })?;
    let oracle: Vec<f64> = trial.oracle_decisions.iter().map(|&d| f64::from(d)).collect();
    write_csv(
        &a.out,
        &trial.data,
        false,
        &[ExtraColumn {
            name: "oracle",
            values: &oracle,
        }],
    )?;
    let plus = trial.oracle_decisions.iter().filter(|&&d| d == 1).count();
    println!(
        "n={} p={} oracle_plus_fraction={}",
        a.n,
        a.p,
        plus as f64 / a.n as f64
    );
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let data = load_csv(&a.data, &a.propensity.spec())?;
    let opts = fit_options(a.method, &a.fit, &data, a.k, a.seed)?;
    let policy = if a.cv || wants_d_lasso_search(a.method, &a.fit, data.p()) {
        let mut grid = read_grid(a.grid.as_deref())?;
        if wants_d_lasso_search(a.method, &a.fit, data.p()) && grid.lasso_penalties.is_none() {
            grid.lasso_penalties = Some(LASSO_FRACTIONS.to_vec());
        }
        let result = cross_validate(a.method, &data, &grid, a.k, a.seed, &opts)?;
        print_tuned(&result)?;
        fit_candidate(a.method, &data, &result.best, &opts)?
    } else {
        let params = a.params.unwrap_or_default();
        if a.method.is_boosting() {
            println!("{}", serde_json::to_string(&params)?);
        }
        fit(a.method, &data, &params, &opts)?
    };
    policy.save(&a.model_out)?;
    info!("wrote {}", a.model_out.display());
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let policy = ItrPolicy::load(&a.model)?;
    let x = load_covariates_csv(&a.data)?;
    let decisions = policy.decide_all(&x)?;
    let mut out = String::from("decision\n");
    for d in decisions {
        out.push_str(&format!("{d}\n"));
    }
    std::fs::write(&a.out, out).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let policy = ItrPolicy::load(&a.model)?;
    let data = load_csv(&a.data, &a.propensity.spec())?;
    let decisions = policy.decide_all(data.covariates())?;
    let value = estimate_value(&decisions, &data)?;
    let misclassification = match &a.oracle_col {
        None => None,
        Some(col) => {
            let oracle: Vec<i8> = read_csv_column(&a.data, col)?
                .into_iter()
                .map(|v| if v < 0.0 { -1 } else { 1 })
                .collect();
            Some(misclassification(&decisions, &oracle)?)
        }
    };
    let mut matched = Vec::new();
    let mut unmatched = Vec::new();
    for (i, &y) in data.outcomes().iter().enumerate() {
        if decisions[i] == data.treatments()[i] {
            matched.push(y);
        } else {
            unmatched.push(y);
        }
    }
    let welch = match welch_test(&matched, &unmatched) {
        Ok(w) => Some(w),
        Err(e) => {
            warn!("Welch test skipped: {e}");
            None
        }
    };
    let report = EvalReport {
        value,
        misclassification,
        welch,
    };
    let json = serde_json::to_string_pretty(&report)?;
    match &a.report {
        Some(path) => std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))?,
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_cv(a: &CvArgs) -> Result<()> {
    let data = load_csv(&a.data, &a.propensity.spec())?;
    let opts = fit_options(a.method, &a.fit, &data, a.k, a.seed)?;
    let mut grid = read_grid(a.grid.as_deref())?;
    if wants_d_lasso_search(a.method, &a.fit, data.p()) && grid.lasso_penalties.is_none() {
        grid.lasso_penalties = Some(LASSO_FRACTIONS.to_vec());
    }
    let result = cross_validate(a.method, &data, &grid, a.k, a.seed, &opts)?;
    if let Some(out) = &a.out {
        result.write_csv(out)?;
    }
    print_tuned(&result)
}

fn cmd_benchmark(a: &BenchmarkArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.config)
        .with_context(|| format!("reading {}", a.config.display()))?;
    let mut config: BenchConfig = serde_json::from_str(&text).context("parsing benchmark config")?;
    if a.full {
        warn!("running 100 replications per cell; this takes a long time");
        config.replications = 100;
    }
    if let Some(r) = a.replications {
        config.replications = r;
    }
    if a.tune_every_rep {
        config.tune_every_rep = true;
    }
    let summary = bench::run(&config)?;
    summary.write(&a.out, &config)?;
    let failed: usize = summary.rows.iter().map(|r| r.failed).sum();
    if failed > 0 {
        warn!("{failed} method fits failed; see the cell files");
    }
    println!("wrote {} summary rows to {}", summary.rows.len(), a.out.join("summary.csv").display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match bench::threads_from_env() {
        Ok(Some(n)) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                warn!("could not size the worker pool: {e}");
            }
        }
        Ok(None) => {}
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Benchmark(a) => cmd_benchmark(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
