//! End-to-end simulation study.
//!
//! For every scenario, size and replication a training trial and an
//! independent test trial are drawn from seeds derived from the master
//! seed. Every method is fitted on the training trial and scored on the test
//! trial by misclassification against the scenario oracle and by estimated
//! value. Tuning runs once per (scenario, size, method) on replication 0
//! unless `tune_every_rep` is set.
//!
//! All work is keyed by index and reduced in a fixed order, so the results
//! do not depend on the number of worker threads.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boosting::HyperParams;
use crate::eval::{estimate_value, misclassification};
use crate::itr::{FitOptions, Method};
use crate::sim::{generate, min_dimension, ScenarioSpec, SimulatedTrial};
use crate::tune::{cross_validate, fit_candidate, Candidate, Grid};
use crate::{Error, Result};

/// Environment variable capping the worker pool size.
pub const THREADS_ENV: &str = "ITRBOOST_THREADS";

const MAX_SIZES: usize = 1 << 12;
const FULL_REPLICATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Size {
    pub n: usize,
    pub p: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Tuning {
    Grid(Grid),
    Fixed(HyperParams),
}

impl Default for Tuning {
    fn default() -> Self {
        Tuning::Grid(Grid::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub scenarios: Vec<u8>,
    pub sizes: Vec<Size>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_test_n")]
    pub test_n: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub tuning: Tuning,
    #[serde(default = "default_cv_folds")]
    pub cv_folds: usize,
    #[serde(default)]
    pub tune_every_rep: bool,
    /// D-learning switches to the lasso, tuned over these fractions of
    /// `λ_max`, when `p` exceeds `lasso_above_p`.
    #[serde(default = "default_lasso_above_p")]
    pub lasso_above_p: usize,
    #[serde(default = "default_lasso_fractions")]
    pub lasso_fractions: Vec<f64>,
}

fn default_replications() -> usize {
    20
}

fn default_test_n() -> usize {
    3000
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_cv_folds() -> usize {
    10
}

fn default_lasso_above_p() -> usize {
    10
}

fn default_lasso_fractions() -> Vec<f64> {
    vec![0.001, 0.01, 0.03, 0.1, 0.3]
}

impl BenchConfig {
    /// Default protocol for the given scenarios and sizes.
    pub fn new(scenarios: Vec<u8>, sizes: Vec<Size>) -> Self {
        Self {
            scenarios,
            sizes,
            replications: default_replications(),
            test_n: default_test_n(),
            methods: default_methods(),
            master_seed: 0,
            tuning: Tuning::default(),
            cv_folds: default_cv_folds(),
            tune_every_rep: false,
            lasso_above_p: default_lasso_above_p(),
            lasso_fractions: default_lasso_fractions(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.scenarios.is_empty() || self.sizes.is_empty() || self.methods.is_empty() {
            return bad("scenarios, sizes and methods must be nonempty".into());
        }
        if self.replications < 1 || self.test_n < 1 {
            return bad("replications and test_n must be >= 1".into());
        }
        if self.replications as u64 > u64::from(u32::MAX) {
            return bad("at most 2^32 - 1 replications".into());
        }
        if self.sizes.len() > MAX_SIZES {
            return bad(format!("at most {MAX_SIZES} sizes"));
        }
        let mut seen = HashSet::new();
        for s in &self.sizes {
            if !seen.insert(*s) {
                return bad(format!("duplicate size n={} p={}", s.n, s.p));
            }
        }
        let mut seen = HashSet::new();
        for &id in &self.scenarios {
            if !seen.insert(id) {
                return bad(format!("duplicate scenario {id}"));
            }
            let need = min_dimension(id)?;
            if let Some(s) = self.sizes.iter().find(|s| s.p < need) {
                return Err(Error::ScenarioDimension {
                    scenario: id,
                    needed: need,
                    got: s.p,
                });
            }
        }
        let mut seen = HashSet::new();
        if let Some(m) = self.methods.iter().find(|m| !seen.insert(**m)) {
            return bad(format!("duplicate method {m}"));
        }
        match &self.tuning {
            Tuning::Grid(g) => {
                g.validate()?;
                if self.cv_folds < 2 {
                    return bad("cv_folds must be >= 2".into());
                }
            }
            Tuning::Fixed(p) => p.validate()?,
        }
        if self.lasso_fractions.is_empty() {
            return bad("lasso_fractions must be nonempty".into());
        }
        if self.replications > FULL_REPLICATIONS / 2 {
            warn!(
                "{} replications per cell; expect a long run",
                self.replications
            );
        }
        Ok(())
    }

    fn uses_lasso(&self, method: Method, p: usize) -> bool {
        method == Method::DLearning && p > self.lasso_above_p
    }

    fn grid_for(&self, method: Method, p: usize) -> Option<Grid> {
        let grid = match &self.tuning {
            Tuning::Grid(g) => g.clone(),
            Tuning::Fixed(_) if self.uses_lasso(method, p) => Grid::default(),
            Tuning::Fixed(_) => return None,
        };
        Some(Grid {
            lasso_penalties: self
                .uses_lasso(method, p)
                .then(|| self.lasso_fractions.clone()),
            ..grid
        })
    }
}

/// Purpose of a derived seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedRole {
    Train = 0,
    Test = 1,
    Folds = 2,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one (scenario, size index, replication, role). The fields are
/// packed into disjoint bit ranges and passed through bijective mixing, so
/// distinct tuples always receive distinct seeds.
pub fn derive_seed(master: u64, scenario: u8, size_index: usize, rep: usize, role: SeedRole) -> u64 {
    assert!(scenario < 8 && size_index < MAX_SIZES && (rep as u64) < (1 << 32));
    let packed = u64::from(scenario)
        | (size_index as u64) << 3
        | (rep as u64) << 15
        | (role as u64) << 47;
    splitmix64(master.wrapping_add(splitmix64(packed)))
}

/// Per-replication result of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub method: Method,
    pub scenario: u8,
    pub n: usize,
    pub p: usize,
    pub replication: usize,
    pub train_seed: u64,
    pub test_seed: u64,
    pub misclassification: Option<f64>,
    pub value: Option<f64>,
    pub oracle_value: f64,
    /// `ok` or the failure message.
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub scenario: u8,
    pub n: usize,
    pub p: usize,
    pub misclassification_mean: f64,
    pub misclassification_sd: f64,
    pub value_mean: f64,
    pub value_sd: f64,
    pub replications: usize,
    pub failed: usize,
}

/// Parameters used for one (scenario, size, method) and replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedChoice {
    pub method: Method,
    pub scenario: u8,
    pub n: usize,
    pub p: usize,
    pub replication: usize,
    pub candidate: Option<Candidate>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSummary {
    pub rows: Vec<SummaryRow>,
    pub cells: Vec<CellRecord>,
    pub tuned: Vec<TunedChoice>,
}

impl BenchSummary {
    pub fn row(&self, method: Method, scenario: u8, n: usize, p: usize) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.scenario == scenario && r.n == n && r.p == p)
    }

    pub fn summary_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.into_inner()
            .map_err(|e| Error::InvalidData(format!("summary serialization: {e}")))
    }

    fn cell_csv(records: &[&CellRecord]) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for rec in records {
            w.serialize(rec)?;
        }
        w.into_inner()
            .map_err(|e| Error::InvalidData(format!("cell serialization: {e}")))
    }

    /// Writes `summary.csv`, `cells/<scenario>_<n>_<p>_<method>.csv`,
    /// `tuning.json` and `config.json` under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, config: &BenchConfig) -> Result<()> {
        let dir = dir.as_ref();
        let cells_dir = dir.join("cells");
        fs::create_dir_all(&cells_dir).map_err(|e| Error::io(&cells_dir, e))?;
        let put = |path: &Path, bytes: &[u8]| fs::write(path, bytes).map_err(|e| Error::io(path, e));
        put(&dir.join("summary.csv"), &self.summary_csv()?)?;
        for row in &self.rows {
            let records: Vec<&CellRecord> = self
                .cells
                .iter()
                .filter(|c| {
                    c.method == row.method && c.scenario == row.scenario && c.n == row.n && c.p == row.p
                })
                .collect();
            let name = format!("{}_{}_{}_{}.csv", row.scenario, row.n, row.p, row.method.slug());
            put(&cells_dir.join(name), &Self::cell_csv(&records)?)?;
        }
        put(&dir.join("tuning.json"), serde_json::to_string_pretty(&self.tuned)?.as_bytes())?;
        put(&dir.join("config.json"), config_echo(config)?.as_bytes())
    }
}

#[derive(Serialize)]
struct ResolvedSeeds {
    scenario: u8,
    n: usize,
    p: usize,
    replication: usize,
    train: u64,
    test: u64,
    folds: u64,
}

fn config_echo(config: &BenchConfig) -> Result<String> {
    let mut seeds = Vec::new();
    for &scenario in &config.scenarios {
        for (si, size) in config.sizes.iter().enumerate() {
            for rep in 0..config.replications {
                let s = |role| derive_seed(config.master_seed, scenario, si, rep, role);
                seeds.push(ResolvedSeeds {
                    scenario,
                    n: size.n,
                    p: size.p,
                    replication: rep,
                    train: s(SeedRole::Train),
                    test: s(SeedRole::Test),
                    folds: s(SeedRole::Folds),
                });
            }
        }
    }
    let echo = serde_json::json!({ "config": config, "seeds": seeds });
    Ok(serde_json::to_string_pretty(&echo)?)
}

/// Runs the study on a pool sized by `ITRBOOST_THREADS` (or all cores).
pub fn run(config: &BenchConfig) -> Result<BenchSummary> {
    run_with_threads(config, threads_from_env()?)
}

/// Thread count from `ITRBOOST_THREADS`; `None` means rayon's default.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::InvalidArgument(format!(
                "{THREADS_ENV} must be a positive integer, got {s:?}"
            ))),
        },
    }
}

pub fn run_with_threads(config: &BenchConfig, threads: Option<usize>) -> Result<BenchSummary> {
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| run_in_pool(config))
}

struct Unit {
    scenario: u8,
    size_index: usize,
    size: Size,
    rep: usize,
}

impl Unit {
    fn seed(&self, config: &BenchConfig, role: SeedRole) -> u64 {
        derive_seed(config.master_seed, self.scenario, self.size_index, self.rep, role)
    }

    fn trial(&self, config: &BenchConfig, role: SeedRole, n: usize) -> Result<SimulatedTrial> {
        generate(&ScenarioSpec {
            scenario: self.scenario,
            n,
            p: self.size.p,
            seed: self.seed(config, role),
        })
    }
}

fn tune_one(
    config: &BenchConfig,
    unit: &Unit,
    method: Method,
    train: &SimulatedTrial,
) -> std::result::Result<Candidate, String> {
    match (config.grid_for(method, unit.size.p), &config.tuning) {
        (Some(grid), _) => cross_validate(
            method,
            &train.data,
            &grid,
            config.cv_folds,
            unit.seed(config, SeedRole::Folds),
            &FitOptions::default(),
        )
        .map(|r| r.best)
        .map_err(|e| format!("tuning failed: {e}")),
        (None, Tuning::Fixed(params)) => Ok(Candidate::Boosting(*params)),
        (None, Tuning::Grid(_)) => unreachable!("grid tuning always yields a grid"),
    }
}

fn evaluate_unit(
    config: &BenchConfig,
    unit: &Unit,
    choices: &[std::result::Result<Candidate, String>],
) -> Result<Vec<CellRecord>> {
    let train = unit.trial(config, SeedRole::Train, unit.size.n)?;
    let test = unit.trial(config, SeedRole::Test, config.test_n)?;
    let oracle_value = estimate_value(&test.oracle_decisions, &test.data).unwrap_or(f64::NAN);
    let mut out = Vec::with_capacity(config.methods.len());
    for (mi, &method) in config.methods.iter().enumerate() {
        let tuned;
        let choice = if config.tune_every_rep {
            tuned = tune_one(config, unit, method, &train);
            &tuned
        } else {
            &choices[mi]
        };
        let outcome = choice.clone().and_then(|cand| {
            let policy = fit_candidate(method, &train.data, &cand, &FitOptions::default())
                .map_err(|e| format!("fit failed: {e}"))?;
            let decisions = policy
                .decide_all(test.data.covariates())
                .map_err(|e| format!("predict failed: {e}"))?;
            let miss = misclassification(&decisions, &test.oracle_decisions).map_err(|e| e.to_string())?;
            let value = estimate_value(&decisions, &test.data).map_err(|e| format!("value failed: {e}"))?;
            Ok((miss, value))
        });
        let (misclassification, value, status) = match outcome {
            Ok((m, v)) => (Some(m), Some(v), "ok".to_string()),
            Err(msg) => {
                warn!(
                    "{method} scenario {} n={} p={} replication {}: {msg}",
                    unit.scenario, unit.size.n, unit.size.p, unit.rep
                );
                (None, None, msg)
            }
        };
        out.push(CellRecord {
            method,
            scenario: unit.scenario,
            n: unit.size.n,
            p: unit.size.p,
            replication: unit.rep,
            train_seed: unit.seed(config, SeedRole::Train),
            test_seed: unit.seed(config, SeedRole::Test),
            misclassification,
            value,
            oracle_value,
            status,
        });
    }
    Ok(out)
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn run_in_pool(config: &BenchConfig) -> Result<BenchSummary> {
    let mut units = Vec::new();
    let mut heads = Vec::new();
    for &scenario in &config.scenarios {
        for (size_index, &size) in config.sizes.iter().enumerate() {
            heads.push(units.len());
            for rep in 0..config.replications {
                units.push(Unit {
                    scenario,
                    size_index,
                    size,
                    rep,
                });
            }
        }
    }

    // Tuning on replication 0 of each (scenario, size), one task per method.
    let tune_tasks: Vec<(usize, usize)> = if config.tune_every_rep {
        Vec::new()
    } else {
        heads
            .iter()
            .flat_map(|&u| (0..config.methods.len()).map(move |m| (u, m)))
            .collect()
    };
    let head_trials: Vec<Result<SimulatedTrial>> = heads
        .par_iter()
        .map(|&u| units[u].trial(config, SeedRole::Train, units[u].size.n))
        .collect();
    let head_trials: Vec<SimulatedTrial> = head_trials.into_iter().collect::<Result<_>>()?;
    let tuned: Vec<std::result::Result<Candidate, String>> = tune_tasks
        .par_iter()
        .map(|&(u, m)| {
            let head = heads.iter().position(|&h| h == u).expect("head unit");
            let res = tune_one(config, &units[u], config.methods[m], &head_trials[head]);
            info!(
                "tuned {} scenario {} n={} p={}: {res:?}",
                config.methods[m], units[u].scenario, units[u].size.n, units[u].size.p
            );
            res
        })
        .collect();

    let per_unit: Vec<Result<Vec<CellRecord>>> = units
        .par_iter()
        .enumerate()
        .map(|(ui, unit)| {
            let choices: &[std::result::Result<Candidate, String>] = if config.tune_every_rep {
                &[]
            } else {
                let head = ui / config.replications;
                let m = config.methods.len();
                &tuned[head * m..(head + 1) * m]
            };
            evaluate_unit(config, unit, choices)
        })
        .collect();
    let mut cells = Vec::new();
    for r in per_unit {
        cells.extend(r?);
    }

    let tuned_choices = if config.tune_every_rep {
        Vec::new()
    } else {
        tune_tasks
            .iter()
            .zip(&tuned)
            .map(|(&(u, m), res)| TunedChoice {
                method: config.methods[m],
                scenario: units[u].scenario,
                n: units[u].size.n,
                p: units[u].size.p,
                replication: 0,
                candidate: res.as_ref().ok().copied(),
                failure: res.as_ref().err().cloned(),
            })
            .collect()
    };

    let mut rows = Vec::new();
    for &scenario in &config.scenarios {
        for size in &config.sizes {
            for &method in &config.methods {
                let mine: Vec<&CellRecord> = cells
                    .iter()
                    .filter(|c| c.method == method && c.scenario == scenario && c.n == size.n && c.p == size.p)
                    .collect();
                let miss: Vec<f64> = mine.iter().filter_map(|c| c.misclassification).collect();
                let vals: Vec<f64> = mine.iter().filter_map(|c| c.value).collect();
                let (mm, ms) = mean_sd(&miss);
                let (vm, vs) = mean_sd(&vals);
                rows.push(SummaryRow {
                    method,
                    scenario,
                    n: size.n,
                    p: size.p,
                    misclassification_mean: mm,
                    misclassification_sd: ms,
                    value_mean: vm,
                    value_sd: vs,
                    replications: mine.len(),
                    failed: mine.len() - vals.len(),
                });
            }
        }
    }
    Ok(BenchSummary {
        rows,
        cells,
        tuned: tuned_choices,
    })
}
