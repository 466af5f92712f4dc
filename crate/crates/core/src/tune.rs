//! Hyperparameter selection by k-fold cross validation on the estimated
//! value of the fitted policy.
//!
//! Boosting candidates that differ only in the number of rounds share one
//! fit per fold: the ensemble is trained with the largest `K` in the group
//! and truncated, which is exact because training is stagewise.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boosting::HyperParams;
use crate::data::{make_folds, Dataset, FoldAssignment};
use crate::eval::estimate_value;
use crate::itr::{d_learning_lambda_max, fit, FitOptions, ItrPolicy, Method};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub rounds: Vec<usize>,
    pub shrinkages: Vec<f64>,
    pub depths: Vec<usize>,
    /// D-learning lasso penalties, as fractions of the largest useful
    /// penalty `λ_max` on each training split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lasso_penalties: Option<Vec<f64>>,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub min_child_hessian: f64,
}

fn default_lambda() -> f64 {
    1.0
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            rounds: vec![50, 100, 200, 400],
            shrinkages: vec![0.05, 0.1, 0.3],
            depths: vec![2, 3, 4],
            lasso_penalties: None,
            gamma: 0.0,
            lambda: 1.0,
            min_child_hessian: 0.0,
        }
    }
}

impl Grid {
    /// A grid holding exactly one boosting candidate.
    pub fn single(params: &HyperParams) -> Self {
        Self {
            rounds: vec![params.rounds],
            shrinkages: vec![params.eta],
            depths: vec![params.max_depth],
            lasso_penalties: None,
            gamma: params.gamma,
            lambda: params.lambda,
            min_child_hessian: params.min_child_hessian,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds.is_empty() || self.shrinkages.is_empty() || self.depths.is_empty() {
            return Err(Error::InvalidArgument("grid lists must be nonempty".into()));
        }
        for params in self.boosting_params() {
            params.validate()?;
        }
        if let Some(pen) = &self.lasso_penalties {
            if pen.is_empty() {
                return Err(Error::InvalidArgument("lasso penalty list is empty".into()));
            }
            if let Some(v) = pen.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return Err(Error::InvalidArgument(format!("lasso penalty {v} must be >= 0")));
            }
        }
        Ok(())
    }

    fn boosting_params(&self) -> Vec<HyperParams> {
        let mut out = Vec::new();
        for &rounds in &self.rounds {
            for &eta in &self.shrinkages {
                for &max_depth in &self.depths {
                    out.push(HyperParams {
                        rounds,
                        eta,
                        max_depth,
                        gamma: self.gamma,
                        lambda: self.lambda,
                        min_child_hessian: self.min_child_hessian,
                    });
                }
            }
        }
        out
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let grid: Grid = serde_json::from_str(s)?;
        grid.validate()?;
        Ok(grid)
    }
}

/// One point of the search space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Candidate {
    Boosting(HyperParams),
    /// D-learning lasso penalty as a fraction of `λ_max`.
    LassoFraction(f64),
    /// Methods with nothing to tune.
    Fixed,
}

impl Candidate {
    /// Orders by parsimony: fewer rounds, larger shrinkage, shallower trees,
    /// larger penalties first.
    fn parsimony_cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Candidate::Boosting(a), Candidate::Boosting(b)) => a
                .rounds
                .cmp(&b.rounds)
                .then(b.eta.total_cmp(&a.eta))
                .then(a.max_depth.cmp(&b.max_depth))
                .then(b.gamma.total_cmp(&a.gamma))
                .then(b.lambda.total_cmp(&a.lambda))
                .then(b.min_child_hessian.total_cmp(&a.min_child_hessian)),
            (Candidate::LassoFraction(a), Candidate::LassoFraction(b)) => b.total_cmp(a),
            _ => Ordering::Equal,
        }
    }

    pub fn params(&self) -> Option<HyperParams> {
        match self {
            Candidate::Boosting(p) => Some(*p),
            _ => None,
        }
    }
}

/// Fits `method` under a tuned candidate. Lasso fractions are resolved
/// against `λ_max` of `data`.
pub fn fit_candidate(
    method: Method,
    data: &Dataset,
    candidate: &Candidate,
    opts: &FitOptions,
) -> Result<ItrPolicy> {
    match candidate {
        Candidate::Boosting(params) => fit(method, data, params, opts),
        Candidate::LassoFraction(frac) => {
            let opts = FitOptions {
                d_lasso: Some(frac * d_learning_lambda_max(data)?),
                ..*opts
            };
            fit(method, data, &HyperParams::default(), &opts)
        }
        Candidate::Fixed => fit(method, data, &HyperParams::default(), opts),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub candidate: Candidate,
    /// Mean held-out value; `-inf` if some fold had no policy–treatment
    /// match.
    pub mean_value: f64,
    pub std_error: f64,
    pub fold_values: Vec<f64>,
    /// Why the candidate could not be fitted, if it failed.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: Candidate,
    pub table: Vec<CandidateScore>,
}

impl TuneResult {
    pub fn best_score(&self) -> &CandidateScore {
        self.table
            .iter()
            .find(|row| row.candidate == self.best)
            .expect("best candidate is in the table")
    }

    /// One row per candidate: parameters, mean value, standard error and
    /// failure reason.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "rounds",
            "eta",
            "max_depth",
            "gamma",
            "lambda",
            "min_child_hessian",
            "lasso_fraction",
            "mean_value",
            "std_error",
            "failure",
        ])?;
        for row in &self.table {
            let mut rec = vec![String::new(); 7];
            match row.candidate {
                Candidate::Boosting(p) => {
                    rec[0] = p.rounds.to_string();
                    rec[1] = p.eta.to_string();
                    rec[2] = p.max_depth.to_string();
                    rec[3] = p.gamma.to_string();
                    rec[4] = p.lambda.to_string();
                    rec[5] = p.min_child_hessian.to_string();
                }
                Candidate::LassoFraction(f) => rec[6] = f.to_string(),
                Candidate::Fixed => {}
            }
            rec.push(row.mean_value.to_string());
            rec.push(row.std_error.to_string());
            rec.push(row.failure.clone().unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Candidates evaluated together from one fit per fold.
struct Group {
    /// Candidate indices, fitted once with `fit_candidate` and truncated to
    /// each member's round count.
    members: Vec<usize>,
    fit_as: Candidate,
}

fn candidates(method: Method, grid: &Grid) -> Vec<Candidate> {
    if method.is_boosting() {
        grid.boosting_params().into_iter().map(Candidate::Boosting).collect()
    } else if method == Method::DLearning {
        match &grid.lasso_penalties {
            Some(list) => list.iter().map(|&f| Candidate::LassoFraction(f)).collect(),
            None => vec![Candidate::Fixed],
        }
    } else {
        vec![Candidate::Fixed]
    }
}

fn groups(cands: &[Candidate]) -> Vec<Group> {
    let mut by_key: BTreeMap<Vec<u64>, Group> = BTreeMap::new();
    for (i, c) in cands.iter().enumerate() {
        match c {
            Candidate::Boosting(p) => {
                let key = vec![
                    p.eta.to_bits(),
                    p.max_depth as u64,
                    p.gamma.to_bits(),
                    p.lambda.to_bits(),
                    p.min_child_hessian.to_bits(),
                ];
                let g = by_key.entry(key).or_insert_with(|| Group {
                    members: Vec::new(),
                    fit_as: *c,
                });
                if let Candidate::Boosting(cur) = &mut g.fit_as {
                    cur.rounds = cur.rounds.max(p.rounds);
                }
                g.members.push(i);
            }
            _ => {
                by_key.insert(
                    vec![u64::MAX, i as u64],
                    Group {
                        members: vec![i],
                        fit_as: *c,
                    },
                );
            }
        }
    }
    by_key.into_values().collect()
}

fn check_arms(method: Method, data: &Dataset, folds: &FoldAssignment) -> Result<()> {
    if !method.splits_arms() {
        return Ok(());
    }
    for fold in 0..folds.k {
        let training = folds.training(fold);
        for arm in [1i8, -1] {
            if !training.iter().any(|&i| data.treatments()[i] == arm) {
                return Err(Error::FoldEmptiesArm { fold, arm });
            }
        }
    }
    Ok(())
}

fn held_out_value(policy: &ItrPolicy, held_out: &Dataset) -> Result<f64> {
    let decisions = policy.decide_all(held_out.covariates())?;
    match estimate_value(&decisions, held_out) {
        Err(Error::NoMatches) => Ok(f64::NEG_INFINITY),
        other => other,
    }
}

/// Values of every member of `group` on `fold`, aligned with
/// `group.members`.
fn evaluate_group(
    method: Method,
    data: &Dataset,
    folds: &FoldAssignment,
    fold: usize,
    group: &Group,
    cands: &[Candidate],
    opts: &FitOptions,
) -> Result<Vec<f64>> {
    let training = data.split(&folds.training(fold))?;
    let held_out = data.split(&folds.held_out(fold))?;
    let policy = fit_candidate(method, &training, &group.fit_as, opts)?;
    group
        .members
        .iter()
        .map(|&i| match cands[i] {
            Candidate::Boosting(p) => held_out_value(&policy.truncated(p.rounds), &held_out),
            _ => held_out_value(&policy, &held_out),
        })
        .collect()
}

fn summarize(fold_values: Vec<f64>) -> (f64, f64, Vec<f64>) {
    let k = fold_values.len() as f64;
    if fold_values.contains(&f64::NEG_INFINITY) {
        return (f64::NEG_INFINITY, f64::NAN, fold_values);
    }
    let mean = fold_values.iter().sum::<f64>() / k;
    let var = fold_values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt(), fold_values)
}

/// Picks the candidate with the largest mean value; ties go to the more
/// parsimonious candidate, so the choice does not depend on grid order.
fn select(table: &[CandidateScore]) -> Option<Candidate> {
    table
        .iter()
        .filter(|row| row.failure.is_none())
        .max_by(|a, b| {
            a.mean_value
                .total_cmp(&b.mean_value)
                .then_with(|| b.candidate.parsimony_cmp(&a.candidate))
        })
        .map(|row| row.candidate)
}

/// `k`-fold cross validation of `method` over `grid`, maximizing the mean
/// held-out value estimate.
pub fn cross_validate(
    method: Method,
    data: &Dataset,
    grid: &Grid,
    k: usize,
    seed: u64,
    opts: &FitOptions,
) -> Result<TuneResult> {
    grid.validate()?;
    let folds = make_folds(data.n(), k, seed)?;
    check_arms(method, data, &folds)?;
    let cands = candidates(method, grid);
    let groups = groups(&cands);

    let tasks: Vec<(usize, usize)> = (0..groups.len())
        .flat_map(|g| (0..k).map(move |f| (g, f)))
        .collect();
    let results: Vec<Result<Vec<f64>>> = tasks
        .par_iter()
        .map(|&(g, f)| evaluate_group(method, data, &folds, f, &groups[g], &cands, opts))
        .collect();

    let mut per_candidate: Vec<std::result::Result<Vec<f64>, String>> =
        vec![Ok(Vec::with_capacity(k)); cands.len()];
    for (&(g, _), res) in tasks.iter().zip(results) {
        let members = &groups[g].members;
        match res {
            Ok(values) => {
                for (&i, v) in members.iter().zip(values) {
                    if let Ok(list) = &mut per_candidate[i] {
                        list.push(v);
                    }
                }
            }
            Err(e) => {
                for &i in members {
                    if per_candidate[i].is_ok() {
                        debug!("candidate {:?} failed: {e}", cands[i]);
                        per_candidate[i] = Err(e.to_string());
                    }
                }
            }
        }
    }

    let table: Vec<CandidateScore> = cands
        .iter()
        .zip(per_candidate)
        .map(|(c, res)| match res {
            Ok(values) => {
                let (mean_value, std_error, fold_values) = summarize(values);
                CandidateScore {
                    candidate: *c,
                    mean_value,
                    std_error,
                    fold_values,
                    failure: None,
                }
            }
            Err(reason) => CandidateScore {
                candidate: *c,
                mean_value: f64::NAN,
                std_error: f64::NAN,
                fold_values: Vec::new(),
                failure: Some(reason),
            },
        })
        .collect();

    match select(&table) {
        Some(best) => Ok(TuneResult { best, table }),
        None => Err(Error::AllCandidatesFailed(
            table
                .iter()
                .filter_map(|r| r.failure.clone())
                .next()
                .unwrap_or_default(),
        )),
    }
}
