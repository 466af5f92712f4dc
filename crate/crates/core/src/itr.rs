//! Individualized treatment rule estimators.
//!
//! Three boosting estimators share the tree booster:
//!
//! - indirect: one squared-loss ensemble per treatment arm, deciding by the
//!   sign of `f̂⁺(x) − f̂⁻(x)`;
//! - direct I: a weighted squared loss on target `2YA` with weights `1/π`;
//! - direct II: the weighted deviance on labels `A·sign(Y − μ̂(X))` with
//!   weights `|Y − μ̂(X)|/π`, where `μ̂` is a common-effect estimate.
//!
//! Linear Q-learning and D-learning baselines and the common-effect
//! estimators are included. Every rule uses `sign(0) = +1`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::boosting::{train, BoostedEnsemble, HyperParams};
use crate::data::{make_folds, Covariates, Dataset};
use crate::linalg::{lasso_lambda_max, weighted_lasso, weighted_least_squares};
use crate::losses::LossSpec;
use crate::{sign, Error, Result};

/// Arms smaller than this fraction of the data trigger an imbalance warning.
const SMALL_ARM_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ItrPolicy {
    BoostedIndirect {
        model_plus: BoostedEnsemble,
        model_minus: BoostedEnsemble,
    },
    BoostedDirect {
        model: BoostedEnsemble,
    },
    Linear {
        intercept: f64,
        coefficients: Vec<f64>,
    },
}

impl ItrPolicy {
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        match self {
            ItrPolicy::BoostedIndirect {
                model_plus,
                model_minus,
            } => Ok(model_plus.predict(x)? - model_minus.predict(x)?),
            ItrPolicy::BoostedDirect { model } => model.predict(x),
            ItrPolicy::Linear {
                intercept,
                coefficients,
            } => {
                if x.len() != coefficients.len() {
                    return Err(Error::DimensionMismatch {
                        expected: coefficients.len(),
                        got: x.len(),
                    });
                }
                Ok(coefficients
                    .iter()
                    .zip(x)
                    .fold(*intercept, |acc, (b, v)| acc + b * v))
            }
        }
    }

    pub fn decide(&self, x: &[f64]) -> Result<i8> {
        Ok(sign(self.score(x)?))
    }

    pub fn decide_all(&self, x: &Covariates) -> Result<Vec<i8>> {
        let mut row = vec![0.0; x.n_cols()];
        (0..x.n_rows())
            .map(|i| {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = x.get(i, j);
                }
                self.decide(&row)
            })
            .collect()
    }

    /// Keeps the first `rounds` trees of every ensemble; linear policies are
    /// returned unchanged.
    pub fn truncated(&self, rounds: usize) -> Self {
        match self {
            ItrPolicy::BoostedIndirect {
                model_plus,
                model_minus,
            } => ItrPolicy::BoostedIndirect {
                model_plus: model_plus.truncated(rounds),
                model_minus: model_minus.truncated(rounds),
            },
            ItrPolicy::BoostedDirect { model } => ItrPolicy::BoostedDirect {
                model: model.truncated(rounds),
            },
            linear => linear.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CommonEffectModel {
    Linear { intercept: f64, slope: Vec<f64> },
    Null { intercept: f64 },
}

impl CommonEffectModel {
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        match self {
            CommonEffectModel::Linear { intercept, slope } => {
                slope.iter().zip(x).fold(*intercept, |acc, (a, v)| acc + a * v)
            }
            CommonEffectModel::Null { intercept } => *intercept,
        }
    }

    fn check_width(&self, p: usize) -> Result<()> {
        match self {
            CommonEffectModel::Linear { slope, .. } if slope.len() != p => {
                Err(Error::DimensionMismatch {
                    expected: slope.len(),
                    got: p,
                })
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoConfig {
    pub penalty: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_sweeps")]
    pub max_sweeps: usize,
}

fn default_tolerance() -> f64 {
    1e-9
}

fn default_max_sweeps() -> usize {
    10_000
}

impl LassoConfig {
    pub fn new(penalty: f64) -> Self {
        Self {
            penalty,
            tolerance: default_tolerance(),
            max_sweeps: default_max_sweeps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.penalty.is_finite() && self.penalty >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lasso penalty must be finite and >= 0, got {}",
                self.penalty
            )));
        }
        if !(self.tolerance > 0.0) || self.max_sweeps == 0 {
            return Err(Error::InvalidArgument(
                "lasso tolerance must be > 0 and max_sweeps >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// How Algorithm 3 estimates the common effect `μ(X)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MuEstimator {
    #[default]
    Linear,
    Lasso(LassoConfig),
    Null,
}

impl MuEstimator {
    pub fn estimate(&self, data: &Dataset) -> Result<CommonEffectModel> {
        match self {
            MuEstimator::Linear => estimate_common_effect_linear(data),
            MuEstimator::Lasso(cfg) => estimate_common_effect_lasso(data, cfg),
            MuEstimator::Null => estimate_common_effect_null(data),
        }
    }
}

/// The estimators that can be trained by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "IndirectBoosting")]
    IndirectBoosting,
    #[serde(rename = "DirectBoosting-I")]
    DirectBoosting1,
    #[serde(rename = "DirectBoosting-II")]
    DirectBoosting2,
    #[serde(rename = "Q-learning")]
    QLearning,
    #[serde(rename = "D-learning")]
    DLearning,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::IndirectBoosting,
        Method::DirectBoosting1,
        Method::DirectBoosting2,
        Method::QLearning,
        Method::DLearning,
    ];

    /// Display name used in reports.
    pub fn name(self) -> &'static str {
        match self {
            Method::IndirectBoosting => "IndirectBoosting",
            Method::DirectBoosting1 => "DirectBoosting-I",
            Method::DirectBoosting2 => "DirectBoosting-II",
            Method::QLearning => "Q-learning",
            Method::DLearning => "D-learning",
        }
    }

    /// Lowercase identifier used on the command line and in file names.
    pub fn slug(self) -> &'static str {
        match self {
            Method::IndirectBoosting => "indirect-boosting",
            Method::DirectBoosting1 => "direct-boosting-1",
            Method::DirectBoosting2 => "direct-boosting-2",
            Method::QLearning => "q-linear",
            Method::DLearning => "d-linear",
        }
    }

    pub fn is_boosting(self) -> bool {
        matches!(
            self,
            Method::IndirectBoosting | Method::DirectBoosting1 | Method::DirectBoosting2
        )
    }

    /// Whether the method trains on each treatment arm separately.
    pub fn splits_arms(self) -> bool {
        matches!(self, Method::IndirectBoosting | Method::QLearning)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s || m.slug() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.slug()).collect();
                Error::InvalidArgument(format!("unknown method {s:?}, expected one of {names:?}"))
            })
    }
}

/// Method-specific settings that are not tree hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FitOptions {
    /// Common-effect estimator for direct boosting II.
    #[serde(default)]
    pub mu: MuEstimator,
    /// Absolute lasso penalty for D-learning; unpenalized when absent.
    #[serde(default)]
    pub d_lasso: Option<f64>,
}

/// Fits `method`; linear methods ignore `params`.
pub fn fit(
    method: Method,
    data: &Dataset,
    params: &HyperParams,
    opts: &FitOptions,
) -> Result<ItrPolicy> {
    match method {
        Method::IndirectBoosting => fit_indirect_boosting(data, params),
        Method::DirectBoosting1 => fit_direct_boosting_1(data, params),
        Method::DirectBoosting2 => {
            let mu = opts.mu.estimate(data)?;
            fit_direct_boosting_2(data, params, &mu)
        }
        Method::QLearning => fit_q_learning_linear(data),
        Method::DLearning => fit_d_learning_linear(data, opts.d_lasso),
    }
}

fn arm_rows(data: &Dataset) -> Result<(Vec<usize>, Vec<usize>)> {
    let plus = data.arm_indices(1);
    let minus = data.arm_indices(-1);
    for (arm, rows) in [(1, &plus), (-1, &minus)] {
        if rows.is_empty() {
            return Err(Error::EmptyArm { arm });
        }
        if (rows.len() as f64) < SMALL_ARM_FRACTION * data.n() as f64 {
            warn!(
                "treatment arm {arm:+} has only {} of {} rows; its fit may be unreliable",
                rows.len(),
                data.n()
            );
        }
    }
    Ok((plus, minus))
}

fn gather(values: &[f64], rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&i| values[i]).collect()
}

fn all_rows(data: &Dataset) -> Vec<usize> {
    (0..data.n()).collect()
}

fn inverse_propensities(data: &Dataset) -> Vec<f64> {
    data.propensities().iter().map(|p| 1.0 / p).collect()
}

/// `2 Y_i A_i`
fn doubled_signed_outcomes(data: &Dataset) -> Vec<f64> {
    data.outcomes()
        .iter()
        .zip(data.treatments())
        .map(|(y, &a)| 2.0 * y * f64::from(a))
        .collect()
}

/// Squared-loss ensembles per arm; decides by the sign of their difference.
pub fn fit_indirect_boosting(data: &Dataset, params: &HyperParams) -> Result<ItrPolicy> {
    params.validate()?;
    let (plus, minus) = arm_rows(data)?;
    let x = data.covariates();
    let y = data.outcomes();
    let model_plus = train(x, &plus, &LossSpec::squared(gather(y, &plus)), params)?;
    let model_minus = train(x, &minus, &LossSpec::squared(gather(y, &minus)), params)?;
    Ok(ItrPolicy::BoostedIndirect {
        model_plus,
        model_minus,
    })
}

/// One ensemble on target `2YA` with weights `1/π`.
pub fn fit_direct_boosting_1(data: &Dataset, params: &HyperParams) -> Result<ItrPolicy> {
    let loss = LossSpec::weighted_squared(doubled_signed_outcomes(data), inverse_propensities(data))?;
    let model = train(data.covariates(), &all_rows(data), &loss, params)?;
    Ok(ItrPolicy::BoostedDirect { model })
}

/// One ensemble under the weighted deviance with labels `A·sign(Y − μ̂)`
/// and weights `|Y − μ̂|/π`.
pub fn fit_direct_boosting_2(
    data: &Dataset,
    params: &HyperParams,
    mu: &CommonEffectModel,
) -> Result<ItrPolicy> {
    mu.check_width(data.p())?;
    let x = data.covariates();
    let mut labels = Vec::with_capacity(data.n());
    let mut weights = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        let r = data.outcomes()[i] - mu.evaluate(&x.row(i));
        labels.push(data.treatments()[i] * sign(r));
        weights.push(r.abs() / data.propensities()[i]);
    }
    if weights.iter().all(|&w| w == 0.0) {
        warn!("every outcome equals its common-effect estimate; all weights are zero");
    }
    let loss = LossSpec::weighted_deviance(labels, weights)?;
    let model = train(x, &all_rows(data), &loss, params)?;
    Ok(ItrPolicy::BoostedDirect { model })
}

/// Weighted least squares of `Y` on `X` with weights `1/π`.
pub fn estimate_common_effect_linear(data: &Dataset) -> Result<CommonEffectModel> {
    let (intercept, slope) = weighted_least_squares(
        data.covariates(),
        &all_rows(data),
        data.outcomes(),
        &inverse_propensities(data),
    )?;
    Ok(CommonEffectModel::Linear { intercept, slope })
}

/// Weighted lasso of `Y` on `X` with weights `1/π`; the intercept is not
/// penalized.
pub fn estimate_common_effect_lasso(
    data: &Dataset,
    cfg: &LassoConfig,
) -> Result<CommonEffectModel> {
    cfg.validate()?;
    let (intercept, slope) = weighted_lasso(
        data.covariates(),
        &all_rows(data),
        data.outcomes(),
        &inverse_propensities(data),
        cfg.penalty,
        cfg.tolerance,
        cfg.max_sweeps,
    )?;
    Ok(CommonEffectModel::Linear { intercept, slope })
}

/// Smallest penalty at which the common-effect lasso has all-zero slopes.
pub fn common_effect_lambda_max(data: &Dataset) -> Result<f64> {
    lasso_lambda_max(
        data.covariates(),
        &all_rows(data),
        data.outcomes(),
        &inverse_propensities(data),
    )
}

/// `Σ(Y/π) / Σ(1/π)`
pub fn estimate_common_effect_null(data: &Dataset) -> Result<CommonEffectModel> {
    let (num, den) = data
        .outcomes()
        .iter()
        .zip(data.propensities())
        .fold((0.0, 0.0), |(n, d), (y, p)| (n + y / p, d + 1.0 / p));
    Ok(CommonEffectModel::Null {
        intercept: num / den,
    })
}

/// Picks the common-effect lasso penalty among `fractions` of the
/// full-data `λ_max` by minimizing held-out weighted squared error over `k`
/// folds. Ties go to the larger penalty.
pub fn select_common_effect_penalty(
    data: &Dataset,
    fractions: &[f64],
    k: usize,
    seed: u64,
) -> Result<LassoConfig> {
    if fractions.is_empty() {
        return Err(Error::InvalidArgument("empty lasso penalty grid".into()));
    }
    let lambda_max = common_effect_lambda_max(data)?;
    let folds = make_folds(data.n(), k, seed)?;
    let w = inverse_propensities(data);
    let x = data.covariates();
    let mut best: Option<(f64, f64)> = None;
    for &frac in fractions {
        let penalty = frac * lambda_max;
        let cfg = LassoConfig::new(penalty);
        cfg.validate()?;
        let mut err = 0.0;
        for fold in 0..k {
            let train_rows = folds.training(fold);
            let (a0, a) = weighted_lasso(
                x,
                &train_rows,
                &gather(data.outcomes(), &train_rows),
                &gather(&w, &train_rows),
                penalty,
                cfg.tolerance,
                cfg.max_sweeps,
            )?;
            let mu = CommonEffectModel::Linear {
                intercept: a0,
                slope: a,
            };
            for i in folds.held_out(fold) {
                err += w[i] * (data.outcomes()[i] - mu.evaluate(&x.row(i))).powi(2);
            }
        }
        let better = match best {
            None => true,
            Some((e, p)) => err < e || (err == e && penalty > p),
        };
        if better {
            best = Some((err, penalty));
        }
    }
    Ok(LassoConfig::new(best.map(|(_, p)| p).unwrap_or(0.0)))
}

/// Per-arm ordinary least squares; the rule is the sign of the fitted
/// difference.
pub fn fit_q_learning_linear(data: &Dataset) -> Result<ItrPolicy> {
    let (plus, minus) = arm_rows(data)?;
    let x = data.covariates();
    let fit_arm = |rows: &[usize]| {
        weighted_least_squares(x, rows, &gather(data.outcomes(), rows), &vec![1.0; rows.len()])
    };
    let (b0_plus, b_plus) = fit_arm(&plus)?;
    let (b0_minus, b_minus) = fit_arm(&minus)?;
    Ok(ItrPolicy::Linear {
        intercept: b0_plus - b0_minus,
        coefficients: b_plus.iter().zip(&b_minus).map(|(a, b)| a - b).collect(),
    })
}

/// Weighted least squares (or lasso with penalty `lambda`) of `2YA` on `X`
/// with weights `1/π`.
pub fn fit_d_learning_linear(data: &Dataset, lambda: Option<f64>) -> Result<ItrPolicy> {
    let target = doubled_signed_outcomes(data);
    let w = inverse_propensities(data);
    let rows = all_rows(data);
    let (intercept, coefficients) = match lambda {
        None => weighted_least_squares(data.covariates(), &rows, &target, &w)?,
        Some(penalty) => {
            let cfg = LassoConfig::new(penalty);
            cfg.validate()?;
            weighted_lasso(
                data.covariates(),
                &rows,
                &target,
                &w,
                penalty,
                cfg.tolerance,
                cfg.max_sweeps,
            )?
        }
    };
    Ok(ItrPolicy::Linear {
        intercept,
        coefficients,
    })
}

/// Smallest penalty at which the D-learning lasso has all-zero slopes.
pub fn d_learning_lambda_max(data: &Dataset) -> Result<f64> {
    lasso_lambda_max(
        data.covariates(),
        &all_rows(data),
        &doubled_signed_outcomes(data),
        &inverse_propensities(data),
    )
}
