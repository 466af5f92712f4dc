//! Weighted least squares and weighted lasso on a row subset of covariates.
//!
//! Both solvers center the covariates and response at their weighted means,
//! so the intercept never enters the penalized or factorized system and is
//! recovered as `ȳ_w − βᵀ m_w`.

use log::warn;

use crate::data::Covariates;
use crate::{Error, Result};

/// Diagonal-ratio condition estimate above which a system is treated as
/// near-singular.
const CONDITION_LIMIT: f64 = 1e12;
const RIDGE_FRACTION: f64 = 1e-10;

/// Fitted `(intercept, slopes)`.
pub(crate) type LinearFit = (f64, Vec<f64>);

struct Centered {
    /// `cols[j][k]` is `x[rows[k], j] − m_j`.
    cols: Vec<Vec<f64>>,
    x_mean: Vec<f64>,
    y: Vec<f64>,
    y_mean: f64,
    total_weight: f64,
}

fn center(x: &Covariates, rows: &[usize], y: &[f64], w: &[f64]) -> Result<Centered> {
    if y.len() != rows.len() || w.len() != rows.len() {
        return Err(Error::DimensionMismatch {
            expected: rows.len(),
            got: y.len().min(w.len()),
        });
    }
    let total_weight: f64 = w.iter().sum();
    if !(total_weight > 0.0) {
        return Err(Error::ZeroDenominator("sum of regression weights"));
    }
    let wmean = |v: &[f64]| v.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / total_weight;
    let y_mean = wmean(y);
    let y = y.iter().map(|v| v - y_mean).collect();
    let mut cols = Vec::with_capacity(x.n_cols());
    let mut x_mean = Vec::with_capacity(x.n_cols());
    for j in 0..x.n_cols() {
        let col = x.column(j);
        let raw: Vec<f64> = rows.iter().map(|&i| col[i]).collect();
        let m = wmean(&raw);
        cols.push(raw.into_iter().map(|v| v - m).collect());
        x_mean.push(m);
    }
    Ok(Centered {
        cols,
        x_mean,
        y,
        y_mean,
        total_weight,
    })
}

fn dot3(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    a.iter().zip(b).zip(w).map(|((x, y), w)| x * y * w).sum()
}

/// In-place lower Cholesky factor of a row-major `p×p` matrix. Returns the
/// squared ratio of extreme diagonal entries of `L`, or `None` if the matrix
/// is not numerically positive definite.
fn cholesky(a: &mut [f64], p: usize) -> Option<f64> {
    for j in 0..p {
        let mut d = a[j * p + j];
        for k in 0..j {
            d -= a[j * p + k] * a[j * p + k];
        }
        if !(d > 0.0) {
            return None;
        }
        let ljj = d.sqrt();
        a[j * p + j] = ljj;
        for i in j + 1..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = s / ljj;
        }
    }
    let diag = (0..p).map(|j| a[j * p + j]);
    let (lo, hi) = diag.fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
    Some((hi / lo).powi(2))
}

fn cholesky_solve(l: &[f64], p: usize, b: &[f64]) -> Vec<f64> {
    let mut z = b.to_vec();
    for i in 0..p {
        for k in 0..i {
            z[i] -= l[i * p + k] * z[k];
        }
        z[i] /= l[i * p + i];
    }
    for i in (0..p).rev() {
        for k in i + 1..p {
            z[i] -= l[k * p + i] * z[k];
        }
        z[i] /= l[i * p + i];
    }
    z
}

/// Minimizes `Σ w_k (y_k − α₀ − αᵀx_{rows[k]})²`. `y` and `w` align with
/// `rows`.
pub(crate) fn weighted_least_squares(
    x: &Covariates,
    rows: &[usize],
    y: &[f64],
    w: &[f64],
) -> Result<LinearFit> {
    let p = x.n_cols();
    if rows.len() < p + 1 {
        return Err(Error::Singular {
            condition: f64::INFINITY,
        });
    }
    let c = center(x, rows, y, w)?;
    if p == 0 {
        return Ok((c.y_mean, Vec::new()));
    }
    let mut gram = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let v = dot3(&c.cols[i], &c.cols[j], w);
            gram[i * p + j] = v;
            gram[j * p + i] = v;
        }
    }
    let rhs: Vec<f64> = c.cols.iter().map(|col| dot3(col, &c.y, w)).collect();

    let mut l = gram.clone();
    let condition = cholesky(&mut l, p);
    let beta = match condition {
        Some(cond) if cond <= CONDITION_LIMIT => cholesky_solve(&l, p, &rhs),
        _ => {
            let cond = condition.unwrap_or(f64::INFINITY);
            let trace: f64 = (0..p).map(|j| gram[j * p + j]).sum();
            let ridge = if trace > 0.0 {
                RIDGE_FRACTION * trace / p as f64
            } else {
                1.0
            };
            warn!("near-singular normal equations (condition ~{cond:.3e}); adding ridge {ridge:.3e}");
            let mut l = gram;
            for j in 0..p {
                l[j * p + j] += ridge;
            }
            if cholesky(&mut l, p).is_none() {
                return Err(Error::Singular { condition: cond });
            }
            cholesky_solve(&l, p, &rhs)
        }
    };
    let intercept = c.y_mean - beta.iter().zip(&c.x_mean).map(|(b, m)| b * m).sum::<f64>();
    Ok((intercept, beta))
}

/// Smallest penalty at which the weighted lasso returns all-zero slopes:
/// `max_j 2 |Σ w (x_j − m_j)(y − ȳ)|`.
pub(crate) fn lasso_lambda_max(
    x: &Covariates,
    rows: &[usize],
    y: &[f64],
    w: &[f64],
) -> Result<f64> {
    let c = center(x, rows, y, w)?;
    Ok(c.cols
        .iter()
        .map(|col| 2.0 * dot3(col, &c.y, w).abs())
        .fold(0.0, f64::max))
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Minimizes `Σ w_k (y_k − α₀ − αᵀx_k)² + λ‖α‖₁` by cyclic coordinate
/// descent on weight-standardized covariates (`Σ w x̃² = Σ w`). The penalty
/// on standardized coordinate `j` is `λ/s_j`, so the back-transformed
/// coefficients optimize the raw-scale objective.
pub(crate) fn weighted_lasso(
    x: &Covariates,
    rows: &[usize],
    y: &[f64],
    w: &[f64],
    lambda: f64,
    tolerance: f64,
    max_sweeps: usize,
) -> Result<LinearFit> {
    let c = center(x, rows, y, w)?;
    let p = c.cols.len();
    let total = c.total_weight;
    let scale: Vec<f64> = c
        .cols
        .iter()
        .map(|col| (dot3(col, col, w) / total).sqrt())
        .collect();
    let std_cols: Vec<Vec<f64>> = c
        .cols
        .iter()
        .zip(&scale)
        .map(|(col, &s)| {
            if s > 0.0 {
                col.iter().map(|v| v / s).collect()
            } else {
                Vec::new()
            }
        })
        .collect();

    let mut beta = vec![0.0; p];
    let mut resid = c.y.clone();
    let mut converged = p == 0;
    let mut gap = 0.0;
    for _ in 0..max_sweeps.max(1) {
        gap = 0.0f64;
        for j in 0..p {
            if scale[j] == 0.0 {
                continue;
            }
            let xj = &std_cols[j];
            let old = beta[j];
            let rho = 2.0 * (dot3(xj, &resid, w) + old * total);
            let new = soft_threshold(rho, lambda / scale[j]) / (2.0 * total);
            if new != old {
                let delta = new - old;
                for (r, v) in resid.iter_mut().zip(xj) {
                    *r -= delta * v;
                }
                beta[j] = new;
                gap = gap.max(delta.abs());
            }
        }
        if gap < tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::LassoNotConverged {
            sweeps: max_sweeps,
            gap,
        });
    }
    let slopes: Vec<f64> = beta
        .iter()
        .zip(&scale)
        .map(|(&b, &s)| if s > 0.0 { b / s } else { 0.0 })
        .collect();
    let intercept = c.y_mean - slopes.iter().zip(&c.x_mean).map(|(b, m)| b * m).sum::<f64>();
    Ok((intercept, slopes))
}
