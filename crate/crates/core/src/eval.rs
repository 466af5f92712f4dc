//! Policy performance measures.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::data::Dataset;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub dof: f64,
    /// Upper-tail p-value for `H_A: μ₁ > μ₂`.
    pub p_one_sided: f64,
}

impl WelchResult {
    pub fn p_two_sided(&self) -> f64 {
        (2.0 * self.p_one_sided.min(1.0 - self.p_one_sided)).min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub misclassification: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub welch: Option<WelchResult>,
}

/// One tabular evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub method: String,
    pub scenario: Option<u8>,
    pub n: usize,
    pub p: usize,
    pub seed: Option<u64>,
    pub value: f64,
    pub misclassification: Option<f64>,
    pub p_value: Option<f64>,
}

/// Inverse-propensity ratio estimator of the value of a policy:
///
/// ```text
/// V̂(D) = Σ Y_i I(D_i = A_i)/π_i  /  Σ I(D_i = A_i)/π_i
/// ```
pub fn estimate_value(decisions: &[i8], data: &Dataset) -> Result<f64> {
    if decisions.len() != data.n() {
        return Err(Error::DimensionMismatch {
            expected: data.n(),
            got: decisions.len(),
        });
    }
    let n = data.n() as f64;
    // Inverse propensities are taken relative to the first matched row's;
    // the common factor cancels in the ratio, and constant propensities give
    // unit weights exactly.
    let mut reference = None;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &d) in decisions.iter().enumerate() {
        if d == data.treatments()[i] {
            let pi = data.propensities()[i];
            let w = *reference.get_or_insert(pi) / pi;
            num += data.outcomes()[i] * w;
            den += w;
        }
    }
    if reference.is_none() {
        return Err(Error::NoMatches);
    }
    Ok((num / n) / (den / n))
}

/// Fraction of positions where the two rules disagree.
pub fn misclassification(decisions: &[i8], oracle: &[i8]) -> Result<f64> {
    if decisions.len() != oracle.len() {
        return Err(Error::DimensionMismatch {
            expected: oracle.len(),
            got: decisions.len(),
        });
    }
    if decisions.is_empty() {
        return Err(Error::InvalidArgument("empty decision vectors".into()));
    }
    let wrong = decisions.iter().zip(oracle).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / decisions.len() as f64)
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Upper tail `P(T > t)` of Student's t with `dof` degrees of freedom.
pub fn student_t_upper_tail(t: f64, dof: f64) -> f64 {
    let x = dof / (dof + t * t);
    let half_tail = 0.5 * beta_reg(0.5 * dof, 0.5, x);
    if t >= 0.0 {
        half_tail
    } else {
        1.0 - half_tail
    }
}

/// Welch's unequal-variance t-test of `H_A: mean(group1) > mean(group2)`.
pub fn welch_test(group1: &[f64], group2: &[f64]) -> Result<WelchResult> {
    if group1.len() < 2 || group2.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "Welch test needs at least 2 observations per group, got {} and {}",
            group1.len(),
            group2.len()
        )));
    }
    let (m1, v1) = mean_var(group1);
    let (m2, v2) = mean_var(group2);
    let (s1, s2) = (v1 / group1.len() as f64, v2 / group2.len() as f64);
    let se2 = s1 + s2;
    if se2 == 0.0 {
        return Err(Error::InvalidArgument("both groups have zero variance".into()));
    }
    let t = (m1 - m2) / se2.sqrt();
    let dof = se2 * se2
        / (s1 * s1 / (group1.len() as f64 - 1.0) + s2 * s2 / (group2.len() as f64 - 1.0));
    Ok(WelchResult {
        t,
        dof,
        p_one_sided: student_t_upper_tail(t, dof),
    })
}
