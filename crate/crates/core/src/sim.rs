//! Synthetic randomized trials for the five benchmark scenarios.
//!
//! Every scenario draws `X_j ~ U(-1, 1)` i.i.d., `A = ±1` with probability
//! ½ each, `ε ~ N(0, 1)`, and sets
//!
//! ```text
//! Y = μ(X) + δ(X)·A + ε,    μ(X) = 1 + 2X₁ + X₂ + ½X₃
//! ```
//!
//! The optimal rule is `sign(δ(X))`, so each scenario doubles as an oracle.
//!
//! # Random streams
//!
//! A trial with seed `s` uses ChaCha20 keyed by `seed_from_u64(s)`, on three
//! streams: 0 for covariates (row-major, `x = 2u - 1`), 1 for treatments
//! (top bit of each word, set means +1) and 2 for noise (inverse normal CDF of
//! `u ∈ (0, 1)`). A uniform is `(w >> 11) · 2⁻⁵³`, half-shifted for noise.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Covariates, Dataset};
use crate::{sign, Error, Result};

pub const SCENARIOS: [u8; 5] = [1, 2, 3, 4, 5];

const STREAM_COVARIATES: u64 = 0;
const STREAM_TREATMENTS: u64 = 1;
const STREAM_NOISE: u64 = 2;
const TWO_POW_MINUS_53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: u8,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedTrial {
    pub data: Dataset,
    pub oracle_decisions: Vec<i8>,
    pub delta_values: Vec<f64>,
}

fn check_scenario(id: u8) -> Result<()> {
    if SCENARIOS.contains(&id) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("unknown scenario {id}, expected 1..=5")))
    }
}

/// Covariates read by `δ` for a scenario.
pub fn delta_dimension(id: u8) -> Result<usize> {
    check_scenario(id)?;
    Ok(match id {
        3 => 4,
        5 => 8,
        _ => 2,
    })
}

/// Minimum `p` for generating a trial: `δ`'s needs and the three covariates
/// of `μ`.
pub fn min_dimension(id: u8) -> Result<usize> {
    Ok(delta_dimension(id)?.max(3))
}

fn check_width(id: u8, x: &[f64]) -> Result<()> {
    let needed = delta_dimension(id)?;
    if x.len() < needed {
        return Err(Error::ScenarioDimension {
            scenario: id,
            needed,
            got: x.len(),
        });
    }
    Ok(())
}

/// Common effect `μ(x) = 1 + 2x₁ + x₂ + ½x₃`.
pub fn common_effect(x: &[f64]) -> f64 {
    1.0 + 2.0 * x[0] + x[1] + 0.5 * x[2]
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Treatment interaction `δ(x)` of a scenario.
pub fn delta(id: u8, x: &[f64]) -> Result<f64> {
    check_width(id, x)?;
    let v = match id {
        1 => 3.0 * indicator(x[0] <= 0.5) * (indicator(x[1] > -0.5) - 1.0) + 1.0,
        2 => 1.3 * (x[1] - 2.0 * x[0] * x[0] + 0.3),
        3 => 0.2 + x[0] * x[0] + x[1] * x[1] - x[2] * x[2] - x[3] * x[3],
        4 => 3.8 * (0.8 - x[0] * x[0] - x[1] * x[1]),
        5 => {
            1.0 - x[0].powi(3) + (x[2] * x[2] + x[4]).exp() + 0.6 * x[5]
                - (x[6] + x[7]).powi(2)
        }
        _ => unreachable!(),
    };
    Ok(v)
}

/// The known optimal rule, written as the decision regions rather than
/// through `δ`. Boundary points get +1.
pub fn oracle_decide(id: u8, x: &[f64]) -> Result<i8> {
    check_width(id, x)?;
    let plus = match id {
        1 => !(x[0] <= 0.5 && x[1] <= -0.5),
        2 => x[1] - 2.0 * x[0] * x[0] + 0.3 >= 0.0,
        3 => 0.2 + x[0] * x[0] + x[1] * x[1] - x[2] * x[2] - x[3] * x[3] >= 0.0,
        4 => x[0] * x[0] + x[1] * x[1] <= 0.8,
        5 => {
            1.0 - x[0].powi(3) + (x[2] * x[2] + x[4]).exp() + 0.6 * x[5] - (x[6] + x[7]).powi(2)
                >= 0.0
        }
        _ => unreachable!(),
    };
    Ok(if plus { 1 } else { -1 })
}

/// Oracle decisions for every row of `x`.
pub fn oracle_decisions(id: u8, x: &Covariates) -> Result<Vec<i8>> {
    x.rows().map(|row| oracle_decide(id, &row)).collect()
}

fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn uniform(rng: &mut ChaCha20Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * TWO_POW_MINUS_53
}

fn open_uniform(rng: &mut ChaCha20Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * TWO_POW_MINUS_53
}

/// Draws one trial. Deterministic in `spec.seed`.
pub fn generate(spec: &ScenarioSpec) -> Result<SimulatedTrial> {
    let needed = min_dimension(spec.scenario)?;
    if spec.p < needed {
        return Err(Error::ScenarioDimension {
            scenario: spec.scenario,
            needed,
            got: spec.p,
        });
    }
    if spec.n == 0 {
        return Err(Error::InvalidArgument("trial size n must be >= 1".into()));
    }
    let (n, p) = (spec.n, spec.p);
    let mut cov_rng = stream(spec.seed, STREAM_COVARIATES);
    let mut trt_rng = stream(spec.seed, STREAM_TREATMENTS);
    let mut noise_rng = stream(spec.seed, STREAM_NOISE);

    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| 2.0 * uniform(&mut cov_rng) - 1.0).collect())
        .collect();
    let treatments: Vec<i8> = (0..n)
        .map(|_| if trt_rng.next_u64() >> 63 == 1 { 1 } else { -1 })
        .collect();

    let mut outcomes = Vec::with_capacity(n);
    let mut delta_values = Vec::with_capacity(n);
    for (row, &a) in rows.iter().zip(&treatments) {
        let d = delta(spec.scenario, row)?;
        let eps = normal_quantile(open_uniform(&mut noise_rng));
        outcomes.push(common_effect(row) + d * f64::from(a) + eps);
        delta_values.push(d);
    }
    let oracle_decisions = delta_values.iter().map(|&d| sign(d)).collect();
    let data = Dataset::new(Covariates::from_rows(&rows)?, treatments, outcomes, vec![0.5; n])?;
    Ok(SimulatedTrial {
        data,
        oracle_decisions,
        delta_values,
    })
}

fn poly(coeffs: &[f64], r: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * r + c)
}

/// Standard normal quantile, Wichura's AS 241 (PPND16); relative accuracy
/// about 1e-16 over `(0, 1)`.
#[allow(clippy::excessive_precision)]
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_608,
        133.141_667_891_784_377_45,
        1_971.590_950_306_551_442_7,
        13_731.693_765_509_461_125,
        45_921.953_931_549_871_457,
        67_265.770_927_008_700_853,
        33_430.575_583_588_128_105,
        2_509.080_928_730_122_672_7,
    ];
    const B: [f64; 8] = [
        1.0,
        42.313_330_701_600_911_252,
        687.187_007_492_057_908_3,
        5_394.196_021_424_751_107_7,
        21_213.794_301_586_595_867,
        39_307.895_800_092_710_61,
        28_729.085_735_721_942_674,
        5_226.495_278_852_545_925,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_577_34,
        4.630_337_846_156_545_295_9,
        5.769_497_221_460_691_405_5,
        3.647_848_324_763_204_605_04,
        1.270_458_252_452_368_382_58,
        0.241_780_725_177_450_611_77,
        0.022_723_844_989_269_184_583_3,
        7.745_450_142_783_414_076_4e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_821_87,
        1.676_384_830_183_803_849_4,
        0.689_767_334_985_100_004_55,
        0.148_103_976_427_480_074_59,
        0.015_198_666_563_616_457_196_6,
        5.475_938_084_995_344_946e-4,
        1.050_750_071_644_416_843_24e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103_777_2,
        5.463_784_911_164_114_369_9,
        1.784_826_539_917_291_335_8,
        0.296_560_571_828_504_891_23,
        0.026_532_189_526_576_123_093,
        0.001_242_660_947_388_078_438_6,
        2.711_555_568_743_487_578_15e-5,
        2.010_334_399_292_288_132_65e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        0.599_832_206_555_887_937_69,
        0.136_929_880_922_735_805_31,
        0.014_875_361_290_850_614_852_5,
        7.868_691_311_456_132_591e-4,
        1.846_318_317_510_054_681_8e-5,
        1.421_511_758_316_445_888_7e-7,
        2.044_263_103_389_939_785_64e-15,
    ];

    assert!(p > 0.0 && p < 1.0, "normal quantile needs p in (0, 1), got {p}");
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        r -= 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}
