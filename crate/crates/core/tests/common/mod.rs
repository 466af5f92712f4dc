#![allow(dead_code)]

use itrboost::boosting::{GradHess, HyperParams, SplitCandidate};
use itrboost::data::Covariates;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Golden-section search for the minimizer of a unimodal `f` on `[a, b]`.
pub fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..300 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
        if b - a < 1e-15 * (1.0 + a.abs()) {
            break;
        }
    }
    0.5 * (a + b)
}

/// Tanh-sinh quadrature of `f` over `[a, b]`; tolerates integrable endpoint
/// singularities.
pub fn tanh_sinh(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let h = 1.0 / 64.0;
    let pi2 = std::f64::consts::FRAC_PI_2;
    let mut sum = 0.0;
    let mut k: i64 = -64 * 7;
    while k <= 64 * 7 {
        let t = k as f64 * h;
        let u = pi2 * t.sinh();
        let x = u.tanh();
        let w = pi2 * t.cosh() / (u.cosh() * u.cosh());
        // distance to the nearer endpoint, computed without cancellation
        let gap = 1.0 / (u.abs().exp() * u.cosh());
        let point = if x >= 0.0 { b - half * gap } else { a + half * gap };
        if gap > 0.0 && point > a && point < b {
            sum += w * f(point);
        }
        k += 1;
    }
    sum * h * half
}

/// `P(T > t)` for Student's t with `dof` degrees of freedom, by integrating
/// the unnormalized density in the angle `θ = atan(x/√ν)`.
pub fn t_upper_tail_quadrature(t: f64, dof: f64) -> f64 {
    let pi2 = std::f64::consts::FRAC_PI_2;
    let dens = |theta: f64| theta.cos().powf(dof - 1.0);
    let theta_t = (t / dof.sqrt()).atan();
    let total = tanh_sinh(dens, -pi2, pi2);
    tanh_sinh(dens, theta_t, pi2) / total
}

/// Exhaustive split search: every feature and every cut between distinct
/// values, with gains computed from direct sums over each child. Returns
/// the best split and its left-child rows.
pub fn exhaustive_split(
    x: &Covariates,
    rows: &[usize],
    gh: &GradHess,
    params: &HyperParams,
) -> Option<(SplitCandidate, Vec<usize>)> {
    let lambda = params.lambda;
    let obj = |g: f64, h: f64| g * g / (h + lambda);
    let mut all: Vec<(SplitCandidate, Vec<usize>)> = Vec::new();
    for j in 0..x.n_cols() {
        let mut values: Vec<f64> = rows.iter().map(|&i| x.get(i, j)).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let cut = w[0];
            let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
            let mut left = Vec::new();
            for (k, &i) in rows.iter().enumerate() {
                if x.get(i, j) <= cut {
                    gl += gh.g[k];
                    hl += gh.h[k];
                    left.push(i);
                } else {
                    gr += gh.g[k];
                    hr += gh.h[k];
                }
            }
            if hl < params.min_child_hessian || hr < params.min_child_hessian {
                continue;
            }
            let gain = 0.5 * (obj(gl, hl) + obj(gr, hr) - obj(gl + gr, hl + hr)) - params.gamma;
            if gain <= 0.0 {
                continue;
            }
            let threshold = 0.5 * (w[0] + w[1]);
            all.push((SplitCandidate { feature: j, threshold, gain }, left));
        }
    }
    // equal gains up to rounding: the earliest feature, then cut, wins
    let top = all.iter().map(|(s, _)| s.gain).fold(f64::NEG_INFINITY, f64::max);
    all.into_iter()
        .find(|(s, _)| top - s.gain <= 1e-11 * top.abs().max(1.0))
}

/// A discrete population: `Y | X = x, A = a` is uniform over
/// `outcomes[x][arm]`, arm 0 being `A = +1`, and `P(A = +1 | x) = pi_plus[x]`.
pub struct DiscretePopulation {
    pub outcomes: Vec<[Vec<f64>; 2]>,
    pub pi_plus: Vec<f64>,
}

impl DiscretePopulation {
    pub fn random(rng: &mut impl Rng, points: usize, balanced: bool) -> Self {
        let mut outcomes = Vec::new();
        let mut pi_plus = Vec::new();
        for _ in 0..points {
            let mu: f64 = rng.random_range(-2.0..2.0);
            let delta: f64 = rng.random_range(-1.5..1.5);
            let mut arm = |sign: f64| {
                // three equally likely atoms a, -b, b - a: zero mean, asymmetric
                let a: f64 = rng.random_range(0.1..2.0);
                let b: f64 = rng.random_range(0.1..2.0);
                let centre = mu + sign * delta;
                vec![centre + a, centre - b, centre + b - a]
            };
            let plus = arm(1.0);
            let minus = arm(-1.0);
            outcomes.push([plus, minus]);
            pi_plus.push(if balanced { 0.5 } else { rng.random_range(0.2..0.8) });
        }
        Self { outcomes, pi_plus }
    }

    pub fn quality(&self, x: usize, a: i8) -> f64 {
        let ys = &self.outcomes[x][if a == 1 { 0 } else { 1 }];
        ys.iter().sum::<f64>() / ys.len() as f64
    }

    pub fn propensity(&self, x: usize, a: i8) -> f64 {
        if a == 1 {
            self.pi_plus[x]
        } else {
            1.0 - self.pi_plus[x]
        }
    }

    /// `E{ h(Y, A) | X = x }` under the population.
    pub fn expect(&self, x: usize, h: impl Fn(f64, i8) -> f64) -> f64 {
        let mut total = 0.0;
        for a in [1i8, -1] {
            let ys = &self.outcomes[x][if a == 1 { 0 } else { 1 }];
            let inner = ys.iter().map(|&y| h(y, a)).sum::<f64>() / ys.len() as f64;
            total += self.propensity(x, a) * inner;
        }
        total
    }
}
