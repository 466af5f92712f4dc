//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use itrboost::bench::{self, BenchConfig, BenchSummary, Size, THREADS_ENV};
use itrboost::boosting::{find_best_split, fit_leaf_weight, split_gain, GradHess, HyperParams};
use itrboost::data::{Covariates, Dataset};
use itrboost::eval::{estimate_value, misclassification, welch_test};
use itrboost::itr::Method;
use itrboost::losses::LossSpec;
use rand::Rng;

use common::{exhaustive_split, rng, t_upper_tail_quadrature, DiscretePopulation};

type Outcome = (bool, String);

const MASTER_SEED: u64 = 20240601;

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut mismatches = Vec::new();
    let mut splits_found = 0;
    for inst in 0..200 {
        let n = r.random_range(2..=20);
        let p = r.random_range(1..=3);
        let levels = r.random_range(2..=8);
        let cols: Vec<Vec<f64>> = (0..p)
            .map(|_| (0..n).map(|_| r.random_range(0..levels) as f64 * 0.25 - 1.0).collect())
            .collect();
        let x = Covariates::from_columns(cols).unwrap();
        let gh = GradHess {
            g: (0..n).map(|_| r.random_range(-3.0..3.0)).collect(),
            h: (0..n).map(|_| r.random_range(0.1..3.0)).collect(),
        };
        let params = HyperParams {
            lambda: [0.0, 0.5, 1.0, 3.0][r.random_range(0..4)],
            gamma: [0.0, 0.05][r.random_range(0..2)],
            min_child_hessian: [0.0, 0.0, 0.8][r.random_range(0..3)],
            ..HyperParams::default()
        };
        let rows: Vec<usize> = (0..n).collect();
        let got = find_best_split(&x, &rows, &gh, &params);
        let want = exhaustive_split(&x, &rows, &gh, &params);
        let ok = match (&got, &want) {
            (None, None) => true,
            (Some(s), Some((w, left))) => {
                splits_found += 1;
                let got_left: Vec<usize> =
                    rows.iter().copied().filter(|&i| x.get(i, s.feature) < s.threshold).collect();
                (s.gain - w.gain).abs() <= 1e-10 && &got_left == left
            }
            _ => false,
        };
        if !ok {
            mismatches.push(inst);
        }
    }

    // squared-loss closed forms in terms of residuals r = t - f
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = r.random_range(2..=20);
        let t: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        let f: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        let lambda = r.random_range(0.0..3.0);
        let gamma = r.random_range(0.0..1.0);
        let split = r.random_range(1..n);
        let gh = LossSpec::squared(t.clone()).grad_hess(&f);
        let resid: Vec<f64> = t.iter().zip(&f).map(|(a, b)| a - b).collect();
        let sum = |v: &[f64]| v.iter().sum::<f64>();
        let w_closed = 2.0 * sum(&resid) / (2.0 * n as f64 + lambda);
        let w_lib = fit_leaf_weight(sum(&gh.g), sum(&gh.h), lambda).unwrap();
        worst = worst.max(rel_err(w_lib, w_closed));
        let (rl, rr) = resid.split_at(split);
        let term = |s: f64, m: usize| (2.0 * s).powi(2) / (2.0 * m as f64 + lambda);
        let gain_closed = 0.5
            * (term(sum(rl), rl.len()) + term(sum(rr), rr.len()) - term(sum(&resid), n))
            - gamma;
        let (gl, gr) = gh.g.split_at(split);
        let (hl, hr) = gh.h.split_at(split);
        let gain_lib = split_gain(sum(gl), sum(hl), sum(gr), sum(hr), lambda, gamma).unwrap();
        worst = worst.max(rel_err(gain_lib, gain_closed));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = mismatches.is_empty() && worst <= 1e-12 && secs < 5.0;
    (
        pass,
        format!(
            "200 split instances ({splits_found} with a split), mismatches {mismatches:?}; \
             closed-form max rel err {worst:.2e}; {secs:.2}s"
        ),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let step = 1e-6;
    let mut r = rng(2);
    let mut worst_g: f64 = 0.0;
    let mut worst_h: f64 = 0.0;
    for kind in 0..3 {
        for _ in 0..1000 {
            let t: f64 = r.random_range(-3.0..3.0);
            let w: f64 = r.random_range(0.2..5.0);
            let z: i8 = if r.random_bool(0.5) { 1 } else { -1 };
            let f: f64 = r.random_range(-3.0..3.0);
            let (spec, loss): (LossSpec, Box<dyn Fn(f64) -> f64>) = match kind {
                0 => (LossSpec::squared(vec![t]), Box::new(move |f: f64| (t - f).powi(2))),
                1 => (
                    LossSpec::weighted_squared(vec![t], vec![w]).unwrap(),
                    Box::new(move |f: f64| w * (t - f).powi(2)),
                ),
                _ => (
                    LossSpec::weighted_deviance(vec![z], vec![w]).unwrap(),
                    Box::new(move |f: f64| w * (1.0 + (-2.0 * f64::from(z) * f).exp()).ln()),
                ),
            };
            let at = |f: f64| spec.grad_hess(&[f]);
            let gh = at(f);
            let g_fd = (loss(f + step) - loss(f - step)) / (2.0 * step);
            let h_fd = (at(f + step).g[0] - at(f - step).g[0]) / (2.0 * step);
            worst_g = worst_g.max(rel_err(gh.g[0], g_fd));
            worst_h = worst_h.max(rel_err(gh.h[0], h_fd));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        worst_g < 1e-4 && worst_h < 1e-4 && secs < 5.0,
        format!("3 losses x 1000 points; max rel err g {worst_g:.2e}, h {worst_h:.2e}; {secs:.2}s"),
    )
}

/// Root of a nondecreasing function on `[a, b]` by bisection.
fn bisect_root(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if f(m) < 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

fn phi_prime(x: f64) -> f64 {
    -2.0 / (1.0 + (2.0 * x).exp())
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut r = rng(3);
    let mut worst_prop2: f64 = 0.0;
    let mut worst_thm3: f64 = 0.0;
    let mut worst_thm3_argmin: f64 = 0.0;
    let mut sign_failures = 0;
    let mut points = 0;
    for pop_index in 0..50 {
        let pop = DiscretePopulation::random(&mut r, 4, pop_index % 2 == 0);
        for x in 0..4 {
            points += 1;
            let f_star = pop.quality(x, 1) - pop.quality(x, -1);
            let mu = 0.5 * (pop.quality(x, 1) + pop.quality(x, -1));
            let pi = |a: i8| pop.propensity(x, a);

            // derivative of E{(1/π)(2YA - g)²} in g
            let d_prop2 = |g: f64| pop.expect(x, |y, a| -2.0 * (2.0 * y * f64::from(a) - g) / pi(a));
            let g_min = bisect_root(d_prop2, -100.0, 100.0);
            worst_prop2 = worst_prop2.max((g_min - f_star).abs());

            let mu_ipw = pop.expect(x, |y, a| y / (2.0 * pi(a)));
            worst_thm3 = worst_thm3.max((mu_ipw - mu).abs());
            let d_thm3 = |g: f64| pop.expect(x, |y, a| -2.0 * (y - g) / pi(a));
            worst_thm3_argmin = worst_thm3_argmin.max((bisect_root(d_thm3, -100.0, 100.0) - mu).abs());

            // derivative of E{|Y-μ|/π φ(A f sign(Y-μ))} in f
            let d_dev = |f: f64| {
                pop.expect(x, |y, a| {
                    let s = if y - mu < 0.0 { -1.0 } else { 1.0 };
                    let m = f64::from(a) * s;
                    (y - mu).abs() / pi(a) * m * phi_prime(m * f)
                })
            };
            let f_dev = bisect_root(d_dev, -100.0, 100.0);
            let sign = |v: f64| if v < 0.0 { -1 } else { 1 };
            if sign(f_dev) != sign(f_star) {
                sign_failures += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst_prop2 <= 1e-8
        && worst_thm3 <= 1e-10
        && worst_thm3_argmin <= 1e-8
        && sign_failures == 0
        && secs < 10.0;
    (
        pass,
        format!(
            "{points} support points; weighted-quadratic minimizer err {worst_prop2:.1e}, \
             deviance sign failures {sign_failures}, IPW common-effect err {worst_thm3:.1e} \
             (argmin {worst_thm3_argmin:.1e}); {secs:.2}s"
        ),
    )
}

fn desk_configs() -> Vec<BenchConfig> {
    let mut a = BenchConfig::new(vec![1, 2, 3, 4, 5], vec![Size { n: 400, p: 10 }]);
    a.master_seed = MASTER_SEED;
    let mut b = BenchConfig::new(vec![2], vec![Size { n: 800, p: 10 }]);
    b.master_seed = MASTER_SEED;
    vec![a, b]
}

fn run_desk(threads: &str) -> Vec<BenchSummary> {
    std::env::set_var(THREADS_ENV, threads);
    let out = desk_configs()
        .iter()
        .map(|cfg| bench::run(cfg).expect("benchmark run"))
        .collect();
    std::env::remove_var(THREADS_ENV);
    out
}

fn output_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-bench")
}

fn find(runs: &[BenchSummary], m: Method, scenario: u8, n: usize) -> (f64, f64) {
    let row = runs
        .iter()
        .find_map(|s| s.row(m, scenario, n, 10))
        .expect("summary row");
    (row.misclassification_mean, row.value_mean)
}

fn criterion_4(runs: &[BenchSummary], secs: f64) -> Outcome {
    let mut checks = Vec::new();
    let (m, v) = find(runs, Method::DirectBoosting2, 1, 400);
    checks.push((format!("S1 DB-II miss {m:.3} <= 0.05, value {v:.3} >= 2.00"), m <= 0.05 && v >= 2.0));
    let (m, _) = find(runs, Method::IndirectBoosting, 1, 400);
    checks.push((format!("S1 IB miss {m:.3} <= 0.06"), m <= 0.06));
    let (m, _) = find(runs, Method::IndirectBoosting, 2, 800);
    checks.push((format!("S2 n=800 IB miss {m:.3} <= 0.12"), m <= 0.12));
    for method in [Method::IndirectBoosting, Method::DirectBoosting1, Method::DirectBoosting2] {
        let (_, v) = find(runs, method, 5, 400);
        checks.push((format!("S5 {method} value {v:.3} >= 2.85"), v >= 2.85));
    }
    let failed: usize = runs.iter().flat_map(|s| &s.rows).map(|r| r.failed).sum();
    checks.push((format!("failed fits {failed}"), failed == 0));
    let pass = checks.iter().all(|(_, ok)| *ok);
    let detail: Vec<String> = checks
        .iter()
        .map(|(d, ok)| format!("{d}{}", if *ok { "" } else { " [FAIL]" }))
        .collect();
    (pass, format!("{}; {:.0}s", detail.join("; "), secs))
}

fn criterion_5(runs: &[BenchSummary]) -> Outcome {
    let mut detail = Vec::new();
    let mut pass = true;
    for scenario in 1..=4 {
        for (boost, linear) in [
            (Method::IndirectBoosting, Method::QLearning),
            (Method::DirectBoosting1, Method::DLearning),
        ] {
            let (mb, _) = find(runs, boost, scenario, 400);
            let (ml, _) = find(runs, linear, scenario, 400);
            let ok = mb < ml;
            pass &= ok;
            detail.push(format!(
                "S{scenario} {boost} {mb:.3} vs {linear} {ml:.3}{}",
                if ok { "" } else { " [FAIL]" }
            ));
        }
    }
    (pass, detail.join("; "))
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let mut r = rng(6);
    let mut problems = Vec::new();

    for trial in 0..100 {
        let n = r.random_range(1..200);
        let pi = r.random_range(0.05..0.95);
        let a: Vec<i8> = (0..n).map(|_| if r.random_bool(0.5) { 1 } else { -1 }).collect();
        let y: Vec<f64> = (0..n).map(|_| r.random_range(-10.0..10.0)).collect();
        let x = Covariates::from_columns(vec![vec![0.0; n]]).unwrap();
        let data = Dataset::new(x, a.clone(), y.clone(), vec![pi; n]).unwrap();
        let mean = y.iter().sum::<f64>() / n as f64;
        if estimate_value(&a, &data).unwrap() != mean {
            problems.push(format!("value identity failed on trial {trial}"));
        }
    }

    for trial in 0..1000 {
        let n = r.random_range(1..100);
        let u: Vec<i8> = (0..n).map(|_| if r.random_bool(0.5) { 1 } else { -1 }).collect();
        let v: Vec<i8> = (0..n).map(|_| if r.random_bool(0.5) { 1 } else { -1 }).collect();
        let flipped: Vec<i8> = u.iter().map(|d| -d).collect();
        let ok = misclassification(&u, &u).unwrap() == 0.0
            && misclassification(&u, &flipped).unwrap() == 1.0
            && misclassification(&u, &v).unwrap() == misclassification(&v, &u).unwrap();
        if !ok {
            problems.push(format!("misclassification axioms failed on trial {trial}"));
        }
    }

    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n1 = r.random_range(2..40);
        let n2 = r.random_range(2..40);
        let s1 = r.random_range(0.2..3.0);
        let s2 = r.random_range(0.2..3.0);
        let shift = r.random_range(-1.5..1.5);
        let g1: Vec<f64> = (0..n1).map(|_| shift + s1 * r.random_range(-1.0..1.0)).collect();
        let g2: Vec<f64> = (0..n2).map(|_| s2 * r.random_range(-1.0..1.0)).collect();
        let w = welch_test(&g1, &g2).unwrap();
        worst = worst.max((w.p_one_sided - t_upper_tail_quadrature(w.t, w.dof)).abs());
    }
    if worst > 1e-8 {
        problems.push(format!("Welch p-value off by {worst:.2e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    (
        problems.is_empty(),
        format!(
            "value identity 100 trials, misclassification axioms 1000 pairs, Welch max abs err \
             {worst:.2e} over 100 pairs{}; {secs:.2}s",
            if problems.is_empty() {
                String::new()
            } else {
                format!(" [{}]", problems.join(", "))
            }
        ),
    )
}

fn criterion_7(eight: &[BenchSummary], one: &[BenchSummary]) -> Outcome {
    let dir = output_dir();
    let mut identical = true;
    let mut bytes = 0;
    for (i, (a, b)) in eight.iter().zip(one).enumerate() {
        let sa = a.summary_csv().unwrap();
        let sb = b.summary_csv().unwrap();
        bytes += sa.len();
        identical &= sa == sb;
        let _ = std::fs::create_dir_all(&dir);
        let _ = std::fs::write(dir.join(format!("summary_{i}_threads8.csv")), &sa);
        let _ = std::fs::write(dir.join(format!("summary_{i}_threads1.csv")), &sb);
    }
    (
        identical,
        format!(
            "summary.csv with {THREADS_ENV}=8 vs {THREADS_ENV}=1: {} ({bytes} bytes)",
            if identical { "byte-identical" } else { "DIFFERENT" }
        ),
    )
}

fn report(index: usize, name: &str, (pass, detail): &Outcome) {
    println!(
        "criterion {index} [{}] {name}: {detail}",
        if *pass { "PASS" } else { "FAIL" }
    );
}

fn main() -> ExitCode {
    let mut all = true;
    let mut emit = |i: usize, name: &str, o: Outcome| {
        report(i, name, &o);
        all &= o.0;
    };
    emit(1, "boosting-core oracle suite", criterion_1());
    emit(2, "gradient checks", criterion_2());
    emit(3, "Fisher-consistency oracles", criterion_3());

    let start = Instant::now();
    let eight = run_desk("8");
    let secs = start.elapsed().as_secs_f64();
    let dir = output_dir();
    for (i, (s, cfg)) in eight.iter().zip(desk_configs()).enumerate() {
        if let Err(e) = s.write(dir.join(format!("desk_{i}")), &cfg) {
            eprintln!("could not write benchmark outputs: {e}");
        }
    }
    emit(4, "desk-scale Table 1 trends", criterion_4(&eight, secs));
    emit(5, "boosting beats linear counterparts", criterion_5(&eight));
    emit(6, "evaluation identities", criterion_6());
    let one = run_desk("1");
    emit(7, "end-to-end determinism", criterion_7(&eight, &one));

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
