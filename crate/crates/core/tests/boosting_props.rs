mod common;

use std::collections::HashMap;

use itrboost::boosting::{
    find_best_split, grow_tree_traced, train, BoostedEnsemble, GradHess, HyperParams, Node,
};
use itrboost::data::Covariates;
use itrboost::losses::LossSpec;
use proptest::prelude::*;

use common::exhaustive_split;

/// Columns on a coarse lattice so ties and repeated values are common.
fn lattice_data(max_n: usize, max_p: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, Vec<f64>)> {
    (2..=max_n, 1..=max_p).prop_flat_map(|(n, p)| {
        (
            prop::collection::vec(prop::collection::vec((0..6i32).prop_map(|v| f64::from(v) * 0.5), n), p),
            prop::collection::vec(-3.0..3.0f64, n),
            prop::collection::vec(0.05..3.0f64, n),
        )
    })
}

fn objective(g: f64, h: f64, lambda: f64) -> f64 {
    -0.5 * g * g / (h + lambda)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn split_search_matches_exhaustive(
        (cols, g, h) in lattice_data(20, 3),
        lambda in prop::sample::select(vec![0.0, 0.5, 2.0]),
        gamma in prop::sample::select(vec![0.0, 0.1]),
        mch in prop::sample::select(vec![0.0, 0.5]),
    ) {
        let x = Covariates::from_columns(cols).unwrap();
        let rows: Vec<usize> = (0..x.n_rows()).collect();
        let gh = GradHess { g, h };
        let params = HyperParams { lambda, gamma, min_child_hessian: mch, ..HyperParams::default() };
        let got = find_best_split(&x, &rows, &gh, &params);
        let want = exhaustive_split(&x, &rows, &gh, &params);
        match (got, want) {
            (None, None) => {}
            (Some(s), Some((w, left))) => {
                prop_assert_eq!(s.feature, w.feature);
                prop_assert!((s.gain - w.gain).abs() <= 1e-10);
                let got_left: Vec<usize> =
                    rows.iter().copied().filter(|&i| x.get(i, s.feature) < s.threshold).collect();
                prop_assert_eq!(got_left, left);
            }
            (a, b) => prop_assert!(false, "library {:?} vs oracle {:?}", a, b.map(|w| w.0)),
        }
    }

    #[test]
    fn accepted_splits_lower_the_tree_objective_by_their_gain(
        (cols, g, h) in lattice_data(40, 3),
        lambda in 0.0..2.0f64,
        gamma in 0.0..0.3f64,
        depth in 1usize..5,
    ) {
        let x = Covariates::from_columns(cols).unwrap();
        let rows: Vec<usize> = (0..x.n_rows()).collect();
        let gh = GradHess { g, h };
        let params = HyperParams { lambda, gamma, max_depth: depth, ..HyperParams::default() };
        let (tree, events) = grow_tree_traced(&x, &rows, &gh, &params);

        let mut members: HashMap<usize, Vec<usize>> = HashMap::from([(0, rows.clone())]);
        let leaf_obj = |rs: &[usize]| {
            let g: f64 = rs.iter().map(|&i| gh.g[i]).sum();
            let h: f64 = rs.iter().map(|&i| gh.h[i]).sum();
            objective(g, h, lambda)
        };
        let total = |m: &HashMap<usize, Vec<usize>>| {
            m.values().map(|rs| leaf_obj(rs)).sum::<f64>() + gamma * m.len() as f64
        };
        for ev in &events {
            prop_assert!(ev.depth < depth);
            let before = total(&members);
            let rs = members.remove(&ev.node).unwrap();
            let (l, r) = match tree.nodes[ev.node] {
                Node::Split { left, right, .. } => (left, right),
                Node::Leaf { .. } => unreachable!(),
            };
            let (lr, rr): (Vec<usize>, Vec<usize>) =
                rs.iter().partition(|&&i| x.get(i, ev.feature) < ev.threshold);
            prop_assert!(!lr.is_empty() && !rr.is_empty());
            members.insert(l, lr);
            members.insert(r, rr);
            let after = total(&members);
            prop_assert!(ev.gain > 0.0);
            prop_assert!(((before - after) - ev.gain).abs() <= 1e-9 * (1.0 + before.abs()));
        }
        prop_assert!(tree.depth() <= depth);
        prop_assert_eq!(tree.n_leaves(), events.len() + 1);
    }

    #[test]
    fn squared_training_loss_never_increases(
        (cols, target, _) in lattice_data(40, 3),
        eta in 0.05..=1.0f64,
        depth in 1usize..4,
    ) {
        let x = Covariates::from_columns(cols).unwrap();
        let rows: Vec<usize> = (0..x.n_rows()).collect();
        let loss = LossSpec::squared(target);
        let params = HyperParams { rounds: 15, eta, max_depth: depth, gamma: 0.0, lambda: 0.0, min_child_hessian: 0.0 };
        let model = train(&x, &rows, &loss, &params).unwrap();
        let mut last = f64::INFINITY;
        for k in 0..=model.rounds() {
            let m = model.truncated(k);
            let f: Vec<f64> = rows.iter().map(|&i| m.predict(&x.row(i)).unwrap()).collect();
            let mse = loss.total(&f);
            prop_assert!(mse <= last * (1.0 + 1e-12) + 1e-12, "round {}: {} > {}", k, mse, last);
            last = mse;
        }
    }

    #[test]
    fn prediction_is_shrunk_sum_of_trees(
        (cols, target, weight) in lattice_data(30, 3),
        rounds in 1usize..12,
    ) {
        let x = Covariates::from_columns(cols).unwrap();
        let rows: Vec<usize> = (0..x.n_rows()).collect();
        let loss = LossSpec::weighted_squared(target, weight).unwrap();
        let params = HyperParams { rounds, eta: 0.3, max_depth: 3, ..HyperParams::default() };
        let model = train(&x, &rows, &loss, &params).unwrap();
        prop_assert!(model.rounds() <= rounds);
        for i in rows {
            let xi = x.row(i);
            let parts: Vec<f64> = model.trees.iter().map(|t| t.predict(&xi)).collect();
            let by_hand = model.base_score + model.eta * parts.iter().sum::<f64>();
            let scale = 1.0 + parts.iter().map(|v| v.abs()).sum::<f64>();
            prop_assert!((model.predict(&xi).unwrap() - by_hand).abs() <= 1e-13 * scale);
        }
    }

    #[test]
    fn training_is_deterministic_and_serializes_exactly(
        (cols, target, _) in lattice_data(30, 3),
    ) {
        let x = Covariates::from_columns(cols).unwrap();
        let rows: Vec<usize> = (0..x.n_rows()).collect();
        let labels: Vec<i8> = target.iter().map(|t| if *t < 0.0 { -1 } else { 1 }).collect();
        let weights: Vec<f64> = target.iter().map(|t| t.abs()).collect();
        let loss = LossSpec::weighted_deviance(labels, weights).unwrap();
        let params = HyperParams { rounds: 10, ..HyperParams::default() };
        let a = train(&x, &rows, &loss, &params).unwrap();
        let b = train(&x, &rows, &loss, &params).unwrap();
        prop_assert_eq!(&a, &b);
        let back = BoostedEnsemble::from_json(&a.to_json().unwrap()).unwrap();
        prop_assert_eq!(&a, &back);
    }
}

#[test]
fn truncation_matches_shorter_training() {
    let x = Covariates::from_columns(vec![
        (0..50).map(|i| f64::from(i % 7)).collect(),
        (0..50).map(|i| f64::from((i * 13) % 11)).collect(),
    ])
    .unwrap();
    let rows: Vec<usize> = (0..50).collect();
    let target: Vec<f64> = (0..50).map(|i| f64::from(i % 5) - f64::from(i % 3)).collect();
    let loss = LossSpec::squared(target);
    let long = train(&x, &rows, &loss, &HyperParams { rounds: 40, ..HyperParams::default() }).unwrap();
    for k in [1, 7, 40] {
        let short = train(&x, &rows, &loss, &HyperParams { rounds: k, ..HyperParams::default() }).unwrap();
        assert_eq!(long.truncated(k), short);
    }
}

#[test]
fn every_row_reaches_exactly_one_leaf() {
    let x = Covariates::from_columns(vec![(0..30).map(|i| f64::from(i % 4)).collect(), (0..30).map(f64::from).collect()]).unwrap();
    let rows: Vec<usize> = (0..30).collect();
    let gh = GradHess {
        g: (0..30).map(|i| f64::from(i % 5) - 2.0).collect(),
        h: vec![1.0; 30],
    };
    let params = HyperParams { max_depth: 4, lambda: 0.1, ..HyperParams::default() };
    let (tree, _) = grow_tree_traced(&x, &rows, &gh, &params);
    for i in rows {
        let leaf = tree.leaf_index(&x.row(i));
        assert!(matches!(tree.nodes[leaf], Node::Leaf { .. }));
    }
    for node in &tree.nodes {
        if let Node::Split { left, right, .. } = node {
            assert!(*left < tree.nodes.len() && *right < tree.nodes.len() && left != right);
        }
    }
}
