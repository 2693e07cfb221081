mod common;

use hiermaml::harness::{prepare, pretrain, train, Artifact};
use hiermaml::hierarchy::{
    evaluate_adaptive, load_hierarchy, route, save_hierarchy, select_threshold, GammaBounds, TaskHierarchy,
};
use hiermaml::tasks::Task;
use proptest::prelude::*;

fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64
}

/// Exhaustive reference: every V_k, argmin over the window, first minimum wins.
fn brute_force(values: &[f64], a: f64, b: f64) -> (f64, usize) {
    let n = values.len();
    let finite_min = values.iter().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
    let sentinel = if finite_min.is_finite() { finite_min - 1.0 } else { -1.0 };
    let mut sorted: Vec<f64> = values.iter().map(|&v| if v.is_finite() { v } else { sentinel }).collect();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let v: Vec<f64> = (0..n).map(|k| variance(&sorted[..k]) + variance(&sorted[k..])).collect();
    let (mut lo, mut hi) = ((a * n as f64).floor() as usize, ((b * n as f64).floor() as usize).min(n));
    if lo >= hi {
        lo = 0;
        hi = n;
    }
    let mut best = lo;
    for k in lo..hi {
        if v[k] < v[best] {
            best = k;
        }
    }
    (sorted[best], best)
}

fn arrays() -> impl Strategy<Value = Vec<f64>> {
    let value = prop_oneof![
        6 => -1.0f64..1.0,
        2 => (0i32..6).prop_map(|i| f64::from(i) * 0.2),
        1 => Just(f64::NEG_INFINITY),
    ];
    prop::collection::vec(value, 3..=200)
}

fn bounds() -> impl Strategy<Value = (f64, f64)> {
    (0.0f64..1.0, 0.0f64..1.0)
        .prop_filter("a < b", |(a, b)| a < b)
        .prop_map(|(a, b)| (a, b))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn threshold_matches_brute_force(values in arrays(), (a, b) in bounds()) {
        let got = select_threshold(&values, GammaBounds::new(a, b).unwrap()).unwrap();
        let (gamma, k) = brute_force(&values, a, b);
        prop_assert_eq!(got.split_index, k);
        prop_assert_eq!(got.gamma.to_bits(), gamma.to_bits());
        let mut all: Vec<usize> = got.hard.iter().chain(&got.easy).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..values.len()).collect::<Vec<_>>());
        let min = values.iter().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
        let floor = if min.is_finite() { min - 1.0 } else { -1.0 };
        let clamped = |i: usize| if values[i].is_finite() { values[i] } else { floor };
        for &i in &got.hard {
            prop_assert!(clamped(i) < gamma);
        }
        for &i in &got.easy {
            prop_assert!(clamped(i) >= gamma);
        }
    }
}

#[test]
fn all_diverged_scores_clamp_to_minus_one() {
    let values = [f64::NEG_INFINITY; 4];
    let got = select_threshold(&values, GammaBounds::new(0.35, 0.65).unwrap()).unwrap();
    assert_eq!(got.gamma, -1.0);
    assert!(got.hard.is_empty());
}

#[test]
fn worked_example() {
    let values = [0.1, 0.15, 0.2, 0.7, 0.75, 0.8];
    let got = select_threshold(&values, GammaBounds::new(0.2, 0.8).unwrap()).unwrap();
    assert_eq!(brute_force(&values, 0.2, 0.8), (0.7, 3));
    assert_eq!(got.gamma, 0.7);
    assert_eq!(got.hard, vec![0, 1, 2]);
}

fn trained(seed: u64) -> (TaskHierarchy, Vec<hiermaml::hierarchy::PartitionRecord>, Vec<Task>, usize) {
    let cfg = common::small_config(seed);
    let data = prepare(&cfg).unwrap();
    let pre = pretrain(&cfg, &data).unwrap();
    let out = train(&cfg, &data, &pre.model).unwrap();
    match out.artifact {
        Artifact::Hierarchy(h) => (h, out.partitions, data.test.tasks, cfg.hierarchy.max_splits),
        other => panic!("unexpected artifact {}", other.kind()),
    }
}

#[test]
fn trained_hierarchies_keep_partition_and_routing_invariants() {
    let cfg = common::small_config(0);
    let (alpha, steps) = (cfg.meta.inner_lr, cfg.meta.adaptation_steps);
    for seed in 0..3 {
        let (h, partitions, test, u) = trained(seed);
        h.validate(u).unwrap();
        assert!(h.depth() <= u);
        assert_eq!(h.threshold_log.len(), partitions.len());

        for p in &partitions {
            let mut ids: Vec<u64> = p.easy_ids.iter().chain(&p.hard_ids).copied().collect();
            ids.sort_unstable();
            let entering: Vec<u64> = p.scores.iter().map(|s| s.0).collect();
            assert_eq!(ids, entering, "epoch {} layer {}", p.epoch, p.layer);
            for &(id, r2) in &p.scores {
                assert_eq!(p.hard_ids.contains(&id), r2 < p.gamma);
            }
        }
        let last_epoch = partitions.iter().map(|p| p.epoch).max().unwrap();
        let chain = h.root.chain();
        for (i, node) in chain.iter().enumerate() {
            let record = partitions.iter().find(|p| p.epoch == last_epoch && p.layer == node.layer).unwrap();
            assert_eq!(node.gamma, record.gamma);
            assert_eq!(node.easy_ids, record.easy_ids);
            assert_eq!(node.hard_ids, record.hard_ids);
            if let Some(next) = chain.get(i + 1) {
                let entering: Vec<u64> = partitions
                    .iter()
                    .find(|p| p.epoch == last_epoch && p.layer == next.layer)
                    .unwrap()
                    .scores
                    .iter()
                    .map(|s| s.0)
                    .collect();
                assert_eq!(entering, node.hard_ids);
            }
        }

        for task in &test {
            let first = route(task, &h, alpha, steps).unwrap();
            let second = route(task, &h, alpha, steps).unwrap();
            assert!((1..=h.depth()).contains(&first.layer));
            assert_eq!(first.layer, second.layer);
            assert_eq!(first.leaf, second.leaf);
            assert_eq!(first.routing_r2.to_bits(), second.routing_r2.to_bits());
            assert_eq!(first.path.len(), first.layer);
        }
    }
}

#[test]
fn hierarchy_file_round_trip_gives_identical_predictions() {
    let (h, _, test, _) = trained(7);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.bin");
    save_hierarchy(&h, &path).unwrap();
    let back = load_hierarchy(&path).unwrap();
    assert_eq!(back, h);
    let refs: Vec<&Task> = test.iter().collect();
    let a = evaluate_adaptive(&refs, &h, 0.01, 1).unwrap();
    let b = evaluate_adaptive(&refs, &back, 0.01, 1).unwrap();
    assert_eq!(a, b);
}
