use hiermaml::autodiff::{
    grad_check, load_model, save_model, Architecture, Graph, ModelObjective, Objective, PredictiveModel, Tensor,
};
use hiermaml::Result;
use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Batches shaped like normalized task data: z-scored features, labels in [0, 1].
fn random_batch(arch: &Architecture, n: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<f64>) {
    let windows = (0..n)
        .map(|_| (0..arch.window_len()).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    let labels = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    (windows, labels)
}

fn refs(ws: &[Vec<f64>]) -> Vec<&[f64]> {
    ws.iter().map(|w| w.as_slice()).collect()
}

/// Entries pass on relative error, or when the disagreement is within the
/// rounding error of the central difference, `4·ε·|L|/h`.
#[test]
fn lstm_attention_gradient_matches_finite_differences() {
    let step = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..20 {
        let h = rng.random_range(2..=8);
        let t = rng.random_range(2..=10);
        let f = rng.random_range(1..=19);
        let arch = Architecture::with_default_head(f, t, h).unwrap();
        let model = PredictiveModel::init(arch.clone(), case).unwrap();
        let (windows, labels) = random_batch(&arch, 8, &mut rng);
        let objective = ModelObjective {
            model: &model,
            windows: refs(&windows),
            labels: &labels,
        };
        let report = grad_check(&objective, model.params(), step, 1e-4).unwrap();
        let rounding = 4.0 * f64::EPSILON * objective.loss(model.params()).unwrap().abs() / step;
        let bad: Vec<_> = report
            .entries
            .iter()
            .filter(|e| e.relative_error > 1e-4 && (e.analytic - e.numeric).abs() > rounding)
            .collect();
        assert!(bad.is_empty(), "case {case} (H={h}, T={t}, F={f}): {bad:?}");
    }
}

#[test]
fn small_model_gradient_h4_t5_f3() {
    let arch = Architecture::with_default_head(3, 5, 4).unwrap();
    let model = PredictiveModel::init(arch.clone(), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (windows, labels) = random_batch(&arch, 6, &mut rng);
    let objective = ModelObjective {
        model: &model,
        windows: refs(&windows),
        labels: &labels,
    };
    let report = grad_check(&objective, model.params(), 1e-5, 1e-4).unwrap();
    assert!(report.max_relative_error() < 1e-4);
}

/// `mse(X·W + b, y)` for a single linear dense layer.
struct LinearLayer {
    x: Tensor,
    y: Vec<f64>,
}

impl LinearLayer {
    fn graph(&self, params: &[f64]) -> Result<(Graph, hiermaml::autodiff::NodeId)> {
        let mut g = Graph::new(params.len());
        let w = g.param(params, 0, self.x.cols(), 1);
        let b = g.param(params, self.x.cols(), 1, 1);
        let x = g.input(self.x.clone());
        let z = g.matmul(x, w);
        let z = g.add_row(z, b);
        let loss = g.mse(z, &self.y)?;
        Ok((g, loss))
    }
}

impl Objective for LinearLayer {
    fn loss(&self, params: &[f64]) -> Result<f64> {
        let (g, loss) = self.graph(params)?;
        Ok(g.value(loss).data()[0])
    }

    fn gradient(&self, params: &[f64]) -> Result<Vec<f64>> {
        let (g, loss) = self.graph(params)?;
        g.backward(loss)
    }
}

#[test]
fn linear_dense_layer_is_exact_up_to_rounding() {
    let layer = LinearLayer {
        x: Tensor::matrix(3, 2, vec![0.5, -1.0, 2.0, 0.25, -0.75, 1.5]),
        y: vec![1.0, -0.5, 0.25],
    };
    let params = [0.3, -0.2, 0.1];
    let report = grad_check(&layer, &params, 1e-5, 1e-8).unwrap();
    assert!(report.max_relative_error() < 1e-8, "{}", report.max_relative_error());
}

struct Corrupted<'a> {
    inner: ModelObjective<'a>,
    index: usize,
}

impl Objective for Corrupted<'_> {
    fn loss(&self, params: &[f64]) -> Result<f64> {
        self.inner.loss(params)
    }

    fn gradient(&self, params: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.inner.gradient(params)?;
        g[self.index] *= 2.0;
        Ok(g)
    }
}

#[test]
fn corrupted_gradient_entry_is_flagged() {
    let arch = Architecture::with_default_head(2, 3, 3).unwrap();
    let model = PredictiveModel::init(arch.clone(), 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (windows, labels) = random_batch(&arch, 3, &mut rng);
    let grad = model.loss_and_gradient(&refs(&windows), &labels).unwrap().1;
    let index = grad
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .unwrap()
        .0;
    let objective = Corrupted {
        inner: ModelObjective {
            model: &model,
            windows: refs(&windows),
            labels: &labels,
        },
        index,
    };
    let report = grad_check(&objective, model.params(), 1e-5, 1e-4).unwrap();
    assert_eq!(report.flagged(), vec![index]);
}

#[test]
fn backward_is_linear_in_the_loss() {
    let arch = Architecture::with_default_head(3, 4, 5).unwrap();
    let model = PredictiveModel::init(arch.clone(), 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (windows, labels1) = random_batch(&arch, 5, &mut rng);
    let labels2: Vec<f64> = labels1.iter().map(|y| 0.5 - y).collect();
    let (a, b) = (0.7, -1.3);

    let mut fwd = model.forward(&refs(&windows)).unwrap();
    let l1 = fwd.loss(&labels1).unwrap();
    let l2 = fwd.loss(&labels2).unwrap();
    let s1 = fwd.graph.scale(l1, a);
    let s2 = fwd.graph.scale(l2, b);
    let combined = fwd.graph.add(s1, s2);
    let g = fwd.graph.backward(combined).unwrap();

    let g1 = model.loss_and_gradient(&refs(&windows), &labels1).unwrap().1;
    let g2 = model.loss_and_gradient(&refs(&windows), &labels2).unwrap().1;
    for j in 0..g.len() {
        assert!((g[j] - (a * g1[j] + b * g2[j])).abs() <= 1e-10);
    }
}

#[test]
fn forward_and_backward_are_deterministic() {
    let arch = Architecture::with_default_head(4, 6, 3).unwrap();
    let model = PredictiveModel::init(arch.clone(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (windows, labels) = random_batch(&arch, 7, &mut rng);
    let (l1, g1) = model.loss_and_gradient(&refs(&windows), &labels).unwrap();
    let (l2, g2) = model.loss_and_gradient(&refs(&windows), &labels).unwrap();
    assert_eq!(l1.to_bits(), l2.to_bits());
    assert_eq!(
        g1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        g2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn saved_model_predicts_identically() {
    let arch = Architecture::with_default_head(3, 4, 4).unwrap();
    let model = PredictiveModel::init(arch.clone(), 77).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.model");
    save_model(&model, &path).unwrap();
    let back = load_model(&path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (windows, _) = random_batch(&arch, 5, &mut rng);
    let p1 = model.predict(&refs(&windows)).unwrap();
    let p2 = back.predict(&refs(&windows)).unwrap();
    assert_eq!(
        p1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        p2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn attention_weights_sum_to_one(seed in 0u64..1000, scale in 0.1f64..20.0) {
        let arch = Architecture::with_default_head(3, 7, 4).unwrap();
        let model = PredictiveModel::init(arch.clone(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let windows: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..arch.window_len()).map(|_| scale * rng.random_range(-1.0..1.0)).collect())
            .collect();
        let fwd = model.forward(&refs(&windows)).unwrap();
        let alpha = fwd.attention_weights().unwrap();
        for row in alpha.data().chunks(arch.seq_len) {
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-9);
            prop_assert!(row.iter().all(|&a| a >= 0.0));
        }
    }

    #[test]
    fn flatten_unflatten_is_a_bijection(seed in 0u64..10_000, f in 1usize..6, t in 1usize..5, h in 1usize..6) {
        let arch = Architecture::new(f, t, h, &[h + 1]).unwrap();
        let model = PredictiveModel::init(arch.clone(), seed).unwrap();
        let parts = model.parts();
        let back = PredictiveModel::from_parts(arch, &parts).unwrap();
        prop_assert_eq!(back.params(), model.params());
        prop_assert_eq!(back.parts(), parts);
    }
}

