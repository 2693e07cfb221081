mod common;

use hiermaml::autodiff::{Architecture, OptimizerState, PredictiveModel};
use hiermaml::harness::prepare;
use hiermaml::metalearn::{adapt, evaluate_task, meta_step, train_origin_maml, MetaConfig};
use hiermaml::tasks::{SampleWindow, Task};
use proptest::prelude::*;

fn split(samples: &[SampleWindow]) -> (Vec<&[f64]>, Vec<f64>) {
    (samples.iter().map(|s| s.features.as_slice()).collect(), samples.iter().map(|s| s.label).collect())
}

fn fixture(seed: u64) -> (PredictiveModel, Vec<Task>) {
    let cfg = common::small_config(seed);
    let data = prepare(&cfg).unwrap();
    let s = &cfg.data.synthetic;
    let arch = Architecture::with_default_head(s.n_features, s.seq_len, cfg.model.hidden).unwrap();
    (PredictiveModel::init(arch, seed).unwrap(), data.train.tasks)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn tiny_step_decreases_support_loss(seed in 0u64..500, pick in 0usize..12) {
        let (model, tasks) = fixture(seed);
        let task = &tasks[pick % tasks.len()];
        let (w, y) = split(&task.support);
        let (loss, grad) = model.loss_and_gradient(&w, &y).unwrap();
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-6);
        let out = adapt(&model, &task.support, 1e-6 / norm, 1).unwrap();
        prop_assert_eq!(out.loss_before, loss);
        prop_assert!(out.loss_after < loss, "before {} after {}", loss, out.loss_after);
    }

    #[test]
    fn outer_update_is_the_query_gradient_at_adapted_parameters(seed in 0u64..500, steps in 1usize..4) {
        let (model, tasks) = fixture(seed);
        let task = &tasks[0];
        let cfg = MetaConfig { inner_lr: 0.05, outer_lr: 1.0, adaptation_steps: steps, ..MetaConfig::default() };
        let adapted = adapt(&model, &task.support, cfg.inner_lr, steps).unwrap();
        let mut local = model.clone();
        local.set_params(&adapted.params).unwrap();
        let (qw, qy) = split(&task.query);
        let (_, grad) = local.loss_and_gradient(&qw, &qy).unwrap();

        let mut stepped = model.clone();
        let mut sgd = OptimizerState::Sgd;
        meta_step(&mut stepped, &[task], &cfg, &mut sgd).unwrap();
        for ((before, after), g) in model.params().iter().zip(stepped.params()).zip(&grad) {
            prop_assert!(((before - after) - g).abs() <= 1e-12);
        }
    }

    #[test]
    fn adaptation_with_zero_rate_or_steps_is_identity(seed in 0u64..500) {
        let (model, tasks) = fixture(seed);
        prop_assert_eq!(adapt(&model, &tasks[0].support, 0.0, 3).unwrap().params, model.params().to_vec());
        prop_assert_eq!(adapt(&model, &tasks[0].support, 0.1, 0).unwrap().params, model.params().to_vec());
    }
}

#[test]
fn evaluation_does_not_touch_the_model() {
    let (model, tasks) = fixture(9);
    let before = model.params().to_vec();
    for t in &tasks {
        let e = evaluate_task(&model, t, 0.01, 2).unwrap();
        assert_eq!(e.predictions.len(), t.query.len());
        assert!(e.r2 <= 1.0);
    }
    assert_eq!(model.params(), before.as_slice());
}

#[test]
fn meta_training_is_independent_of_worker_count() {
    let (model, tasks) = fixture(4);
    let refs: Vec<&Task> = tasks.iter().collect();
    let cfg = MetaConfig { outer_epochs: 3, task_batch_size: 4, seed: 4, ..MetaConfig::default() };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| train_origin_maml(&refs, &model, &cfg).unwrap())
    };
    let one = run(1);
    let many = run(4);
    assert_eq!(one.model.params(), many.model.params());
    assert_eq!(one.selected_epoch, many.selected_epoch);
    for (a, b) in one.log.iter().zip(&many.log) {
        assert_eq!(a.mean_query_mse, b.mean_query_mse);
        assert_eq!(a.mean_query_r2, b.mean_query_r2);
    }
}
