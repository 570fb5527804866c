mod common;
use common::{input, max_grad_error, synthetic, tiny};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use simfuzz::features::TemporalTensor;
use simfuzz::vpm::{train, Adam, TrainConfig, VpmConfig, VpmModel};

#[test]
fn gradient_check_tiny_model() {
    let err = max_grad_error(tiny(), 11);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn zero_head_bias_gradient_closed_form() {
    let cfg = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut model = VpmModel::<f64>::new(cfg, 5).unwrap();
    model.zero_head();
    let xs: Vec<TemporalTensor> = (0..4).map(|_| input(&cfg, &mut rng, 4)).collect();
    let ys = [1.0, 0.0, 1.0, 1.0];
    let batch: Vec<_> = xs.iter().zip(ys).collect();
    let (_, grad) = model.loss_and_gradients(&batch).unwrap();
    let expect = ys.iter().map(|y| 0.5 - y).sum::<f64>() / 4.0;
    assert!((grad[model.head_bias_index()] - expect).abs() < 1e-12);
}

#[test]
fn duplicated_batch_same_gradients() {
    let cfg = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = VpmModel::<f64>::new(cfg, 6).unwrap();
    let xs: Vec<TemporalTensor> = (0..3).map(|_| input(&cfg, &mut rng, 3)).collect();
    let once: Vec<_> = xs.iter().zip([0.0, 1.0, 1.0]).collect();
    let twice: Vec<_> = once.iter().flat_map(|s| [*s, *s]).collect();
    let (_, a) = model.loss_and_gradients(&once).unwrap();
    let (_, b) = model.loss_and_gradients(&twice).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
    }
}

#[test]
fn padding_does_not_change_prediction() {
    let cfg = VpmConfig { t_fixed: 8, ..tiny() };
    let model = VpmModel::<f32>::new(cfg, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let short = input(&cfg, &mut rng, 5);
    let mut noisy = short.clone();
    for v in noisy.values[5 * cfg.n_info..].iter_mut() {
        *v = 123.0;
    }
    let a = model.predict(&short).unwrap();
    let b = model.predict(&noisy).unwrap();
    assert!((a - b).abs() < 1e-6);
    assert_eq!(a, model.predict(&short).unwrap());
}

#[test]
fn learns_separable_corpus_deterministically() {
    let cfg = VpmConfig { n_info: 7, t_fixed: 16, d_model: 16, heads: 2, head_dim: 8, layers: 1, ff_mult: 4 };
    let data = synthetic(&cfg, 200, 3);
    let tc = TrainConfig { seed: 9, max_epochs: 60, ..TrainConfig::default() };
    let a = train(&data, cfg, &tc).unwrap();
    assert!(a.validation_accuracy >= 0.9, "accuracy {}", a.validation_accuracy);
    let b = train(&data, cfg, &tc).unwrap();
    assert_eq!(a.model.params, b.model.params);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn gradient_check_random_models(seed in 0u64..10_000) {
        let err = max_grad_error(tiny(), seed);
        prop_assert!(err < 1e-4, "max relative error {}", err);
    }

    #[test]
    fn output_strictly_inside_unit_interval(seed in 0u64..10_000, valid in 1usize..=4) {
        let cfg = tiny();
        let model = VpmModel::<f32>::new(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = model.predict(&input(&cfg, &mut rng, valid)).unwrap();
        prop_assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn one_adam_step_lowers_loss(seed in 0u64..10_000) {
        let cfg = tiny();
        let mut model = VpmModel::<f64>::new(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<TemporalTensor> = (0..4).map(|_| input(&cfg, &mut rng, 4)).collect();
        let batch: Vec<_> = xs.iter().zip([0.0, 1.0, 0.0, 1.0]).collect();
        let (before, grad) = model.loss_and_gradients(&batch).unwrap();
        let mut adam = Adam::new(model.params.len(), &TrainConfig::default());
        adam.step(&mut model.params, &grad);
        prop_assert!(model.loss(&batch).unwrap() < before);
    }
}
