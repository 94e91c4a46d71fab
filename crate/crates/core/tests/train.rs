use proptest::prelude::*;
use sec2sec_core::data::{generate_synthetic, SyntheticMode, SyntheticSpec};
use sec2sec_core::model::{ModelConfig, Task};
use sec2sec_core::tensor::{ParamStore, Tape, Tensor};
use sec2sec_core::train::{
    adam_step, classification_metrics, early_stop_update, fit, mean_accuracy, score, split_validation, AdamConfig,
    AdamState, StopDecision, TrainConfig,
};

fn brute_accuracy(p: &[f64], y: &[f64]) -> f64 {
    let hits = p.iter().zip(y).filter(|(&p, &y)| (p >= 0.5) == (y == 1.0)).count();
    hits as f64 / p.len() as f64
}

fn brute_f1(p: &[f64], y: &[f64]) -> f64 {
    let mut cells = [[0usize; 2]; 2];
    for (&p, &y) in p.iter().zip(y) {
        cells[usize::from(p >= 0.5)][y as usize] += 1;
    }
    let (tp, fp, fneg) = (cells[1][1], cells[1][0], cells[0][1]);
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn binary_metrics_match_brute_force(rows in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..60)) {
        let p: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let y: Vec<f64> = rows.iter().map(|r| f64::from(u8::from(r.1))).collect();
        let c = classification_metrics(&p, &y, 0.5).unwrap();
        prop_assert!((c.accuracy - brute_accuracy(&p, &y)).abs() <= 1e-12);
        prop_assert!((c.f1 - brute_f1(&p, &y)).abs() <= 1e-12);
    }

    #[test]
    fn trait_scores_match_brute_force(rows in prop::collection::vec(prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 5), 1..40)) {
        let p: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x.0).collect()).collect();
        let y: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x.1).collect()).collect();
        let got = mean_accuracy(&p, &y).unwrap();
        for k in 0..5 {
            let err: f64 = rows.iter().map(|r| (r[k].0 - r[k].1).abs()).sum::<f64>() / rows.len() as f64;
            prop_assert!((got[k] - (1.0 - err)).abs() <= 1e-12);
        }
    }

    #[test]
    fn early_stop_needs_an_unbroken_rise(hist in prop::collection::vec(0.0f64..1.0, 0..20), patience in 1usize..7) {
        let rising_tail = hist.len() > patience
            && (hist.len() - patience..hist.len()).all(|i| hist[i] > hist[i - 1]);
        let expect = if rising_tail { StopDecision::Stop } else { StopDecision::Continue };
        prop_assert_eq!(early_stop_update(&hist, patience), expect);
    }
}

#[test]
fn perfect_trait_predictions_score_exactly_one() {
    let y = vec![vec![0.2, 0.9, 0.4, 0.0, 1.0], vec![0.7, 0.3, 0.5, 0.6, 0.1]];
    let m = score(&Task::big_five(), &y, &y, 0.0).unwrap();
    assert!(m.mean_accuracy.iter().all(|t| t.mean_accuracy == 1.0));
    assert_eq!(m.selection_score(), 1.0);
}

#[test]
fn early_stop_fires_on_fifth_rise() {
    let losses = [0.9, 0.8, 0.7, 0.71, 0.72, 0.73, 0.74, 0.75, 0.76];
    let fired: Vec<usize> = (1..=losses.len())
        .filter(|&k| early_stop_update(&losses[..k], 5) == StopDecision::Stop)
        .collect();
    assert_eq!(fired.first(), Some(&8));
}

/// One Adam step on `loss = Σ w ⊙ c`, whose gradient is `c`.
fn step_with(c: &[f64], w0: &[f64], lr: f64) -> Vec<f64> {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("w", Tensor::new(vec![c.len()], w0.to_vec()).unwrap()).unwrap();
    let grads = {
        let mut tape = Tape::with_params(&store);
        let w = tape.param(id);
        let k = tape.constant(Tensor::new(vec![c.len()], c.to_vec()).unwrap());
        let prod = tape.mul(w, k).unwrap();
        let loss = tape.sum(prod).unwrap();
        tape.backward(loss).unwrap().into_param_grads()
    };
    let mut state = AdamState::new(&store);
    adam_step(&mut store, &grads, &mut state, &AdamConfig::with_lr(lr)).unwrap();
    store.get(id).data().to_vec()
}

#[test]
fn adam_steps_mirror_under_gradient_sign() {
    let w0 = [0.3, -1.2, 2.0, 0.0];
    let c = [0.5, -3.0, 1e-3, 7.0];
    let up = step_with(&c, &w0, 0.01);
    let neg: Vec<f64> = c.iter().map(|v| -v).collect();
    let down = step_with(&neg, &w0, 0.01);
    for i in 0..w0.len() {
        assert!(((up[i] - w0[i]) + (down[i] - w0[i])).abs() < 1e-15);
        // the bias-corrected first step moves each weight by about lr against its gradient
        let expect = -0.01 * c[i] / (c[i].abs() + 1e-8);
        assert!((up[i] - w0[i] - expect).abs() < 1e-12);
    }
}

#[test]
fn fit_lowers_training_loss_deterministically() {
    let spec = SyntheticSpec {
        mode: SyntheticMode::Xor,
        n_segments: 2,
        dim: 8,
        train_size: 64,
        test_size: 8,
        seed: 2,
        ..Default::default()
    };
    let data = generate_synthetic(&spec).unwrap();
    let cfg = ModelConfig {
        n_segments: 2,
        d_model: 8,
        d_hidden: 8,
        d_attn: 8,
        heads: 2,
        ..Default::default()
    };
    let (train, val) = split_validation(data.train.examples::<f32>(&cfg).unwrap(), 0.25, 2).unwrap();
    let tc = TrainConfig {
        max_epochs: 6,
        batch_size: 8,
        lr_grid: vec![3e-3],
        seed: 2,
        ..Default::default()
    };
    let a = fit(&cfg, &tc, 3e-3, &train, &val).unwrap();
    let b = fit(&cfg, &tc, 3e-3, &train, &val).unwrap();
    let first = a.history.first().unwrap().train_loss;
    let last = a.history.last().unwrap().train_loss;
    assert!(last < first, "{first} -> {last}");
    let losses = |o: &sec2sec_core::train::TrainOutcome| o.history.iter().map(|h| h.train_loss).collect::<Vec<_>>();
    assert_eq!(losses(&a), losses(&b));
    assert_eq!(a.best_epoch, b.best_epoch);
}

#[test]
fn memorization_loss_falls_steadily() {
    use rand::{Rng, SeedableRng};
    use sec2sec_core::model::{Model, Variant};
    use sec2sec_core::train::{evaluate, Example, Trainer};

    let cfg = ModelConfig {
        variant: Variant::SaCa,
        n_segments: 4,
        d_model: 16,
        d_hidden: 16,
        d_attn: 16,
        heads: 4,
        ..Default::default()
    };
    let data = generate_synthetic(&SyntheticSpec {
        mode: SyntheticMode::Recency,
        n_segments: 4,
        dim: 16,
        train_size: 16,
        test_size: 1,
        seed: 8,
        ..Default::default()
    })
    .unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    let mut examples: Vec<Example> = data.train.examples(&cfg).unwrap();
    for ex in &mut examples {
        ex.target = vec![f64::from(u8::from(rng.random_bool(0.5)))];
    }
    let batch: Vec<&Example> = examples.iter().collect();
    let mut trainer = Trainer::new(Model::new(cfg, 8).unwrap(), AdamConfig::with_lr(1e-2));
    let mut losses = vec![evaluate(&trainer.model, &examples).unwrap().metrics.loss];
    while losses.len() <= 500 && *losses.last().unwrap() >= 0.05 {
        trainer.step(&batch).unwrap();
        losses.push(evaluate(&trainer.model, &examples).unwrap().metrics.loss);
    }
    assert!(*losses.last().unwrap() < 0.05, "final loss {}", losses.last().unwrap());
    for window in losses.windows(51) {
        let rises = window.windows(2).filter(|w| w[1] > w[0]).count();
        assert!(rises * 20 <= 50, "{rises} rising steps in a 50-step window");
    }
}
