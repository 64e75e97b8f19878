mod common;

use common::gradient_instance;
use pathwalk::neural::{grouped_softmax_into, Matrix, Mlp, ParamStore, Tape};
use pathwalk::training::LossKind;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random partition of `0..n` into non-empty groups.
fn partition(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut groups = Vec::new();
    let mut rest = &order[..];
    while !rest.is_empty() {
        let k = rng.random_range(1..=rest.len().min(5));
        groups.push(rest[..k].to_vec());
        rest = &rest[k..];
    }
    groups
}

/// Gradient of a small softmax-MLP loss with the backward pass seeded by `seed`.
fn mlp_loss_gradient(store: &ParamStore, mlp: &Mlp, input: &Matrix, groups: &[Vec<usize>], seed: f64) -> (f64, Vec<f64>) {
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let scores = mlp.forward(&mut tape, store, x).unwrap();
    let w = tape.grouped_softmax(scores, groups.to_vec()).unwrap();
    let logs = tape.log_eps(w, 1e-30);
    let weights: Vec<f64> = (0..input.rows()).map(|i| 1.0 + (i % 3) as f64).collect();
    let loss = tape.dot_const(logs, weights).unwrap();
    let loss = tape.scale(loss, -1.0);
    let value = tape.scalar(loss);
    let mut grad = vec![0.0; store.len()];
    tape.backward(loss, seed, &mut grad).unwrap();
    (value, grad)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn grouped_softmax_is_positive_and_normalised(
        seed in any::<u64>(),
        n in 1usize..40,
        scale in 0.0f64..300.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..=scale)).collect();
        let groups = partition(&mut rng, n);
        let mut out = vec![0.0; n];
        grouped_softmax_into(&scores, &groups, &mut out);

        let mut tape = Tape::new();
        let x = tape.constant(Matrix::column(scores.clone()));
        let y = tape.grouped_softmax(x, groups.clone()).unwrap();
        prop_assert_eq!(tape.value(y).data(), &out[..]);

        prop_assert!(out.iter().all(|&p| p > 0.0 && p <= 1.0));
        for grp in &groups {
            let s: f64 = grp.iter().map(|&i| out[i]).sum();
            prop_assert!((s - 1.0).abs() <= 1e-12, "group sum {}", s);
        }
    }

    #[test]
    fn backward_is_linear_in_the_seed(seed in any::<u64>(), alpha in -100.0f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let rows = rng.random_range(2..12);
        let cols = rng.random_range(1..5);
        let mlp = Mlp::new(&mut store, "mlp", cols, &[rng.random_range(2..6)], 1, false, &mut rng);
        let input = Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect());
        let groups = partition(&mut rng, rows);
        let (_, base) = mlp_loss_gradient(&store, &mlp, &input, &groups, 1.0);
        let (_, scaled) = mlp_loss_gradient(&store, &mlp, &input, &groups, alpha);
        // Rounding is bounded by the magnitude of the summed terms, which are
        // O(1) here (bounded inputs, Glorot weights, probabilities), so
        // entries that cancel to zero sit at that noise level.
        let scale = base.iter().fold(1.0f64, |m, b| m.max(b.abs())) * alpha.abs();
        for (b, s) in base.iter().zip(&scaled) {
            let expect = alpha * b;
            prop_assert!((s - expect).abs() <= 1e-13 * scale, "{} vs {}", s, expect);
        }
    }

    #[test]
    fn power_of_two_seed_scales_gradient_exactly(seed in any::<u64>(), k in -20i32..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let rows = rng.random_range(2..12);
        let cols = rng.random_range(1..5);
        let mlp = Mlp::new(&mut store, "mlp", cols, &[rng.random_range(2..6)], 1, false, &mut rng);
        let input = Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect());
        let groups = partition(&mut rng, rows);
        let alpha = 2f64.powi(k);
        let (_, base) = mlp_loss_gradient(&store, &mlp, &input, &groups, 1.0);
        let (_, scaled) = mlp_loss_gradient(&store, &mlp, &input, &groups, alpha);
        let expect: Vec<f64> = base.iter().map(|b| alpha * b).collect();
        prop_assert_eq!(scaled, expect);
    }
}

#[test]
fn forward_and_backward_repeat_bit_identically() {
    for seed in 0..20 {
        for kind in [LossKind::SuffixNll, LossKind::TargetCe] {
            let inst = gradient_instance(500 + seed);
            let mut runs = Vec::new();
            for _ in 0..2 {
                let mut model = inst.model.clone();
                model.params.zero_grad();
                let (loss, _) = model.accumulate_batch(&inst.graph, &[&inst.sample], kind).unwrap();
                let grad: Vec<u64> = model.params.grad().iter().map(|g| g.to_bits()).collect();
                runs.push((loss.to_bits(), grad));
            }
            assert_eq!(runs[0], runs[1], "instance {seed} {kind:?}");
        }
    }
}
