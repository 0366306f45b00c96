//! Analytic BPTT gradients against central finite differences.

use mlrf::nn::{loss_and_gradients, HeadKind, Loss, Matrix2D, SequenceModelParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_seq(rng: &mut ChaCha8Rng, steps: usize, dim: usize) -> Matrix2D {
    Matrix2D::from_vec(steps, dim, (0..steps * dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Max relative error over components whose magnitude exceeds `floor`.
///
/// Central differences at h = 1e-5 carry roughly 1e-11 of absolute rounding
/// noise, so `floor` bounds how small a component can be while still giving a
/// meaningful relative error.
fn max_rel_error(params: &SequenceModelParams, seq: &Matrix2D, loss: Loss<'_>, floor: f64) -> f64 {
    let (_, analytic) = loss_and_gradients(params, seq, loss).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let mut plus = params.clone();
        plus.as_mut_slice()[i] += h;
        let mut minus = params.clone();
        minus.as_mut_slice()[i] -= h;
        let lp = loss_and_gradients(&plus, seq, loss).unwrap().0;
        let lm = loss_and_gradients(&minus, seq, loss).unwrap().0;
        let numeric = (lp - lm) / (2.0 * h);
        let a = analytic.as_slice()[i];
        if a.abs().max(numeric.abs()) > floor {
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()));
        }
    }
    worst
}

#[test]
fn seed7_small_model_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let seq = random_seq(&mut rng, 3, 2);
    for head in [HeadKind::FinalSoftmax2, HeadKind::PerStepLinear] {
        let out = if head == HeadKind::FinalSoftmax2 { 2 } else { 1 };
        let params = SequenceModelParams::init(2, 4, out, head, &mut rng).unwrap();
        let targets = [0.3, -0.2, 0.5];
        let loss = match head {
            HeadKind::FinalSoftmax2 => Loss::CrossEntropy { target: 1 },
            HeadKind::PerStepLinear => Loss::SquaredError { targets: &targets },
        };
        let err = max_rel_error(&params, &seq, loss, 1e-4);
        assert!(err < 1e-6, "{head:?}: max relative error {err:e}");
    }
}

#[test]
fn concordance_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let seq = random_seq(&mut rng, 5, 3);
    let params = SequenceModelParams::init(3, 4, 1, HeadKind::PerStepLinear, &mut rng).unwrap();
    let targets = [0.1, 0.4, -0.3, 0.2, 0.0];
    let err = max_rel_error(&params, &seq, Loss::Concordance { targets: &targets }, 1e-8);
    assert!(err < 1e-5, "max relative error {err:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_small_models_have_exact_gradients(seed in any::<u64>(), hidden in 1usize..=8, steps in 1usize..=5, input in 1usize..=3, softmax in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seq = random_seq(&mut rng, steps, input);
        let (head, out) = if softmax { (HeadKind::FinalSoftmax2, 2) } else { (HeadKind::PerStepLinear, 1) };
        let params = SequenceModelParams::init(input, hidden, out, head, &mut rng).unwrap();
        let targets: Vec<f64> = (0..steps).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = if softmax {
            Loss::CrossEntropy { target: rng.random_range(0..2) }
        } else {
            Loss::SquaredError { targets: &targets }
        };
        let err = max_rel_error(&params, &seq, loss, 1e-5);
        prop_assert!(err < 1e-5, "max relative error {:e}", err);
    }

    #[test]
    fn zero_input_channel_is_inert(seed in any::<u64>(), channel in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seq = random_seq(&mut rng, 4, 3);
        for r in 0..4 {
            seq.set(r, channel, 0.0);
        }
        let params = SequenceModelParams::init(3, 5, 1, HeadKind::PerStepLinear, &mut rng).unwrap();
        let targets = [0.2, -0.1, 0.4, 0.0];
        let (_, grads) = loss_and_gradients(&params, &seq, Loss::SquaredError { targets: &targets }).unwrap();
        let mut perturbed = params.clone();
        for row in 0..20 {
            prop_assert_eq!(grads.w()[row * 3 + channel], 0.0);
            perturbed.w_mut()[row * 3 + channel] = rng.random_range(-3.0..3.0);
        }
        let a = params.forward(&seq).unwrap();
        let b = perturbed.forward(&seq).unwrap();
        prop_assert_eq!(a.output(), b.output());
    }

    #[test]
    fn softmax_output_is_a_probability_pair(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seq = random_seq(&mut rng, 6, 2);
        let mut params = SequenceModelParams::init(2, 3, 2, HeadKind::FinalSoftmax2, &mut rng).unwrap();
        params.scale(4.0);
        let pass = params.forward(&seq).unwrap();
        let p = pass.output().as_slice();
        prop_assert!(p[0] > 0.0 && p[0] < 1.0 && p[1] > 0.0 && p[1] < 1.0);
        prop_assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        let again = params.forward(&seq).unwrap();
        prop_assert_eq!(pass.output(), again.output());
    }
}
