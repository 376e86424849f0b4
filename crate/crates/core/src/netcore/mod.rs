//! Dense feedforward classifier, exact backpropagation and the
//! Nesterov/cosine optimizer shared by every training mode.

mod matrix;
mod network;
mod optim;

pub use matrix::Matrix;
pub use network::{Activation, DenseLayer, ForwardCache, Gradients, NetworkParams};
pub use optim::{cosine_lr, sgd_nesterov_step, OptimizerState};

/// Floor applied to probabilities before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Numerically safe softmax (max-shifted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Row-wise softmax of a logit matrix.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut p = logits.clone();
    for r in 0..p.rows() {
        softmax_in_place(p.row_mut(r));
    }
    p
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_closed_forms() {
        assert!(close(&softmax(&[0.0, 0.0, 0.0]), &[1.0 / 3.0; 3], 1e-15));
        assert!(close(&softmax(&[0.0, 3f64.ln()]), &[0.25, 0.75], 1e-15));
        assert!(close(&softmax(&[1000.0, 0.0]), &[1.0, 0.0], 1e-12));
    }

    #[test]
    fn softmax_huge_logits_stay_on_simplex() {
        let p = softmax(&[1e6, -1e6, 3.0, 1e6]);
        assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn softmax_on_simplex(z in prop::collection::vec(-1e6f64..1e6, 1..12)) {
            let p = softmax(&z);
            prop_assert!(p.iter().all(|v| *v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn softmax_shift_invariance(
            z in prop::collection::vec(-50f64..50.0, 1..12),
            c in -1e3f64..1e3,
        ) {
            let p = softmax(&z);
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            let q = softmax(&shifted);
            let diff = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(diff <= 1e-12, "shift {c} moved softmax by {diff}");
        }
    }

    #[test]
    fn zero_weight_layer_gives_zero_logits() {
        let net =
            NetworkParams::from_layers(vec![DenseLayer::zeros(3, 4)], Activation::Tanh).unwrap();
        let x = Matrix::from_rows(&[[1.0, -2.0, 5.0], [0.3, 0.2, 0.1]]).unwrap();
        let z = net.forward(&x).unwrap();
        assert!(z.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = DenseLayer {
            weight: Matrix::identity(3),
            bias: vec![0.0; 3],
        };
        let net = NetworkParams::from_layers(vec![layer], Activation::Linear).unwrap();
        let x = Matrix::from_rows(&[[1.5, -2.0, 0.25]]).unwrap();
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = NetworkParams::init(3, &[5], 2, Activation::Tanh, &mut rng).unwrap();
        let x = Matrix::zeros(2, 4);
        assert!(matches!(net.forward(&x), Err(crate::Error::Config(_))));
    }

    #[test]
    fn broken_shape_chain_rejected() {
        let layers = vec![DenseLayer::zeros(2, 3), DenseLayer::zeros(4, 2)];
        assert!(NetworkParams::from_layers(layers, Activation::Tanh).is_err());
    }

    #[test]
    fn init_respects_bound_and_seed() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let na = NetworkParams::init(2, &[64, 64], 4, Activation::Tanh, &mut a).unwrap();
        let nb = NetworkParams::init(2, &[64, 64], 4, Activation::Tanh, &mut b).unwrap();
        assert_eq!(na, nb);
        assert_eq!(na.shape(), vec![(2, 64), (64, 64), (64, 4)]);
        let bound = (6.0f64 / 66.0).sqrt();
        assert!(na.layers[0].weight.as_slice().iter().all(|w| w.abs() <= bound));
        assert!(na.layers[0].bias.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = NetworkParams::init(3, &[6], 4, Activation::Tanh, &mut rng).unwrap();
        let x = Matrix::from_rows(&[[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]]).unwrap();
        let g = net.backward(&x, &Matrix::zeros(2, 4)).unwrap();
        assert!(g.tensors().all(|t| t.iter().all(|v| *v == 0.0)));
        assert!(net.backward(&x, &Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0, 0.05, 100).unwrap(), 0.05);
        assert!(cosine_lr(100, 0.05, 100).unwrap().abs() < 1e-18);
        assert!((cosine_lr(50, 0.05, 100).unwrap() - 0.025).abs() < 1e-15);
        assert!(cosine_lr(0, 0.05, 0).is_err());
        let lrs: Vec<f64> = (0..=37).map(|e| cosine_lr(e, 1.0, 37).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    fn scalar_net(w: f64) -> NetworkParams {
        let layer = DenseLayer {
            weight: Matrix::from_vec(1, 1, vec![w]).unwrap(),
            bias: vec![0.0],
        };
        NetworkParams::from_layers(vec![layer], Activation::Linear).unwrap()
    }

    fn scalar_grad(g: f64) -> Gradients {
        Gradients {
            layers: vec![DenseLayer {
                weight: Matrix::from_vec(1, 1, vec![g]).unwrap(),
                bias: vec![0.0],
            }],
        }
    }

    #[test]
    fn vanilla_and_decay_steps() {
        let mut net = scalar_net(1.0);
        let mut st = OptimizerState::new(&net, 0.1, 0.0, 0.0, 10).unwrap();
        sgd_nesterov_step(&mut net, &scalar_grad(0.5), &mut st, 0.1).unwrap();
        assert!((net.layers[0].weight.get(0, 0) - 0.95).abs() < 1e-15);

        let mut net = scalar_net(1.0);
        let mut st = OptimizerState::new(&net, 0.1, 0.0, 0.1, 10).unwrap();
        sgd_nesterov_step(&mut net, &scalar_grad(0.0), &mut st, 0.1).unwrap();
        assert!((net.layers[0].weight.get(0, 0) - 0.99).abs() < 1e-15);
    }

    #[test]
    fn nesterov_two_steps_match_unrolled_recurrence() {
        // Hand-unrolled with mu = 0.9, lr = 0.1, g = 1, w0 = 0:
        //   buf1 = 1,    w1 = 0 - 0.1 * (1 + 0.9 * 1)      = -0.19
        //   buf2 = 1.9,  w2 = w1 - 0.1 * (1 + 0.9 * 1.9)   = -0.461
        let mut net = scalar_net(0.0);
        let mut st = OptimizerState::new(&net, 0.1, 0.9, 0.0, 10).unwrap();
        sgd_nesterov_step(&mut net, &scalar_grad(1.0), &mut st, 0.1).unwrap();
        assert!((net.layers[0].weight.get(0, 0) + 0.19).abs() < 1e-15);
        sgd_nesterov_step(&mut net, &scalar_grad(1.0), &mut st, 0.1).unwrap();
        assert!((net.layers[0].weight.get(0, 0) + 0.461).abs() < 1e-15);
        assert!((st.momentum_buffers()[0][0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_aborts_without_touching_params() {
        let mut net = scalar_net(1.0);
        let mut st = OptimizerState::new(&net, 0.1, 0.9, 0.0, 10).unwrap();
        let err = sgd_nesterov_step(&mut net, &scalar_grad(f64::NAN), &mut st, 0.1).unwrap_err();
        assert!(matches!(err, crate::Error::Diverged { .. }));
        assert_eq!(net.layers[0].weight.get(0, 0), 1.0);
    }
}
