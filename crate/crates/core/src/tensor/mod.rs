//! Dense `f64` tensors with a reverse-mode tape.

mod dense;
pub mod gradcheck;
mod tape;

pub use dense::Tensor;
pub use gradcheck::{grad_check, grad_check_groups};
pub use tape::{Elementwise, Tape, Var, BCE_EPS};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::KtError;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (m, k) = a.dims2().unwrap();
        let n = b.dims2().unwrap().1;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.get2(i, p) * b.get2(p, j);
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_selection() {
        let mut t = Tape::new();
        let i2 = t.constant(Tensor::eye(2));
        let m = t.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let r = t.matmul(i2, m).unwrap();
        assert_eq!(t.value(r).data(), &[1.0, 2.0, 3.0, 4.0]);

        let sel = t.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap());
        let col = t.constant(Tensor::from_rows(&[vec![5.0], vec![7.0]]).unwrap());
        let r = t.matmul(sel, col).unwrap();
        assert_eq!(t.value(r).data(), &[5.0, 0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_matrix(&mut rng, 3, 3);
        let b = random_matrix(&mut rng, 3, 3);
        let mut t = Tape::new();
        let (va, vb) = (t.constant(a.clone()), t.constant(b.clone()));
        let r = t.matmul(va, vb).unwrap();
        let oracle = naive_matmul(&a, &b);
        for (x, y) in t.value(r).data().iter().zip(&oracle) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        match t.matmul(a, b) {
            Err(KtError::Dimension { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn pointwise_closed_forms() {
        let mut t = Tape::new();
        let zero = t.constant(Tensor::scalar(0.0));
        let s = t.elementwise(Elementwise::Sigmoid, &[zero]).unwrap();
        assert_eq!(t.value(s).item(), 0.5);
        let th = t.elementwise(Elementwise::Tanh, &[zero]).unwrap();
        assert_eq!(t.value(th).item(), 0.0);
        let ln3 = t.constant(Tensor::scalar(3f64.ln()));
        let s3 = t.sigmoid(ln3).unwrap();
        assert!((t.value(s3).item() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn incompatible_broadcast_is_rejected() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 2]));
        let b = t.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(t.add(a, b), Err(KtError::Dimension { .. })));
        assert!(matches!(
            t.elementwise(Elementwise::Mul, &[a, b]),
            Err(KtError::Dimension { .. })
        ));
    }

    #[test]
    fn masked_softmax_examples() {
        let mut t = Tape::new();
        let l = t.constant(Tensor::vector(vec![5.0]).unwrap());
        let s = t.masked_softmax(l, &[true]).unwrap();
        assert_eq!(t.value(s).data(), &[1.0]);

        let l = t.constant(Tensor::vector(vec![0.0; 3]).unwrap());
        let s = t.masked_softmax(l, &[true; 3]).unwrap();
        for v in t.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }

        let l = t.constant(Tensor::vector(vec![2f64.ln(), 0.0]).unwrap());
        let s = t.masked_softmax(l, &[true, true]).unwrap();
        assert!((t.value(s).data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((t.value(s).data()[1] - 1.0 / 3.0).abs() < 1e-15);

        let l = t.constant(Tensor::vector(vec![1.0, 2.0]).unwrap());
        assert!(matches!(
            t.masked_softmax(l, &[false, false]),
            Err(KtError::EmptySupport(_))
        ));
    }

    #[test]
    fn empty_rows_allowed_when_requested() {
        let mut t = Tape::new();
        let l = t.constant(Tensor::zeros(&[2, 2]));
        let s = t
            .masked_softmax_rows(l, &[false, false, true, true], true)
            .unwrap();
        assert_eq!(t.value(s).data(), &[0.0, 0.0, 0.5, 0.5]);
        assert!(t
            .masked_softmax_rows(l, &[false, false, true, true], false)
            .is_err());
    }

    #[test]
    fn backward_simple_cases() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(3.0));
        t.backward(x).unwrap();
        assert_eq!(t.grad(x).item(), 1.0);

        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let sq = t.mul(x, x).unwrap();
        let loss = t.sum(sq).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).data(), &[2.0, 4.0]);
        // Accumulates without reset.
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).data(), &[4.0, 8.0]);
        t.zero_grad();
        assert_eq!(t.grad(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.param(Tensor::vector(vec![1.0, 2.0]).unwrap());
        assert!(matches!(t.backward(x), Err(KtError::Contract(_))));
    }

    #[test]
    fn non_finite_results_raise_numeric_error() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::scalar(1000.0));
        assert!(matches!(t.exp(x), Err(KtError::Numeric(_))));
        assert!(Tensor::vector(vec![f64::NAN]).is_err());
    }

    #[test]
    fn grad_check_sigmoid_sum_and_constant() {
        let x = Tensor::zeros(&[4]);
        let err = grad_check(
            |t, v| {
                let s = t.sigmoid(v)?;
                t.sum(s)
            },
            &x,
            gradcheck::DEFAULT_STEP,
        )
        .unwrap();
        assert!(err <= 1e-6, "{err}");

        let err = grad_check(|t, _| Ok(t.constant(Tensor::scalar(2.0))), &x, 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn grad_check_reports_non_finite_objective() {
        let x = Tensor::scalar(0.0);
        let r = grad_check(|t, v| t.log(v), &x, 1e-5);
        assert!(matches!(r, Err(KtError::Numeric(_))));
    }

    #[test]
    fn every_primitive_passes_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_matrix(&mut rng, 3, 4);
        let b = random_matrix(&mut rng, 4, 2);
        let bias = Tensor::vector((0..2).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let s = Tensor::vector((0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let theta = Tensor::scalar(0.7);
        let mask = vec![true, false, true, true, true, false];
        let errs = grad_check_groups(
            |t, v| {
                let ab = t.matmul(v[0], v[1])?;
                let ab = t.add_bias(ab, v[2])?;
                let ab = t.scale_rows(ab, v[3])?;
                let tr = t.transpose(ab)?;
                let th = t.tanh(tr)?;
                let sc = t.mul(th, v[4])?;
                let sm = t.masked_softmax_rows(sc, &mask[..], false)?;
                let ex = t.exp(sm)?;
                let sp = t.softplus(ex)?;
                let lg = t.log(sp)?;
                let g = t.gather_rows(lg, &[1, 0, 1])?;
                let p = t.pick(g, &[0, 2, 1])?;
                let sl = t.slice_cols(g, 1, 2)?;
                let cat = t.concat_cols(&[p, sl])?;
                let sg = t.sigmoid(cat)?;
                let af = t.affine(sg, -2.0, 0.5)?;
                let d = t.sub(af, v[4])?;
                let m = t.mean(d)?;
                let probs = t.sigmoid(cat)?;
                let bce = t.bce(
                    probs,
                    &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0],
                    &[true; 9],
                )?;
                t.add(m, bce)
            },
            &[a, b, bias, s, theta],
            1e-5,
        )
        .unwrap();
        for (i, e) in errs.iter().enumerate() {
            assert!(*e <= 1e-4, "group {i}: {e}");
        }
    }

    proptest! {
        #[test]
        fn matmul_agrees_with_oracle(m in 1usize..=16, k in 1usize..=16, n in 1usize..=16, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, m, k);
            let b = random_matrix(&mut rng, k, n);
            let mut t = Tape::new();
            let (va, vb) = (t.constant(a.clone()), t.constant(b.clone()));
            let r = t.matmul(va, vb).unwrap();
            let oracle = naive_matmul(&a, &b);
            for (x, y) in t.value(r).data().iter().zip(&oracle) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn masked_softmax_is_a_shift_invariant_simplex(
            logits in prop::collection::vec(-20.0f64..20.0, 1..24),
            mask_bits in prop::collection::vec(any::<bool>(), 24),
            shift in -50.0f64..50.0,
        ) {
            let n = logits.len();
            let mut mask = mask_bits[..n].to_vec();
            mask[0] = true;
            let mut t = Tape::new();
            let l = t.constant(Tensor::vector(logits.clone()).unwrap());
            let s = t.masked_softmax(l, &mask).unwrap();
            let out = t.value(s).data().to_vec();
            let total: f64 = out.iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            for (v, &keep) in out.iter().zip(&mask) {
                if keep { prop_assert!(*v >= 0.0); } else { prop_assert_eq!(*v, 0.0); }
            }
            let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
            let l2 = t.constant(Tensor::vector(shifted).unwrap());
            let s2 = t.masked_softmax(l2, &mask).unwrap();
            for (a, b) in out.iter().zip(t.value(s2).data()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
