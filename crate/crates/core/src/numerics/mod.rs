//! Dense tensors, reverse-mode autodiff, Adam and checkpoint IO.

mod adam;
mod checkpoint;
mod conv;
pub mod gradcheck;
mod graph;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use graph::{Gradients, Graph, Var};
pub use tensor::{Element, Tensor};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct nested-loop convolution, zero padded.
    fn conv_reference(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros(&[n, o, ho, wo]);
        for ni in 0..n {
            for oi in 0..o {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    let xv = x.data()[((ni * c + ci) * h + iy as usize) * wd + ix as usize];
                                    let wv = w.data()[((oi * c + ci) * kh + ky) * kw + kx];
                                    acc += xv * wv;
                                }
                            }
                        }
                        out.data_mut()[((ni * o + oi) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_identity_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[2, 3, 6, 5], &mut rng);
        // 1x1 kernel mapping channel c to channel c
        let w = Tensor::from_fn(&[3, 3, 1, 1], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 });
        let mut g = Graph::<f64>::new();
        let (xv, wv) = (g.constant(x.clone()), g.constant(w));
        let y = g.conv2d(xv, wv, 1, 0).unwrap();
        assert_eq!(g.value(y), &x);
    }

    #[test]
    fn conv_matches_nested_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&[1, 1, 5, 5], &mut rng);
        let w = random(&[1, 1, 3, 3], &mut rng);
        for (stride, pad) in [(1, 0), (1, 1), (2, 1), (2, 0)] {
            let mut g = Graph::<f64>::new();
            let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
            let y = g.conv2d(xv, wv, stride, pad).unwrap();
            let expected = conv_reference(&x, &w, stride, pad);
            assert_eq!(g.shape(y), expected.shape());
            for (a, b) in g.value(y).data().iter().zip(expected.data()) {
                assert!((a - b).abs() < 1e-12, "stride {stride} pad {pad}: {a} vs {b}");
            }
        }
        // multi-channel, batched
        let x = random(&[2, 3, 7, 6], &mut rng);
        let w = random(&[4, 3, 3, 3], &mut rng);
        let mut g = Graph::<f64>::new();
        let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
        let y = g.conv2d(xv, wv, 2, 1).unwrap();
        let expected = conv_reference(&x, &w, 2, 1);
        for (a, b) in g.value(y).data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn l2_normalize_three_four_five() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(&[1, 2], vec![3.0, 4.0]).unwrap());
        let y = g.l2_normalize(x, 1).unwrap();
        let v = g.value(y).data();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn l2_normalize_of_zero_is_an_error() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::zeros(&[2, 3]));
        assert!(matches!(g.l2_normalize(x, 1), Err(Error::ZeroNorm { .. })));
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_fn(&[2, 3], |i| i as f64));
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x), Tensor::full(&[2, 3], 1.0));
    }

    #[test]
    fn grad_of_normalize_dot_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[3, 4], &mut rng);
        let c = random(&[3, 4], &mut rng);
        let check = gradcheck::check(&[x], 1e-4, |g, v| {
            let y = g.l2_normalize(v[0], 1)?;
            let cv = g.constant(c.clone());
            let p = g.mul(y, cv)?;
            Ok(g.sum(p))
        })
        .unwrap();
        assert!(check.max_relative_error() < 1e-5, "{check:?}");
    }

    #[test]
    fn leaf_off_the_loss_path_gets_zero_grad() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::full(&[2], 2.0));
        let b = g.param(Tensor::full(&[3], 5.0));
        let _unused = g.scale(b, 3.0);
        let loss = g.sum(a);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(b), Tensor::zeros(&[3]));
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::full(&[2], 2.0));
        let loss = g.sum(a);
        g.backward(loss).unwrap();
        assert!(matches!(g.backward(loss), Err(Error::GraphConsumed)));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::full(&[2], 2.0));
        assert!(matches!(g.backward(a), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn shape_errors_name_op_and_shapes() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let msg = g.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
        let c = g.constant(Tensor::zeros(&[3]));
        let msg = g.add(a, c).unwrap_err().to_string();
        assert!(msg.contains("add") && msg.contains("[3]"), "{msg}");
    }

    #[test]
    fn constant_only_results_are_not_differentiable() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::full(&[2], 1.0));
        let b = g.relu(a);
        assert!(!g.requires_grad(b));
        let p = g.param(Tensor::full(&[2], 1.0));
        let c = g.add(b, p).unwrap();
        assert!(g.requires_grad(c));
    }

    #[test]
    fn masked_logsumexp_ignores_masked_entries() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new(&[1, 3], vec![1.0, 1e6, 2.0]).unwrap());
        let y = g.logsumexp(x, 1, Some(vec![true, false, true])).unwrap();
        let expected = (1f64.exp() + 2f64.exp()).ln();
        assert!((g.value(y).data()[0] - expected).abs() < 1e-12);
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).data()[1], 0.0);
    }

    #[test]
    fn concat_and_upsample_shapes() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 5]));
        let ab = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(ab), &[2, 8]);
        let x = g.constant(Tensor::from_fn(&[1, 1, 2, 2], |i| i as f32));
        let u = g.upsample2x(x).unwrap();
        assert_eq!(g.value(u).data(), &[0., 0., 1., 1., 0., 0., 1., 1., 2., 2., 3., 3., 2., 2., 3., 3.]);
    }

    proptest! {
        #[test]
        fn l2_normalize_gives_unit_rows(rows in 1usize..5, cols in 1usize..9, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::from_fn(&[rows, cols], |_| rng.random_range(-100.0..100.0));
            prop_assume!(x.data().chunks(cols).all(|r| r.iter().any(|v: &f64| v.abs() > 1e-6)));
            let mut g = Graph::<f64>::new();
            let xv = g.constant(x);
            let y = g.l2_normalize(xv, 1).unwrap();
            for row in g.value(y).data().chunks(cols) {
                let n: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!((n - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn logsumexp_is_shift_invariant(vals in prop::collection::vec(-50.0f64..50.0, 1..12), c in -500.0f64..500.0) {
            let n = vals.len();
            let mut g = Graph::<f64>::new();
            let x = g.constant(Tensor::new(&[1, n], vals.clone()).unwrap());
            let shifted = g.constant(Tensor::new(&[1, n], vals.iter().map(|v| v - c).collect()).unwrap());
            let a = g.logsumexp(x, 1, None).unwrap();
            let b = g.logsumexp(shifted, 1, None).unwrap();
            let (a, b) = (g.value(a).data()[0], g.value(b).data()[0]);
            prop_assert!((a - (b + c)).abs() < 1e-9 * (1.0 + a.abs()));
        }
    }
}
