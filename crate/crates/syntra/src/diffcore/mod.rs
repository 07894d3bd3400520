//! Dense tensor arithmetic with reverse-mode automatic differentiation.
//!
//! Just enough machinery to train a small transformer in 64-bit floats and
//! to differentiate a soft prompt through frozen weights: matrix products,
//! row softmax, layer norm, GELU, gather/concat/slice plumbing, cross
//! entropy and a constant-reference KL divergence.

mod check;
mod graph;
mod tensor;

pub use check::{finite_diff_check, REL_ERR_FLOOR};
pub use graph::{log_softmax_row, softmax_row, Graph, NodeId};
pub use tensor::{matmul_nn, matmul_nt, Tensor};

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rand_tensor(rng: &mut StdRng, shape: Vec<usize>) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn softmax_symmetry_and_overflow() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(2, 2, vec![0.0, 0.0, 1000.0, 1000.0]).unwrap());
        let y = g.softmax_rows(x);
        let v = g.value(y);
        assert_eq!(v.row(0), &[0.5, 0.5]);
        assert_eq!(v.row(1), &[0.5, 0.5]);
        assert!(v.all_finite());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..50 {
            let t = rand_tensor(&mut rng, vec![4, 37]);
            let mut g = Graph::new();
            let x = g.constant(t);
            let y = g.softmax_rows(x);
            for r in 0..4 {
                let s: f64 = g.value(y).row(r).iter().sum();
                assert!((s - 1.0).abs() <= 1e-12, "row sum {s}");
                assert!(g.value(y).row(r).iter().all(|&p| p > 0.0 && p < 1.0));
            }
        }
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(1, 4, vec![3.0; 4]).unwrap());
        let gain = g.constant(Tensor::vector(vec![1.0; 4]));
        let bias = g.constant(Tensor::vector(vec![0.0; 4]));
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        for &v in g.value(y).data() {
            assert!(v.abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn layer_norm_already_normalized_row() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(1, 2, vec![1.0, -1.0]).unwrap());
        let gain = g.constant(Tensor::vector(vec![1.0; 2]));
        let bias = g.constant(Tensor::vector(vec![0.0; 2]));
        let y = g.layer_norm(x, gain, bias, 1e-12).unwrap();
        assert!((g.value(y).data()[0] - 1.0).abs() < 1e-6);
        assert!((g.value(y).data()[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_uniform_and_saturated() {
        let mut g = Graph::new();
        let uniform = g.constant(Tensor::matrix(3, 4, vec![0.0; 12]).unwrap());
        let ce = g.cross_entropy(uniform, &[0, 1, 3]).unwrap();
        assert!((g.value(ce).item() - 4.0f64.ln()).abs() < 1e-12);

        let mut logits = vec![0.0; 4];
        logits[2] = 30.0;
        let hot = g.constant(Tensor::matrix(1, 4, logits).unwrap());
        let ce2 = g.cross_entropy(hot, &[2]).unwrap();
        assert!(g.value(ce2).item() >= 0.0);
        assert!(g.value(ce2).item() < 1e-9);
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_target() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(1, 4, vec![0.0; 4]).unwrap());
        assert!(g.cross_entropy(x, &[4]).is_err());
    }

    #[test]
    fn kl_zero_on_identical_and_hand_value() {
        let mut g = Graph::new();
        let p = g.constant(Tensor::matrix(1, 3, vec![0.4, -1.0, 2.0]).unwrap());
        let q = g.constant(Tensor::matrix(1, 3, vec![0.4, -1.0, 2.0]).unwrap());
        let kl = g.kl_divergence(p, q).unwrap();
        assert_eq!(g.value(kl).item(), 0.0);

        // p = [.75, .25], q = [.5, .5]: 0.75 ln 1.5 + 0.25 ln 0.5
        let p2 = g.constant(Tensor::matrix(1, 2, vec![0.75f64.ln(), 0.25f64.ln()]).unwrap());
        let q2 = g.constant(Tensor::matrix(1, 2, vec![0.5f64.ln(), 0.5f64.ln()]).unwrap());
        let kl2 = g.kl_divergence(p2, q2).unwrap();
        let expected = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        assert!((g.value(kl2).item() - expected).abs() < 1e-12);
        assert!((expected - 0.1308).abs() < 1e-4);
    }

    #[test]
    fn kl_nonnegative_on_random_pairs() {
        let mut rng = StdRng::seed_from_u64(99);
        for _ in 0..1000 {
            let p = rand_tensor(&mut rng, vec![2, 8]);
            let q = rand_tensor(&mut rng, vec![2, 8]);
            let mut g = Graph::new();
            let pn = g.constant(p);
            let qn = g.constant(q);
            let kl = g.kl_divergence(pn, qn).unwrap();
            assert!(g.value(kl).item() >= -1e-12);
        }
    }

    #[test]
    fn backward_square_at_three() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 6.0);
    }

    #[test]
    fn backward_sum_of_softmax_is_conserved() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::matrix(2, 5, (0..10).map(|i| i as f64 * 0.3).collect()).unwrap());
        let sm = g.softmax_rows(x);
        let s = g.sum(sm);
        g.backward(s).unwrap();
        for &v in g.grad(x).unwrap().data() {
            assert!(v.abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn backward_twice_doubles_gradients() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.5, -2.0]));
        let y = g.mul(x, x).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        let once: Vec<f64> = g.grad(x).unwrap().data().to_vec();
        g.backward(s).unwrap();
        let twice: Vec<f64> = g.grad(x).unwrap().data().to_vec();
        for (a, b) in once.iter().zip(&twice) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn ops_are_deterministic() {
        let mut rng = StdRng::seed_from_u64(5);
        let a = rand_tensor(&mut rng, vec![6, 7]);
        let b = rand_tensor(&mut rng, vec![7, 5]);
        let run = || {
            let mut g = Graph::new();
            let an = g.constant(a.clone());
            let bn = g.constant(b.clone());
            let c = g.matmul(an, bn).unwrap();
            let sm = g.softmax_rows(c);
            g.value(sm).data().to_vec()
        };
        let first = run();
        let second = run();
        assert_eq!(first, second, "identical inputs must give bit-identical outputs");
    }

    // Gradient checks: every differentiable op at random points.

    fn check_unary<F>(build: F, shape: Vec<usize>, points: usize, tol: f64)
    where
        F: Fn(&mut Graph, NodeId) -> NodeId,
    {
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..points {
            let point = rand_tensor(&mut rng, shape.clone());
            let err = finite_diff_check(
                |x| {
                    let mut g = Graph::new();
                    let xn = g.leaf(x.clone());
                    let out = build(&mut g, xn);
                    let root = if g.value(out).is_scalar() { out } else { g.sum(out) };
                    g.backward(root).unwrap();
                    (g.value(root).item(), g.grad(xn).unwrap().clone())
                },
                &point,
                1e-5,
            );
            assert!(err < tol, "max relative error {err} >= {tol}");
        }
    }

    #[test]
    fn grad_check_softmax_rows() {
        // weight rows so the objective is not trivially constant
        check_unary(
            |g, x| {
                let sm = g.softmax_rows(x);
                let w = g.constant(Tensor::matrix(3, 4, (0..12).map(|i| (i as f64).sin()).collect()).unwrap());
                g.mul(sm, w).unwrap()
            },
            vec![3, 4],
            20,
            1e-4,
        );
    }

    #[test]
    fn grad_check_gelu() {
        check_unary(|g, x| g.gelu(x), vec![4, 3], 20, 1e-4);
    }

    #[test]
    fn grad_check_layer_norm_x() {
        check_unary(
            |g, x| {
                let gain = g.constant(Tensor::vector(vec![1.3, -0.7, 0.9, 2.0]));
                let bias = g.constant(Tensor::vector(vec![0.1, 0.0, -0.4, 0.25]));
                let ln = g.layer_norm(x, gain, bias, 1e-5).unwrap();
                let w = g.constant(Tensor::matrix(3, 4, (0..12).map(|i| (i as f64).cos()).collect()).unwrap());
                g.mul(ln, w).unwrap()
            },
            vec![3, 4],
            20,
            1e-4,
        );
    }

    #[test]
    fn grad_check_layer_norm_gain_bias() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..10 {
            let x = rand_tensor(&mut rng, vec![2, 4]);
            let point = rand_tensor(&mut rng, vec![8]);
            let err = finite_diff_check(
                |gb| {
                    let mut g = Graph::new();
                    let xn = g.constant(x.clone());
                    let gain = g.leaf(Tensor::vector(gb.data()[..4].to_vec()));
                    let bias = g.leaf(Tensor::vector(gb.data()[4..].to_vec()));
                    let ln = g.layer_norm(xn, gain, bias, 1e-5).unwrap();
                    let root = g.sum(ln);
                    g.backward(root).unwrap();
                    let mut grad = g.grad(gain).unwrap().data().to_vec();
                    grad.extend_from_slice(g.grad(bias).unwrap().data());
                    (g.value(root).item(), Tensor::vector(grad))
                },
                &point,
                1e-5,
            );
            assert!(err < 1e-4, "err {err}");
        }
    }

    #[test]
    fn grad_check_matmul_both_sides() {
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..20 {
            let b = rand_tensor(&mut rng, vec![3, 3]);
            let point = rand_tensor(&mut rng, vec![3, 3]);
            // gradient of sum(A*B) wrt A
            let err = finite_diff_check(
                |a| {
                    let mut g = Graph::new();
                    let an = g.leaf(a.clone());
                    let bn = g.constant(b.clone());
                    let c = g.matmul(an, bn).unwrap();
                    let s = g.sum(c);
                    g.backward(s).unwrap();
                    (g.value(s).item(), g.grad(an).unwrap().clone())
                },
                &point,
                1e-5,
            );
            assert!(err < 1e-5, "dA err {err}");
            // and wrt B
            let a = rand_tensor(&mut rng, vec![3, 3]);
            let err_b = finite_diff_check(
                |bb| {
                    let mut g = Graph::new();
                    let an = g.constant(a.clone());
                    let bn = g.leaf(bb.clone());
                    let c = g.matmul(an, bn).unwrap();
                    let s = g.sum(c);
                    g.backward(s).unwrap();
                    (g.value(s).item(), g.grad(bn).unwrap().clone())
                },
                &point,
                1e-5,
            );
            assert!(err_b < 1e-5, "dB err {err_b}");
        }
    }

    #[test]
    fn grad_check_matmul_nt() {
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..20 {
            let b = rand_tensor(&mut rng, vec![4, 3]);
            let point = rand_tensor(&mut rng, vec![2, 3]);
            let err = finite_diff_check(
                |a| {
                    let mut g = Graph::new();
                    let an = g.leaf(a.clone());
                    let bn = g.constant(b.clone());
                    let c = g.matmul_nt(an, bn).unwrap();
                    let s = g.sum(c);
                    g.backward(s).unwrap();
                    (g.value(s).item(), g.grad(an).unwrap().clone())
                },
                &point,
                1e-5,
            );
            assert!(err < 1e-5, "err {err}");
            let a = rand_tensor(&mut rng, vec![2, 3]);
            let point_b = rand_tensor(&mut rng, vec![4, 3]);
            let err_b = finite_diff_check(
                |bb| {
                    let mut g = Graph::new();
                    let an = g.constant(a.clone());
                    let bn = g.leaf(bb.clone());
                    let c = g.matmul_nt(an, bn).unwrap();
                    let s = g.sum(c);
                    g.backward(s).unwrap();
                    (g.value(s).item(), g.grad(bn).unwrap().clone())
                },
                &point_b,
                1e-5,
            );
            assert!(err_b < 1e-5, "err {err_b}");
        }
    }

    #[test]
    fn grad_check_cross_entropy() {
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..20 {
            let point = rand_tensor(&mut rng, vec![3, 5]);
            let targets = [4usize, 0, 2];
            let err = finite_diff_check(
                |x| {
                    let mut g = Graph::new();
                    let xn = g.leaf(x.clone());
                    let ce = g.cross_entropy(xn, &targets).unwrap();
                    g.backward(ce).unwrap();
                    (g.value(ce).item(), g.grad(xn).unwrap().clone())
                },
                &point,
                1e-5,
            );
            assert!(err < 1e-4, "err {err}");
        }
    }

    #[test]
    fn grad_check_kl_p_side() {
        let mut rng = StdRng::seed_from_u64(29);
        for _ in 0..20 {
            let q = rand_tensor(&mut rng, vec![2, 6]);
            let point = rand_tensor(&mut rng, vec![2, 6]);
            let err = finite_diff_check(
                |p| {
                    let mut g = Graph::new();
                    let pn = g.leaf(p.clone());
                    let qn = g.constant(q.clone());
                    let kl = g.kl_divergence(pn, qn).unwrap();
                    g.backward(kl).unwrap();
                    (g.value(kl).item(), g.grad(pn).unwrap().clone())
                },
                &point,
                1e-5,
            );
            assert!(err < 1e-4, "err {err}");
        }
    }

    #[test]
    fn kl_gradient_never_reaches_q() {
        let mut g = Graph::new();
        let p = g.leaf(Tensor::matrix(1, 3, vec![0.1, 0.2, 0.3]).unwrap());
        let q = g.leaf(Tensor::matrix(1, 3, vec![0.5, -0.1, 0.0]).unwrap());
        let kl = g.kl_divergence(p, q).unwrap();
        g.backward(kl).unwrap();
        assert!(g.grad(p).is_some());
        assert!(g.grad(q).is_none(), "reference side must stay constant");
    }

    #[test]
    fn grad_check_gather_and_slice_plumbing() {
        let mut rng = StdRng::seed_from_u64(31);
        for _ in 0..10 {
            let point = rand_tensor(&mut rng, vec![5, 3]);
            let err = finite_diff_check(
                |t| {
                    let mut g = Graph::new();
                    let tn = g.leaf(t.clone());
                    let gathered = g.gather_rows(tn, &[0, 2, 2, 4]).unwrap();
                    let sliced = g.slice_rows(gathered, 1, 3).unwrap();
                    let other = g.slice_rows(tn, 0, 2).unwrap();
                    let cat = g.concat_rows(&[sliced, other]).unwrap();
                    let sq = g.mul(cat, cat).unwrap();
                    let s = g.sum(sq);
                    g.backward(s).unwrap();
                    (g.value(s).item(), g.grad(tn).unwrap().clone())
                },
                &point,
                1e-5,
            );
            assert!(err < 1e-4, "err {err}");
        }
    }

    #[test]
    fn grad_check_add_row_vec() {
        let mut rng = StdRng::seed_from_u64(37);
        for _ in 0..10 {
            let a = rand_tensor(&mut rng, vec![3, 4]);
            let point = rand_tensor(&mut rng, vec![4]);
            let err = finite_diff_check(
                |v| {
                    let mut g = Graph::new();
                    let an = g.constant(a.clone());
                    let vn = g.leaf(v.clone());
                    let out = g.add_row_vec(an, vn).unwrap();
                    let sq = g.mul(out, out).unwrap();
                    let s = g.sum(sq);
                    g.backward(s).unwrap();
                    (g.value(s).item(), g.grad(vn).unwrap().clone())
                },
                &point,
                1e-5,
            );
            assert!(err < 1e-4, "err {err}");
        }
    }
}
