use proptest::prelude::*;

use super::*;
use crate::error::Error;
use crate::testutil::{fd_max_rel_error, random_tensor, rng};

fn mat(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a.get2(i, p) * b.get2(p, j);
            }
        }
    }
    out
}

#[test]
fn tensor_rejects_mismatched_data() {
    assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    assert!(Tensor::new(vec![2, 0], vec![]).is_err());
}

#[test]
fn matmul_identity() {
    let mut r = rng(1);
    let x = random_tensor(&mut r, &[2, 2]);
    let mut g = Graph::new();
    let i = g.constant(Tensor::eye(2));
    let xv = g.constant(x.clone());
    let y = g.matmul(i, xv).unwrap();
    assert_eq!(g.value(y), &x);
}

#[test]
fn matmul_hand_case() {
    let mut g = Graph::new();
    let a = g.constant(mat(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let b = g.constant(mat(&[&[1.0], &[1.0]]));
    let y = g.matmul(a, b).unwrap();
    assert_eq!(g.value(y).shape(), &[2, 1]);
    assert_eq!(g.value(y).data(), &[3.0, 7.0]);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut r = rng(2);
    let a = random_tensor(&mut r, &[5, 4]);
    let b = random_tensor(&mut r, &[4, 3]);
    let expected = naive_matmul(&a, &b);
    let mut g = Graph::new();
    let (av, bv) = (g.constant(a), g.constant(b));
    let y = g.matmul(av, bv).unwrap();
    for (x, e) in g.value(y).data().iter().zip(&expected) {
        assert!((x - e).abs() < 1e-12);
    }
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(vec![2, 3]));
    let b = g.constant(Tensor::zeros(vec![2, 3]));
    let err = g.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Dimension { .. }));
    assert!(msg.contains("[2, 3]"), "{msg}");
}

#[test]
fn elementwise_basics() {
    let mut g = Graph::new();
    let z = g.constant(Tensor::scalar(0.0));
    let s = g.sigmoid(z);
    let t = g.tanh(z);
    assert_eq!(g.value(s).item(), 0.5);
    assert_eq!(g.value(t).item(), 0.0);

    let a = g.constant(Tensor::zeros(vec![2]));
    let b = g.constant(Tensor::zeros(vec![3]));
    assert!(matches!(g.add(a, b), Err(Error::Dimension { .. })));
    assert!(g.mul(a, b).is_err());
    assert!(g.sub(a, b).is_err());
}

#[test]
fn sigmoid_gradient_at_zero() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::scalar(0.0));
    let s = g.sigmoid(x);
    g.backward(s).unwrap();
    assert!((g.grad(x).unwrap().item() - 0.25).abs() < 1e-15);

    let eps = 1e-6;
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let numeric = (sig(eps) - sig(-eps)) / (2.0 * eps);
    assert!((numeric - 0.25).abs() < 1e-9);
}

#[test]
fn sigmoid_is_stable_at_extremes() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![2], vec![-800.0, 800.0]).unwrap());
    let s = g.sigmoid(x);
    assert_eq!(g.value(s).data(), &[0.0, 1.0]);
}

#[test]
fn softmax_uniform_and_extreme() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(vec![4]));
    let s = g.softmax(x, 0).unwrap();
    assert_eq!(g.value(s).data(), &[0.25; 4]);

    let x = g.constant(Tensor::new(vec![3], vec![1000.0, 0.0, 0.0]).unwrap());
    let s = g.softmax(x, 0).unwrap();
    let v = g.value(s).data();
    assert!(v.iter().all(|x| x.is_finite()));
    assert!((v[0] - 1.0).abs() < 1e-12 && v[1] < 1e-300);

    assert!(g.softmax(x, 1).is_err());
}

/// Direct exp/Σexp oracle with compensated summation.
fn softmax_oracle(x: &[f64]) -> Vec<f64> {
    let exps: Vec<f64> = x.iter().map(|v| v.exp()).collect();
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &e in &exps {
        let t = sum + e;
        comp += if sum.abs() >= e.abs() {
            (sum - t) + e
        } else {
            (e - t) + sum
        };
        sum = t;
    }
    let total = sum + comp;
    exps.iter().map(|e| e / total).collect()
}

#[test]
fn softmax_matches_direct_formula() {
    let mut r = rng(3);
    for _ in 0..20 {
        let x = random_tensor(&mut r, &[7]);
        let scaled: Vec<f64> = x.data().iter().map(|v| v * 10.0).collect();
        let expected = softmax_oracle(&scaled);
        let mut g = Graph::new();
        let xv = g.constant(Tensor::new(vec![7], scaled).unwrap());
        let s = g.softmax(xv, 0).unwrap();
        for (a, b) in g.value(s).data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn softmax_along_middle_axis() {
    let mut r = rng(4);
    let x = random_tensor(&mut r, &[2, 3, 4]);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let s = g.softmax(xv, 1).unwrap();
    let v = g.value(s);
    for o in 0..2 {
        for i in 0..4 {
            let col: Vec<f64> = (0..3).map(|a| x.data()[(o * 3 + a) * 4 + i]).collect();
            let expected = softmax_oracle(&col);
            for a in 0..3 {
                assert!((v.data()[(o * 3 + a) * 4 + i] - expected[a]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn concat_shapes_and_slices() {
    let mut r = rng(5);
    let a = random_tensor(&mut r, &[4, 3]);
    let b = random_tensor(&mut r, &[4, 5]);
    let mut g = Graph::new();
    let (av, bv) = (g.variable(a.clone()), g.variable(b.clone()));
    let c = g.concat_last(av, bv).unwrap();
    assert_eq!(g.shape(c), &[4, 8]);
    let left = g.slice_last(c, 0, 3).unwrap();
    let right = g.slice_last(c, 3, 5).unwrap();
    assert_eq!(g.value(left), &a);
    assert_eq!(g.value(right), &b);

    let s = g.sum_all(c);
    g.backward(s).unwrap();
    assert_eq!(g.grad(av).unwrap(), &Tensor::full(vec![4, 3], 1.0));

    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(vec![3, 2]));
    let y = g.constant(Tensor::zeros(vec![4, 2]));
    assert!(matches!(g.concat_last(x, y), Err(Error::Dimension { .. })));
}

#[test]
fn backward_linear_and_quadratic() {
    let mut r = rng(6);
    let w = random_tensor(&mut r, &[3, 2, 2]);
    let mut g = Graph::new();
    let wv = g.variable(w.clone());
    let s = g.sum_all(wv);
    g.backward(s).unwrap();
    assert_eq!(g.grad(wv).unwrap(), &Tensor::full(vec![3, 2, 2], 1.0));

    let mut g = Graph::new();
    let wv = g.variable(w.clone());
    let sq = g.mul(wv, wv).unwrap();
    let s = g.sum_all(sq);
    g.backward(s).unwrap();
    let expected: Vec<f64> = w.data().iter().map(|v| 2.0 * v).collect();
    assert_eq!(g.grad(wv).unwrap().data(), expected.as_slice());
}

#[test]
fn backward_contract() {
    let mut g = Graph::new();
    let w = g.variable(Tensor::zeros(vec![2]));
    assert!(matches!(g.backward(w), Err(Error::Contract(_))));
    let s = g.sum_all(w);
    g.backward(s).unwrap();
    assert!(matches!(g.backward(s), Err(Error::Contract(_))));

    let mut g = Graph::inference(Precision::F64);
    let w = g.variable(Tensor::zeros(vec![2]));
    let s = g.sum_all(w);
    assert!(g.backward(s).is_err());
}

#[test]
fn unreachable_leaf_has_no_grad_and_reachable_ones_do() {
    let mut g = Graph::new();
    let a = g.variable(Tensor::scalar(2.0));
    let b = g.variable(Tensor::scalar(3.0));
    let c = g.constant(Tensor::scalar(4.0));
    let ab = g.mul(a, c).unwrap();
    g.backward(ab).unwrap();
    assert!(g.grad(a).is_some());
    assert!(g.grad(b).is_none());
    assert!(g.grad(c).is_none());
}

#[test]
fn params_are_recorded_once() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::full(vec![2], 1.5));
    let mut g = Graph::new();
    let p1 = g.param(&store, id);
    let p2 = g.param(&store, id);
    assert_eq!(p1, p2);
    let m = g.mul(p1, p2).unwrap();
    let s = g.sum_all(m);
    g.backward(s).unwrap();
    assert_eq!(g.param_grad(id).unwrap().data(), &[3.0, 3.0]);
}

#[test]
fn f32_mode_rounds_values() {
    let mut g = Graph::with_precision(Precision::F32);
    let x = g.constant(Tensor::scalar(0.1));
    assert_eq!(g.value(x).item(), 0.1f32 as f64);
    let y = g.scale(x, 3.0);
    assert_eq!(g.value(y).item(), (0.1f32 as f64 * 3.0) as f32 as f64);
}

const FD_TOL: f64 = 1e-3;

fn check(inputs: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> crate::Result<Var>) {
    let err = fd_max_rel_error(inputs, 1e-5, f);
    assert!(err < FD_TOL, "finite-difference rel error {err}");
}

/// Weighted sum so every output element gets a distinct adjoint.
fn weigh(g: &mut Graph, v: Var, seed: u64) -> crate::Result<Var> {
    let mut r = rng(seed);
    let w = random_tensor(&mut r, g.shape(v));
    let wv = g.constant(w);
    let p = g.mul(v, wv)?;
    Ok(g.sum_all(p))
}

#[test]
fn fd_matmul_transpose() {
    let mut r = rng(10);
    let a = random_tensor(&mut r, &[3, 4]);
    let b = random_tensor(&mut r, &[3, 4]);
    check(&[a, b], |g, v| {
        let bt = g.transpose(v[1])?;
        let y = g.matmul(v[0], bt)?;
        weigh(g, y, 99)
    });
}

#[test]
fn fd_pointwise_ops() {
    let mut r = rng(11);
    let a = random_tensor(&mut r, &[2, 5]);
    let b = random_tensor(&mut r, &[2, 5]);
    check(&[a, b], |g, v| {
        let s = g.sigmoid(v[0]);
        let t = g.tanh(v[1]);
        let e = g.exp(v[0]);
        let m = g.mul(s, t)?;
        let d = g.sub(m, e)?;
        let sc = g.scale(d, 1.7);
        let o = g.one_minus(sc);
        let rl = g.relu(o);
        let a = g.add(rl, t)?;
        weigh(g, a, 98)
    });
}

#[test]
fn fd_row_broadcasts() {
    let mut r = rng(12);
    let x = random_tensor(&mut r, &[3, 4]);
    let v = random_tensor(&mut r, &[4]);
    let w = random_tensor(&mut r, &[1, 4]);
    check(&[x, v, w], |g, v| {
        let a = g.add_row(v[0], v[1])?;
        let m = g.mul_row(a, v[2])?;
        weigh(g, m, 97)
    });
}

#[test]
fn fd_softmax_layer_norm() {
    let mut r = rng(13);
    let x = random_tensor(&mut r, &[3, 5]);
    check(std::slice::from_ref(&x), |g, v| {
        let s = g.softmax(v[0], 1)?;
        weigh(g, s, 96)
    });
    check(std::slice::from_ref(&x), |g, v| {
        let s = g.softmax(v[0], 0)?;
        weigh(g, s, 95)
    });
    check(&[x], |g, v| {
        let s = g.layer_norm(v[0], 1e-5);
        weigh(g, s, 94)
    });
}

#[test]
fn fd_structural_ops() {
    let mut r = rng(14);
    let a = random_tensor(&mut r, &[3, 2]);
    let b = random_tensor(&mut r, &[3, 3]);
    check(&[a, b], |g, v| {
        let c = g.concat_last(v[0], v[1])?;
        let s = g.slice_last(c, 1, 3)?;
        let r0 = g.row(s, 2)?;
        let r1 = g.row(s, 0)?;
        let st = g.concat_rows(&[r0, s, r1])?;
        let m = g.mean_rows(st)?;
        let ga = g.gather(st, vec![0, 4, 4, 7])?;
        let x = weigh(g, m, 93)?;
        let y = weigh(g, ga, 92)?;
        let z = g.mean_all(st);
        let xy = g.add(x, y)?;
        g.add(xy, z)
    });
}

#[test]
fn fd_conv_sqdist_normalize() {
    let mut r = rng(15);
    let x = random_tensor(&mut r, &[5, 3]);
    let k = random_tensor(&mut r, &[3, 3, 4]);
    let b = random_tensor(&mut r, &[4]);
    let c = random_tensor(&mut r, &[2, 4]);
    check(&[x, k, b, c], |g, v| {
        let y = g.conv1d(v[0], v[1], v[2])?;
        let d = g.sq_dist(y, v[3])?;
        let n = g.l2_normalize_rows(y);
        let a = weigh(g, d, 91)?;
        let b = weigh(g, n, 90)?;
        g.add(a, b)
    });
}

#[test]
fn fd_cross_entropy() {
    let mut r = rng(16);
    let x = random_tensor(&mut r, &[4, 3]);
    check(&[x], |g, v| g.cross_entropy(v[0], &[0, 2, 1, 2]));
}

#[test]
fn conv_rejects_even_kernel() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(vec![4, 2]));
    let k = g.constant(Tensor::zeros(vec![2, 2, 3]));
    let b = g.constant(Tensor::zeros(vec![3]));
    assert!(matches!(g.conv1d(x, k, b), Err(Error::Config(_))));
}

#[test]
fn normalize_zero_row_is_zero() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::zeros(vec![1, 3]));
    let n = g.l2_normalize_rows(x);
    assert_eq!(g.value(n).data(), &[0.0; 3]);
    let s = g.sum_all(n);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[0.0; 3]);
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut r = rng(17);
        let a = random_tensor(&mut r, &[6, 6]);
        let mut g = Graph::new();
        let av = g.constant(a);
        let m = g.matmul(av, av).unwrap();
        let s = g.softmax(m, 1).unwrap();
        g.value(s).clone()
    };
    let (x, y) = (run(), run());
    assert!(x.data().iter().zip(y.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..9, seed in any::<u64>(), scale in 0.1f64..50.0) {
        let mut r = rng(seed);
        let mut x = random_tensor(&mut r, &[rows, cols]);
        x.data_mut().iter_mut().for_each(|v| *v *= scale);
        let mut g = Graph::new();
        let xv = g.constant(x);
        let s = g.softmax(xv, 1).unwrap();
        let v = g.value(s);
        for i in 0..rows {
            let sum: f64 = v.row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn concat_slice_inverse(rows in 1usize..4, ca in 1usize..5, cb in 1usize..5, seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = random_tensor(&mut r, &[rows, ca]);
        let b = random_tensor(&mut r, &[rows, cb]);
        let mut g = Graph::new();
        let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
        let c = g.concat_last(av, bv).unwrap();
        let l = g.slice_last(c, 0, ca).unwrap();
        let rr = g.slice_last(c, ca, cb).unwrap();
        prop_assert_eq!(g.value(l), &a);
        prop_assert_eq!(g.value(rr), &b);
    }
}
