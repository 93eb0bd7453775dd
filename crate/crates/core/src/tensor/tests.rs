use proptest::prelude::*;

use super::*;
use crate::error::Error;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn mat(t: &Tape, rows: usize, cols: usize, v: &[f64]) -> Var {
    t.constant(&Tensor::matrix(rows, cols, v.to_vec()).unwrap())
}

#[test]
fn tensor_rejects_inconsistent_shapes() {
    assert!(matches!(
        Tensor::new(vec![2, 3], vec![0.0; 5]),
        Err(Error::Dimension { .. })
    ));
    assert!(Tensor::new(vec![0], vec![]).is_err());
    let t = Tensor::zeros(vec![2, 3]).unwrap();
    assert_eq!(t.shape(), &[2, 3]);
    assert_eq!(t.len(), 6);
}

#[test]
fn matmul_identity_and_zero() {
    let t = Tape::new();
    let a = mat(&t, 2, 2, &[1.0, 2.0, 3.0, 4.0]);
    let eye = mat(&t, 2, 2, &[1.0, 0.0, 0.0, 1.0]);
    let zero = mat(&t, 2, 2, &[0.0; 4]);
    assert_eq!(t.value(t.matmul(eye, a).unwrap()), vec![1.0, 2.0, 3.0, 4.0]);
    assert_eq!(t.value(t.matmul(a, zero).unwrap()), vec![0.0; 4]);
}

#[test]
fn matmul_by_hand() {
    let t = Tape::new();
    let a = mat(&t, 1, 2, &[1.0, 2.0]);
    let b = mat(&t, 2, 1, &[3.0, 4.0]);
    let c = t.matmul(a, b).unwrap();
    assert_eq!(t.shape(c), vec![1, 1]);
    assert_eq!(t.value(c), vec![1.0 * 3.0 + 2.0 * 4.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let t = Tape::new();
    let a = mat(&t, 2, 3, &[0.0; 6]);
    let b = mat(&t, 2, 2, &[0.0; 4]);
    match t.matmul(a, b) {
        Err(Error::Dimension { left, right, .. }) => {
            assert_eq!(left, vec![2, 3]);
            assert_eq!(right, vec![2, 2]);
        }
        other => panic!("expected a dimension error, got {other:?}"),
    }
    let x = t.vector(vec![1.0, 2.0]);
    let y = t.vector(vec![1.0, 2.0, 3.0]);
    assert!(t.add(x, y).is_err());
    assert!(t.dot(x, y).is_err());
}

#[test]
fn activations_at_zero() {
    let t = Tape::new();
    let z = t.vector(vec![0.0]);
    assert_eq!(t.scalar(t.activation(Activation::Tanh, z)), 0.0);
    assert_eq!(t.scalar(t.activation(Activation::Sigmoid, z)), 0.5);
    let sp = t.scalar(t.activation(Activation::Softplus, z));
    assert!(close(sp, (1.0f64 + 0.0f64.exp()).ln(), 1e-15));
    assert!(close(sp, 0.693147, 1e-6));
}

#[test]
fn softplus_is_safe_and_positive_at_extremes() {
    let t = Tape::new();
    let x = t.vector(vec![1000.0, 40.0, -1000.0, -40.0]);
    let y = t.value(t.softplus(x));
    assert_eq!(y[0], 1000.0);
    assert!(close(y[1], 40.0 + (-40.0f64).exp(), 1e-12));
    assert!(y.iter().all(|v| v.is_finite() && *v > 0.0));
}

#[test]
fn xent_uniform_and_saturated() {
    let t = Tape::new();
    let l = t.vector(vec![0.0; 4]);
    for target in 0..4 {
        assert!(close(t.scalar(t.softmax_xent(l, target).unwrap()), 4.0f64.ln(), 1e-15));
    }
    let l = t.vector(vec![1000.0, 0.0]);
    let loss = t.scalar(t.softmax_xent(l, 0).unwrap());
    assert!(loss.is_finite() && loss.abs() < 1e-300);
}

#[test]
fn xent_by_direct_evaluation() {
    let t = Tape::new();
    let l = t.vector(vec![1.0, 2.0, 3.0]);
    let loss = t.scalar(t.softmax_xent(l, 2).unwrap());
    let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|x| x.exp()).sum();
    let expected = -(3.0f64.exp() / z).ln();
    assert!(close(loss, expected, 1e-14));
    assert!(close(loss, 0.40761, 1e-5));
}

#[test]
fn xent_target_out_of_range() {
    let t = Tape::new();
    let l = t.vector(vec![0.0; 3]);
    assert!(matches!(t.softmax_xent(l, 3), Err(Error::Index { .. })));
}

#[test]
fn xent_gradient_is_softmax_minus_onehot() {
    let t = Tape::new();
    let x = t.variable(&Tensor::vector(vec![0.5, -1.0, 2.0]).unwrap());
    let loss = t.softmax_xent(x, 1).unwrap();
    let g = t.backward(loss).unwrap();
    let z: f64 = [0.5f64, -1.0, 2.0].iter().map(|v| v.exp()).sum();
    let want = [0.5f64.exp() / z, (-1.0f64).exp() / z - 1.0, 2.0f64.exp() / z];
    for (a, b) in g.get(x).unwrap().iter().zip(want) {
        assert!(close(*a, b, 1e-14));
    }
}

#[test]
fn backward_of_sum_and_square() {
    let t = Tape::new();
    let x = t.variable(&Tensor::vector(vec![0.3, -2.0, 7.0]).unwrap());
    let g = t.backward(t.sum(x)).unwrap();
    assert_eq!(g.get(x).unwrap(), &[1.0, 1.0, 1.0]);

    let t = Tape::new();
    let x = t.variable(&Tensor::vector(vec![2.0]).unwrap());
    let y = t.dot(x, x).unwrap();
    assert_eq!(t.backward(y).unwrap().get(x).unwrap(), &[4.0]);
}

#[test]
fn backward_needs_a_scalar() {
    let t = Tape::new();
    let x = t.variable(&Tensor::vector(vec![1.0, 2.0]).unwrap());
    let y = t.tanh(x);
    assert!(matches!(t.backward(y), Err(Error::Contract(_))));
}

#[test]
fn constants_and_detached_values_get_no_gradient() {
    let t = Tape::new();
    let x = t.variable(&Tensor::vector(vec![1.0, 2.0]).unwrap());
    let c = t.vector(vec![3.0, 4.0]);
    let d = t.detach(x);
    let y = t.add(t.dot(x, c).unwrap(), t.dot(d, d).unwrap()).unwrap();
    let g = t.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap(), &[3.0, 4.0]);
    assert!(g.get(c).is_none());
    assert!(g.get(d).is_none());
}

#[test]
fn no_grad_tape_records_values_only() {
    let t = Tape::no_grad();
    let x = t.variable(&Tensor::vector(vec![1.0]).unwrap());
    let y = t.square(x);
    assert_eq!(t.scalar(y), 1.0);
    assert!(!t.requires_grad(y));
}

#[test]
fn shared_parameter_gradients_accumulate() {
    let mut store = ParamStore::new();
    let w = store.insert("w", Tensor::vector(vec![1.5, -0.5]).unwrap()).unwrap();
    let t = Tape::new();
    let a = t.param(&store, w);
    let b = t.param(&store, w);
    assert_eq!(a, b);
    let y = t.add(t.sum(a), t.dot(b, b).unwrap()).unwrap();
    let g = t.backward(y).unwrap();
    assert_eq!(g.param(w).unwrap(), &[1.0 + 3.0, 1.0 - 1.0]);
    g.accumulate_into(&mut store);
    g.accumulate_into(&mut store);
    assert_eq!(store.grads()[0], vec![8.0, 0.0]);
    store.zero_grads();
    assert_eq!(store.grads()[0], vec![0.0, 0.0]);
}

#[test]
fn backward_is_additive_over_losses() {
    let mut store = ParamStore::new();
    let w = store
        .insert("w", Tensor::matrix(2, 2, vec![0.3, -0.7, 1.1, 0.2]).unwrap())
        .unwrap();
    let loss1 = |t: &Tape| {
        let x = t.vector(vec![0.5, -1.5]);
        t.sum(t.tanh(t.matvec(t.param(&store, w), x).unwrap()))
    };
    let loss2 = |t: &Tape| {
        let m = t.param(&store, w);
        t.softmax_xent(t.row(m, 1).unwrap(), 0).unwrap()
    };
    let sep = |f: &dyn Fn(&Tape) -> Var| {
        let t = Tape::new();
        let l = f(&t);
        t.backward(l).unwrap().param(w).unwrap().to_vec()
    };
    let (g1, g2) = (sep(&loss1), sep(&loss2));
    let t = Tape::new();
    let l = t.add(loss1(&t), loss2(&t)).unwrap();
    let both = t.backward(l).unwrap().param(w).unwrap().to_vec();
    for i in 0..4 {
        assert!(close(both[i], g1[i] + g2[i], 1e-15));
    }
}

#[test]
fn forward_is_bit_deterministic() {
    let run = || {
        let t = Tape::new();
        let a = mat(&t, 2, 3, &[0.1, 0.2, -0.3, 0.4, 0.5, -0.6]);
        let x = t.vector(vec![1.0, -2.0, 0.25]);
        let h = t.softplus(t.matvec(a, x).unwrap());
        t.value(t.log(t.offset(h, 1.0)))
    };
    let (a, b) = (run(), run());
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn grad_check_quadratic_form() {
    let mut store = ParamStore::new();
    let x = store.insert("x", Tensor::vector(vec![0.7, -1.2, 0.4]).unwrap()).unwrap();
    let a = Tensor::matrix(3, 3, vec![2.0, 0.5, 0.0, 0.5, 1.0, -0.3, 0.0, -0.3, 3.0]).unwrap();
    let report = grad_check(&mut store, 1e-4, |s, t| {
        let xv = t.param(s, x);
        let ax = t.matvec(t.constant(&a), xv)?;
        t.dot(xv, ax)
    })
    .unwrap();
    assert_eq!(report.entries, 3);
    assert!(report.max_discrepancy < 1e-6, "{report:?}");
}

#[test]
fn grad_check_constant_is_zero() {
    let mut store = ParamStore::new();
    store.insert("unused", Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
    let report = grad_check(&mut store, 1e-4, |_, t| Ok(t.vector(vec![5.0]))).unwrap();
    assert_eq!(report.max_discrepancy, 0.0);
}

#[test]
fn grad_check_rejects_bad_eps_and_nondeterminism() {
    let mut store = ParamStore::new();
    let x = store.insert("x", Tensor::vector(vec![1.0]).unwrap()).unwrap();
    assert!(grad_check(&mut store, 1e-2, |s, t| Ok(t.param(s, x))).is_err());
    let calls = std::cell::Cell::new(0.0);
    let r = grad_check(&mut store, 1e-4, |s, t| {
        calls.set(calls.get() + 1.0);
        Ok(t.offset(t.sum(t.param(s, x)), calls.get()))
    });
    assert!(matches!(r, Err(Error::Determinism { .. })));
}

/// Touches every op once on a randomized parameter set.
fn composite(store: &ParamStore, t: &Tape, dims: (usize, usize, usize)) -> crate::Result<Var> {
    let (m, k, n) = dims;
    let [a, b, x, y] = ["a", "b", "x", "y"].map(|s| t.param(store, store.id(s).unwrap()));
    let ab = t.matmul(a, b)?;
    let r0 = t.row(ab, 0)?;
    let r_last = t.row(ab, m - 1)?;
    let h = t.matvec(b, x)?;
    let s = t.sigmoid(y);
    let prod = t.mul(t.tanh(h), s)?;
    let ratio = t.div(t.sub(r0, r_last)?, t.offset(t.softplus(r0), 1.0))?;
    let cat = t.concat(&[prod, ratio])?;
    let first = t.slice(cat, 0, k)?;
    let pos = t.offset(t.exp(t.scale(first, 0.3)), 0.5);
    let terms = [
        t.sum(t.log(pos)),
        t.sum(t.sqrt(pos)),
        t.neg(t.dot(first, first)?),
        t.sum(t.square(cat)),
        t.softmax_xent(cat, (m + n) % (k + n))?,
    ];
    t.add_all(&terms)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn composite_graph_matches_finite_differences(
        m in 1usize..4, k in 1usize..4, n in 1usize..4,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let mut store = ParamStore::new();
        store.insert("a", Tensor::matrix(m, k, draw(m * k)).unwrap()).unwrap();
        store.insert("b", Tensor::matrix(k, n, draw(k * n)).unwrap()).unwrap();
        store.insert("x", Tensor::vector(draw(n)).unwrap()).unwrap();
        store.insert("y", Tensor::vector(draw(k)).unwrap()).unwrap();
        let report = grad_check(&mut store, 1e-4, |s, t| composite(s, t, (m, k, n))).unwrap();
        prop_assert!(report.max_discrepancy < 1e-4, "{:?}", report);
    }

    #[test]
    fn softplus_strictly_positive(x in -1e6f64..1e6) {
        let t = Tape::new();
        let v = t.vector(vec![x]);
        let y = t.scalar(t.softplus(v));
        prop_assert!(y > 0.0 && y.is_finite());
    }
}
