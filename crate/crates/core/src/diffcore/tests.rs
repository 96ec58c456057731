use std::sync::Arc;

use ndarray::{arr2, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::nn::{init_mlp, mlp, mlp_forward, mlp_tensors, Activation};
use super::*;

fn single(seg: &str, tensor: &str, rows: usize, cols: usize) -> Arc<Layout> {
    Layout::builder().segment(seg, &[(tensor, rows, cols)]).build()
}

/// `½ xᵀ A x` with `x` a 1×2 parameter row.
fn quadratic(a: [[f64; 2]; 2]) -> Graph {
    let mut g = Graph::new(single("x", "x", 1, 2));
    let x = g.param("x", "x").unwrap();
    let am = g.constant(arr2(&a));
    let xa = g.matmul_t(x, am, false, true);
    let xax = g.inner(xa, x);
    let out = g.scale(xax, 0.5);
    g.set_output(out);
    g
}

fn mlp_layout(sizes: &[usize]) -> Arc<Layout> {
    let t = mlp_tensors(sizes);
    let refs: Vec<(&str, usize, usize)> = t.iter().map(|(n, r, c)| (n.as_str(), *r, *c)).collect();
    Layout::builder().segment("net", &refs).build()
}

/// Scalar objective `mean(tanh-MLP(x)²)` over a batch.
fn mlp_objective(sizes: &[usize], batch: usize, seed: u64) -> (Graph, ParameterVector, Vec<f64>) {
    let layout = mlp_layout(sizes);
    let mut g = Graph::new(layout.clone());
    let x = g.input("x", batch, sizes[0]);
    let y = mlp(&mut g, x, "net", sizes.len() - 1, Activation::Tanh, Activation::Tanh).unwrap();
    let sq = g.square(y);
    let out = g.mean(sq);
    g.set_output(out);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParameterVector::zeros(layout);
    init_mlp(&mut p, "net", sizes, 1.0, &mut rng).unwrap();
    let xs = (0..batch * sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
    (g, p, xs)
}

fn fd_gradient(g: &Graph, p: &ParameterVector, inputs: &[&[f64]], segment: &str, h: f64) -> Vec<f64> {
    let seg = p.layout().segment(segment).unwrap().clone();
    (0..seg.len)
        .map(|i| {
            let mut plus = p.clone();
            plus.values_mut()[seg.offset + i] += h;
            let mut minus = p.clone();
            minus.values_mut()[seg.offset + i] -= h;
            (g.evaluate(&plus, inputs).unwrap()[0] - g.evaluate(&minus, inputs).unwrap()[0]) / (2.0 * h)
        })
        .collect()
}

fn assert_rel_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        let scale = x.abs().max(y.abs()).max(1e-3);
        assert!((x - y).abs() <= tol * scale, "component {i}: {x} vs {y}");
    }
}

#[test]
fn identity_affine_evaluates_to_input() {
    let layout = Layout::builder().segment("m", &[("w", 2, 2), ("b", 1, 2)]).build();
    let mut p = ParameterVector::zeros(layout.clone());
    p.set_segment("m", &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
    let mut g = Graph::new(layout);
    let x = g.input("x", 1, 2);
    let w = g.param("m", "w").unwrap();
    let b = g.param("m", "b").unwrap();
    let y = g.affine(x, w, b);
    g.set_output(y);
    assert_eq!(g.evaluate(&p, &[&[1.0, 2.0]]).unwrap(), vec![1.0, 2.0]);
}

#[test]
fn tanh_of_zero_is_zero() {
    let layout = Layout::builder().build();
    let mut g = Graph::new(layout.clone());
    let x = g.input("x", 1, 1);
    let t = g.tanh(x);
    g.set_output(t);
    assert_eq!(g.evaluate(&ParameterVector::zeros(layout), &[&[0.0]]).unwrap(), vec![0.0]);
}

#[test]
fn mlp_forward_matches_straight_line_arithmetic() {
    let sizes = [3, 4, 2];
    let layout = mlp_layout(&sizes);
    let mut g = Graph::new(layout.clone());
    let x = g.input("x", 1, 3);
    let y = mlp(&mut g, x, "net", 2, Activation::Tanh, Activation::Identity).unwrap();
    g.set_output(y);
    let mut p = ParameterVector::zeros(layout.clone());
    init_mlp(&mut p, "net", &sizes, 0.5, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();

    let w0 = p.tensor(layout.tensor_index("net", "w0").unwrap());
    let b0 = p.tensor(layout.tensor_index("net", "b0").unwrap());
    let w1 = p.tensor(layout.tensor_index("net", "w1").unwrap());
    let b1 = p.tensor(layout.tensor_index("net", "b1").unwrap());
    let input = [1.0, 1.0, 1.0];
    let mut hidden = [0.0; 4];
    for j in 0..4 {
        let mut z = b0[j];
        for i in 0..3 {
            z += input[i] * w0[i * 4 + j];
        }
        hidden[j] = z.tanh();
    }
    let mut expect = [0.0; 2];
    for k in 0..2 {
        let mut z = b1[k];
        for j in 0..4 {
            z += hidden[j] * w1[j * 2 + k];
        }
        expect[k] = z;
    }
    let got = g.evaluate(&p, &[&input]).unwrap();
    let plain = mlp_forward(p.segment("net").unwrap(), &sizes, Activation::Tanh, Activation::Identity, &input);
    for k in 0..2 {
        assert!((got[k] - expect[k]).abs() < 1e-14);
        assert!((plain[k] - expect[k]).abs() < 1e-14);
    }
}

#[test]
fn shape_mismatch_names_the_slot() {
    let (g, p, _) = mlp_objective(&[2, 3, 1], 2, 1);
    let err = g.evaluate(&p, &[&[1.0, 2.0, 3.0]]).unwrap_err();
    assert!(matches!(err, DiffError::InputShape { ref slot, expected: 4, got: 3 } if slot == "x"));
    assert!(g.evaluate(&p, &[]).is_err());
}

#[test]
fn quadratic_gradient_and_hvp() {
    let mut g = quadratic([[2.0, 0.0], [0.0, 4.0]]);
    let mut p = ParameterVector::zeros(g.layout().clone());
    p.set_segment("x", &[1.0, 1.0]).unwrap();
    assert_eq!(g.gradient(&p, &[], "x").unwrap(), vec![2.0, 4.0]);
    assert_eq!(g.hvp(&p, &[], "x", &[1.0, 0.0]).unwrap(), vec![2.0, 0.0]);
    assert_eq!(g.hvp(&p, &[], "x", &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    assert!(matches!(
        g.hvp(&p, &[], "x", &[1.0]),
        Err(DiffError::Dimension { expected: 2, got: 1, .. })
    ));
}

#[test]
fn constant_graph_has_zero_gradient() {
    let layout = single("x", "x", 1, 3);
    let mut g = Graph::new(layout.clone());
    let _ = g.param("x", "x").unwrap();
    let c = g.scalar(3.5);
    g.set_output(c);
    let p = ParameterVector::from_values(layout, vec![1.0, 2.0, 3.0]).unwrap();
    assert_eq!(g.gradient(&p, &[], "x").unwrap(), vec![0.0; 3]);
}

#[test]
fn non_scalar_output_rejected() {
    let layout = single("x", "x", 1, 2);
    let mut g = Graph::new(layout.clone());
    let x = g.param("x", "x").unwrap();
    let t = g.tanh(x);
    g.set_output(t);
    let p = ParameterVector::zeros(layout);
    assert!(matches!(
        g.gradient(&p, &[], "x"),
        Err(DiffError::NonScalar { rows: 1, cols: 2 })
    ));
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    let (mut g, p, xs) = mlp_objective(&[3, 5, 4, 2], 6, 11);
    let grad = g.gradient(&p, &[&xs], "net").unwrap();
    let fd = fd_gradient(&g, &p, &[&xs], "net", 1e-5);
    assert_rel_close(&grad, &fd, 1e-4);
}

#[test]
fn mlp_hvp_matches_finite_difference_of_gradients() {
    let (mut g, p, xs) = mlp_objective(&[3, 5, 2], 4, 3);
    let n = p.len();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let hv = g.hvp(&p, &[&xs], "net", &v).unwrap();
    let h = 1e-5;
    let mut plus = p.clone();
    let mut minus = p.clone();
    for i in 0..n {
        plus.values_mut()[i] += h * v[i];
        minus.values_mut()[i] -= h * v[i];
    }
    let gp = g.gradient(&plus, &[&xs], "net").unwrap();
    let gm = g.gradient(&minus, &[&xs], "net").unwrap();
    let fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    assert_rel_close(&hv, &fd, 1e-4);
}

fn two_scalar(f: impl FnOnce(&mut Graph, NodeId, NodeId) -> NodeId) -> Graph {
    let layout = Layout::builder()
        .segment("t1", &[("v", 1, 1)])
        .segment("t2", &[("v", 1, 1)])
        .build();
    let mut g = Graph::new(layout);
    let a = g.param("t1", "v").unwrap();
    let b = g.param("t2", "v").unwrap();
    let out = f(&mut g, a, b);
    g.set_output(out);
    g
}

#[test]
fn mixed_partial_of_product_is_one() {
    let mut g = two_scalar(|g, a, b| g.mul(a, b));
    let p = ParameterVector::from_values(g.layout().clone(), vec![0.3, -2.0]).unwrap();
    assert_eq!(g.mixed_pvp(&p, &[], "t1", "t2", &[1.0]).unwrap(), vec![1.0]);
}

#[test]
fn mixed_partial_of_separable_is_zero() {
    let mut g = two_scalar(|g, a, b| {
        let sa = g.square(a);
        let tb = g.tanh(b);
        g.add(sa, tb)
    });
    let p = ParameterVector::from_values(g.layout().clone(), vec![0.3, -2.0]).unwrap();
    assert_eq!(g.mixed_pvp(&p, &[], "t1", "t2", &[1.7]).unwrap(), vec![0.0]);
}

#[test]
fn bilinear_mixed_product_matches_matrix_multiply() {
    let (d1, d2) = (4, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let bmat = Array2::from_shape_fn((d1, d2), |_| rng.random_range(-2.0..2.0));
    let layout = Layout::builder()
        .segment("t1", &[("v", 1, d1)])
        .segment("t2", &[("v", 1, d2)])
        .build();
    let mut g = Graph::new(layout.clone());
    let a = g.param("t1", "v").unwrap();
    let b = g.param("t2", "v").unwrap();
    let bc = g.constant(bmat.clone());
    let ab = g.matmul(a, bc);
    let out = g.inner(ab, b);
    g.set_output(out);
    let p = ParameterVector::from_values(layout, (0..d1 + d2).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let v: Vec<f64> = (0..d2).map(|_| rng.random_range(-1.0..1.0)).collect();
    let got = g.mixed_pvp(&p, &[], "t1", "t2", &v).unwrap();
    for i in 0..d1 {
        let expect: f64 = (0..d2).map(|j| bmat[[i, j]] * v[j]).sum();
        assert!((got[i] - expect).abs() <= 1e-10 * expect.abs().max(1.0));
    }
}

#[test]
fn relu_and_concat_slice_backprop() {
    // f = sum(relu(x) ⊙ [x|x] sliced back) is easy to differentiate by hand:
    // with x = (2, -1): f = relu(2)*2 + relu(-1)*(-1) = 4, ∇f = (4, 0).
    let layout = single("x", "x", 1, 2);
    let mut g = Graph::new(layout.clone());
    let x = g.param("x", "x").unwrap();
    let r = g.relu(x);
    let cat = g.concat_cols(&[x, x]);
    let back = g.slice_cols(cat, 2, 2);
    let out = g.inner(r, back);
    g.set_output(out);
    let p = ParameterVector::from_values(layout, vec![2.0, -1.0]).unwrap();
    assert_eq!(g.evaluate(&p, &[]).unwrap(), vec![4.0]);
    assert_eq!(g.gradient(&p, &[], "x").unwrap(), vec![4.0, 0.0]);
}

#[test]
fn incremental_probe_reuses_cached_forward() {
    let (mut g, p, xs) = mlp_objective(&[2, 6, 1], 5, 8);
    let h = g.product_handle("net", "net").unwrap();
    let mut ws = g.workspace();
    g.bind(&mut ws, &p, &[&xs]).unwrap();
    let n = p.len();
    let e0: Vec<f64> = (0..n).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
    let e1: Vec<f64> = (0..n).map(|i| if i == 1 { 1.0 } else { 0.0 }).collect();
    let first = g.run_product(&mut ws, &h, &e0).unwrap();
    let second = g.run_product(&mut ws, &h, &e1).unwrap();
    assert_eq!(first, g.hvp(&p, &[&xs], "net", &e0).unwrap());
    assert_eq!(second, g.hvp(&p, &[&xs], "net", &e1).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hvp_is_linear_and_symmetric(seed in 0u64..1000, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let (mut g, p, xs) = mlp_objective(&[3, 4, 2], 3, seed);
        let n = p.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let hu = g.hvp(&p, &[&xs], "net", &u).unwrap();
        let hw = g.hvp(&p, &[&xs], "net", &w).unwrap();
        let comb: Vec<f64> = u.iter().zip(&w).map(|(a, b)| alpha * a + beta * b).collect();
        let hc = g.hvp(&p, &[&xs], "net", &comb).unwrap();
        let norm = hc.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        let err = hc.iter().zip(hu.iter().zip(&hw))
            .map(|(c, (a, b))| (c - alpha * a - beta * b).powi(2)).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-10 * norm.max(1.0));

        let lhs: f64 = hu.iter().zip(&w).map(|(a, b)| a * b).sum();
        let rhs: f64 = u.iter().zip(&hw).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-8 * lhs.abs().max(rhs.abs()).max(1.0));
    }

    #[test]
    fn evaluation_is_bitwise_deterministic(seed in 0u64..1000) {
        let (mut g, p, xs) = mlp_objective(&[2, 3, 1], 4, seed);
        let a = g.gradient(&p, &[&xs], "net").unwrap();
        let b = g.gradient(&p, &[&xs], "net").unwrap();
        prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(g.evaluate(&p, &[&xs]).unwrap(), g.evaluate(&p, &[&xs]).unwrap());
    }
}
