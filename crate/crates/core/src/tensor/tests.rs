use super::*;
use crate::rng::{SeededRng, Stream};

fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let h = 1e-5;
    (0..x.len())
        .map(|i| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|v| v.abs()).fold(1e-12, f64::max);
    diff / scale
}

fn random(n: usize, idx: u64) -> Vec<f64> {
    SeededRng::new(11, Stream::Test, idx).uniform_vec(n, -1.0, 1.0)
}

#[test]
fn add_componentwise() {
    let tape = Tape::<f64>::new();
    let a = tape.constant(vec![2], vec![1.0, 2.0]).unwrap();
    let b = tape.constant(vec![2], vec![3.0, 4.0]).unwrap();
    assert_eq!(a.add(b).unwrap().value(), vec![4.0, 6.0]);
}

#[test]
fn mul_by_zero_annihilates() {
    let tape = Tape::<f64>::new();
    let x = tape.variable(vec![3], vec![0.5, -2.0, 3.0]).unwrap();
    let z = tape.constant(vec![3], vec![0.0; 3]).unwrap();
    let y = x.mul(z).unwrap();
    assert_eq!(y.value(), vec![0.0; 3]);
    let g = tape.backward(y.sum().unwrap()).unwrap();
    assert_eq!(g.get(x).unwrap(), &[0.0; 3]);
}

#[test]
fn binary_shape_mismatch() {
    let tape = Tape::<f64>::new();
    let a = tape.constant(vec![2], vec![1.0, 2.0]).unwrap();
    let b = tape.constant(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
    assert!(matches!(a.add(b), Err(Error::Shape(_))));
    assert!(matches!(a.mul(b), Err(Error::Shape(_))));
}

#[test]
fn gelu_matches_finite_differences() {
    let x0 = random(3, 1);
    let f = |x: &[f64]| x.iter().map(|&v| tape::gelu(v)).sum::<f64>();
    let tape = Tape::<f64>::new();
    let x = tape.variable(vec![3], x0.clone()).unwrap();
    let g = tape.backward(x.gelu().unwrap().sum().unwrap()).unwrap();
    let err = rel_err(g.get(x).unwrap(), &fd_grad(f, &x0));
    assert!(err < 1e-6, "{err}");
}

#[test]
fn elementwise_ops_match_finite_differences() {
    let a0 = random(6, 2);
    let b0 = random(6, 3);
    let w = random(6, 4);
    // loss = Σ w ⊙ (relu(a) ⊙ b − 0.5·softplus(a) + a·gelu(b))
    let f = |a: &[f64], b: &[f64]| {
        (0..6)
            .map(|i| {
                let r = a[i].max(0.0);
                w[i] * (r * b[i] - 0.5 * tape::softplus(a[i]) + a[i] * tape::gelu(b[i]))
            })
            .sum::<f64>()
    };
    let tape = Tape::<f64>::new();
    let a = tape.variable(vec![6], a0.clone()).unwrap();
    let b = tape.variable(vec![6], b0.clone()).unwrap();
    let wv = tape.constant(vec![6], w.clone()).unwrap();
    let t1 = a.relu().unwrap().mul(b).unwrap();
    let t2 = a.softplus().unwrap().scale(0.5).unwrap();
    let t3 = a.mul(b.gelu().unwrap()).unwrap();
    let loss = t1.sub(t2).unwrap().add(t3).unwrap().mul(wv).unwrap().sum().unwrap();
    let g = tape.backward(loss).unwrap();
    let ga = fd_grad(|x| f(x, &b0), &a0);
    let gb = fd_grad(|x| f(&a0, x), &b0);
    assert!(rel_err(g.get(a).unwrap(), &ga) < 1e-6);
    assert!(rel_err(g.get(b).unwrap(), &gb) < 1e-6);
}

#[test]
fn matmul_identity_and_hand_sum() {
    let tape = Tape::<f64>::new();
    let eye = tape.constant(vec![3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let b0 = random(6, 5);
    let b = tape.constant(vec![3, 2], b0.clone()).unwrap();
    assert_eq!(eye.matmul(b).unwrap().value(), b0);

    let a = tape.constant(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let ones = tape.constant(vec![2, 1], vec![1.0, 1.0]).unwrap();
    let c = a.matmul(ones).unwrap();
    assert_eq!(c.shape(), vec![2, 1]);
    assert_eq!(c.value(), vec![3.0, 7.0]);
    assert!(matches!(a.matmul(b), Err(Error::Shape(_))));
}

#[test]
fn matmul_gradient_is_ones_times_bt() {
    let (m, k, n) = (3, 4, 2);
    let a0 = random(m * k, 6);
    let b0 = random(k * n, 7);
    let tape = Tape::<f64>::new();
    let a = tape.variable(vec![m, k], a0.clone()).unwrap();
    let b = tape.variable(vec![k, n], b0.clone()).unwrap();
    let g = tape.backward(a.matmul(b).unwrap().sum().unwrap()).unwrap();
    // (ones · Bᵀ)[i][p] = Σ_j B[p][j]
    let expect: Vec<f64> = (0..m * k).map(|i| (0..n).map(|j| b0[(i % k) * n + j]).sum()).collect();
    assert!(rel_err(g.get(a).unwrap(), &expect) < 1e-12);
    let f = |x: &[f64]| {
        let mut s = 0.0;
        for i in 0..m {
            for p in 0..k {
                for j in 0..n {
                    s += x[i * k + p] * b0[p * n + j];
                }
            }
        }
        s
    };
    assert!(rel_err(g.get(a).unwrap(), &fd_grad(f, &a0)) < 1e-6);
}

#[test]
fn reshape_roundtrip_is_bit_identical() {
    let x0 = random(4 * 3 * 5, 8);
    let tape = Tape::<f64>::new();
    let x = tape.constant(vec![5, 4, 3], x0.clone()).unwrap();
    let m = x.reshape(vec![5, 12]).unwrap().reshape(vec![5, 4, 3]).unwrap();
    assert_eq!(m.value(), x0);
    assert!(matches!(x.reshape(vec![7, 9]), Err(Error::Shape(_))));
}

#[test]
fn permute_twice_is_identity() {
    let x0 = random(6, 9);
    let tape = Tape::<f64>::new();
    let x = tape.constant(vec![2, 3], x0.clone()).unwrap();
    let t = x.permute(&[1, 0]).unwrap();
    assert_eq!(t.shape(), vec![3, 2]);
    assert_eq!(t.value(), vec![x0[0], x0[3], x0[1], x0[4], x0[2], x0[5]]);
    assert_eq!(t.permute(&[1, 0]).unwrap().value(), x0);
}

#[test]
fn permute_backward_matches_finite_differences() {
    let x0 = random(24, 10);
    let w = random(24, 11);
    let axes = [2, 0, 1];
    let (map, _) = tape::permute_map(&[2, 3, 4], &axes).unwrap();
    let f = |x: &[f64]| map.iter().zip(&w).map(|(&m, &wi)| x[m] * wi).sum::<f64>();
    let tape = Tape::<f64>::new();
    let x = tape.variable(vec![2, 3, 4], x0.clone()).unwrap();
    let wv = tape.constant(vec![4, 2, 3], w.clone()).unwrap();
    let loss = x.permute(&axes).unwrap().mul(wv).unwrap().sum().unwrap();
    let g = tape.backward(loss).unwrap();
    assert!(rel_err(g.get(x).unwrap(), &fd_grad(f, &x0)) < 1e-6);
}

#[test]
fn reductions() {
    let tape = Tape::<f64>::new();
    let x = tape.variable(vec![4], vec![1.0, -1.0, 2.0, 0.0]).unwrap();
    assert_eq!(x.l1().unwrap().item(), 1.0);

    let tape = Tape::<f64>::new();
    let x = tape.variable(vec![5], random(5, 12)).unwrap();
    let g = tape.backward(x.sum().unwrap()).unwrap();
    assert_eq!(g.get(x).unwrap(), &[1.0; 5]);

    let tape = Tape::<f64>::new();
    let x = tape.variable(vec![3], vec![-3.0, 0.0, 5.0]).unwrap();
    let g = tape.backward(x.l1().unwrap()).unwrap();
    assert_eq!(g.get(x).unwrap(), &[-1.0 / 3.0, 0.0, 1.0 / 3.0]);

    let tape = Tape::<f64>::new();
    let x = tape.variable(vec![4], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
    let mean = x.mean().unwrap();
    assert_eq!(mean.item(), 3.0);
    let g = tape.backward(mean).unwrap();
    assert_eq!(g.get(x).unwrap(), &[0.25; 4]);
}

#[test]
fn quadratic_loss_gradient_is_x() {
    let x0 = random(5, 13);
    let tape = Tape::<f64>::new();
    let x = tape.variable(vec![5], x0.clone()).unwrap();
    let loss = x.mul(x).unwrap().sum().unwrap().scale(0.5).unwrap();
    let g = tape.backward(loss).unwrap();
    assert!(rel_err(g.get(x).unwrap(), &x0) < 1e-15);
}

#[test]
fn backward_errors() {
    let tape = Tape::<f64>::new();
    let x = tape.variable(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
    assert!(matches!(tape.backward(x), Err(Error::Shape(_))));
    let loss = x.sum().unwrap();
    tape.backward(loss).unwrap();
    assert!(matches!(tape.backward(loss), Err(Error::State(_))));
}

#[test]
fn non_finite_forward_is_numerics_error() {
    let tape = Tape::<f64>::new();
    let x = tape.variable(vec![1], vec![1e300]).unwrap();
    assert!(matches!(x.mul(x), Err(Error::Numerics(_))));
}

#[test]
fn backward_is_linear_in_the_loss() {
    let x0 = random(6, 14);
    let (ca, cb) = (0.7, -1.3);
    let grad_of = |which: u8| {
        let tape = Tape::<f64>::new();
        let x = tape.variable(vec![6], x0.clone()).unwrap();
        let l1 = x.gelu().unwrap().sum().unwrap();
        let l2 = x.mul(x).unwrap().softplus().unwrap().mean().unwrap();
        let loss = match which {
            0 => l1,
            1 => l2,
            _ => l1.scale(ca).unwrap().add(l2.scale(cb).unwrap()).unwrap(),
        };
        tape.backward(loss).unwrap().get(x).unwrap().to_vec()
    };
    let (g1, g2, g) = (grad_of(0), grad_of(1), grad_of(2));
    for i in 0..6 {
        assert!((g[i] - (ca * g1[i] + cb * g2[i])).abs() < 1e-12);
    }
}

#[test]
fn softmax_layer_norm_scale_by_gradients() {
    let x0 = random(12, 15);
    let g0 = random(4, 16);
    let b0 = random(4, 17);
    let s0 = 0.8;
    let w = random(12, 18);
    let mask: Vec<bool> = (0..12).map(|i| i % 4 == 3 && i != 3).collect();
    let build = |x: &[f64], gm: &[f64], bt: &[f64], s: f64| -> f64 {
        let tape = Tape::<f64>::new();
        let xv = tape.constant(vec![3, 4], x.to_vec()).unwrap();
        let gv = tape.constant(vec![4], gm.to_vec()).unwrap();
        let bv = tape.constant(vec![4], bt.to_vec()).unwrap();
        let sv = tape.constant(vec![1], vec![s]).unwrap();
        let wv = tape.constant(vec![3, 4], w.clone()).unwrap();
        xv.layer_norm(gv, bv)
            .unwrap()
            .scale_by(sv)
            .unwrap()
            .softmax(Some(&mask))
            .unwrap()
            .mul(wv)
            .unwrap()
            .sum()
            .unwrap()
            .item()
    };
    let tape = Tape::<f64>::new();
    let x = tape.variable(vec![3, 4], x0.clone()).unwrap();
    let gm = tape.variable(vec![4], g0.clone()).unwrap();
    let bt = tape.variable(vec![4], b0.clone()).unwrap();
    let s = tape.variable(vec![1], vec![s0]).unwrap();
    let wv = tape.constant(vec![3, 4], w.clone()).unwrap();
    let p = x.layer_norm(gm, bt).unwrap().scale_by(s).unwrap().softmax(Some(&mask)).unwrap();
    let pv = p.value();
    for (r, row) in pv.chunks(4).enumerate() {
        let total: f64 = row.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        if r > 0 {
            assert_eq!(row[3], 0.0);
        }
    }
    let g = tape.backward(p.mul(wv).unwrap().sum().unwrap()).unwrap();
    assert!(rel_err(g.get(x).unwrap(), &fd_grad(|v| build(v, &g0, &b0, s0), &x0)) < 1e-6);
    assert!(rel_err(g.get(gm).unwrap(), &fd_grad(|v| build(&x0, v, &b0, s0), &g0)) < 1e-6);
    assert!(rel_err(g.get(bt).unwrap(), &fd_grad(|v| build(&x0, &g0, v, s0), &b0)) < 1e-6);
    assert!(rel_err(g.get(s).unwrap(), &fd_grad(|v| build(&x0, &g0, &b0, v[0]), &[s0])) < 1e-6);
}

#[test]
fn concat_and_row_bias_gradients() {
    let tape = Tape::<f64>::new();
    let a = tape.variable(vec![1, 2], vec![1.0, 2.0]).unwrap();
    let b = tape.variable(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
    let bias = tape.variable(vec![2], vec![0.5, -0.5]).unwrap();
    let c = Var::concat(&[a, b]).unwrap();
    assert_eq!(c.shape(), vec![3, 2]);
    let y = c.add_row_bias(bias).unwrap();
    assert_eq!(y.value(), vec![1.5, 1.5, 3.5, 3.5, 5.5, 5.5]);
    let w = tape.constant(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let g = tape.backward(y.mul(w).unwrap().sum().unwrap()).unwrap();
    assert_eq!(g.get(a).unwrap(), &[1.0, 2.0]);
    assert_eq!(g.get(b).unwrap(), &[3.0, 4.0, 5.0, 6.0]);
    assert_eq!(g.get(bias).unwrap(), &[9.0, 12.0]);
}

#[test]
fn each_op_visited_once_in_reverse() {
    // a diamond: y = x·x + x, grads must accumulate once per path
    let tape = Tape::<f64>::new();
    let x = tape.variable(vec![1], vec![3.0]).unwrap();
    let y = x.mul(x).unwrap().add(x).unwrap();
    let g = tape.backward(y.sum().unwrap()).unwrap();
    assert_eq!(g.get(x).unwrap(), &[7.0]);
}

#[test]
fn single_precision_runs_same_graph() {
    let tape = Tape::<f32>::new();
    let x = tape.variable(vec![2], vec![1.0, -2.0]).unwrap();
    let g = tape.backward(x.mul(x).unwrap().sum().unwrap()).unwrap();
    assert_eq!(g.get(x).unwrap(), &[2.0f32, -4.0]);
    assert_eq!(<f32 as Scalar>::PRECISION, Precision::Single);
}

#[test]
fn gradcheck_linear_layer() {
    let mut store = ParamStore::<f64>::new();
    let x = store.register("x", DiffTensor::new(vec![4, 3], random(12, 20)).unwrap());
    let w = store.register("w", DiffTensor::new(vec![3, 5], random(15, 21)).unwrap());
    let b = store.register("b", DiffTensor::new(vec![5], random(5, 22)).unwrap());
    let target = random(20, 23);
    let report = gradcheck(
        &mut store,
        |tape, p| {
            let t = tape.constant(vec![4, 5], target.clone())?;
            let y = p.var(x).matmul(p.var(w))?.add_row_bias(p.var(b))?;
            let d = y.sub(t)?;
            d.mul(d)?.sum()
        },
        1e-7,
        None,
        None,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn param_store_accumulates_grads() {
    let mut store = ParamStore::<f64>::new();
    let id = store.register("p", DiffTensor::new(vec![2], vec![1.0, 2.0]).unwrap());
    for _ in 0..2 {
        let tape = Tape::new();
        let b = store.bind(&tape);
        let g = tape.backward(b.var(id).sum().unwrap()).unwrap();
        store.absorb_grads(&b, &g);
    }
    assert_eq!(store.get(id).grad.as_deref(), Some(&[2.0, 2.0][..]));
    store.zero_grads();
    assert!(store.get(id).grad.is_none());
}

#[test]
fn diff_tensor_shape_invariant() {
    assert!(DiffTensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
    assert!(matches!(DiffTensor::<f64>::new(vec![2, 3], vec![0.0; 5]), Err(Error::Shape(_))));
    assert!(matches!(DiffTensor::<f64>::new(vec![0], vec![]), Err(Error::Shape(_))));
}
