use cifst_core::numerics::{
    finite_difference_check, finite_difference_check_many, Graph, NumericsError, Tensor, Var,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn rand_t(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Reduces any tensor to a scalar through a fixed random projection so every
/// output coordinate contributes a distinct weight.
fn project(g: &mut Graph, v: Var, seed: u64) -> Var {
    let shape = g.shape(v).to_vec();
    let w = g.constant(rand_t(&shape, seed ^ 0xdead));
    let prod = g.mul(v, w);
    g.sum(prod)
}

fn check1(name: &str, x: Tensor, f: impl Fn(&mut Graph, Var) -> Var) {
    let r = finite_difference_check(
        |g, v| {
            let o = f(g, v);
            project(g, o, 11)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(r.passes(TOL), "{name}: {r:?}");
}

fn check2(name: &str, a: Tensor, b: Tensor, f: impl Fn(&mut Graph, Var, Var) -> Var) {
    let r = finite_difference_check_many(
        |g, v| {
            let o = f(g, v[0], v[1]);
            project(g, o, 13)
        },
        &[a, b],
        1e-5,
    )
    .unwrap();
    assert!(r.passes(TOL), "{name}: {r:?}");
}

#[test]
fn quadratic_gradient() {
    let mut g = Graph::new();
    let w = g.param(Tensor::from_vec(vec![1.0, 2.0]));
    let sq = g.mul(w, w);
    let loss = g.sum(sq);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(w).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn sigmoid_at_zero() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(0.0));
    let s = g.sigmoid(x);
    let grads = g.backward(s).unwrap();
    assert_eq!(g.value(s).item(), 0.5);
    assert_eq!(grads.get(x).unwrap().item(), 0.25);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
    let y = g.scale(x, 2.0);
    assert_eq!(
        g.backward(y).unwrap_err(),
        NumericsError::NonScalarLoss { shape: vec![2] }
    );
}

#[test]
#[should_panic(expected = "matmul inner dims")]
fn shape_mismatch_rejected_at_construction() {
    let mut g = Graph::new();
    let a = g.param(Tensor::zeros(&[2, 3]));
    let b = g.param(Tensor::zeros(&[2, 3]));
    g.matmul(a, b);
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let c = g.constant(Tensor::from_vec(vec![1.0, 2.0]));
    let w = g.param(Tensor::from_vec(vec![3.0, 4.0]));
    let p = g.mul(c, w);
    let loss = g.sum(p);
    let grads = g.backward(loss).unwrap();
    assert!(grads.get(c).is_none());
    assert_eq!(grads.get(w).unwrap().data(), &[1.0, 2.0]);
}

#[test]
fn binary_primitives_match_finite_differences() {
    check2(
        "matmul",
        rand_t(&[3, 4], 1),
        rand_t(&[4, 2], 2),
        |g, a, b| g.matmul(a, b),
    );
    check2(
        "matmul_t",
        rand_t(&[3, 4], 3),
        rand_t(&[5, 4], 4),
        |g, a, b| g.matmul_t(a, b),
    );
    check2("add", rand_t(&[2, 3], 5), rand_t(&[2, 3], 6), |g, a, b| {
        g.add(a, b)
    });
    check2("sub", rand_t(&[2, 3], 7), rand_t(&[2, 3], 8), |g, a, b| {
        g.sub(a, b)
    });
    check2("mul", rand_t(&[2, 3], 9), rand_t(&[2, 3], 10), |g, a, b| {
        g.mul(a, b)
    });
    check2(
        "add_row",
        rand_t(&[4, 3], 11),
        rand_t(&[3], 12),
        |g, a, b| g.add_row(a, b),
    );
    check2(
        "mul_row",
        rand_t(&[4, 3], 13),
        rand_t(&[3], 14),
        |g, a, b| g.mul_row(a, b),
    );
    check2(
        "scale_by",
        rand_t(&[4, 3], 15),
        rand_t(&[], 16),
        |g, a, b| g.scale_by(a, b),
    );
    check2(
        "segment_sum",
        rand_t(&[6, 3], 17),
        rand_t(&[6], 18),
        |g, a, b| g.segment_sum(a, b, &[0..2, 2..3, 3..3, 4..6]),
    );
    check2(
        "concat_cols",
        rand_t(&[3, 2], 19),
        rand_t(&[3, 4], 20),
        |g, a, b| g.concat_cols(&[a, b]),
    );
    check2(
        "concat_rows",
        rand_t(&[2, 3], 21),
        rand_t(&[4, 3], 22),
        |g, a, b| g.concat_rows(&[a, b]),
    );
}

#[test]
fn unary_primitives_match_finite_differences() {
    check1("scale", rand_t(&[3, 3], 30), |g, a| g.scale(a, -1.7));
    check1("sigmoid", rand_t(&[3, 3], 31), |g, a| g.sigmoid(a));
    check1("gelu", rand_t(&[3, 3], 32), |g, a| g.gelu(a));
    check1("relu", rand_t(&[3, 3], 33), |g, a| g.relu(a));
    check1("abs", rand_t(&[3, 3], 34), |g, a| g.abs(a));
    check1("softmax", rand_t(&[3, 5], 35), |g, a| g.softmax(a, false));
    check1("causal_softmax", rand_t(&[4, 4], 36), |g, a| {
        g.softmax(a, true)
    });
    check1("layer_norm", rand_t(&[3, 6], 37), |g, a| {
        g.layer_norm(a, 1e-5)
    });
    check1("cumsum", rand_t(&[7], 38), |g, a| g.cumsum(a));
    check1("transpose", rand_t(&[2, 5], 39), |g, a| g.transpose(a));
    check1("reshape", rand_t(&[2, 6], 40), |g, a| g.reshape(a, &[3, 4]));
    check1("slice_cols", rand_t(&[3, 6], 41), |g, a| {
        g.slice_cols(a, 1, 4)
    });
    check1("slice_rows", rand_t(&[5, 2], 42), |g, a| {
        g.slice_rows(a, 1, 4)
    });
    check1("embedding", rand_t(&[5, 3], 43), |g, a| {
        g.embedding(a, &[4, 0, 4, 2])
    });
    check1("causal_unfold", rand_t(&[7, 2], 44), |g, a| {
        g.causal_unfold(a, 3, 2)
    });
    check1(
        "reciprocal",
        Tensor::uniform(&[4], 0.5, 2.0, &mut ChaCha8Rng::seed_from_u64(45)),
        |g, a| g.reciprocal(a),
    );
    check1("sum", rand_t(&[3, 2], 46), |g, a| g.sum(a));
    let r = finite_difference_check(
        |g, a| g.cross_entropy(a, &[2, 0, 4]),
        &rand_t(&[3, 5], 47),
        1e-5,
    )
    .unwrap();
    assert!(r.passes(TOL), "cross_entropy: {r:?}");
}

#[test]
fn three_layer_mlp_matches_finite_differences() {
    let x = rand_t(&[4, 5], 100);
    let params = vec![
        rand_t(&[5, 8], 101),
        rand_t(&[8], 102),
        rand_t(&[8, 8], 103),
        rand_t(&[8], 104),
        rand_t(&[8, 3], 105),
        rand_t(&[3], 106),
    ];
    let r = finite_difference_check_many(
        |g, p| {
            let xin = g.constant(x.clone());
            let mut h = xin;
            for layer in 0..3 {
                let z = g.matmul(h, p[2 * layer]);
                let z = g.add_row(z, p[2 * layer + 1]);
                h = if layer < 2 { g.sigmoid(z) } else { z };
            }
            g.cross_entropy(h, &[0, 2, 1, 2])
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(r.passes(TOL), "{r:?}");
}

#[test]
fn forward_and_backward_are_bitwise_deterministic() {
    let run = || {
        let mut g = Graph::new();
        let a = g.param(rand_t(&[6, 6], 7));
        let b = g.param(rand_t(&[6, 6], 8));
        let m = g.matmul(a, b);
        let s = g.softmax(m, true);
        let n = g.layer_norm(s, 1e-5);
        let l = g.cross_entropy(n, &[0, 1, 2, 3, 4, 5]);
        let grads = g.backward(l).unwrap();
        (
            g.value(l).item().to_bits(),
            grads.get(a).unwrap(),
            grads.get(b).unwrap(),
        )
    };
    assert_eq!(run(), run());
}

#[test]
fn causal_unfold_never_reads_ahead() {
    // row r must depend only on frames <= r*stride
    let x = rand_t(&[9, 2], 50);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let full = g.causal_unfold(xv, 3, 2);
    assert_eq!(g.shape(full), &[5, 6]);
    for t in 1..9 {
        let prefix = g.constant(x.slice_rows(0, t));
        let part = g.causal_unfold(prefix, 3, 2);
        let rows = t.div_ceil(2);
        assert_eq!(g.value(part).data(), &g.value(full).data()[..rows * 6]);
    }
}
