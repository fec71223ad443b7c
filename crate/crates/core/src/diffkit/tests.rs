use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::Error;

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, v).unwrap()
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Builds `loss = Σ out ⊙ W` for fixed random `W` and checks every input's
/// gradient against central differences. Returns the worst relative error.
pub(crate) fn check_op<B>(inputs: &[Tensor<f64>], build: B) -> f64
where
    B: Fn(&mut Tape<f64>, &[Var]) -> crate::Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let out_shape = {
        let mut tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|x| tape.input(x.clone(), true)).collect();
        let out = build(&mut tape, &vars).unwrap();
        tape.shape(out).to_vec()
    };
    let weights = rand_tensor(&mut rng, &out_shape);
    let mut worst = 0.0f64;
    for i in 0..inputs.len() {
        let f = |x: &Tensor<f64>| -> crate::Result<(f64, Tensor<f64>)> {
            let mut tape = Tape::new();
            let vars: Vec<_> = inputs
                .iter()
                .enumerate()
                .map(|(j, v)| tape.input(if j == i { x.clone() } else { v.clone() }, true))
                .collect();
            let out = build(&mut tape, &vars)?;
            let w = tape.constant(weights.clone());
            let prod = tape.mul(out, w)?;
            let loss = tape.sum(prod);
            let grads = tape.backward(loss)?;
            let g = grads
                .wrt(vars[i])
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(x.shape()));
            Ok((tape.value(loss).data()[0], g))
        };
        worst = worst.max(finite_diff_check(f, &inputs[i], 1e-5).unwrap());
    }
    worst
}

#[test]
fn equal_logits_average_values() {
    let q = t(&[1, 2], &[1., 0.]);
    let k = t(&[2, 2], &[1., 0., 1., 0.]);
    let v = t(&[2, 1], &[2., 4.]);
    let zero = t(&[1, 1, 2], &[0., 0.]);
    let out = scaled_dot_attention(&q, &k, &v, Some(&zero)).unwrap();
    assert_eq!(out.data(), &[3.0]);
}

#[test]
fn suppressed_key_gets_zero_weight() {
    let q = t(&[1, 2], &[1., 0.]);
    let k = t(&[2, 2], &[1., 0., 1., 0.]);
    let v = t(&[2, 1], &[2., 4.]);
    let bias = t(&[1, 1, 2], &[0., f64::NEG_INFINITY]);
    let out = scaled_dot_attention(&q, &k, &v, Some(&bias)).unwrap();
    assert_eq!(out.data(), &[2.0]);
}

#[test]
fn hand_evaluated_softmax() {
    let q = t(&[1, 2], &[1., 0.]);
    let k = t(&[2, 2], &[1., 0., 0., 1.]);
    let v = t(&[2, 1], &[1., 0.]);
    let out = scaled_dot_attention(&q, &k, &v, None).unwrap();
    let a = (1.0f64 / 2f64.sqrt()).exp();
    let sigma = a / (a + 1.0);
    assert!((out.data()[0] - sigma).abs() < 1e-15);
    assert!((sigma - 0.6698).abs() < 1e-4);
}

#[test]
fn attention_errors_name_the_problem() {
    let q = t(&[2, 2], &[1., 0., 0., 1.]);
    let k = t(&[2, 2], &[1., 0., 0., 1.]);
    let v = t(&[2, 1], &[1., 0.]);
    let bias = t(
        &[1, 2, 2],
        &[0., 0., f64::NEG_INFINITY, f64::NEG_INFINITY],
    );
    match scaled_dot_attention(&q, &k, &v, Some(&bias)) {
        Err(Error::AllSuppressed { query }) => assert_eq!(query, 1),
        other => panic!("expected AllSuppressed, got {other:?}"),
    }
    let k3 = t(&[2, 3], &[0.; 6]);
    assert!(matches!(
        scaled_dot_attention(&q, &k3, &v, None),
        Err(Error::Shape { .. })
    ));
}

#[test]
fn half_sum_of_squares_gradient() {
    let mut tape = Tape::new();
    let x = tape.input(t(&[3], &[1., 2., 3.]), true);
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq);
    let loss = tape.scale(s, 0.5);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.wrt(x).unwrap().data(), &[1., 2., 3.]);
}

#[test]
fn constant_loss_gives_zero_gradients() {
    let mut store = ParamStore::new();
    let p = store.add("p", t(&[2], &[1., 2.])).unwrap();
    let mut tape = Tape::new();
    let _pv = tape.param(&store, p);
    let c = tape.constant(Tensor::scalar(4.0));
    let grads = tape.backward(c).unwrap();
    let dense = grads.for_params(&store);
    assert_eq!(dense[0].data(), &[0., 0.]);
}

#[test]
fn backward_without_forward_is_an_error() {
    let tape = Tape::<f64>::new();
    let mut other = Tape::<f64>::new();
    let v = other.constant(Tensor::scalar(1.0));
    assert!(matches!(tape.backward(v), Err(Error::EmptyTape)));
    let mut tape = Tape::<f64>::new();
    let x = tape.input(t(&[2], &[1., 2.]), true);
    assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
}

#[test]
fn backward_replays_identically_and_unused_params_are_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let w = store.add("w", rand_tensor(&mut rng, &[4, 3])).unwrap();
    let unused = store.add("unused", rand_tensor(&mut rng, &[5])).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(rand_tensor(&mut rng, &[2, 4]));
    let wv = tape.param(&store, w);
    let y = tape.linear(x, wv, None).unwrap();
    let y = tape.tanh(y);
    let loss = tape.sum(y);
    let g1 = tape.backward(loss).unwrap().for_params(&store);
    let g2 = tape.backward(loss).unwrap().for_params(&store);
    assert_eq!(g1, g2);
    assert!(g1[unused.index()].data().iter().all(|&v| v == 0.0));
}

#[test]
fn frozen_params_receive_no_gradient() {
    let mut store = ParamStore::new();
    let a = store.add("base.a", t(&[2], &[1., 2.])).unwrap();
    let b = store.add("cam.b", t(&[2], &[3., 4.])).unwrap();
    store.set_trainable(|n| n.starts_with("cam."));
    let mut tape = Tape::new();
    let (av, bv) = (tape.param(&store, a), tape.param(&store, b));
    let p = tape.mul(av, bv).unwrap();
    let loss = tape.sum(p);
    let g = tape.backward(loss).unwrap();
    assert!(g.param(a).is_none());
    assert_eq!(g.param(b).unwrap().data(), &[1., 2.]);
}

#[test]
fn gradcheck_linear_and_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_tensor(&mut rng, &[3, 4]);
    let w = rand_tensor(&mut rng, &[4, 5]);
    let b = rand_tensor(&mut rng, &[5]);
    let e = check_op(&[x.clone(), w.clone(), b], |tp, v| tp.linear(v[0], v[1], Some(v[2])));
    assert!(e < 1e-6, "linear {e}");
    let e = check_op(&[x.clone(), w], |tp, v| tp.matmul(v[0], v[1], false));
    assert!(e < 1e-6, "matmul {e}");
    let wt = rand_tensor(&mut rng, &[5, 4]);
    let e = check_op(&[x, wt], |tp, v| tp.matmul(v[0], v[1], true));
    assert!(e < 1e-6, "matmul_t {e}");
}

#[test]
fn gradcheck_elementwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_tensor(&mut rng, &[2, 5]).map(|v| 2.0 * v);
    let y = rand_tensor(&mut rng, &[2, 5]);
    let s = rand_tensor(&mut rng, &[1]);
    for (name, e) in [
        ("tanh", check_op(&[x.clone()], |tp, v| Ok(tp.tanh(v[0])))),
        ("gelu", check_op(&[x.clone()], |tp, v| Ok(tp.gelu(v[0])))),
        ("silu", check_op(&[x.clone()], |tp, v| Ok(tp.silu(v[0])))),
        ("scale", check_op(&[x.clone()], |tp, v| Ok(tp.scale(v[0], 1.7)))),
        ("add", check_op(&[x.clone(), y.clone()], |tp, v| tp.add(v[0], v[1]))),
        ("mul", check_op(&[x.clone(), y.clone()], |tp, v| tp.mul(v[0], v[1]))),
        (
            "mul_scalar",
            check_op(&[x.clone(), s], |tp, v| tp.mul_scalar(v[0], v[1])),
        ),
        (
            "mse",
            check_op(&[x.clone()], |tp, v| {
                let s = tp.mse(v[0], &y)?;
                Ok(s)
            }),
        ),
    ] {
        assert!(e < 1e-6, "{name}: {e}");
    }
}

#[test]
fn gradcheck_shape_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&mut rng, &[2, 3, 4]);
    let row = rand_tensor(&mut rng, &[3, 4]);
    let col = rand_tensor(&mut rng, &[2, 1, 4]);
    let table = rand_tensor(&mut rng, &[5, 3]);
    let other = rand_tensor(&mut rng, &[1, 3, 4]);
    for (name, e) in [
        (
            "add_broadcast",
            check_op(&[x.clone(), row], |tp, v| tp.add_broadcast(v[0], v[1])),
        ),
        (
            "add_broadcast_mid",
            check_op(&[x.clone(), col], |tp, v| tp.add_broadcast(v[0], v[1])),
        ),
        ("transpose01", check_op(&[x.clone()], |tp, v| tp.transpose01(v[0]))),
        (
            "reshape",
            check_op(&[x.clone()], |tp, v| tp.reshape(v[0], &[6, 4])),
        ),
        (
            "gather",
            check_op(&[table], |tp, v| tp.gather(v[0], &[4, 0, 4, 2])),
        ),
        (
            "concat0",
            check_op(&[x.clone(), other], |tp, v| tp.concat0(&[v[0], v[1]])),
        ),
    ] {
        assert!(e < 1e-6, "{name}: {e}");
    }
}

#[test]
fn gradcheck_layer_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&mut rng, &[3, 6]);
    let g = rand_tensor(&mut rng, &[6]);
    let b = rand_tensor(&mut rng, &[6]);
    let e = check_op(&[x, g, b], |tp, v| tp.layer_norm(v[0], v[1], v[2], 1e-5));
    assert!(e < 1e-4, "layer_norm {e}");
}

#[test]
fn gradcheck_attention_variants() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let q = rand_tensor(&mut rng, &[3, 4, 8]);
    let k = rand_tensor(&mut rng, &[3, 5, 8]);
    let v = rand_tensor(&mut rng, &[3, 5, 6]);
    let e = check_op(&[q.clone(), k.clone(), v.clone()], |tp, x| {
        tp.attention(x[0], x[1], x[2], 2, None)
    });
    assert!(e < 1e-5, "attention {e}");

    let ks = rand_tensor(&mut rng, &[1, 5, 8]);
    let vs = rand_tensor(&mut rng, &[1, 5, 6]);
    let mut bias = rand_tensor(&mut rng, &[3, 4, 5]);
    bias.data_mut()[0] = f64::NEG_INFINITY;
    bias.data_mut()[7] = f64::NEG_INFINITY;
    let e = check_op(&[q, ks, vs], |tp, x| {
        tp.attention(x[0], x[1], x[2], 2, Some(&bias))
    });
    assert!(e < 1e-5, "shared-kv biased attention {e}");
}

#[test]
fn softmax_rows_are_stochastic() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..20 {
        let nq = 1 + trial % 5;
        let nk = 1 + (trial * 3) % 7;
        let q = rand_tensor(&mut rng, &[nq, 4]).map(|v| 5.0 * v);
        let k = rand_tensor(&mut rng, &[nk, 4]).map(|v| 5.0 * v);
        let v = rand_tensor(&mut rng, &[nk, 2]);
        let mut tape = Tape::new();
        let (qv, kv, vv) = (tape.constant(q), tape.constant(k), tape.constant(v));
        let out = tape.attention(qv, kv, vv, 2, None).unwrap();
        let probs = tape.attention_probs(out).unwrap();
        for row in probs.chunks(nk) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut tape = Tape::<f32>::new();
        let q = tape.input(rand_tensor(&mut rng, &[2, 6, 8]).cast(), true);
        let k = tape.input(rand_tensor(&mut rng, &[2, 6, 8]).cast(), true);
        let o = tape.attention(q, k, k, 4, None).unwrap();
        let o = tape.gelu(o);
        let l = tape.sum(o);
        let g = tape.backward(l).unwrap();
        (tape.value(o).clone(), g.wrt(q).unwrap().clone())
    };
    assert_eq!(run(), run());
}
