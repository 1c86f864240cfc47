use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_rows(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Central differences of `f` with respect to every coordinate of `x`.
fn finite_diff(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
    let h = 1e-5;
    (0..x.len())
        .map(|i| {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn matmul_identity_and_scalar() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_matrix(&mut rng, 3, 3);
    assert_eq!(matmul(&Tensor::identity(3), &x).unwrap(), x);
    let six = matmul(&Tensor::matrix(&[&[2.0]]), &Tensor::matrix(&[&[3.0]])).unwrap();
    assert_eq!(six.data(), &[6.0]);
}

#[test]
fn matmul_matches_hand_expansion() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random_matrix(&mut rng, 2, 2);
    let b = random_matrix(&mut rng, 2, 2);
    let c = matmul(&a, &b).unwrap();
    let (a00, a01, a10, a11) = (a.get(0, 0), a.get(0, 1), a.get(1, 0), a.get(1, 1));
    let (b00, b01, b10, b11) = (b.get(0, 0), b.get(0, 1), b.get(1, 0), b.get(1, 1));
    let expected = [
        a00 * b00 + a01 * b10,
        a00 * b01 + a01 * b11,
        a10 * b00 + a11 * b10,
        a10 * b01 + a11 * b11,
    ];
    for (got, want) in c.data().iter().zip(expected) {
        assert!((got - want).abs() < 1e-15);
    }
}

#[test]
fn matmul_shape_mismatch() {
    let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
    assert!(matches!(err, NumericsError::ShapeMismatch { .. }));
}

#[test]
fn masked_softmax_cases() {
    let uniform = masked_softmax(&Tensor::zeros(&[1, 4]), &[true; 4]).unwrap();
    assert_eq!(uniform.data(), &[0.25; 4]);

    let one = masked_softmax(
        &Tensor::matrix(&[&[5.0, -1.0], &[0.3, 9.0]]),
        &[false, true, true, false],
    )
    .unwrap();
    assert_eq!(one.data(), &[0.0, 1.0, 1.0, 0.0]);

    let s = masked_softmax(&Tensor::matrix(&[&[1.0, 2.0, 3.0]]), &[true, true, false]).unwrap();
    let (e1, e2) = (1f64.exp(), 2f64.exp());
    assert!((s.get(0, 0) - e1 / (e1 + e2)).abs() < 1e-15);
    assert!((s.get(0, 1) - e2 / (e1 + e2)).abs() < 1e-15);
    assert_eq!(s.get(0, 2), 0.0);
}

#[test]
fn masked_softmax_fully_masked_row_is_error() {
    let err = masked_softmax(&Tensor::zeros(&[2, 2]), &[true, false, false, false]).unwrap_err();
    assert_eq!(err, NumericsError::FullyMaskedRow { row: 1 });
}

#[test]
fn l2_normalize_cases() {
    let y = l2_normalize(&Tensor::matrix(&[&[3.0, 4.0]])).unwrap();
    assert!((y.get(0, 0) - 0.6).abs() < 1e-15 && (y.get(0, 1) - 0.8).abs() < 1e-15);
    let unit = Tensor::matrix(&[&[0.0, 1.0, 0.0]]);
    assert_eq!(l2_normalize(&unit).unwrap(), unit);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_matrix(&mut rng, 1, 7);
    let y = l2_normalize(&x).unwrap();
    let norm: f64 = y.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-12);
    let xn: f64 = x.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let cos: f64 = x.data().iter().zip(y.data()).map(|(a, b)| a * b).sum::<f64>() / xn;
    assert!((cos - 1.0).abs() < 1e-12);

    assert!(matches!(
        l2_normalize(&Tensor::zeros(&[1, 3])),
        Err(NumericsError::ZeroNorm { .. })
    ));
}

#[test]
fn cosine_distance_cases() {
    let a = Tensor::matrix(&[&[1.0, 2.0, -0.5]]);
    assert_eq!(cosine_distance(&a, &a).unwrap(), 0.0);
    let e1 = Tensor::matrix(&[&[1.0, 0.0]]);
    let e2 = Tensor::matrix(&[&[0.0, 3.0]]);
    assert_eq!(cosine_distance(&e1, &e2).unwrap(), 1.0);
    let neg = a.map(|v| -v);
    assert_eq!(cosine_distance(&a, &neg).unwrap(), 2.0);
    assert!(cosine_distance(&a, &Tensor::zeros(&[1, 3])).is_err());
}

#[test]
fn mse_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random_matrix(&mut rng, 3, 5);
    assert_eq!(mse(&a, &a).unwrap(), 0.0);
    assert!((mse(&a.map(|v| v + 1.0), &a).unwrap() - 1.0).abs() < 1e-12);
    let b = random_matrix(&mut rng, 3, 5);
    let mut acc = 0.0;
    for i in 0..a.len() {
        let d = a.data()[i] - b.data()[i];
        acc += d * d;
    }
    assert!((mse(&a, &b).unwrap() - acc / 15.0).abs() < 1e-15);
    assert!(mse(&a, &Tensor::zeros(&[5, 3])).is_err());
}

#[test]
fn cross_entropy_cases() {
    let ce = cross_entropy(&Tensor::zeros(&[1, 4]), &[2]).unwrap();
    assert!((ce - 4f64.ln()).abs() < 1e-15);

    let confident = cross_entropy(&Tensor::matrix(&[&[0.0, 20.0, 0.0, 0.0]]), &[1]).unwrap();
    assert!(confident < 1e-8);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let logits = random_matrix(&mut rng, 3, 4).map(|v| 4.0 * v);
    let targets = [0, 3, 1];
    let mut acc = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let z: Vec<f64> = logits.row(r).to_vec();
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        acc += -(z[t].exp() / denom).ln();
    }
    assert!((cross_entropy(&logits, &targets).unwrap() - acc / 3.0).abs() < 1e-12);

    assert_eq!(
        cross_entropy(&logits, &[0, 4, 1]).unwrap_err(),
        NumericsError::IndexOutOfRange { index: 4, bound: 4 }
    );
}

#[test]
fn backward_square() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::matrix(&[&[3.0]]));
    let sq = tape.matmul(&x, &x).unwrap();
    let grads = tape.backward(sq).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
}

#[test]
fn backward_unused_param_is_zero() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::matrix(&[&[3.0]]));
    let unused = tape.param(Tensor::matrix(&[&[1.0, 2.0]]));
    let sq = tape.matmul(&x, &x).unwrap();
    let grads = tape.backward(sq).unwrap();
    assert!(grads.get(unused).is_none());
    assert_eq!(grads.get_or_zeros(unused), Tensor::zeros(&[1, 2]));
}

#[test]
fn backward_non_scalar_loss_is_error() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::zeros(&[2, 2]));
    assert!(matches!(tape.backward(x), Err(NumericsError::NonScalarLoss { .. })));
}

#[test]
fn backward_cosine_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a0 = random_matrix(&mut rng, 3, 4);
    let b0 = random_matrix(&mut rng, 3, 4);
    let mut tape = Tape::new();
    let a = tape.param(a0.clone());
    let b = tape.param(b0.clone());
    let loss = tape.cosine_distance(&a, &b).unwrap();
    let grads = tape.backward(loss).unwrap();
    let fa = finite_diff(&a0, |x| cosine_distance(x, &b0).unwrap());
    let fb = finite_diff(&b0, |x| cosine_distance(&a0, x).unwrap());
    for (g, f) in grads.get(a).unwrap().data().iter().zip(&fa) {
        assert!(rel_err(*g, *f) <= 1e-4, "{g} vs {f}");
    }
    for (g, f) in grads.get(b).unwrap().data().iter().zip(&fb) {
        assert!(rel_err(*g, *f) <= 1e-4, "{g} vs {f}");
    }
}

/// Two-layer toy network exercising every primitive; loss is a sum of all
/// three loss types so every backward rule is on the path.
fn toy_network_loss<G: Graph>(g: &mut G, p: &[G::Node], x: &G::Node) -> G::Node {
    let mask = Arc::new(vec![true, false, false, true, true, false, true, true, true]);
    let h = g.matmul(x, &p[0]).unwrap();
    let h = g.add_row(&h, &p[1]).unwrap();
    let h = g.layer_norm(&h, &p[2], &p[3]).unwrap();
    let h = g.gelu(&h).unwrap();
    let scores = g.matmul_nt(&h, &h).unwrap();
    let scores = g.scale(&scores, 0.5).unwrap();
    let attn = g.masked_softmax(&scores, mask).unwrap();
    let h = g.matmul(&attn, &h).unwrap();
    let h = g.tanh(&h).unwrap();
    let left = g.slice_cols(&h, 0, 2).unwrap();
    let right = g.slice_cols(&h, 2, 2).unwrap();
    let h = g.concat_cols(&[&right, &left]).unwrap();
    let out = g.matmul(&h, &p[4]).unwrap();
    let out = g.add_row(&out, &p[5]).unwrap();
    let top = g.slice_rows(&out, 0, 2).unwrap();
    let rep = g.gather_rows(&out, vec![2, 0, 2]).unwrap();
    let stacked = g.concat_rows(&[&top, &rep]).unwrap();
    let ce = g.cross_entropy(&stacked, vec![0, 3, 1, 2, 2]).unwrap();
    let pooled = g.mean_rows(&out).unwrap();
    let normed = g.l2_normalize(&out).unwrap();
    let cos = g.cosine_distance(&normed, &p[6]).unwrap();
    let m = g.mse(&pooled, &p[7]).unwrap();
    let part = g.add(&ce, &cos).unwrap();
    let m = g.scale(&m, 0.7).unwrap();
    let aux = g.matmul_nt(&p[8], &p[9]).unwrap();
    let aux = g.mse(&aux, &p[8]).unwrap();
    let total = g.add(&part, &m).unwrap();
    g.add(&total, &aux).unwrap()
}

fn toy_params(rng: &mut impl Rng) -> Vec<Tensor> {
    vec![
        random_matrix(rng, 5, 4),
        random_matrix(rng, 1, 4),
        random_matrix(rng, 1, 4).map(|v| 1.0 + 0.3 * v),
        random_matrix(rng, 1, 4),
        random_matrix(rng, 4, 4),
        random_matrix(rng, 1, 4),
        random_matrix(rng, 3, 4),
        random_matrix(rng, 1, 4),
        random_matrix(rng, 2, 2),
        random_matrix(rng, 2, 2),
    ]
}

#[test]
fn gradient_check_two_layer_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x0 = random_matrix(&mut rng, 3, 5);
    for _trial in 0..10 {
        let params = toy_params(&mut rng);
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
        let x = tape.constant(x0.clone());
        let loss = toy_network_loss(&mut tape, &vars, &x);
        let grads = tape.backward(loss).unwrap();
        for (i, p) in params.iter().enumerate() {
            let fd = finite_diff(p, |pv| {
                let mut eager = Eager;
                let nodes: Vec<Arc<Tensor>> = params
                    .iter()
                    .enumerate()
                    .map(|(j, q)| Arc::new(if i == j { pv.clone() } else { q.clone() }))
                    .collect();
                let x = eager.constant(x0.clone());
                toy_network_loss(&mut eager, &nodes, &x).item()
            });
            let got = grads.get_or_zeros(vars[i]);
            for (g, f) in got.data().iter().zip(&fd) {
                assert!(rel_err(*g, *f) <= 1e-4, "param {i}: autodiff {g} vs fd {f}");
            }
        }
    }
}

#[test]
fn tape_replay_reproduces_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params = toy_params(&mut rng);
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let x = tape.constant(random_matrix(&mut rng, 3, 5));
    let loss = toy_network_loss(&mut tape, &vars, &x);
    let replayed = tape.replay().unwrap();
    assert_eq!(replayed.len(), tape.len());
    assert_eq!(replayed[loss.index()], *tape.recorded_value(loss));
    for (i, v) in replayed.iter().enumerate() {
        assert_eq!(v, tape.recorded_value(Var::from_index_for_tests(i)));
    }
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params: Vec<Arc<Tensor>> = toy_params(&mut rng).into_iter().map(Arc::new).collect();
        let mut eager = Eager;
        let x = eager.constant(random_matrix(&mut rng, 3, 5));
        toy_network_loss(&mut eager, &params, &x).item().to_bits()
    };
    assert_eq!(run(), run());
}

#[test]
fn adam_zero_grad_and_decay() {
    let mut p = Tensor::matrix(&[&[1.0, -2.0]]);
    let mut state = AdamState::for_params(&[&p]);
    let cfg = AdamConfig::default();
    adam_step(&mut [&mut p], &[Tensor::zeros(&[1, 2])], &mut state, cfg).unwrap();
    assert_eq!(p.data(), &[1.0, -2.0]);

    state.m[0] = Tensor::matrix(&[&[0.5, -0.5]]);
    state.v[0] = Tensor::matrix(&[&[0.25, 0.25]]);
    adam_step(&mut [&mut p], &[Tensor::zeros(&[1, 2])], &mut state, cfg).unwrap();
    assert_eq!(state.m[0].data(), &[0.5 * cfg.beta1, -0.5 * cfg.beta1]);
    assert_eq!(state.v[0].data(), &[0.25 * cfg.beta2, 0.25 * cfg.beta2]);
}

#[test]
fn adam_first_step_is_signed_lr() {
    let mut p = Tensor::matrix(&[&[0.0, 0.0, 0.0]]);
    let mut state = AdamState::for_params(&[&p]);
    let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
    let g = Tensor::matrix(&[&[3.0, -0.2, 1e-3]]);
    adam_step(&mut [&mut p], &[g.clone()], &mut state, cfg).unwrap();
    for (w, gv) in p.data().iter().zip(g.data()) {
        assert_eq!(w.signum(), -gv.signum());
        assert!((w.abs() - 0.01).abs() < 1e-6);
    }
    let mut bad = Tensor::zeros(&[2, 2]);
    assert!(adam_step(&mut [&mut bad], &[g], &mut state, cfg).is_err());
}

#[test]
fn adam_decreases_quadratic() {
    let target = Tensor::matrix(&[&[1.0, -3.0, 0.5]]);
    let mut p = Tensor::zeros(&[1, 3]);
    let mut state = AdamState::for_params(&[&p]);
    let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
    let mut last = mse(&p, &target).unwrap();
    for _ in 0..2 {
        let mut tape = Tape::new();
        let pv = tape.param(p.clone());
        let t = tape.constant(target.clone());
        let loss = tape.mse(&pv, &t).unwrap();
        let g = tape.backward(loss).unwrap().get_or_zeros(pv);
        adam_step(&mut [&mut p], &[g], &mut state, cfg).unwrap();
        let now = mse(&p, &target).unwrap();
        assert!(now < last);
        last = now;
    }
}

#[test]
fn non_finite_is_surfaced() {
    let big = Tensor::matrix(&[&[1e200]]);
    assert!(matches!(
        matmul(&big, &big),
        Err(NumericsError::NonFinite { op: "matmul" })
    ));
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(
        rows in 1usize..5,
        cols in 1usize..7,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores = random_matrix(&mut rng, rows, cols).map(|v| 10.0 * v);
        let mut mask: Vec<bool> = (0..rows * cols).map(|_| rng.gen_bool(0.5)).collect();
        for r in 0..rows {
            let k = rng.gen_range(0..cols);
            mask[r * cols + k] = true;
        }
        let y = masked_softmax(&scores, &mask).unwrap();
        for r in 0..rows {
            let s: f64 = y.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            for c in 0..cols {
                if !mask[r * cols + c] {
                    prop_assert_eq!(y.get(r, c), 0.0);
                }
            }
        }
    }

    #[test]
    fn cosine_distance_properties(seed in any::<u64>(), s1 in 0.01f64..100.0, s2 in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, 3, 4);
        let b = random_matrix(&mut rng, 3, 4);
        prop_assume!(a.data().iter().any(|v| v.abs() > 1e-3) && b.data().iter().any(|v| v.abs() > 1e-3));
        let d = cosine_distance(&a, &b).unwrap();
        prop_assert!((0.0..=2.0).contains(&d));
        prop_assert!((d - cosine_distance(&b, &a).unwrap()).abs() < 1e-12);
        let mut scaled = a.clone();
        for (r, s) in [s1, s2, s1 * s2].iter().enumerate() {
            for v in scaled.row_mut(r) {
                *v *= s;
            }
        }
        prop_assert!((d - cosine_distance(&scaled, &b).unwrap()).abs() < 1e-12);
    }
}
