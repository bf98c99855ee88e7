use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

type Build = dyn Fn(&mut Tape, &[Var]) -> Var;

/// Compares tape gradients of `build` against central differences for every
/// coordinate of every input. Returns the maximum relative error.
fn check_gradients(build: &Build, inputs: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();

    let mut worst: f64 = 0.0;
    for (which, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[which], input);
        let eval = |theta: &[f64]| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    if i == which {
                        tape.param(Tensor::new(t.shape().to_vec(), theta.to_vec()).unwrap())
                    } else {
                        tape.param(t.clone())
                    }
                })
                .collect();
            let out = build(&mut tape, &vars);
            tape.value(out).item()
        };
        let numeric = finite_difference_gradient(eval, input.data(), 1e-5).unwrap();
        worst = worst.max(max_relative_error(analytic.data(), &numeric));
    }
    worst
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.data()[i * k + p] * b.data()[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

fn assert_close_rel(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        let scale = x.abs().max(y.abs()).max(1e-300);
        assert!((x - y).abs() / scale <= tol || (x - y).abs() <= 1e-300, "{x} vs {y}");
    }
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![0.0; 3]));
    let y = tape.softmax(x).unwrap();
    for v in tape.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn cosine_fixtures() {
    assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    assert!((cosine_similarity(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 1.0).abs() < 1e-15);
    assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
    assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
    assert!(matches!(
        cosine_similarity(&[1.0], &[1.0, 2.0]),
        Err(NumericsError::LengthMismatch { .. })
    ));
}

#[test]
fn zero_norm_cosine_has_zero_gradient() {
    let mut tape = Tape::new();
    let u = tape.param(Tensor::vector(vec![0.0, 0.0]));
    let v = tape.param(Tensor::vector(vec![1.0, 1.0]));
    let c = tape.cosine(u, v).unwrap();
    let g = tape.backward(c).unwrap();
    assert_eq!(tape.value(c).item(), 0.0);
    assert!(g.get_or_zeros(u, tape.value(u)).data().iter().all(|x| *x == 0.0));
    assert!(g.get_or_zeros(v, tape.value(v)).data().iter().all(|x| *x == 0.0));
}

#[test]
fn random_cosine_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let u: Vec<f64> = (0..7).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let v: Vec<f64> = (0..7).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut dot = 0.0;
        let mut nu = 0.0;
        let mut nv = 0.0;
        for i in 0..7 {
            dot += u[i] * v[i];
            nu += u[i] * u[i];
            nv += v[i] * v[i];
        }
        let expected = dot / (nu.sqrt() * nv.sqrt());
        assert_close_rel(&[cosine_similarity(&u, &v).unwrap()], &[expected], 1e-12);
    }
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random_tensor(&mut rng, &[3, 4]);
    let b = random_tensor(&mut rng, &[4, 2]);
    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let c = tape.matmul(va, vb).unwrap();
    assert_eq!(tape.value(c).shape(), &[3, 2]);
    assert_close_rel(tape.value(c).data(), &naive_matmul(&a, &b), 1e-12);
}

#[test]
fn forward_values_match_scalar_references() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_tensor(&mut rng, &[3, 5]);
    let g = random_tensor(&mut rng, &[5]);
    let b = random_tensor(&mut rng, &[5]);
    let mut tape = Tape::new();
    let vx = tape.constant(x.clone());
    let vg = tape.constant(g.clone());
    let vb = tape.constant(b.clone());

    let sm = tape.softmax(vx).unwrap();
    let ln = tape.layer_norm(vx, vg, vb, 1e-5).unwrap();
    let ex = tape.exp(vx);
    let re = tape.relu(vx);
    let me = tape.mean(vx).unwrap();
    for i in 0..3 {
        let row = x.row(i);
        let denom: f64 = row.iter().map(|v| v.exp()).sum();
        let mean = row.iter().sum::<f64>() / 5.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
        for j in 0..5 {
            let k = i * 5 + j;
            assert_close_rel(&[tape.value(sm).data()[k]], &[row[j].exp() / denom], 1e-12);
            let expected_ln = g.data()[j] * (row[j] - mean) / (var + 1e-5).sqrt() + b.data()[j];
            assert_close_rel(&[tape.value(ln).data()[k]], &[expected_ln], 1e-12);
            assert_close_rel(&[tape.value(ex).data()[k]], &[row[j].exp()], 1e-12);
            assert_eq!(tape.value(re).data()[k], row[j].max(0.0));
        }
    }
    let total: f64 = x.data().iter().sum();
    assert_close_rel(&[tape.value(me).item()], &[total / 15.0], 1e-12);
}

#[test]
fn masked_softmax_ignores_dropped_columns() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::matrix(1, 3, vec![1.0, 50.0, 1.0]).unwrap());
    let y = tape.masked_softmax(x, &[true, false, true]).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, 0.0, 0.5]);
}

#[test]
fn masked_log_sum_exp_rejects_empty_row() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
    assert!(tape.masked_log_sum_exp(x, &[false, false]).is_err());
}

#[test]
fn shape_errors_are_reported() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(vec![2, 3]));
    let b = tape.constant(Tensor::zeros(vec![2, 3]));
    assert!(matches!(tape.matmul(a, b), Err(NumericsError::ShapeMismatch { .. })));
    let c = tape.constant(Tensor::zeros(vec![3]));
    assert!(tape.add(a, c).is_err());
    let empty = tape.constant(Tensor::zeros(vec![0, 4]));
    assert!(matches!(tape.softmax(empty), Err(NumericsError::EmptyTensor(_))));
}

#[test]
fn finite_difference_fixtures() {
    let g = finite_difference_gradient(|x| x[0] * x[0], &[3.0], 1e-5).unwrap();
    assert!((g[0] - 6.0).abs() < 1e-8);
    let g = finite_difference_gradient(|_| 4.2, &[1.0, -2.0, 0.5], 1e-5).unwrap();
    assert!(g.iter().all(|v| *v == 0.0));
    assert!(finite_difference_gradient(|x| x[0], &[1.0], 0.0).is_err());
    assert!(matches!(
        finite_difference_gradient(|x| x[0].ln(), &[0.0], 1e-5),
        Err(NumericsError::NonFiniteValue(0))
    ));
}

/// Each primitive's tape gradient against central differences on 20 random
/// instances, reduced to a scalar through a random linear probe.
#[test]
fn every_primitive_passes_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..20 {
        let probe = random_tensor(&mut rng, &[3, 4]);
        let probe_t = random_tensor(&mut rng, &[4, 3]);
        let probe_vec = random_tensor(&mut rng, &[3]);
        let x = random_tensor(&mut rng, &[3, 4]);
        let y = random_tensor(&mut rng, &[3, 4]);
        let w = random_tensor(&mut rng, &[4, 4]);
        let v4 = random_tensor(&mut rng, &[4]);
        let v4b = random_tensor(&mut rng, &[4]);
        let pos = Tensor::new(
            vec![3, 4],
            (0..12).map(|_| rng.gen_range(0.2..2.0)).collect(),
        )
        .unwrap();

        let project = move |t: &mut Tape, v: Var, p: &Tensor| {
            let c = t.constant(p.clone());
            let m = t.mul(v, c).unwrap();
            t.sum(m)
        };
        let p1 = probe.clone();
        let cases: Vec<(&str, Box<Build>, Vec<Tensor>)> = vec![
            (
                "matmul",
                Box::new({
                    let p = p1.clone();
                    move |t, v| {
                        let m = t.matmul(v[0], v[1]).unwrap();
                        project(t, m, &p)
                    }
                }),
                vec![x.clone(), w.clone()],
            ),
            (
                "transpose",
                Box::new({
                    let p = probe_t.clone();
                    move |t, v| {
                        let m = t.transpose(v[0]).unwrap();
                        project(t, m, &p)
                    }
                }),
                vec![x.clone()],
            ),
            (
                "add",
                Box::new({
                    let p = p1.clone();
                    move |t, v| {
                        let m = t.add(v[0], v[1]).unwrap();
                        project(t, m, &p)
                    }
                }),
                vec![x.clone(), y.clone()],
            ),
            (
                "add_row",
                Box::new({
                    let p = p1.clone();
                    move |t, v| {
                        let m = t.add_row(v[0], v[1]).unwrap();
                        project(t, m, &p)
                    }
                }),
                vec![x.clone(), v4.clone()],
            ),
            (
                "mul",
                Box::new({
                    let p = p1.clone();
                    move |t, v| {
                        let m = t.mul(v[0], v[1]).unwrap();
                        project(t, m, &p)
                    }
                }),
                vec![x.clone(), y.clone()],
            ),
            (
                "scale",
                Box::new({
                    let p = p1.clone();
                    move |t, v| {
                        let m = t.scale(v[0], -1.7);
                        project(t, m, &p)
                    }
                }),
                vec![x.clone()],
            ),
            (
                "gather_rows",
                Box::new({
                    let p = p1.clone();
                    move |t, v| {
                        let m = t.gather_rows(v[0], &[2, 0, 2]).unwrap();
                        project(t, m, &p)
                    }
                }),
                vec![x.clone()],
            ),
            (
                "concat_rows",
                Box::new({
                    let p = p1.clone();
                    move |t, v| {
                        let a = t.gather_rows(v[0], &[0]).unwrap();
                        let b = t.gather_rows(v[1], &[1, 2]).unwrap();
                        let m = t.concat_rows(&[a, b]).unwrap();
                        project(t, m, &p)
                    }
                }),
                vec![x.clone(), y.clone()],
            ),
            (
                "mean_rows",
                Box::new({
                    let p = Tensor::new(vec![2, 4], probe.data()[..8].to_vec()).unwrap();
                    move |t, v| {
                        let m = t.mean_rows(v[0], &[vec![0, 2], vec![1]]).unwrap();
                        project(t, m, &p)
                    }
                }),
                vec![x.clone()],
            ),
            (
                "softmax",
                Box::new({
                    let p = p1.clone();
                    move |t, v| {
                        let m = t.softmax(v[0]).unwrap();
                        project(t, m, &p)
                    }
                }),
                vec![x.clone()],
            ),
            (
                "masked_softmax",
                Box::new({
                    let p = p1.clone();
                    move |t, v| {
                        let m = t.masked_softmax(v[0], &[true, false, true, true]).unwrap();
                        project(t, m, &p)
                    }
                }),
                vec![x.clone()],
            ),
            (
                "masked_log_sum_exp",
                Box::new({
                    let p = probe_vec.clone();
                    move |t, v| {
                        let keep: Vec<bool> = (0..12).map(|k| k % 4 != k / 4).collect();
                        let m = t.masked_log_sum_exp(v[0], &keep).unwrap();
                        project(t, m, &p)
                    }
                }),
                vec![x.clone()],
            ),
            (
                "log",
                Box::new({
                    let p = p1.clone();
                    move |t, v| {
                        let m = t.log(v[0], 1e-30);
                        project(t, m, &p)
                    }
                }),
                vec![pos.clone()],
            ),
            (
                "exp",
                Box::new({
                    let p = p1.clone();
                    move |t, v| {
                        let m = t.exp(v[0]);
                        project(t, m, &p)
                    }
                }),
                vec![x.clone()],
            ),
            (
                "relu",
                Box::new({
                    let p = p1.clone();
                    move |t, v| {
                        let m = t.relu(v[0]);
                        project(t, m, &p)
                    }
                }),
                vec![x.clone()],
            ),
            (
                "sum",
                Box::new(|t: &mut Tape, v: &[Var]| {
                    let sq = t.mul(v[0], v[0]).unwrap();
                    t.sum(sq)
                }),
                vec![x.clone()],
            ),
            (
                "mean",
                Box::new(|t: &mut Tape, v: &[Var]| {
                    let sq = t.mul(v[0], v[0]).unwrap();
                    t.mean(sq).unwrap()
                }),
                vec![x.clone()],
            ),
            (
                "layer_norm",
                Box::new({
                    let p = p1.clone();
                    move |t, v| {
                        let m = t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
                        project(t, m, &p)
                    }
                }),
                vec![x.clone(), v4.clone(), v4b.clone()],
            ),
            (
                "normalize_rows",
                Box::new({
                    let p = p1.clone();
                    move |t, v| {
                        let m = t.normalize_rows(v[0]).unwrap();
                        project(t, m, &p)
                    }
                }),
                vec![x.clone()],
            ),
            (
                "cosine",
                Box::new(|t: &mut Tape, v: &[Var]| t.cosine(v[0], v[1]).unwrap()),
                vec![v4.clone(), v4b.clone()],
            ),
        ];
        for (name, build, inputs) in &cases {
            let err = check_gradients(build.as_ref(), inputs);
            assert!(err < 1e-4, "{name}: max relative error {err}");
        }
    }
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::new();
    let a = tape.param(Tensor::vector(vec![1.0, 2.0]));
    let c = tape.constant(Tensor::vector(vec![3.0, 4.0]));
    let m = tape.mul(a, c).unwrap();
    let s = tape.sum(m);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(a).unwrap().data(), &[3.0, 4.0]);
    assert!(g.get(c).is_none());
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(data in prop::collection::vec(-50.0f64..50.0, 12)) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(3, 4, data).unwrap());
        let y = tape.softmax(x).unwrap();
        for i in 0..3 {
            let row = tape.value(y).row(i);
            prop_assert!(row.iter().all(|v| *v >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cosine_is_symmetric_and_scale_invariant(
        u in prop::collection::vec(-5.0f64..5.0, 6),
        v in prop::collection::vec(-5.0f64..5.0, 6),
        s in 0.01f64..100.0,
    ) {
        let c = cosine_similarity(&u, &v).unwrap();
        prop_assert!((-1.0..=1.0).contains(&c));
        prop_assert_eq!(c, cosine_similarity(&v, &u).unwrap());
        let nu: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assume!(nu > 1e-6);
        let scaled: Vec<f64> = u.iter().map(|x| x * s).collect();
        prop_assert!((cosine_similarity(&scaled, &v).unwrap() - c).abs() < 1e-12);
    }
}
