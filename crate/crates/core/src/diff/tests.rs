use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::check::check_gradient;
use super::hyper::{self, CurvVar, EdgeIndex};
use super::*;
use crate::manifold::{poincare, EPS_BALL};

const H: f64 = 1e-5;

fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor {
    Tensor::from_vec(rows, cols, data.to_vec())
}

#[test]
fn scalar_add() {
    let mut tape = Tape::new();
    let x = tape.input("x", Tensor::scalar(2.0));
    let y = tape.input("y", Tensor::scalar(3.0));
    let z = tape.add(x, y).unwrap();
    assert_eq!(tape.value(z).item(), 5.0);
}

#[test]
fn empty_tape_returns_inputs() {
    let mut tape = Tape::new();
    let out = tape.forward(&BTreeMap::new()).unwrap();
    assert!(out.is_empty());
    let x = tape.input("x", Tensor::scalar(1.5));
    let out = tape
        .forward(&BTreeMap::from([("x".to_string(), Tensor::scalar(4.0))]))
        .unwrap();
    assert_eq!(out["x"].item(), 4.0);
    assert_eq!(tape.value(x).item(), 4.0);
}

#[test]
fn replay_recomputes_downstream() {
    let mut tape = Tape::new();
    let x = tape.input("x", Tensor::scalar(2.0));
    let y = tape.input("y", Tensor::scalar(3.0));
    let z = tape.mul(x, y).unwrap();
    tape.mark_output("z", z);
    let out = tape
        .forward(&BTreeMap::from([("x".to_string(), Tensor::scalar(5.0))]))
        .unwrap();
    assert_eq!(out["z"].item(), 15.0);
    assert!(matches!(
        tape.forward(&BTreeMap::from([("w".to_string(), Tensor::scalar(0.0))])),
        Err(DiffError::UnknownInput(_))
    ));
}

#[test]
fn product_rule() {
    let mut tape = Tape::new();
    let x = tape.input("x", Tensor::scalar(2.0));
    let y = tape.input("y", Tensor::scalar(3.0));
    let z = tape.mul(x, y).unwrap();
    let g = tape.backward(z).unwrap();
    assert_eq!(g.wrt(x).item(), 3.0);
    assert_eq!(g.wrt(y).item(), 2.0);
}

#[test]
fn constant_has_zero_gradient() {
    let mut tape = Tape::new();
    let x = tape.input("x", Tensor::scalar(2.0));
    let c = tape.scalar(7.0);
    let z = tape.scale(c, 2.0);
    let g = tape.backward(z).unwrap();
    assert_eq!(g.wrt(x).item(), 0.0);
}

#[test]
fn non_scalar_seed_rejected() {
    let mut tape = Tape::new();
    let x = tape.input("x", Tensor::zeros(2, 2));
    assert!(matches!(tape.backward(x), Err(DiffError::NotScalar { .. })));
}

#[test]
fn shape_mismatch_names_node() {
    let mut tape = Tape::new();
    let a = tape.input("a", Tensor::zeros(2, 3));
    let b = tape.input("b", Tensor::zeros(3, 2));
    match tape.add(a, b) {
        Err(DiffError::Shape { node, op, .. }) => {
            assert_eq!(node, 2);
            assert_eq!(op, "add");
        }
        other => panic!("expected shape error, got {other:?}"),
    }
    assert!(tape.matmul(a, a).is_err());
}

#[test]
fn broadcasting_gradients_reduce() {
    let mut tape = Tape::new();
    let a = tape.input("a", t(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let col = tape.input("col", t(2, 1, &[1.0, 2.0]));
    let row = tape.input("row", t(1, 3, &[1.0, 1.0, 1.0]));
    let s = tape.scalar(2.0);
    let x = tape.mul(a, col).unwrap();
    let x = tape.add(x, row).unwrap();
    let x = tape.mul(x, s).unwrap();
    let z = tape.sum(x);
    let g = tape.backward(z).unwrap();
    assert_eq!(g.wrt(col).data(), &[12.0, 30.0]);
    assert_eq!(g.wrt(row).data(), &[4.0, 4.0, 4.0]);
    assert_eq!(g.wrt(a).data(), &[2.0, 2.0, 2.0, 4.0, 4.0, 4.0]);
    assert_eq!(g.wrt(s).item(), 42.0);
}

#[test]
fn tape_poincare_distance_matches_closed_form() {
    let mut tape = Tape::new();
    let x = tape.input("x", t(1, 2, &[0.0, 0.0]));
    let y = tape.input("y", t(1, 2, &[0.5, 0.0]));
    let cv = CurvVar::constant(&mut tape, 1.0);
    let d = hyper::poincare_dist(&mut tape, x, y, cv).unwrap();
    let v = tape.value(d).item();
    assert!((v - 3f64.ln()).abs() < 1e-12);
    assert!((v - 1.098612).abs() < 1e-6);
    assert!((v - poincare::distance(&[0.0, 0.0], &[0.5, 0.0], 1.0)).abs() < 1e-12);
}

#[test]
fn poincare_distance_gradient_matches_fd() {
    let r = check_gradient(
        |tape, v| {
            let o = tape.constant(Tensor::zeros(1, 2));
            let cv = CurvVar::constant(tape, 1.0);
            let d = hyper::poincare_dist(tape, o, v[0], cv)?;
            Ok(tape.sum(d))
        },
        &[("x", t(1, 2, &[0.5, 0.0]))],
        H,
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
    assert!(!r.ill_conditioned);
}

#[test]
fn linear_function_is_exact() {
    let r = check_gradient(
        |tape, v| {
            let w = tape.constant(t(3, 1, &[1.5, -2.0, 0.25]));
            let y = tape.matmul(v[0], w)?;
            let y = tape.scale(y, 3.0);
            Ok(tape.sum(y))
        },
        &[("x", t(2, 3, &[0.1, 0.2, 0.3, -0.1, 0.2, 0.4]))],
        H,
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-10, "{r:?}");
    assert_eq!(r.coordinates, 6);
}

#[test]
fn mobius_add_then_distance() {
    let r = check_gradient(
        |tape, v| {
            let cv = CurvVar::constant(tape, 1.0);
            let s = hyper::mobius_add(tape, v[0], v[1], cv)?;
            let d = hyper::poincare_dist(tape, s, v[1], cv)?;
            Ok(tape.sum(d))
        },
        &[
            ("x", t(1, 3, &[0.2, -0.3, 0.1])),
            ("y", t(1, 3, &[-0.4, 0.1, 0.35])),
        ],
        H,
    )
    .unwrap();
    assert!(r.max_rel_err < 1e-4, "{r:?}");
}

#[test]
fn boundary_point_flags_conditioning() {
    let r = 1.0 - 2.0 * EPS_BALL;
    let report = check_gradient(
        |tape, v| {
            let o = tape.constant(Tensor::zeros(1, 2));
            let cv = CurvVar::constant(tape, 1.0);
            let d = hyper::poincare_dist(tape, o, v[0], cv)?;
            Ok(tape.sum(d))
        },
        &[("x", t(1, 2, &[r, 0.0]))],
        H,
    )
    .unwrap();
    assert!(report.ill_conditioned, "{report:?}");
    assert!(report.max_rel_err.is_finite());
    assert!(report.curvature_estimate.is_finite());
}

#[test]
fn non_finite_perturbation_is_error() {
    let r = check_gradient(
        |tape, v| {
            let l = tape.ln(v[0]);
            Ok(tape.sum(l))
        },
        &[("x", Tensor::scalar(0.0))],
        H,
    );
    assert!(matches!(r, Err(DiffError::NonFinite { .. })));
}

#[test]
fn segment_softmax_sums_to_one() {
    let mut tape = Tape::new();
    let e = tape.input("e", Tensor::column(vec![1.0, 2.0, 3.0, -1.0, 0.5]));
    let seg: Arc<[usize]> = Arc::from(vec![0, 0, 1, 1, 1]);
    let a = tape.segment_softmax(e, seg, 2).unwrap();
    let v = tape.value(a).data();
    assert!((v[0] + v[1] - 1.0).abs() < 1e-15);
    assert!((v[2] + v[3] + v[4] - 1.0).abs() < 1e-15);
}

#[test]
fn arcosh_at_one_has_finite_gradient() {
    let mut tape = Tape::new();
    let x = tape.input("x", t(1, 2, &[0.3, 0.1]));
    let cv = CurvVar::constant(&mut tape, 1.0);
    let d = hyper::poincare_dist(&mut tape, x, x, cv).unwrap();
    let s = tape.sum(d);
    let g = tape.backward(s).unwrap();
    assert!(g.wrt(x).all_finite());
}

fn ball_point(rng: &mut ChaCha8Rng, rows: usize, dim: usize, k: f64) -> Tensor {
    // uniform direction, radius well inside (1 − 2ε)√K
    let mut data = Vec::with_capacity(rows * dim);
    for _ in 0..rows {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = crate::tensor::norm(&v).max(1e-3);
        let r = rng.random_range(0.05..0.9) * k.sqrt();
        data.extend(v.iter().map(|x| x * r / n));
    }
    Tensor::from_vec(rows, dim, data)
}

fn tangent(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Tensor {
    Tensor::from_vec(
        rows,
        dim,
        (0..rows * dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
}

fn lorentz_point(rng: &mut ChaCha8Rng, rows: usize, dim: usize, k: f64) -> Tensor {
    let mut data = Vec::with_capacity(rows * (dim + 1));
    for _ in 0..rows {
        let mut x = vec![0.0];
        x.extend((0..dim).map(|_| rng.random_range(-1.5..1.5)));
        crate::manifold::lorentz::project(&mut x, k);
        data.extend(x);
    }
    Tensor::from_vec(rows, dim + 1, data)
}

/// Runs `check_gradient` at 100 random points and returns the worst error.
fn sweep<P, F>(seed: u64, mut point: P, build: F) -> f64
where
    P: FnMut(&mut ChaCha8Rng) -> Vec<(&'static str, Tensor)>,
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + Copy,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p = point(&mut rng);
        let r = check_gradient(build, &p, H).unwrap();
        worst = worst.max(r.max_rel_err);
    }
    worst
}

/// Weighted sum so that every output coordinate contributes differently.
fn reduce(tape: &mut Tape, y: Var) -> Result<Var> {
    let (r, c) = tape.shape(y);
    let w = tape.constant(Tensor::from_vec(
        r,
        c,
        (0..r * c).map(|i| 0.3 + (i as f64 * 0.37).sin()).collect(),
    ));
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

#[test]
fn primitive_add_matmul_tanh() {
    let e = sweep(
        1,
        |rng| {
            vec![
                ("a", tangent(rng, 3, 4)),
                ("b", tangent(rng, 4, 2)),
                ("c", tangent(rng, 1, 2)),
            ]
        },
        |tape, v| {
            let m = tape.matmul(v[0], v[1])?;
            let s = tape.add(m, v[2])?;
            let y = tape.tanh(s);
            reduce(tape, y)
        },
    );
    assert!(e < 1e-4, "{e}");
}

#[test]
fn primitive_elementwise_family() {
    let e = sweep(
        2,
        |rng| vec![("a", tangent(rng, 3, 3)), ("b", tangent(rng, 3, 3))],
        |tape, v| {
            let sq = tape.square(v[1]);
            let pos = tape.offset(sq, 0.5);
            let q = tape.div(v[0], pos)?;
            let l = tape.ln(pos);
            let s = tape.sqrt(pos);
            let sg = tape.sigmoid(q);
            let ls = tape.log_sigmoid(v[0]);
            let se = tape.unary(v[1], Unary::Selu);
            let x = tape.add(l, s)?;
            let x = tape.sub(x, sg)?;
            let x = tape.add(x, ls)?;
            let x = tape.mul(x, se)?;
            let ex = tape.exp(v[0]);
            let x = tape.add(x, ex)?;
            let mt = tape.matmul_t(x, v[0])?;
            let tr = tape.transpose(mt);
            let m = tape.mean(tr);
            let r = reduce(tape, x)?;
            tape.add(r, m)
        },
    );
    assert!(e < 1e-4, "{e}");
}

#[test]
fn primitive_arcosh() {
    let e = sweep(
        3,
        |rng| {
            vec![(
                "x",
                Tensor::column((0..4).map(|_| rng.random_range(1.05..5.0)).collect()),
            )]
        },
        |tape, v| {
            let y = tape.arcosh(v[0]);
            reduce(tape, y)
        },
    );
    assert!(e < 1e-4, "{e}");
}

#[test]
fn primitive_mobius_add() {
    let e = sweep(
        4,
        |rng| {
            let k = rng.random_range(0.5..2.0);
            vec![
                ("x", ball_point(rng, 2, 3, k)),
                ("y", ball_point(rng, 2, 3, k)),
                ("k", Tensor::scalar(k.ln())),
            ]
        },
        |tape, v| {
            let cv = CurvVar::from_log_k(tape, v[2]);
            let y = hyper::mobius_add(tape, v[0], v[1], cv)?;
            reduce(tape, y)
        },
    );
    assert!(e < 1e-4, "{e}");
}

#[test]
fn primitive_ball_exp_log() {
    let e = sweep(
        5,
        |rng| {
            let k = rng.random_range(0.5..2.0);
            vec![
                ("v", tangent(rng, 3, 3)),
                ("x", ball_point(rng, 3, 3, k)),
                ("k", Tensor::scalar(k.ln())),
            ]
        },
        |tape, v| {
            let cv = CurvVar::from_log_k(tape, v[2]);
            let a = hyper::ball_expmap0(tape, v[0], cv)?;
            let b = hyper::ball_logmap0(tape, v[1], cv)?;
            let s = tape.add(a, b)?;
            reduce(tape, s)
        },
    );
    assert!(e < 1e-4, "{e}");
}

#[test]
fn primitive_mobius_matvec() {
    let e = sweep(
        6,
        |rng| vec![("w", tangent(rng, 2, 3)), ("x", ball_point(rng, 4, 3, 1.0))],
        |tape, v| {
            let cv = CurvVar::constant(tape, 1.0);
            let y = hyper::mobius_matvec(tape, v[0], v[1], cv)?;
            reduce(tape, y)
        },
    );
    assert!(e < 1e-4, "{e}");
}

#[test]
fn primitive_poincare_distance() {
    let e = sweep(
        7,
        |rng| {
            let k = rng.random_range(0.5..2.0);
            vec![
                ("x", ball_point(rng, 3, 2, k)),
                ("y", ball_point(rng, 3, 2, k)),
                ("k", Tensor::scalar(k.ln())),
            ]
        },
        |tape, v| {
            let cv = CurvVar::from_log_k(tape, v[2]);
            let d = hyper::poincare_dist(tape, v[0], v[1], cv)?;
            reduce(tape, d)
        },
    );
    assert!(e < 1e-4, "{e}");
}

#[test]
fn primitive_lorentz_maps_and_distance() {
    let e = sweep(
        8,
        |rng| {
            vec![
                ("x", lorentz_point(rng, 3, 2, 1.0)),
                ("y", lorentz_point(rng, 3, 2, 1.0)),
                ("v", tangent(rng, 3, 2)),
            ]
        },
        |tape, v| {
            let cv = CurvVar::constant(tape, 1.0);
            let d = hyper::lorentz_dist(tape, v[0], v[1], cv)?;
            let l = hyper::lorentz_logmap0(tape, v[0], cv)?;
            let e = hyper::lorentz_expmap0(tape, v[2], cv)?;
            let a = reduce(tape, d)?;
            let b = reduce(tape, l)?;
            let c = reduce(tape, e)?;
            let s = tape.add(a, b)?;
            tape.add(s, c)
        },
    );
    assert!(e < 1e-4, "{e}");
}

#[test]
fn primitive_model_conversions() {
    let e = sweep(
        9,
        |rng| {
            vec![
                ("x", lorentz_point(rng, 3, 3, 1.0)),
                ("p", ball_point(rng, 3, 3, 1.0)),
            ]
        },
        |tape, v| {
            let cv = CurvVar::constant(tape, 1.0);
            let a = hyper::lorentz_to_poincare(tape, v[0], cv)?;
            let q = hyper::lorentz_to_klein(tape, v[0], cv)?;
            let b = hyper::klein_to_poincare(tape, q, cv)?;
            let c = hyper::poincare_to_lorentz(tape, v[1], cv)?;
            let s = tape.add(a, b)?;
            let r1 = reduce(tape, s)?;
            let r2 = reduce(tape, c)?;
            tape.add(r1, r2)
        },
    );
    assert!(e < 1e-4, "{e}");
}

#[test]
fn primitive_fermi_dirac() {
    let e = sweep(
        10,
        |rng| {
            vec![(
                "d",
                Tensor::column((0..5).map(|_| rng.random_range(0.0..6.0)).collect()),
            )]
        },
        |tape, v| {
            let p = hyper::fermi_dirac(tape, v[0], 2.0, 1.0);
            let z = hyper::fermi_dirac_logit(tape, v[0], 2.0, 1.0);
            let l = tape.log_sigmoid(z);
            let s = tape.add(p, l)?;
            reduce(tape, s)
        },
    );
    assert!(e < 1e-4, "{e}");
}

fn small_graph() -> EdgeIndex {
    // 4 nodes, self-loops plus a path 0-1-2-3, grouped by destination
    let pairs = [
        (0, 0),
        (1, 0),
        (1, 1),
        (0, 1),
        (2, 1),
        (2, 2),
        (1, 2),
        (3, 2),
        (3, 3),
        (2, 3),
    ];
    EdgeIndex {
        src: pairs.iter().map(|p| p.0).collect::<Vec<_>>().into(),
        dst: pairs.iter().map(|p| p.1).collect::<Vec<_>>().into(),
        nodes: 4,
    }
}

#[test]
fn primitive_softmax_and_attention() {
    let e = sweep(
        11,
        |rng| {
            vec![
                ("m", tangent(rng, 4, 3)),
                ("a1", tangent(rng, 3, 1)),
                ("a2", tangent(rng, 3, 1)),
            ]
        },
        |tape, v| {
            let g = small_graph();
            let alpha = hyper::attention(tape, v[0], v[1], v[2], &g, 0.2)?;
            let agg = hyper::weighted_aggregate(tape, v[0], alpha, &g)?;
            let r1 = reduce(tape, alpha)?;
            let r2 = reduce(tape, agg)?;
            tape.add(r1, r2)
        },
    );
    assert!(e < 1e-4, "{e}");
}

#[test]
fn primitive_einstein_aggregate() {
    let e = sweep(
        12,
        |rng| {
            vec![
                ("q", ball_point(rng, 4, 2, 1.0)),
                (
                    "w",
                    Tensor::column((0..10).map(|_| rng.random_range(0.1..1.0)).collect()),
                ),
            ]
        },
        |tape, v| {
            let g = small_graph();
            let cv = CurvVar::constant(tape, 1.0);
            let y = hyper::einstein_aggregate(tape, v[0], v[1], &g, cv)?;
            reduce(tape, y)
        },
    );
    assert!(e < 1e-4, "{e}");
}

#[test]
fn einstein_aggregate_matches_manifold() {
    let q = [[0.5, 0.0], [0.0, 0.5], [0.1, -0.2]];
    let mut tape = Tape::new();
    let qv = tape.constant(Tensor::from_rows(
        &q.iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
    ));
    let cv = CurvVar::constant(&mut tape, 1.0);
    let edges = EdgeIndex {
        src: Arc::from(vec![0, 1, 2]),
        dst: Arc::from(vec![0, 0, 0]),
        nodes: 1,
    };
    let w = hyper::column(&mut tape, vec![1.0, 2.0, 0.5]);
    let m = hyper::einstein_aggregate(&mut tape, qv, w, &edges, cv).unwrap();
    let pts: Vec<&[f64]> = q.iter().map(|r| r.as_slice()).collect();
    let expected = crate::manifold::klein::einstein_midpoint(&pts, &[1.0, 2.0, 0.5], 1.0).unwrap();
    for (a, b) in tape.value(m).data().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn ball_maps_match_closed_forms() {
    let x = [0.3, -0.4, 0.2];
    let mut tape = Tape::new();
    let xv = tape.constant(t(1, 3, &x));
    let cv = CurvVar::constant(&mut tape, 2.0);
    let l = hyper::ball_logmap0(&mut tape, xv, cv).unwrap();
    let e = hyper::ball_expmap0(&mut tape, l, cv).unwrap();
    let expected = poincare::logmap0(&x, 2.0);
    for (a, b) in tape.value(l).data().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-14);
    }
    for (a, b) in tape.value(e).data().iter().zip(&x) {
        assert!((a - b).abs() < 1e-14);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn backward_is_bit_deterministic(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = ball_point(&mut rng, 3, 3, 1.0);
        let y = ball_point(&mut rng, 3, 3, 1.0);
        let run = || {
            let mut tape = Tape::new();
            let a = tape.input("x", x.clone());
            let b = tape.input("y", y.clone());
            let cv = CurvVar::constant(&mut tape, 1.0);
            let s = hyper::mobius_add(&mut tape, a, b, cv).unwrap();
            let d = hyper::poincare_dist(&mut tape, s, b, cv).unwrap();
            let z = tape.sum(d);
            let g = tape.backward(z).unwrap();
            (g.wrt(a), g.wrt(b))
        };
        let (g1, g2) = (run(), run());
        prop_assert_eq!(g1.0.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        g2.0.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(g1.1.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        g2.1.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn gradients_finite_within_margin(
        r in 0.0f64..(1.0 - 2.0 * EPS_BALL),
        theta in 0.0f64..std::f64::consts::TAU,
        s in 0.0f64..(1.0 - 2.0 * EPS_BALL),
        phi in 0.0f64..std::f64::consts::TAU,
    ) {
        let mut tape = Tape::new();
        let x = tape.input("x", t(1, 2, &[r * theta.cos(), r * theta.sin()]));
        let y = tape.input("y", t(1, 2, &[s * phi.cos(), s * phi.sin()]));
        let cv = CurvVar::constant(&mut tape, 1.0);
        let m = hyper::mobius_add(&mut tape, x, y, cv).unwrap();
        let l = hyper::ball_logmap0(&mut tape, m, cv).unwrap();
        let d = hyper::poincare_dist(&mut tape, x, y, cv).unwrap();
        let a = tape.sum(l);
        let b = tape.sum(d);
        let z = tape.add(a, b).unwrap();
        let g = tape.backward(z).unwrap();
        prop_assert!(g.wrt(x).all_finite());
        prop_assert!(g.wrt(y).all_finite());
    }
}

#[test]
fn edge_aggregate_matches_gather_scatter() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let g = small_graph();
    let x = tangent(&mut rng, 4, 3);
    let w = Tensor::column((0..10).map(|_| rng.random_range(-1.0..1.0)).collect());
    let mut tape = Tape::new();
    let (xv, wv) = (tape.constant(x), tape.constant(w));
    let fused = tape
        .edge_aggregate(xv, wv, g.src.clone(), g.dst.clone(), g.nodes)
        .unwrap();
    let gathered = tape.gather(xv, g.src.clone()).unwrap();
    let weighted = tape.mul(gathered, wv).unwrap();
    let composed = tape.scatter_add(weighted, g.dst.clone(), g.nodes).unwrap();
    let (a, b) = (tape.value(fused), tape.value(composed));
    assert!(a
        .data()
        .iter()
        .zip(b.data())
        .all(|(p, q)| (p - q).abs() < 1e-15));
    let e = sweep(
        22,
        |rng| {
            vec![
                ("x", tangent(rng, 4, 3)),
                (
                    "w",
                    Tensor::column((0..10).map(|_| rng.random_range(-1.0..1.0)).collect()),
                ),
            ]
        },
        |tape, v| {
            let g = small_graph();
            let y = tape.edge_aggregate(v[0], v[1], g.src.clone(), g.dst.clone(), g.nodes)?;
            reduce(tape, y)
        },
    );
    assert!(e < 1e-4, "{e}");
}

#[test]
fn pruned_backward_matches_full() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tape = Tape::new();
    let x = tape.constant(tangent(&mut rng, 4, 3));
    let w = tape.constant(tangent(&mut rng, 2, 3));
    let y = tape.matmul_t(x, w).unwrap();
    let s = tape.square(y);
    let l = tape.sum(s);
    let full = tape.backward(l).unwrap();
    let pruned = tape.backward_wrt(l, &[w]).unwrap();
    assert_eq!(full.wrt(w), pruned.wrt(w));
    assert!(pruned.get(x).is_none());
}
