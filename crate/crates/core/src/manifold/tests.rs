use super::*;
use proptest::prelude::*;

const K1: Curvature = Curvature::ONE;

fn p(coords: &[f64]) -> ManifoldPoint {
    ManifoldPoint::poincare(coords.to_vec(), K1).unwrap()
}

fn l(coords: &[f64]) -> ManifoldPoint {
    ManifoldPoint::lorentz(coords.to_vec(), K1).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn minkowski_examples() {
    assert_eq!(minkowski_inner(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), -1.0);
    let y = [2.0, 3f64.sqrt()];
    assert!((minkowski_inner(&y, &y).unwrap() + 1.0).abs() < 1e-12);
    assert_eq!(minkowski_inner(&[1.0, 0.0], &y).unwrap(), -2.0);
    assert!(minkowski_inner(&[1.0, 0.0], &[1.0, 0.0, 0.0]).is_err());
}

#[test]
fn lorentz_distance_examples() {
    let o = ManifoldPoint::origin(Model::Lorentz, K1, 1);
    assert_eq!(lorentz_distance(&o, &o).unwrap(), 0.0);
    let y = l(&[2.0, 3f64.sqrt()]);
    let d = lorentz_distance(&o, &y).unwrap();
    assert!((d - 1.316_957_896_924_816_6).abs() < 1e-12);
    // cross-check through the ball
    let (po, py) = (
        convert(&o, Model::Poincare).unwrap(),
        convert(&y, Model::Poincare).unwrap(),
    );
    assert!((poincare_distance(&po, &py).unwrap() - d).abs() < 1e-12);

    let k = Curvature::new(2.5).unwrap();
    let o = ManifoldPoint::origin(Model::Lorentz, k, 3);
    assert_eq!(lorentz_distance(&o, &o).unwrap(), 0.0);
}

#[test]
fn invalid_points_are_rejected() {
    assert!(ManifoldPoint::poincare(vec![1.0, 0.0], K1).is_err());
    assert!(ManifoldPoint::lorentz(vec![1.0, 1.0], K1).is_err());
    assert!(ManifoldPoint::lorentz(vec![-1.0, 0.0], K1).is_err());
    assert!(ManifoldPoint::klein(vec![0.6, 0.8], K1).is_err());
    assert!(Curvature::new(0.0).is_err());
    assert!(Curvature::new(f64::INFINITY).is_err());
}

#[test]
fn poincare_distance_examples() {
    let o = p(&[0.0, 0.0]);
    assert_eq!(poincare_distance(&o, &o).unwrap(), 0.0);
    let x = p(&[0.5, 0.0]);
    let oracle = (1.0f64 + 0.5 / 0.75).acosh();
    let d = poincare_distance(&o, &x).unwrap();
    assert!((d - oracle).abs() < 1e-12);
    assert!((d - 3f64.ln()).abs() < 1e-12);
}

#[test]
fn curvature_mismatch_is_an_error() {
    let a = ManifoldPoint::poincare(vec![0.1, 0.0], K1).unwrap();
    let b = ManifoldPoint::poincare(vec![0.1, 0.0], Curvature::new(2.0).unwrap()).unwrap();
    assert!(matches!(
        poincare_distance(&a, &b),
        Err(GeometryError::CurvatureMismatch { .. })
    ));
    assert!(mobius_add(&a, &b).is_err());
}

#[test]
fn conformal_factor_examples() {
    assert_eq!(conformal_factor(&p(&[0.0, 0.0])).unwrap(), 2.0);
    assert!((conformal_factor(&p(&[0.5, 0.0])).unwrap() - 2.0 / 0.75).abs() < 1e-12);
    let mut last = 0.0;
    for r in [0.0, 0.3, 0.6, 0.9, 0.99, 0.999] {
        let lam = conformal_factor(&p(&[r, 0.0])).unwrap();
        assert!(lam > last);
        last = lam;
    }
}

#[test]
fn mobius_examples() {
    let x = p(&[0.5, 0.0]);
    let out = mobius_add(&x, &x).unwrap();
    assert!(close(out.coords(), &[1.25 / 1.5625, 0.0], 1e-12));
    assert!((out.coords()[0] - (2.0 * 0.5f64.atanh()).tanh()).abs() < 1e-12);

    let o = p(&[0.0, 0.0]);
    let y = p(&[0.3, -0.4]);
    assert!(close(
        mobius_add(&o, &y).unwrap().coords(),
        y.coords(),
        1e-12
    ));
    let neg = p(&[-0.3, 0.4]);
    assert!(close(
        mobius_add(&neg, &y).unwrap().coords(),
        &[0.0, 0.0],
        1e-12
    ));
}

#[test]
fn mobius_is_not_commutative() {
    // witness pair: gyration is nontrivial for non-collinear operands
    let a = p(&[0.5, 0.0]);
    let b = p(&[0.0, 0.5]);
    let ab = mobius_add(&a, &b).unwrap();
    let ba = mobius_add(&b, &a).unwrap();
    assert!(!close(ab.coords(), ba.coords(), 1e-6));
    // ...but the results are equidistant from the origin
    let o = p(&[0.0, 0.0]);
    let (dab, dba) = (
        poincare_distance(&o, &ab).unwrap(),
        poincare_distance(&o, &ba).unwrap(),
    );
    assert!((dab - dba).abs() < 1e-12);
}

#[test]
fn exp_log_examples() {
    let o = p(&[0.0, 0.0]);
    let v = TangentVector::new(o.clone(), vec![0.5, 0.0]).unwrap();
    let y = exp_map(&v).unwrap();
    assert!(close(y.coords(), &[0.5f64.tanh(), 0.0], 1e-12));
    let back = log_map(&o, &y).unwrap();
    assert!(close(back.vector(), &[0.5, 0.0], 1e-12));
    let zero = log_map(&y, &y).unwrap();
    assert!(close(zero.vector(), &[0.0, 0.0], 0.0));
    assert_eq!(exp_map(&TangentVector::zero(y.clone())).unwrap(), y);
    assert!((back.metric_norm() - poincare_distance(&o, &y).unwrap()).abs() < 1e-12);
}

#[test]
fn lorentz_exp_rejects_non_tangent() {
    let o = ManifoldPoint::origin(Model::Lorentz, K1, 2);
    assert!(matches!(
        TangentVector::new(o, vec![1.0, 0.0, 0.0]),
        Err(GeometryError::NotTangent { .. })
    ));
}

#[test]
fn klein_exp_is_unsupported() {
    let k = ManifoldPoint::origin(Model::Klein, K1, 2);
    let v = TangentVector::new(k, vec![0.1, 0.0]).unwrap();
    assert!(matches!(
        exp_map(&v),
        Err(GeometryError::Unsupported { .. })
    ));
}

#[test]
fn conversion_examples() {
    let o = ManifoldPoint::origin(Model::Lorentz, K1, 3);
    assert!(close(
        convert(&o, Model::Poincare).unwrap().coords(),
        &[0.0; 3],
        0.0
    ));
    let x = convert(&p(&[0.5, 0.0]), Model::Lorentz).unwrap();
    assert!(close(x.coords(), &[5.0 / 3.0, 4.0 / 3.0, 0.0], 1e-12));
    assert!((lorentz::minkowski(x.coords(), x.coords()) + 1.0).abs() < 1e-12);
    let q = convert(&x, Model::Klein).unwrap();
    assert!(close(q.coords(), &[0.8, 0.0], 1e-12));
    let back = convert(&q, Model::Poincare).unwrap();
    assert!(close(back.coords(), &[0.5, 0.0], 1e-12));
}

#[test]
fn einstein_midpoint_examples() {
    let a = ManifoldPoint::klein(vec![0.5, 0.0], K1).unwrap();
    let o = ManifoldPoint::klein(vec![0.0, 0.0], K1).unwrap();
    let single = einstein_midpoint(std::slice::from_ref(&a), &[2.0]).unwrap();
    assert!(close(single.coords(), a.coords(), 1e-15));
    let neg = ManifoldPoint::klein(vec![-0.5, 0.0], K1).unwrap();
    let sym = einstein_midpoint(&[a.clone(), neg], &[1.0, 1.0]).unwrap();
    assert!(close(sym.coords(), &[0.0, 0.0], 1e-15));
    let m = einstein_midpoint(&[a.clone(), o.clone()], &[1.0, 1.0]).unwrap();
    let g = 1.0 / 0.75f64.sqrt();
    assert!(close(m.coords(), &[0.5 * g / (g + 1.0), 0.0], 1e-12));
    assert!((m.coords()[0] - 0.267_949).abs() < 1e-6);
    assert!(einstein_midpoint(&[], &[]).is_err());
    assert!(einstein_midpoint(&[a, o], &[0.0, 0.0]).is_err());
}

#[test]
fn projection_examples() {
    let inside = project_to_manifold(&[0.2, 0.1], Model::Poincare, K1).unwrap();
    assert_eq!(inside.coords(), &[0.2, 0.1]);
    let clamped = project_to_manifold(&[2.0, 0.0], Model::Poincare, K1).unwrap();
    assert!(close(clamped.coords(), &[0.99999, 0.0], 1e-15));
    let h = project_to_manifold(&[0.0, 3.0, 4.0], Model::Lorentz, K1).unwrap();
    assert!(close(h.coords(), &[26f64.sqrt(), 3.0, 4.0], 1e-15));
    assert!(project_to_manifold(&[f64::NAN, 0.0], Model::Poincare, K1).is_err());
}

#[test]
fn transport_examples() {
    let x = p(&[0.3, 0.2]);
    let v = TangentVector::new(x.clone(), vec![0.7, -1.1]).unwrap();
    let same = parallel_transport(&v, &x).unwrap();
    assert!(close(same.vector(), v.vector(), 1e-15));
    let y = p(&[-0.4, 0.5]);
    let moved = parallel_transport(&v, &y).unwrap();
    assert!((moved.metric_norm() - v.metric_norm()).abs() < 1e-10);

    let a = convert(&x, Model::Lorentz).unwrap();
    let b = convert(&y, Model::Lorentz).unwrap();
    let raw = [0.3, 1.0, -2.0];
    let t = TangentVector::new(a.clone(), lorentz::proj_tangent(a.coords(), &raw, 1.0)).unwrap();
    let moved = parallel_transport(&t, &b).unwrap();
    assert!(lorentz::minkowski(b.coords(), moved.vector()).abs() < TOL_HYP);
    assert!((moved.metric_norm() - t.metric_norm()).abs() < 1e-8);
}

fn ball_point(dim: usize, max_r: f64) -> impl Strategy<Value = Vec<f64>> {
    (prop::collection::vec(-1.0f64..1.0, dim), 0.0f64..max_r).prop_map(|(dir, r)| {
        let n = crate::tensor::norm(&dir).max(1e-9);
        dir.iter().map(|x| x * r / n).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn distance_axioms(x in ball_point(4, 0.95), y in ball_point(4, 0.95), z in ball_point(4, 0.95)) {
        let (x, y, z) = (p(&x), p(&y), p(&z));
        let dxy = poincare_distance(&x, &y).unwrap();
        let dyx = poincare_distance(&y, &x).unwrap();
        prop_assert!((dxy - dyx).abs() < 1e-9);
        prop_assert!(dxy >= 0.0);
        prop_assert!(poincare_distance(&x, &x).unwrap().abs() < 1e-9);
        let dxz = poincare_distance(&x, &z).unwrap();
        let dzy = poincare_distance(&z, &y).unwrap();
        prop_assert!(dxy <= dxz + dzy + 1e-8);
    }

    #[test]
    fn conversion_is_an_isometry(x in ball_point(3, 0.95), y in ball_point(3, 0.95), k in 0.2f64..4.0) {
        let k = Curvature::new(k).unwrap();
        let s = k.k().sqrt();
        let x = ManifoldPoint::poincare(x.iter().map(|t| t * s).collect(), k).unwrap();
        let y = ManifoldPoint::poincare(y.iter().map(|t| t * s).collect(), k).unwrap();
        let db = poincare_distance(&x, &y).unwrap();
        let (lx, ly) = (convert(&x, Model::Lorentz).unwrap(), convert(&y, Model::Lorentz).unwrap());
        prop_assert!((db - lorentz_distance(&lx, &ly).unwrap()).abs() < 1e-9 * db.max(1.0));
        let (kx, ky) = (convert(&x, Model::Klein).unwrap(), convert(&y, Model::Klein).unwrap());
        prop_assert!((db - distance(&kx, &ky).unwrap()).abs() < 1e-9 * db.max(1.0));
        let back = convert(&lx, Model::Poincare).unwrap();
        prop_assert!(close(back.coords(), x.coords(), 1e-10));
    }

    #[test]
    fn exp_log_inverse_poincare(x in ball_point(3, 0.9), v in prop::collection::vec(-1.0f64..1.0, 3), scale in 0.0f64..5.0, k in 0.5f64..2.0) {
        let k = Curvature::new(k).unwrap();
        let x = ManifoldPoint::poincare(x.iter().map(|t| t * k.k().sqrt()).collect(), k).unwrap();
        let raw = TangentVector::new(x.clone(), v).unwrap();
        let n = raw.metric_norm().max(1e-12);
        let v: Vec<f64> = raw.vector().iter().map(|t| t * scale / n).collect();
        let tv = TangentVector::new(x.clone(), v).unwrap();
        let y = exp_map(&tv).unwrap();
        let back = log_map(&x, &y).unwrap();
        let err = metric_norm(&x, &back.vector().iter().zip(tv.vector()).map(|(a, b)| a - b).collect::<Vec<_>>());
        prop_assert!(err < 1e-7, "roundtrip error {err}");
        prop_assert!((back.metric_norm() - distance(&x, &y).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn exp_log_inverse_lorentz(x in ball_point(3, 0.9), v in prop::collection::vec(-1.0f64..1.0, 4), scale in 0.0f64..5.0) {
        let x = convert(&p(&x), Model::Lorentz).unwrap();
        let tangent = lorentz::proj_tangent(x.coords(), &v, 1.0);
        let n = lorentz::tangent_norm(&tangent).max(1e-12);
        let tv = TangentVector::new(x.clone(), tangent.iter().map(|t| t * scale / n).collect()).unwrap();
        let y = exp_map(&tv).unwrap();
        let back = log_map(&x, &y).unwrap();
        let diff: Vec<f64> = back.vector().iter().zip(tv.vector()).map(|(a, b)| a - b).collect();
        prop_assert!(crate::tensor::norm(&diff) < 1e-7 * (1.0 + crate::tensor::norm(x.coords())));
        prop_assert!((back.metric_norm() - lorentz_distance(&x, &y).unwrap()).abs() < 1e-9 * scale.max(1.0));
    }

    #[test]
    fn mobius_identities(x in ball_point(5, 0.99)) {
        let x = p(&x);
        let o = ManifoldPoint::origin(Model::Poincare, K1, 5);
        let left = mobius_add(&o, &x).unwrap();
        prop_assert!(close(left.coords(), x.coords(), 1e-12));
        let neg = p(&poincare::neg(x.coords()));
        let inv = mobius_add(&neg, &x).unwrap();
        prop_assert!(close(inv.coords(), &[0.0; 5], 1e-12));
    }

    #[test]
    fn midpoint_scale_invariance(pts in prop::collection::vec(ball_point(3, 0.95), 1..6), alpha in 0.01f64..100.0) {
        let pts: Vec<ManifoldPoint> = pts.into_iter().map(|c| ManifoldPoint::klein(c, K1).unwrap()).collect();
        let w: Vec<f64> = (0..pts.len()).map(|i| 1.0 + i as f64).collect();
        let ws: Vec<f64> = w.iter().map(|t| t * alpha).collect();
        let a = einstein_midpoint(&pts, &w).unwrap();
        let b = einstein_midpoint(&pts, &ws).unwrap();
        prop_assert!(close(a.coords(), b.coords(), 1e-12));
        prop_assert!(a.check_invariant().is_ok());
    }

    #[test]
    fn transport_is_isometric(x in ball_point(3, 0.9), y in ball_point(3, 0.9), v in prop::collection::vec(-2.0f64..2.0, 3)) {
        let (x, y) = (p(&x), p(&y));
        let tv = TangentVector::new(x, v).unwrap();
        let moved = parallel_transport(&tv, &y).unwrap();
        prop_assert!((moved.metric_norm() - tv.metric_norm()).abs() < 1e-8 * tv.metric_norm().max(1.0));
    }
}
