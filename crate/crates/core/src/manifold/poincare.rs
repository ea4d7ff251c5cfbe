//! Poincaré ball of radius √K (sectional curvature −1/K), on raw slices.
//!
//! Gyrovector forms use `c = 1/K`. Callers validate inputs; these functions
//! only guard the denominators that can genuinely vanish.

use super::{arcosh1p, GeometryError, EPS_BALL, EPS_DEN, MIN_NORM};
use crate::tensor::{dot, norm, norm_sq};

/// Largest admissible Euclidean norm after projection.
pub fn max_norm(k: f64) -> f64 {
    (1.0 - EPS_BALL) * k.sqrt()
}

pub fn is_inside(x: &[f64], k: f64) -> bool {
    norm_sq(x) / k < 1.0
}

/// Rescales `x` onto the closed ball of radius `(1-ε)√K` if it lies outside.
pub fn project(x: &mut [f64], k: f64) {
    let n = norm(x);
    let m = max_norm(k);
    if n > m {
        let s = m / n;
        x.iter_mut().for_each(|v| *v *= s);
    }
}

pub fn conformal_factor(x: &[f64], k: f64) -> f64 {
    2.0 / (1.0 - norm_sq(x) / k)
}

pub fn distance(x: &[f64], y: &[f64], k: f64) -> f64 {
    let c = 1.0 / k;
    let diff: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let delta = 2.0 * c * diff / ((1.0 - c * norm_sq(x)) * (1.0 - c * norm_sq(y)));
    k.sqrt() * arcosh1p(delta)
}

pub fn mobius_add(x: &[f64], y: &[f64], k: f64) -> Result<Vec<f64>, GeometryError> {
    let c = 1.0 / k;
    let xy = dot(x, y);
    let x2 = norm_sq(x);
    let y2 = norm_sq(y);
    let den = 1.0 + 2.0 * c * xy + c * c * x2 * y2;
    if den.abs() < EPS_DEN {
        return Err(GeometryError::Degenerate("mobius_add denominator vanishes"));
    }
    let a = (1.0 + 2.0 * c * xy + c * y2) / den;
    let b = (1.0 - c * x2) / den;
    let mut out: Vec<f64> = x.iter().zip(y).map(|(xi, yi)| a * xi + b * yi).collect();
    project(&mut out, k);
    Ok(out)
}

pub fn neg(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| -v).collect()
}

pub fn expmap0(v: &[f64], k: f64) -> Vec<f64> {
    let sc = (1.0 / k).sqrt();
    let n = norm(v);
    if n < MIN_NORM {
        return v.to_vec();
    }
    let s = (sc * n).tanh() / (sc * n);
    let mut out: Vec<f64> = v.iter().map(|x| s * x).collect();
    project(&mut out, k);
    out
}

pub fn logmap0(x: &[f64], k: f64) -> Vec<f64> {
    let sc = (1.0 / k).sqrt();
    let n = norm(x);
    if n < MIN_NORM {
        return x.to_vec();
    }
    let s = artanh(sc * n) / (sc * n);
    x.iter().map(|v| s * v).collect()
}

pub fn expmap(x: &[f64], v: &[f64], k: f64) -> Result<Vec<f64>, GeometryError> {
    let sc = (1.0 / k).sqrt();
    let n = norm(v);
    if n < MIN_NORM {
        return Ok(x.to_vec());
    }
    let lam = conformal_factor(x, k);
    let s = (sc * lam * n / 2.0).tanh() / (sc * n);
    let second: Vec<f64> = v.iter().map(|t| s * t).collect();
    mobius_add(x, &second, k)
}

pub fn logmap(x: &[f64], y: &[f64], k: f64) -> Result<Vec<f64>, GeometryError> {
    let sc = (1.0 / k).sqrt();
    let u = mobius_add(&neg(x), y, k)?;
    let n = norm(&u);
    if n < MIN_NORM {
        return Ok(vec![0.0; x.len()]);
    }
    let lam = conformal_factor(x, k);
    let s = 2.0 / (sc * lam) * artanh(sc * n) / n;
    Ok(u.iter().map(|t| s * t).collect())
}

/// Gyration `gyr[u, v] w` as a linear map on `w`.
pub fn gyration(u: &[f64], v: &[f64], w: &[f64], k: f64) -> Result<Vec<f64>, GeometryError> {
    let c = 1.0 / k;
    let u2 = norm_sq(u);
    let v2 = norm_sq(v);
    let uv = dot(u, v);
    let uw = dot(u, w);
    let vw = dot(v, w);
    let a = -c * c * uw * v2 + c * vw + 2.0 * c * c * uv * vw;
    let b = -c * c * vw * u2 - c * uw;
    let d = 1.0 + 2.0 * c * uv + c * c * u2 * v2;
    if d.abs() < EPS_DEN {
        return Err(GeometryError::Degenerate("gyration denominator vanishes"));
    }
    Ok(w.iter()
        .zip(u.iter().zip(v))
        .map(|(wi, (ui, vi))| wi + 2.0 * (a * ui + b * vi) / d)
        .collect())
}

pub fn transport(x: &[f64], y: &[f64], v: &[f64], k: f64) -> Result<Vec<f64>, GeometryError> {
    let g = gyration(y, &neg(x), v, k)?;
    let s = conformal_factor(x, k) / conformal_factor(y, k);
    Ok(g.into_iter().map(|t| t * s).collect())
}

/// Metric norm `λ_x ‖v‖` of a tangent vector.
pub fn metric_norm(x: &[f64], v: &[f64], k: f64) -> f64 {
    conformal_factor(x, k) * norm(v)
}

/// Inverse hyperbolic tangent clamped away from ±1.
pub fn artanh(x: f64) -> f64 {
    let x = x.clamp(-1.0 + 1e-15, 1.0 - 1e-15);
    0.5 * ((1.0 + x) / (1.0 - x)).ln()
}
