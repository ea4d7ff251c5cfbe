//! Hyperboloid `⟨x,x⟩_L = −K, x₀ > 0` on raw slices; coordinate 0 is time-like.

use super::{arcosh, arcosh1p, GeometryError, EPS_DEN, MIN_NORM};
use crate::tensor::norm_sq;

pub fn minkowski(x: &[f64], y: &[f64]) -> f64 {
    -x[0] * y[0] + x[1..].iter().zip(&y[1..]).map(|(a, b)| a * b).sum::<f64>()
}

/// Lorentzian norm of a tangent (space-like) vector; negative squares clamp to zero.
pub fn tangent_norm(v: &[f64]) -> f64 {
    minkowski(v, v).max(0.0).sqrt()
}

pub fn origin(dim: usize, k: f64) -> Vec<f64> {
    let mut o = vec![0.0; dim + 1];
    o[0] = k.sqrt();
    o
}

/// Recomputes the time coordinate from the space coordinates.
pub fn project(x: &mut [f64], k: f64) {
    x[0] = (k + norm_sq(&x[1..])).sqrt();
}

/// Uses `−⟨x,y⟩_L/K − 1 = ⟨x−y, x−y⟩_L / 2K`, exact on the hyperboloid and
/// free of cancellation for nearby points.
pub fn distance(x: &[f64], y: &[f64], k: f64) -> f64 {
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let delta = minkowski(&diff, &diff) / (2.0 * k);
    let direct = -minkowski(x, y) / k - 1.0;
    // far apart the direct form is the accurate one
    let delta = if direct > 1.0 { direct } else { delta };
    k.sqrt() * arcosh1p(delta)
}

pub fn expmap(x: &[f64], v: &[f64], k: f64) -> Vec<f64> {
    let n = tangent_norm(v);
    if n < MIN_NORM {
        return x.to_vec();
    }
    let sk = k.sqrt();
    let a = (n / sk).cosh();
    let b = sk * (n / sk).sinh() / n;
    let mut out: Vec<f64> = x.iter().zip(v).map(|(xi, vi)| a * xi + b * vi).collect();
    project(&mut out, k);
    out
}

pub fn logmap(x: &[f64], y: &[f64], k: f64) -> Vec<f64> {
    let xy = minkowski(x, y);
    let u: Vec<f64> = y.iter().zip(x).map(|(yi, xi)| yi + xy / k * xi).collect();
    let n = tangent_norm(&u);
    if n < MIN_NORM {
        return vec![0.0; x.len()];
    }
    let d = distance(x, y, k);
    u.iter().map(|t| d * t / n).collect()
}

pub fn expmap0(v_space: &[f64], k: f64) -> Vec<f64> {
    let sk = k.sqrt();
    let n = norm_sq(v_space).sqrt();
    let mut out = Vec::with_capacity(v_space.len() + 1);
    if n < MIN_NORM {
        out.push(sk);
        out.extend_from_slice(v_space);
        project(&mut out, k);
        return out;
    }
    out.push(sk * (n / sk).cosh());
    let s = sk * (n / sk).sinh() / n;
    out.extend(v_space.iter().map(|t| s * t));
    project(&mut out, k);
    out
}

/// Space part of `log_o(x)`; the time part is identically zero at the origin.
pub fn logmap0(x: &[f64], k: f64) -> Vec<f64> {
    let sk = k.sqrt();
    let n = norm_sq(&x[1..]).sqrt();
    if n < MIN_NORM {
        return vec![0.0; x.len() - 1];
    }
    let d = sk * arcosh(x[0] / sk);
    x[1..].iter().map(|t| d * t / n).collect()
}

/// Projects an ambient vector onto the tangent space at `x`.
pub fn proj_tangent(x: &[f64], h: &[f64], k: f64) -> Vec<f64> {
    let xh = minkowski(x, h);
    h.iter().zip(x).map(|(hi, xi)| hi + xh / k * xi).collect()
}

pub fn transport(x: &[f64], y: &[f64], v: &[f64], k: f64) -> Result<Vec<f64>, GeometryError> {
    let den = k - minkowski(x, y);
    if den.abs() < EPS_DEN {
        return Err(GeometryError::Degenerate(
            "lorentz transport between antipodal points",
        ));
    }
    let s = minkowski(y, v) / den;
    Ok(v.iter()
        .zip(x.iter().zip(y))
        .map(|(vi, (xi, yi))| vi + s * (xi + yi))
        .collect())
}

pub fn to_poincare(x: &[f64], k: f64) -> Vec<f64> {
    let sk = k.sqrt();
    x[1..].iter().map(|t| sk * t / (x[0] + sk)).collect()
}

pub fn from_poincare(p: &[f64], k: f64) -> Vec<f64> {
    let p2 = norm_sq(p);
    let den = k - p2;
    let mut out = Vec::with_capacity(p.len() + 1);
    out.push(k.sqrt() * (k + p2) / den);
    out.extend(p.iter().map(|t| 2.0 * k * t / den));
    out
}

pub fn to_klein(x: &[f64], k: f64) -> Vec<f64> {
    let sk = k.sqrt();
    x[1..].iter().map(|t| sk * t / x[0]).collect()
}

pub fn from_klein(q: &[f64], k: f64) -> Vec<f64> {
    let sk = k.sqrt();
    let s = sk / (k - norm_sq(q)).sqrt();
    let mut out = Vec::with_capacity(q.len() + 1);
    out.push(sk * s);
    out.extend(q.iter().map(|t| s * t));
    out
}
