//! Klein ball of radius √K on raw slices.

use super::{lorentz, GeometryError};
use crate::tensor::{dot, norm_sq};

/// Lorentz factor `1/√(1 − ‖x‖²/K)`.
pub fn lorentz_factor(x: &[f64], k: f64) -> f64 {
    1.0 / (1.0 - norm_sq(x) / k).sqrt()
}

pub fn distance(x: &[f64], y: &[f64], k: f64) -> f64 {
    lorentz::distance(&lorentz::from_klein(x, k), &lorentz::from_klein(y, k), k)
}

/// `‖v‖_g` under `g_x = I/(1−‖x‖²) + x xᵀ/(1−‖x‖²)²`, generalized to radius √K.
pub fn metric_norm(x: &[f64], v: &[f64], k: f64) -> f64 {
    let s = 1.0 - norm_sq(x) / k;
    let xv = dot(x, v);
    (norm_sq(v) / s + xv * xv / (k * s * s)).sqrt()
}

pub fn einstein_midpoint(
    points: &[&[f64]],
    weights: &[f64],
    k: f64,
) -> Result<Vec<f64>, GeometryError> {
    if points.is_empty() {
        return Err(GeometryError::Empty);
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(GeometryError::InvalidWeights(
            "weights must be finite and nonnegative",
        ));
    }
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(GeometryError::InvalidWeights("weights sum to zero"));
    }
    let d = points[0].len();
    let mut num = vec![0.0; d];
    let mut den = 0.0;
    for (p, &w) in points.iter().zip(weights) {
        if p.len() != d {
            return Err(GeometryError::DimensionMismatch {
                expected: d,
                found: p.len(),
            });
        }
        let g = w * lorentz_factor(p, k);
        den += g;
        for (n, x) in num.iter_mut().zip(p.iter()) {
            *n += g * x;
        }
    }
    Ok(num.into_iter().map(|n| n / den).collect())
}
