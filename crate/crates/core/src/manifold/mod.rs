//! Closed-form hyperbolic geometry on the Poincaré ball, the Lorentz
//! hyperboloid and the Klein ball.
//!
//! Every model is parameterized by a [`Curvature`] `K > 0`: the manifold has
//! sectional curvature `−1/K`, the balls have radius `√K` and the hyperboloid
//! is `⟨x,x⟩_L = −K`. `K = 1` gives the unit models. Operands must share one
//! curvature; mixing curvatures is an error, not an implicit rescale.
//!
//! The functions here operate on validated [`ManifoldPoint`] values. The
//! slice-level kernels in [`poincare`], [`lorentz`] and [`klein`] are what the
//! optimizers and models call in their inner loops.

pub mod klein;
pub mod lorentz;
pub mod poincare;

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::tensor::norm;

/// Ball clamp: projected points have norm at most `(1 − EPS_BALL)·√K`.
pub const EPS_BALL: f64 = 1e-5;
/// Tolerance on the hyperboloid residual and on Lorentz tangency.
pub const TOL_HYP: f64 = 1e-6;
/// Lower clamp on arcosh arguments inside differentiable code.
pub const ARCOSH_MIN: f64 = 1.0 + 1e-15;
/// Denominators below this are degenerate.
pub const EPS_DEN: f64 = 1e-15;
/// Norms below this are treated as zero vectors.
pub const MIN_NORM: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("curvature must be positive and finite, got {0}")]
    InvalidCurvature(f64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("curvature mismatch: {left} vs {right}")]
    CurvatureMismatch { left: f64, right: f64 },
    #[error("model mismatch: {left} vs {right}")]
    ModelMismatch { left: Model, right: Model },
    #[error("point with norm {norm} is not inside the ball of radius {radius}")]
    OutsideBall { norm: f64, radius: f64 },
    #[error("point is off the hyperboloid (residual {residual})")]
    OffHyperboloid { residual: f64 },
    #[error("vector is not tangent to the hyperboloid (residual {residual})")]
    NotTangent { residual: f64 },
    #[error("arcosh argument {0} is below 1")]
    ArcoshDomain(f64),
    #[error("degenerate configuration: {0}")]
    Degenerate(&'static str),
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("{op} is not defined on the {model} model")]
    Unsupported { op: &'static str, model: Model },
    #[error("empty input")]
    Empty,
    #[error("invalid weights: {0}")]
    InvalidWeights(&'static str),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// `arcosh` with arguments in `[1 − TOL_HYP, 1)` rounded up to 1.
///
/// Arguments further below 1 indicate invalid points; callers that need an
/// error check with [`checked_arcosh`].
pub(crate) fn arcosh(x: f64) -> f64 {
    x.max(1.0).acosh()
}

/// `arcosh(1 + δ)` without the cancellation of forming `1 + δ` first.
pub(crate) fn arcosh1p(delta: f64) -> f64 {
    let d = delta.max(0.0);
    (d + (d * (2.0 + d)).sqrt()).ln_1p()
}

pub fn checked_arcosh(x: f64) -> Result<f64> {
    if !(x >= 1.0 - TOL_HYP) {
        return Err(GeometryError::ArcoshDomain(x));
    }
    Ok(arcosh(x))
}

/// The manifold parameter `K` (sectional curvature `−1/K`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Curvature(f64);

impl Curvature {
    pub const ONE: Curvature = Curvature(1.0);

    pub fn new(k: f64) -> Result<Self> {
        if k.is_finite() && k > 0.0 {
            Ok(Self(k))
        } else {
            Err(GeometryError::InvalidCurvature(k))
        }
    }

    /// `K`.
    pub fn k(self) -> f64 {
        self.0
    }

    /// The gyrovector parameter `c = 1/K`.
    pub fn c(self) -> f64 {
        1.0 / self.0
    }
}

impl Default for Curvature {
    fn default() -> Self {
        Self::ONE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Poincare,
    Lorentz,
    Klein,
}

impl Model {
    pub fn tag(self) -> &'static str {
        match self {
            Model::Poincare => "poincare",
            Model::Lorentz => "lorentz",
            Model::Klein => "klein",
        }
    }

    /// Ambient coordinate count for an `n`-dimensional manifold.
    pub fn ambient_dim(self, n: usize) -> usize {
        match self {
            Model::Lorentz => n + 1,
            _ => n,
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Model {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "poincare" => Ok(Model::Poincare),
            "lorentz" => Ok(Model::Lorentz),
            "klein" => Ok(Model::Klein),
            other => Err(format!("unknown manifold model '{other}'")),
        }
    }
}

/// A point on one of the three models, validated at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldPoint {
    model: Model,
    curvature: Curvature,
    coords: Vec<f64>,
}

impl ManifoldPoint {
    pub fn new(model: Model, curvature: Curvature, coords: Vec<f64>) -> Result<Self> {
        check_coords(model, curvature, &coords)?;
        Ok(Self {
            model,
            curvature,
            coords,
        })
    }

    pub fn poincare(coords: Vec<f64>, k: Curvature) -> Result<Self> {
        Self::new(Model::Poincare, k, coords)
    }

    pub fn lorentz(coords: Vec<f64>, k: Curvature) -> Result<Self> {
        Self::new(Model::Lorentz, k, coords)
    }

    pub fn klein(coords: Vec<f64>, k: Curvature) -> Result<Self> {
        Self::new(Model::Klein, k, coords)
    }

    /// The origin of an `dim`-dimensional model.
    pub fn origin(model: Model, curvature: Curvature, dim: usize) -> Self {
        let coords = match model {
            Model::Lorentz => lorentz::origin(dim, curvature.k()),
            _ => vec![0.0; dim],
        };
        Self {
            model,
            curvature,
            coords,
        }
    }

    pub fn model(&self) -> Model {
        self.model
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    /// Intrinsic dimension.
    pub fn dim(&self) -> usize {
        match self.model {
            Model::Lorentz => self.coords.len() - 1,
            _ => self.coords.len(),
        }
    }

    pub fn check_invariant(&self) -> Result<()> {
        check_coords(self.model, self.curvature, &self.coords)
    }

    fn compatible(&self, other: &ManifoldPoint) -> Result<()> {
        if self.model != other.model {
            return Err(GeometryError::ModelMismatch {
                left: self.model,
                right: other.model,
            });
        }
        if self.curvature != other.curvature {
            return Err(GeometryError::CurvatureMismatch {
                left: self.curvature.k(),
                right: other.curvature.k(),
            });
        }
        if self.coords.len() != other.coords.len() {
            return Err(GeometryError::DimensionMismatch {
                expected: self.coords.len(),
                found: other.coords.len(),
            });
        }
        Ok(())
    }
}

/// Validates raw coordinates against a model's invariant.
pub fn check_coords(model: Model, curvature: Curvature, coords: &[f64]) -> Result<()> {
    if coords.iter().any(|x| !x.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let k = curvature.k();
    match model {
        Model::Poincare | Model::Klein => {
            if coords.is_empty() {
                return Err(GeometryError::Empty);
            }
            let n = norm(coords);
            if n >= k.sqrt() {
                return Err(GeometryError::OutsideBall {
                    norm: n,
                    radius: k.sqrt(),
                });
            }
        }
        Model::Lorentz => {
            if coords.len() < 2 {
                return Err(GeometryError::DimensionMismatch {
                    expected: 2,
                    found: coords.len(),
                });
            }
            let residual = lorentz::minkowski(coords, coords) + k;
            // residual is relative to the coordinate scale
            let scale = 1.0f64.max(coords[0] * coords[0] / k);
            if coords[0] <= 0.0 || residual.abs() > TOL_HYP * scale {
                return Err(GeometryError::OffHyperboloid { residual });
            }
        }
    }
    Ok(())
}

/// A tangent vector together with its base point.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    base: ManifoldPoint,
    v: Vec<f64>,
}

impl TangentVector {
    pub fn new(base: ManifoldPoint, v: Vec<f64>) -> Result<Self> {
        if v.len() != base.coords.len() {
            return Err(GeometryError::DimensionMismatch {
                expected: base.coords.len(),
                found: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if base.model == Model::Lorentz {
            let residual = lorentz::minkowski(&base.coords, &v);
            let scale = 1.0f64.max(norm(&base.coords) * norm(&v));
            if residual.abs() > TOL_HYP * scale {
                return Err(GeometryError::NotTangent { residual });
            }
        }
        Ok(Self { base, v })
    }

    pub fn zero(base: ManifoldPoint) -> Self {
        let v = vec![0.0; base.coords.len()];
        Self { base, v }
    }

    pub fn base(&self) -> &ManifoldPoint {
        &self.base
    }

    pub fn vector(&self) -> &[f64] {
        &self.v
    }

    pub fn into_vector(self) -> Vec<f64> {
        self.v
    }

    /// Norm under the model's metric tensor at the base point.
    pub fn metric_norm(&self) -> f64 {
        metric_norm(&self.base, &self.v)
    }
}

pub fn metric_norm(base: &ManifoldPoint, v: &[f64]) -> f64 {
    let k = base.curvature.k();
    match base.model {
        Model::Poincare => poincare::metric_norm(&base.coords, v, k),
        Model::Lorentz => lorentz::tangent_norm(v),
        Model::Klein => klein::metric_norm(&base.coords, v, k),
    }
}

/// `−x₁y₁ + Σ_{i≥2} x_i y_i`.
pub fn minkowski_inner(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(GeometryError::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(GeometryError::DimensionMismatch {
            expected: 2,
            found: x.len(),
        });
    }
    Ok(lorentz::minkowski(x, y))
}

pub fn lorentz_distance(x: &ManifoldPoint, y: &ManifoldPoint) -> Result<f64> {
    expect_model(x, Model::Lorentz, "lorentz_distance")?;
    x.compatible(y)?;
    let k = x.curvature.k();
    checked_arcosh(-lorentz::minkowski(&x.coords, &y.coords) / k)?;
    Ok(lorentz::distance(&x.coords, &y.coords, k))
}

pub fn poincare_distance(x: &ManifoldPoint, y: &ManifoldPoint) -> Result<f64> {
    expect_model(x, Model::Poincare, "poincare_distance")?;
    x.compatible(y)?;
    Ok(poincare::distance(&x.coords, &y.coords, x.curvature.k()))
}

/// Geodesic distance on any of the three models.
pub fn distance(x: &ManifoldPoint, y: &ManifoldPoint) -> Result<f64> {
    x.compatible(y)?;
    match x.model {
        Model::Poincare => poincare_distance(x, y),
        Model::Lorentz => lorentz_distance(x, y),
        Model::Klein => Ok(klein::distance(&x.coords, &y.coords, x.curvature.k())),
    }
}

pub fn conformal_factor(x: &ManifoldPoint) -> Result<f64> {
    expect_model(x, Model::Poincare, "conformal_factor")?;
    Ok(poincare::conformal_factor(&x.coords, x.curvature.k()))
}

pub fn mobius_add(x: &ManifoldPoint, y: &ManifoldPoint) -> Result<ManifoldPoint> {
    expect_model(x, Model::Poincare, "mobius_add")?;
    x.compatible(y)?;
    let out = poincare::mobius_add(&x.coords, &y.coords, x.curvature.k())?;
    ManifoldPoint::poincare(out, x.curvature)
}

pub fn exp_map(v: &TangentVector) -> Result<ManifoldPoint> {
    let base = &v.base;
    let k = base.curvature.k();
    let coords = match base.model {
        Model::Poincare => poincare::expmap(&base.coords, &v.v, k)?,
        Model::Lorentz => lorentz::expmap(&base.coords, &v.v, k),
        Model::Klein => {
            return Err(GeometryError::Unsupported {
                op: "exp_map",
                model: Model::Klein,
            })
        }
    };
    ManifoldPoint::new(base.model, base.curvature, coords)
}

pub fn log_map(base: &ManifoldPoint, y: &ManifoldPoint) -> Result<TangentVector> {
    base.compatible(y)?;
    let k = base.curvature.k();
    let v = match base.model {
        Model::Poincare => poincare::logmap(&base.coords, &y.coords, k)?,
        Model::Lorentz => lorentz::logmap(&base.coords, &y.coords, k),
        Model::Klein => {
            return Err(GeometryError::Unsupported {
                op: "log_map",
                model: Model::Klein,
            })
        }
    };
    Ok(TangentVector {
        base: base.clone(),
        v,
    })
}

pub fn parallel_transport(v: &TangentVector, to: &ManifoldPoint) -> Result<TangentVector> {
    let from = &v.base;
    from.compatible(to)?;
    let k = from.curvature.k();
    let out = match from.model {
        Model::Poincare => poincare::transport(&from.coords, &to.coords, &v.v, k)?,
        Model::Lorentz => lorentz::transport(&from.coords, &to.coords, &v.v, k)?,
        Model::Klein => {
            return Err(GeometryError::Unsupported {
                op: "parallel_transport",
                model: Model::Klein,
            })
        }
    };
    Ok(TangentVector {
        base: to.clone(),
        v: out,
    })
}

/// Maps a point to another model at the same curvature.
pub fn convert(p: &ManifoldPoint, target: Model) -> Result<ManifoldPoint> {
    p.check_invariant()?;
    if p.model == target {
        return Ok(p.clone());
    }
    let k = p.curvature.k();
    let hyperboloid = match p.model {
        Model::Lorentz => p.coords.clone(),
        Model::Poincare => lorentz::from_poincare(&p.coords, k),
        Model::Klein => lorentz::from_klein(&p.coords, k),
    };
    let coords = match target {
        Model::Lorentz => hyperboloid,
        Model::Poincare => lorentz::to_poincare(&hyperboloid, k),
        Model::Klein => lorentz::to_klein(&hyperboloid, k),
    };
    ManifoldPoint::new(target, p.curvature, coords)
}

/// Weighted Einstein midpoint of Klein points.
pub fn einstein_midpoint(points: &[ManifoldPoint], weights: &[f64]) -> Result<ManifoldPoint> {
    let first = points.first().ok_or(GeometryError::Empty)?;
    expect_model(first, Model::Klein, "einstein_midpoint")?;
    if points.len() != weights.len() {
        return Err(GeometryError::DimensionMismatch {
            expected: points.len(),
            found: weights.len(),
        });
    }
    for p in &points[1..] {
        first.compatible(p)?;
    }
    let rows: Vec<&[f64]> = points.iter().map(|p| p.coords.as_slice()).collect();
    let m = klein::einstein_midpoint(&rows, weights, first.curvature.k())?;
    ManifoldPoint::klein(m, first.curvature)
}

/// Maps an arbitrary finite vector onto a model.
///
/// Ball models rescale onto radius `(1 − ε_ball)√K` when needed; the
/// hyperboloid recomputes the time coordinate from the space coordinates.
pub fn project_to_manifold(
    raw: &[f64],
    target: Model,
    curvature: Curvature,
) -> Result<ManifoldPoint> {
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let mut coords = raw.to_vec();
    let k = curvature.k();
    match target {
        Model::Poincare | Model::Klein => poincare::project(&mut coords, k),
        Model::Lorentz => {
            if coords.len() < 2 {
                return Err(GeometryError::DimensionMismatch {
                    expected: 2,
                    found: coords.len(),
                });
            }
            lorentz::project(&mut coords, k)
        }
    }
    ManifoldPoint::new(target, curvature, coords)
}

fn expect_model(p: &ManifoldPoint, model: Model, op: &'static str) -> Result<()> {
    if p.model == model {
        Ok(())
    } else {
        Err(GeometryError::Unsupported { op, model: p.model })
    }
}

#[cfg(test)]
mod tests;
