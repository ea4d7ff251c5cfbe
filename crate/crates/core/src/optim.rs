//! Riemannian SGD, Adam and AMSGrad.
//!
//! Manifold parameters are matrices whose rows are points; each row keeps a
//! first moment in its tangent space and one scalar second moment (the squared
//! metric norm of its gradient). Euclidean parameters use ordinary per-entry
//! Adam moments.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifold::{lorentz, poincare, GeometryError, ManifoldPoint, Model, TangentVector};
use crate::tensor::{norm_sq, Tensor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error("learning rate must be positive and finite, got {0}")]
    InvalidLr(f64),
    #[error("{name} must lie in (0, 1), got {value}")]
    InvalidBeta { name: &'static str, value: f64 },
    #[error("invalid optimizer setting: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient for parameter {param}")]
    NonFinite { param: usize },
    #[error("parameter {param}: expected shape {expected:?}, found {found:?}")]
    Shape {
        param: usize,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("parameter {param} left the representable range")]
    Diverged { param: usize },
    #[error("orthonormalization did not converge (residual {0:.3e})")]
    NotConverged(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, OptimError>;

/// Where the rows of a parameter live.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Geometry {
    Euclidean,
    Poincare { k: f64 },
    Lorentz { k: f64 },
}

impl Geometry {
    pub fn is_euclidean(self) -> bool {
        matches!(self, Geometry::Euclidean)
    }

    /// Riemannian gradient of one row from its Euclidean gradient.
    pub fn rgrad(self, x: &[f64], g: &[f64]) -> Vec<f64> {
        match self {
            Geometry::Euclidean => g.to_vec(),
            Geometry::Poincare { k } => {
                let s = (1.0 - norm_sq(x) / k).powi(2) / 4.0;
                g.iter().map(|v| v * s).collect()
            }
            Geometry::Lorentz { k } => {
                let mut h = g.to_vec();
                h[0] = -h[0];
                lorentz::proj_tangent(x, &h, k)
            }
        }
    }

    /// Exponential map of one row.
    pub fn exp(self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        Ok(match self {
            Geometry::Euclidean => x.iter().zip(v).map(|(a, b)| a + b).collect(),
            Geometry::Poincare { k } => {
                let mut y = poincare::expmap(x, v, k)?;
                poincare::project(&mut y, k);
                y
            }
            Geometry::Lorentz { k } => lorentz::expmap(x, v, k),
        })
    }

    pub fn transport(self, x: &[f64], y: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        Ok(match self {
            Geometry::Euclidean => v.to_vec(),
            Geometry::Poincare { k } => poincare::transport(x, y, v, k)?,
            Geometry::Lorentz { k } => {
                let t = lorentz::transport(x, y, v, k)?;
                // keep the moment exactly tangent despite rounding drift
                lorentz::proj_tangent(y, &t, k)
            }
        })
    }

    /// Squared metric norm of a tangent vector at `x`.
    pub fn sq_norm(self, x: &[f64], v: &[f64]) -> f64 {
        match self {
            Geometry::Euclidean => norm_sq(v),
            Geometry::Poincare { k } => poincare::conformal_factor(x, k).powi(2) * norm_sq(v),
            Geometry::Lorentz { .. } => lorentz::minkowski(v, v).max(0.0),
        }
    }

    /// Tangent direction pointing away from the origin (gradient of `d(o,x)²/2`).
    fn decay_direction(self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(match self {
            Geometry::Euclidean => x.to_vec(),
            Geometry::Poincare { k } => {
                let o = vec![0.0; x.len()];
                poincare::logmap(x, &o, k)?
                    .into_iter()
                    .map(|v| -v)
                    .collect()
            }
            Geometry::Lorentz { k } => {
                let o = lorentz::origin(x.len() - 1, k);
                lorentz::logmap(x, &o, k).into_iter().map(|v| -v).collect()
            }
        })
    }
}

fn geometry_of(p: &ManifoldPoint) -> Result<Geometry> {
    let k = p.curvature().k();
    match p.model() {
        Model::Poincare => Ok(Geometry::Poincare { k }),
        Model::Lorentz => Ok(Geometry::Lorentz { k }),
        Model::Klein => Err(GeometryError::Unsupported {
            op: "optimizer step",
            model: Model::Klein,
        }
        .into()),
    }
}

fn check_finite(g: &[f64], param: usize) -> Result<()> {
    if g.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(OptimError::NonFinite { param })
    }
}

fn check_lr(lr: f64) -> Result<()> {
    if lr > 0.0 && lr.is_finite() {
        Ok(())
    } else {
        Err(OptimError::InvalidLr(lr))
    }
}

/// Converts a Euclidean gradient at `at` into a Riemannian gradient.
pub fn riemannian_grad(euclidean_grad: &[f64], at: &ManifoldPoint) -> Result<TangentVector> {
    check_finite(euclidean_grad, 0)?;
    let geom = geometry_of(at)?;
    if euclidean_grad.len() != at.coords().len() {
        return Err(GeometryError::DimensionMismatch {
            expected: at.coords().len(),
            found: euclidean_grad.len(),
        }
        .into());
    }
    Ok(TangentVector::new(
        at.clone(),
        geom.rgrad(at.coords(), euclidean_grad),
    )?)
}

/// `exp_x(−lr · rgrad)` followed by projection onto the manifold.
pub fn rsgd_step(param: &ManifoldPoint, rgrad: &TangentVector, lr: f64) -> Result<ManifoldPoint> {
    check_lr(lr)?;
    let geom = geometry_of(param)?;
    let step: Vec<f64> = rgrad.vector().iter().map(|v| -lr * v).collect();
    let y = geom.exp(param.coords(), &step)?;
    Ok(crate::manifold::project_to_manifold(
        &y,
        param.model(),
        param.curvature(),
    )?)
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub amsgrad: bool,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            amsgrad: false,
        }
    }
}

impl AdamParams {
    pub fn validate(&self) -> Result<()> {
        check_lr(self.lr)?;
        for (name, value) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(value > 0.0 && value < 1.0) {
                return Err(OptimError::InvalidBeta { name, value });
            }
        }
        if !(self.eps > 0.0) {
            return Err(OptimError::InvalidConfig(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// Adam state of a single manifold point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointState {
    pub m: Vec<f64>,
    pub v: f64,
    pub v_max: f64,
    pub t: u64,
}

impl PointState {
    pub fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: 0.0,
            v_max: 0.0,
            t: 0,
        }
    }
}

/// One Riemannian Adam step on a single point; `state.m` is transported to the new point.
pub fn radam_step(
    param: &ManifoldPoint,
    rgrad: &TangentVector,
    state: &mut PointState,
    hp: &AdamParams,
) -> Result<ManifoldPoint> {
    hp.validate()?;
    let geom = geometry_of(param)?;
    check_finite(rgrad.vector(), 0)?;
    state.t += 1;
    let y = adam_row(
        geom,
        param.coords(),
        rgrad.vector(),
        &mut state.m,
        &mut state.v,
        &mut state.v_max,
        state.t,
        hp,
    )?;
    Ok(crate::manifold::project_to_manifold(
        &y,
        param.model(),
        param.curvature(),
    )?)
}

#[allow(clippy::too_many_arguments)]
fn adam_row(
    geom: Geometry,
    x: &[f64],
    rg: &[f64],
    m: &mut [f64],
    v: &mut f64,
    v_max: &mut f64,
    t: u64,
    hp: &AdamParams,
) -> Result<Vec<f64>> {
    for (mi, gi) in m.iter_mut().zip(rg) {
        *mi = hp.beta1 * *mi + (1.0 - hp.beta1) * gi;
    }
    *v = hp.beta2 * *v + (1.0 - hp.beta2) * geom.sq_norm(x, rg);
    *v_max = if hp.amsgrad { v_max.max(*v) } else { *v };
    let bc1 = 1.0 - hp.beta1.powi(t as i32);
    let bc2 = 1.0 - hp.beta2.powi(t as i32);
    let denom = (*v_max / bc2).sqrt() + hp.eps;
    let step: Vec<f64> = m.iter().map(|mi| -hp.lr * mi / bc1 / denom).collect();
    let y = geom.exp(x, &step)?;
    let moved = geom.transport(x, &y, m)?;
    m.copy_from_slice(&moved);
    Ok(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sgd,
    Adam,
    Amsgrad,
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" | "rsgd" => Ok(Method::Sgd),
            "adam" | "radam" => Ok(Method::Adam),
            "amsgrad" => Ok(Method::Amsgrad),
            other => Err(format!("unknown optimizer '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub method: Method,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            method: Method::Adam,
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(OptimError::InvalidConfig(format!(
                "weight decay must be ≥ 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }

    fn adam(&self) -> AdamParams {
        AdamParams {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            amsgrad: self.method == Method::Amsgrad,
        }
    }
}

/// How the optimizer treats one parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub geometry: Geometry,
    pub decay: bool,
}

impl ParamSpec {
    pub fn euclidean(decay: bool) -> Self {
        Self {
            geometry: Geometry::Euclidean,
            decay,
        }
    }

    pub fn manifold(geometry: Geometry) -> Self {
        Self {
            geometry,
            decay: false,
        }
    }
}

/// Moments of one parameter tensor. For manifold parameters `v` and `v_max`
/// hold one entry per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
    pub v_max: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub t: u64,
    pub moments: Vec<Moments>,
}

/// Steps a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimConfig,
    specs: Vec<ParamSpec>,
    state: OptimizerState,
}

impl Optimizer {
    pub fn new(cfg: OptimConfig, params: &[Tensor], specs: Vec<ParamSpec>) -> Result<Self> {
        cfg.validate()?;
        if params.len() != specs.len() {
            return Err(OptimError::InvalidConfig(format!(
                "{} parameters but {} specs",
                params.len(),
                specs.len()
            )));
        }
        let moments = params
            .iter()
            .zip(&specs)
            .map(|(p, s)| {
                let (r, c) = p.shape();
                let vc = if s.geometry.is_euclidean() { c } else { 1 };
                Moments {
                    m: Tensor::zeros(r, c),
                    v: Tensor::zeros(r, vc),
                    v_max: Tensor::zeros(r, vc),
                }
            })
            .collect();
        Ok(Self {
            cfg,
            specs,
            state: OptimizerState { t: 0, moments },
        })
    }

    pub fn config(&self) -> &OptimConfig {
        &self.cfg
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn restore(&mut self, state: OptimizerState) -> Result<()> {
        if state.moments.len() != self.state.moments.len() {
            return Err(OptimError::InvalidConfig(
                "optimizer state has a different parameter count".into(),
            ));
        }
        for (i, (a, b)) in state.moments.iter().zip(&self.state.moments).enumerate() {
            if a.m.shape() != b.m.shape() || a.v.shape() != b.v.shape() {
                return Err(OptimError::Shape {
                    param: i,
                    expected: b.m.shape(),
                    found: a.m.shape(),
                });
            }
        }
        self.state = state;
        Ok(())
    }

    pub fn set_lr(&mut self, lr: f64) -> Result<()> {
        check_lr(lr)?;
        self.cfg.lr = lr;
        Ok(())
    }

    /// Applies one update given Euclidean gradients of every parameter.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(OptimError::Shape {
                    param: i,
                    expected: p.shape(),
                    found: g.shape(),
                });
            }
            check_finite(g.data(), i)?;
        }
        self.state.t += 1;
        let t = self.state.t;
        let hp = self.cfg.adam();
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let spec = self.specs[i];
            let mom = &mut self.state.moments[i];
            if spec.geometry.is_euclidean() {
                euclidean_update(&self.cfg, &hp, spec.decay, t, p, g, mom);
                continue;
            }
            for r in 0..p.rows() {
                let x = p.row(r).to_vec();
                let mut rg = spec.geometry.rgrad(&x, g.row(r));
                if spec.decay && self.cfg.weight_decay > 0.0 {
                    let d = spec.geometry.decay_direction(&x)?;
                    rg.iter_mut()
                        .zip(&d)
                        .for_each(|(a, b)| *a += self.cfg.weight_decay * b);
                }
                let y = match self.cfg.method {
                    Method::Sgd => {
                        let step: Vec<f64> = rg.iter().map(|v| -self.cfg.lr * v).collect();
                        spec.geometry.exp(&x, &step)?
                    }
                    Method::Adam | Method::Amsgrad => {
                        let mut v = mom.v.get(r, 0);
                        let mut vm = mom.v_max.get(r, 0);
                        let y = adam_row(
                            spec.geometry,
                            &x,
                            &rg,
                            mom.m.row_mut(r),
                            &mut v,
                            &mut vm,
                            t,
                            &hp,
                        )?;
                        mom.v.set(r, 0, v);
                        mom.v_max.set(r, 0, vm);
                        y
                    }
                };
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(OptimError::Diverged { param: i });
                }
                p.row_mut(r).copy_from_slice(&y);
            }
        }
        Ok(())
    }
}

fn euclidean_update(
    cfg: &OptimConfig,
    hp: &AdamParams,
    decay: bool,
    t: u64,
    p: &mut Tensor,
    g: &Tensor,
    mom: &mut Moments,
) {
    let wd = if decay { cfg.weight_decay } else { 0.0 };
    let bc1 = 1.0 - hp.beta1.powi(t as i32);
    let bc2 = 1.0 - hp.beta2.powi(t as i32);
    let pd = p.data_mut();
    for j in 0..pd.len() {
        let gj = g.data()[j] + wd * pd[j];
        match cfg.method {
            Method::Sgd => pd[j] -= cfg.lr * gj,
            Method::Adam | Method::Amsgrad => {
                let m = &mut mom.m.data_mut()[j];
                *m = hp.beta1 * *m + (1.0 - hp.beta1) * gj;
                let m = *m;
                let v = &mut mom.v.data_mut()[j];
                *v = hp.beta2 * *v + (1.0 - hp.beta2) * gj * gj;
                let v = *v;
                let vm = &mut mom.v_max.data_mut()[j];
                *vm = if hp.amsgrad { vm.max(v) } else { v };
                pd[j] -= hp.lr * (m / bc1) / ((*vm / bc2).sqrt() + hp.eps);
            }
        }
    }
}

/// Restores `WᵀW = I` for a square `W` by Newton–Schulz iteration.
///
/// Returns the final Frobenius residual `‖WᵀW − I‖`.
pub fn orthonormalize(w: &mut Tensor, tol: f64, max_iter: usize) -> Result<f64> {
    let n = w.cols();
    if w.rows() != n {
        return Err(OptimError::Shape {
            param: 0,
            expected: (n, n),
            found: w.shape(),
        });
    }
    if !w.all_finite() {
        return Err(OptimError::NonFinite { param: 0 });
    }
    let residual = |y: &Tensor| {
        let mut r = y.t_matmul(y);
        for i in 0..n {
            r.set(i, i, r.get(i, i) - 1.0);
        }
        r.data().iter().map(|v| v * v).sum::<f64>().sqrt()
    };
    let mut res = residual(w);
    if res <= tol {
        return Ok(res);
    }
    if res >= 0.5 {
        // singular values must start below √3 for the iteration to converge
        let f = w.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        if f == 0.0 {
            return Err(OptimError::NotConverged(res));
        }
        *w = w.map(|v| v / f);
    }
    for _ in 0..max_iter {
        let mut a = w.t_matmul(w).map(|v| -v);
        for i in 0..n {
            a.set(i, i, a.get(i, i) + 3.0);
        }
        *w = w.matmul(&a).map(|v| 0.5 * v);
        res = residual(w);
        if res <= tol {
            return Ok(res);
        }
    }
    Err(OptimError::NotConverged(res))
}
