//! Hyperbolic operations as tape composites, one point per row.
//!
//! Curvature enters as a [`CurvVar`] so that a trainable `K = exp(κ)`
//! receives gradients through every operation that uses it.

use std::sync::Arc;

use super::{Result, Tape, Var};
use crate::manifold::{EPS_BALL, MIN_NORM};
use crate::tensor::Tensor;

/// `c = 1/K` and `√c` as 1×1 nodes.
#[derive(Debug, Clone, Copy)]
pub struct CurvVar {
    pub c: Var,
    pub sqrt_c: Var,
}

impl CurvVar {
    pub fn constant(tape: &mut Tape, k: f64) -> Self {
        let c = tape.scalar(1.0 / k);
        let sqrt_c = tape.scalar((1.0 / k).sqrt());
        CurvVar { c, sqrt_c }
    }

    /// `K = exp(κ)` for a 1×1 parameter node `κ`.
    pub fn from_log_k(tape: &mut Tape, kappa: Var) -> Self {
        let neg = tape.neg(kappa);
        let c = tape.exp(neg);
        let half = tape.scale(neg, 0.5);
        let sqrt_c = tape.exp(half);
        CurvVar { c, sqrt_c }
    }

    /// Current value of `K`.
    pub fn k(&self, tape: &Tape) -> f64 {
        1.0 / tape.value(self.c).item()
    }

    /// `√K` as a node.
    pub fn sqrt_k(&self, tape: &mut Tape) -> Result<Var> {
        let one = tape.scalar(1.0);
        tape.div(one, self.sqrt_c)
    }
}

fn sq_rows(tape: &mut Tape, x: Var) -> Result<Var> {
    let x2 = tape.mul(x, x)?;
    Ok(tape.row_sum(x2))
}

fn dot_rows(tape: &mut Tape, x: Var, y: Var) -> Result<Var> {
    let xy = tape.mul(x, y)?;
    Ok(tape.row_sum(xy))
}

/// Rescales rows to norm at most `(1 − ε)√K`.
pub fn ball_project(tape: &mut Tape, x: Var, cv: CurvVar) -> Result<Var> {
    let n = tape.row_norm(x, MIN_NORM);
    let sk = cv.sqrt_k(tape)?;
    let maxn = tape.scale(sk, 1.0 - EPS_BALL);
    let ratio = tape.div(maxn, n)?;
    let f = tape.clamp_max(ratio, 1.0);
    tape.mul(x, f)
}

pub fn ball_expmap0(tape: &mut Tape, v: Var, cv: CurvVar) -> Result<Var> {
    let n = tape.row_norm(v, MIN_NORM);
    let a = tape.mul(n, cv.sqrt_c)?;
    let t = tape.tanh(a);
    let s = tape.div(t, a)?;
    let out = tape.mul(v, s)?;
    ball_project(tape, out, cv)
}

pub fn ball_logmap0(tape: &mut Tape, x: Var, cv: CurvVar) -> Result<Var> {
    let n = tape.row_norm(x, MIN_NORM);
    let a = tape.mul(n, cv.sqrt_c)?;
    let t = tape.artanh(a);
    let s = tape.div(t, a)?;
    tape.mul(x, s)
}

pub fn mobius_add(tape: &mut Tape, x: Var, y: Var, cv: CurvVar) -> Result<Var> {
    let xy = dot_rows(tape, x, y)?;
    let x2 = sq_rows(tape, x)?;
    let y2 = sq_rows(tape, y)?;
    let cxy = tape.mul(xy, cv.c)?;
    let cx2 = tape.mul(x2, cv.c)?;
    let cy2 = tape.mul(y2, cv.c)?;
    // 1 + 2c⟨x,y⟩ + c‖y‖²
    let two_cxy = tape.scale(cxy, 2.0);
    let a0 = tape.add(two_cxy, cy2)?;
    let a = tape.offset(a0, 1.0);
    // 1 − c‖x‖²
    let nb = tape.neg(cx2);
    let b = tape.offset(nb, 1.0);
    // 1 + 2c⟨x,y⟩ + c²‖x‖²‖y‖²
    let cc = tape.mul(cx2, cy2)?;
    let d0 = tape.add(two_cxy, cc)?;
    let den = tape.offset(d0, 1.0);
    let ax = tape.mul(x, a)?;
    let by = tape.mul(y, b)?;
    let num = tape.add(ax, by)?;
    let out = tape.div(num, den)?;
    ball_project(tape, out, cv)
}

/// `exp₀(log₀(x) · Wᵀ)` with `w` of shape `d_out × d_in`.
pub fn mobius_matvec(tape: &mut Tape, w: Var, x: Var, cv: CurvVar) -> Result<Var> {
    let u = ball_logmap0(tape, x, cv)?;
    let mu = tape.matmul_t(u, w)?;
    ball_expmap0(tape, mu, cv)
}

/// Row-paired Poincaré distances (`n×1`).
pub fn poincare_dist(tape: &mut Tape, x: Var, y: Var, cv: CurvVar) -> Result<Var> {
    let d = tape.sub(x, y)?;
    let d2 = sq_rows(tape, d)?;
    let x2 = sq_rows(tape, x)?;
    let y2 = sq_rows(tape, y)?;
    let cx2 = tape.mul(x2, cv.c)?;
    let cy2 = tape.mul(y2, cv.c)?;
    let nx = tape.neg(cx2);
    let ax = tape.offset(nx, 1.0);
    let ny = tape.neg(cy2);
    let ay = tape.offset(ny, 1.0);
    let den = tape.mul(ax, ay)?;
    let cd2 = tape.mul(d2, cv.c)?;
    let num = tape.scale(cd2, 2.0);
    let delta = tape.div(num, den)?;
    let arg = tape.offset(delta, 1.0);
    let ac = tape.arcosh(arg);
    tape.div(ac, cv.sqrt_c)
}

/// Row-wise Minkowski inner product (`n×1`).
pub fn minkowski_rows(tape: &mut Tape, x: Var, y: Var) -> Result<Var> {
    let p = tape.mul(x, y)?;
    let all = tape.row_sum(p);
    let t = tape.slice_cols(p, 0, 1)?;
    let t2 = tape.scale(t, 2.0);
    tape.sub(all, t2)
}

/// Lorentz point with the given space part; the time coordinate is `√(K + ‖v‖²)`.
pub fn lorentz_lift(tape: &mut Tape, space: Var, cv: CurvVar) -> Result<Var> {
    let s2 = sq_rows(tape, space)?;
    let one = tape.scalar(1.0);
    let k = tape.div(one, cv.c)?;
    let t2 = tape.add(s2, k)?;
    let t = tape.sqrt(t2);
    tape.concat_cols(t, space)
}

/// `exp_o` of a tangent vector at the hyperboloid origin given its space part.
pub fn lorentz_expmap0(tape: &mut Tape, v: Var, cv: CurvVar) -> Result<Var> {
    let n = tape.row_norm(v, MIN_NORM);
    let a = tape.mul(n, cv.sqrt_c)?;
    let sh = tape.unary(a, super::Unary::Sinh);
    let s = tape.div(sh, a)?;
    let space = tape.mul(v, s)?;
    lorentz_lift(tape, space, cv)
}

/// Space part of `log_o(x)`.
pub fn lorentz_logmap0(tape: &mut Tape, x: Var, cv: CurvVar) -> Result<Var> {
    let d = tape.shape(x).1;
    let time = tape.slice_cols(x, 0, 1)?;
    let space = tape.slice_cols(x, 1, d)?;
    let n = tape.row_norm(space, MIN_NORM);
    let arg = tape.mul(time, cv.sqrt_c)?;
    let ac = tape.arcosh(arg);
    let dist = tape.div(ac, cv.sqrt_c)?;
    let s = tape.div(dist, n)?;
    tape.mul(space, s)
}

pub fn lorentz_dist(tape: &mut Tape, x: Var, y: Var, cv: CurvVar) -> Result<Var> {
    let m = minkowski_rows(tape, x, y)?;
    let mc = tape.mul(m, cv.c)?;
    let arg = tape.neg(mc);
    let ac = tape.arcosh(arg);
    tape.div(ac, cv.sqrt_c)
}

pub fn lorentz_to_poincare(tape: &mut Tape, x: Var, cv: CurvVar) -> Result<Var> {
    let d = tape.shape(x).1;
    let time = tape.slice_cols(x, 0, 1)?;
    let space = tape.slice_cols(x, 1, d)?;
    let sk = cv.sqrt_k(tape)?;
    let den = tape.add(time, sk)?;
    let s = tape.mul(space, sk)?;
    tape.div(s, den)
}

pub fn poincare_to_lorentz(tape: &mut Tape, p: Var, cv: CurvVar) -> Result<Var> {
    let p2 = sq_rows(tape, p)?;
    let one = tape.scalar(1.0);
    let k = tape.div(one, cv.c)?;
    let den = tape.sub(k, p2)?;
    let sk = cv.sqrt_k(tape)?;
    let kp = tape.add(k, p2)?;
    let tn = tape.mul(kp, sk)?;
    let time = tape.div(tn, den)?;
    let k2 = tape.scale(k, 2.0);
    let sn = tape.mul(p, k2)?;
    let space = tape.div(sn, den)?;
    tape.concat_cols(time, space)
}

pub fn lorentz_to_klein(tape: &mut Tape, x: Var, cv: CurvVar) -> Result<Var> {
    let d = tape.shape(x).1;
    let time = tape.slice_cols(x, 0, 1)?;
    let space = tape.slice_cols(x, 1, d)?;
    let sk = cv.sqrt_k(tape)?;
    let s = tape.mul(space, sk)?;
    tape.div(s, time)
}

/// `γ = 1/√(1 − c‖q‖²)` per row.
pub fn lorentz_factor(tape: &mut Tape, q: Var, cv: CurvVar) -> Result<Var> {
    let q2 = sq_rows(tape, q)?;
    let cq2 = tape.mul(q2, cv.c)?;
    let n = tape.neg(cq2);
    let s = tape.offset(n, 1.0);
    let r = tape.sqrt(s);
    let one = tape.scalar(1.0);
    tape.div(one, r)
}

pub fn klein_to_poincare(tape: &mut Tape, q: Var, cv: CurvVar) -> Result<Var> {
    let q2 = sq_rows(tape, q)?;
    let cq2 = tape.mul(q2, cv.c)?;
    let n = tape.neg(cq2);
    let s = tape.offset(n, 1.0);
    let r = tape.sqrt(s);
    let den = tape.offset(r, 1.0);
    tape.div(q, den)
}

/// Sparse edge list in destination-major order with per-edge weights.
#[derive(Debug, Clone)]
pub struct EdgeIndex {
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    pub nodes: usize,
}

/// `Σ_j w_ij x_j` over the edges into each node; `w` is `m×1`.
pub fn weighted_aggregate(tape: &mut Tape, x: Var, w: Var, edges: &EdgeIndex) -> Result<Var> {
    tape.edge_aggregate(x, w, edges.src.clone(), edges.dst.clone(), edges.nodes)
}

/// Einstein midpoint in the Klein model with nonnegative edge weights.
pub fn einstein_aggregate(
    tape: &mut Tape,
    q: Var,
    w: Var,
    edges: &EdgeIndex,
    cv: CurvVar,
) -> Result<Var> {
    let gamma = lorentz_factor(tape, q, cv)?;
    let gq = tape.mul(q, gamma)?;
    let num = weighted_aggregate(tape, gq, w, edges)?;
    let den = weighted_aggregate(tape, gamma, w, edges)?;
    tape.div(num, den)
}

/// `σ((r − d)/t)`, the edge probability of the Fermi-Dirac decoder.
pub fn fermi_dirac(tape: &mut Tape, d: Var, r: f64, t: f64) -> Var {
    let z = fermi_dirac_logit(tape, d, r, t);
    tape.sigmoid(z)
}

/// `(r − d)/t`; feed to `log_sigmoid` for stable log-probabilities.
pub fn fermi_dirac_logit(tape: &mut Tape, d: Var, r: f64, t: f64) -> Var {
    let s = tape.scale(d, -1.0 / t);
    tape.offset(s, r / t)
}

/// Attention weights `softmax_{j∈N(i)} LeakyReLU(a_selfᵀ m_i + a_nbrᵀ m_j)`.
///
/// `a_self` and `a_nbr` are `d×1`; the result is `m×1` aligned with `edges`.
pub fn attention(
    tape: &mut Tape,
    m: Var,
    a_self: Var,
    a_nbr: Var,
    edges: &EdgeIndex,
    slope: f64,
) -> Result<Var> {
    let s_self = tape.matmul(m, a_self)?;
    let s_nbr = tape.matmul(m, a_nbr)?;
    let e_self = tape.gather(s_self, edges.dst.clone())?;
    let e_nbr = tape.gather(s_nbr, edges.src.clone())?;
    let e = tape.add(e_self, e_nbr)?;
    let e = tape.unary(e, super::Unary::LeakyRelu(slope));
    tape.segment_softmax(e, edges.dst.clone(), edges.nodes)
}

/// Convenience: a constant `m×1` column.
pub fn column(tape: &mut Tape, values: Vec<f64>) -> Var {
    tape.constant(Tensor::column(values))
}
