//! Layer primitives recorded on a [`Tape`], one node per row.

use serde::{Deserialize, Serialize};

use super::{GnnError, Result};
use crate::diff::hyper::{self, CurvVar, EdgeIndex};
use crate::diff::{Tape, Unary, Var};
use crate::tensor::Tensor;

pub const ATTENTION_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Selu,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.unary(x, Unary::Relu),
            Activation::LeakyRelu => tape.unary(x, Unary::LeakyRelu(0.2)),
            Activation::Selu => tape.unary(x, Unary::Selu),
            Activation::Identity => x,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "leaky_relu" | "leakyrelu" => Ok(Activation::LeakyRelu),
            "selu" => Ok(Activation::Selu),
            "identity" | "none" => Ok(Activation::Identity),
            other => Err(format!("unknown activation '{other}'")),
        }
    }
}

/// Every node must receive at least one message.
pub fn check_neighborhoods(edges: &EdgeIndex) -> Result<()> {
    let mut seen = vec![false; edges.nodes];
    for &d in edges.dst.iter() {
        seen[d] = true;
    }
    match seen.iter().position(|s| !s) {
        Some(i) => Err(GnnError::EmptyNeighborhood(i)),
        None => Ok(()),
    }
}

/// Activation applied at the origin tangent space of the ball:
/// `exp₀(σ(log₀(x)))`.
pub fn ball_activate(tape: &mut Tape, x: Var, act: Activation, cv: CurvVar) -> Result<Var> {
    if act == Activation::Identity {
        return Ok(x);
    }
    let t = hyper::ball_logmap0(tape, x, cv)?;
    let a = act.apply(tape, t);
    Ok(hyper::ball_expmap0(tape, a, cv)?)
}

/// `exp₀^{to}(√(K_from/K_to)·log₀^{from}(x))` on the ball. `mask` is an
/// optional dropout multiplier applied to the tangent vector.
pub fn curvature_change(
    tape: &mut Tape,
    x: Var,
    from: CurvVar,
    to: CurvVar,
    mask: Option<Var>,
) -> Result<Var> {
    let mut t = hyper::ball_logmap0(tape, x, from)?;
    if let Some(m) = mask {
        t = tape.mul(t, m)?;
    }
    let s = tape.div(to.sqrt_c, from.sqrt_c)?;
    let t = tape.mul(t, s)?;
    Ok(hyper::ball_expmap0(tape, t, to)?)
}

/// HGNN message passing at the origin:
/// `σ(exp₀(Σ_v Ã_uv W log₀(h_v)))`.
pub fn hgnn_layer(
    tape: &mut Tape,
    h: Var,
    edges: &EdgeIndex,
    weights: Var,
    w: Var,
    act: Activation,
    cv: CurvVar,
) -> Result<Var> {
    check_neighborhoods(edges)?;
    let t = hyper::ball_logmap0(tape, h, cv)?;
    let m = hyper::weighted_aggregate(tape, t, weights, edges)?;
    let u = tape.matmul_t(m, w)?;
    let o = hyper::ball_expmap0(tape, u, cv)?;
    ball_activate(tape, o, act, cv)
}

/// `(W ⊗ x) ⊕ exp₀(b)` with `b` a `1×d_out` tangent bias.
pub fn hgcn_linear(tape: &mut Tape, x: Var, w: Var, b: Var, cv: CurvVar) -> Result<Var> {
    let mx = hyper::mobius_matvec(tape, w, x, cv)?;
    let eb = hyper::ball_expmap0(tape, b, cv)?;
    Ok(hyper::mobius_add(tape, mx, eb, cv)?)
}

/// Attention-weighted tangent aggregation `exp₀(Σ_j w_ij log₀ x_j)` followed by
/// the activation. Returns the output points and the per-edge weights.
pub fn hgcn_attention_aggregate(
    tape: &mut Tape,
    h: Var,
    edges: &EdgeIndex,
    a_self: Var,
    a_nbr: Var,
    act: Activation,
    cv: CurvVar,
) -> Result<(Var, Var)> {
    check_neighborhoods(edges)?;
    let t = hyper::ball_logmap0(tape, h, cv)?;
    let alpha = hyper::attention(tape, t, a_self, a_nbr, edges, ATTENTION_SLOPE)?;
    let agg = hyper::weighted_aggregate(tape, t, alpha, edges)?;
    let o = hyper::ball_expmap0(tape, agg, cv)?;
    Ok((ball_activate(tape, o, act, cv)?, alpha))
}

/// HGCAE message `Σ_{j} α_ij (W log₀(h_j) + b)` in the tangent space at the
/// origin; returns the tangent aggregate and the attention weights.
pub fn hgcae_message(
    tape: &mut Tape,
    h: Var,
    edges: &EdgeIndex,
    w: Var,
    b: Var,
    a_self: Var,
    a_nbr: Var,
    cv: CurvVar,
) -> Result<(Var, Var)> {
    check_neighborhoods(edges)?;
    let t = hyper::ball_logmap0(tape, h, cv)?;
    let wt = tape.matmul_t(t, w)?;
    let u = tape.add(wt, b)?;
    let alpha = hyper::attention(tape, u, a_self, a_nbr, edges, ATTENTION_SLOPE)?;
    let z = hyper::weighted_aggregate(tape, u, alpha, edges)?;
    Ok((z, alpha))
}

/// Full HGCAE layer: message, `exp₀`, activation in the ball.
pub fn hgcae_layer(
    tape: &mut Tape,
    h: Var,
    edges: &EdgeIndex,
    params: [Var; 4],
    act: Activation,
    cv: CurvVar,
) -> Result<(Var, Var)> {
    let [w, b, a_self, a_nbr] = params;
    let (z, alpha) = hgcae_message(tape, h, edges, w, b, a_self, a_nbr, cv)?;
    let o = hyper::ball_expmap0(tape, z, cv)?;
    Ok((ball_activate(tape, o, act, cv)?, alpha))
}

/// Lorentz transformation `[[1, 0ᵀ], [0, W]]`: time kept, space rotated.
pub fn h2h_lorentz_linear(tape: &mut Tape, x: Var, w: Var) -> Result<Var> {
    let d = tape.shape(x).1;
    let time = tape.slice_cols(x, 0, 1)?;
    let space = tape.slice_cols(x, 1, d)?;
    let rotated = tape.matmul_t(space, w)?;
    Ok(tape.concat_cols(time, rotated)?)
}

/// Largest entry of `WᵀW − I`.
pub fn orthogonality_residual(w: &Tensor) -> f64 {
    let mut g = w.t_matmul(w);
    for i in 0..g.rows() {
        let v = g.get(i, i) - 1.0;
        g.set(i, i, v);
    }
    g.max_abs()
}

/// Klein Einstein midpoint with edge weights, then the activation in the
/// Poincaré ball, then back to the hyperboloid.
pub fn h2h_aggregate(
    tape: &mut Tape,
    x: Var,
    edges: &EdgeIndex,
    weights: Var,
    act: Activation,
    cv: CurvVar,
) -> Result<Var> {
    check_neighborhoods(edges)?;
    let q = hyper::lorentz_to_klein(tape, x, cv)?;
    let m = hyper::einstein_aggregate(tape, q, weights, edges, cv)?;
    let p = hyper::klein_to_poincare(tape, m, cv)?;
    let p = hyper::ball_project(tape, p, cv)?;
    let p = ball_activate(tape, p, act, cv)?;
    Ok(hyper::poincare_to_lorentz(tape, p, cv)?)
}
