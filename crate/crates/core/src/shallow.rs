//! Shallow Poincaré embedding: one free point per node, trained with a
//! Fermi-Dirac edge likelihood and uniform negative sampling.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::hyper::{self, CurvVar};
use crate::diff::{DiffError, Tape};
use crate::graphio::Graph;
use crate::manifold::poincare;
use crate::optim::{Geometry, Method, OptimConfig, OptimError, Optimizer, ParamSpec};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ShallowError {
    #[error("invalid shallow config: {0}")]
    Config(String),
    #[error("batch references node {node} but only {n} are embedded")]
    UnknownNode { node: usize, n: usize },
    #[error("graph has no edges")]
    NoEdges,
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

pub type Result<T> = std::result::Result<T, ShallowError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FermiDirac {
    pub r: f64,
    pub t: f64,
}

impl Default for FermiDirac {
    fn default() -> Self {
        Self { r: 2.0, t: 1.0 }
    }
}

impl FermiDirac {
    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0 && self.t.is_finite() && self.r.is_finite()) {
            return Err(ShallowError::Config(format!(
                "Fermi-Dirac needs finite r and t > 0, got r={} t={}",
                self.r, self.t
            )));
        }
        Ok(())
    }
}

/// `1 / (e^{(d−r)/t} + 1)`.
pub fn fermi_dirac_prob(d: f64, fd: FermiDirac) -> f64 {
    crate::diff::sigmoid((fd.r - d) / fd.t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShallowConfig {
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub negatives: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub fd: FermiDirac,
    pub method: Method,
    pub curvature: f64,
}

impl Default for ShallowConfig {
    fn default() -> Self {
        Self {
            dim: 10,
            epochs: 1000,
            lr: 0.3,
            negatives: 10,
            burn_in: 10,
            seed: 0,
            fd: FermiDirac::default(),
            method: Method::Adam,
            curvature: 1.0,
        }
    }
}

impl ShallowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(ShallowError::Config(format!(
                "dim must be ≥ 2, got {}",
                self.dim
            )));
        }
        if self.negatives < 1 {
            return Err(ShallowError::Config("negatives must be ≥ 1".into()));
        }
        if !(self.curvature > 0.0 && self.curvature.is_finite()) {
            return Err(ShallowError::Config(format!(
                "curvature must be positive, got {}",
                self.curvature
            )));
        }
        self.fd.validate()?;
        self.optim().validate()?;
        Ok(())
    }

    fn optim(&self) -> OptimConfig {
        OptimConfig {
            method: self.method,
            lr: self.lr,
            weight_decay: 0.0,
            ..Default::default()
        }
    }
}

fn check_nodes(pairs: &[(usize, usize)], n: usize) -> Result<()> {
    for &(u, v) in pairs {
        if u >= n || v >= n {
            return Err(ShallowError::UnknownNode { node: u.max(v), n });
        }
    }
    Ok(())
}

/// Records the mean cross-entropy of a batch; returns `(tape, loss node, embedding node)`.
fn record_loss(
    emb: &Tensor,
    pos: &[(usize, usize)],
    neg: &[(usize, usize)],
    fd: FermiDirac,
    k: f64,
) -> Result<(Tape, crate::diff::Var, crate::diff::Var)> {
    let mut tape = Tape::new();
    let x = tape.input("emb", emb.clone());
    let cv = CurvVar::constant(&mut tape, k);
    let mut terms = Vec::new();
    for (pairs, positive) in [(pos, true), (neg, false)] {
        if pairs.is_empty() {
            continue;
        }
        let a: Arc<[usize]> = pairs.iter().map(|p| p.0).collect();
        let b: Arc<[usize]> = pairs.iter().map(|p| p.1).collect();
        let xa = tape.gather(x, a)?;
        let xb = tape.gather(x, b)?;
        let d = hyper::poincare_dist(&mut tape, xa, xb, cv)?;
        let logit = hyper::fermi_dirac_logit(&mut tape, d, fd.r, fd.t);
        // log(1 − σ(z)) = log σ(−z)
        let z = if positive { logit } else { tape.neg(logit) };
        let ll = tape.log_sigmoid(z);
        terms.push(tape.sum(ll));
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    let count = (pos.len() + neg.len()) as f64;
    let loss = tape.scale(total, -1.0 / count);
    Ok((tape, loss, x))
}

/// Mean of `−log P` over positives and `−log(1 − P)` over negatives.
pub fn shallow_loss(
    emb: &Tensor,
    pos: &[(usize, usize)],
    neg: &[(usize, usize)],
    fd: FermiDirac,
    k: f64,
) -> Result<f64> {
    check_nodes(pos, emb.rows())?;
    check_nodes(neg, emb.rows())?;
    if pos.is_empty() && neg.is_empty() {
        return Ok(0.0);
    }
    let (tape, loss, _) = record_loss(emb, pos, neg, fd, k)?;
    Ok(tape.value(loss).item())
}

/// Uniform non-neighbors of `u` (excluding `u`); empty if `u` is adjacent to everything.
pub fn sample_negatives(graph: &Graph, u: usize, count: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = graph.n();
    if graph.neighbors(u).len() + 1 >= n {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let v = rng.random_range(0..n);
        if v != u && !graph.has_edge(u, v) {
            out.push(v);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShallowResult {
    pub embedding: Tensor,
    /// Batch loss before each epoch's update.
    pub losses: Vec<f64>,
    pub train_seconds: f64,
}

pub fn train_shallow(graph: &Graph, cfg: &ShallowConfig) -> Result<ShallowResult> {
    cfg.validate()?;
    if graph.edges().is_empty() {
        return Err(ShallowError::NoEdges);
    }
    let start = Instant::now();
    let n = graph.n();
    let k = cfg.curvature;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = 1e-3 * k.sqrt();
    let emb = Tensor::from_vec(
        n,
        cfg.dim,
        (0..n * cfg.dim)
            .map(|_| rng.random_range(-init..init))
            .collect(),
    );
    let mut params = vec![emb];
    let mut opt = Optimizer::new(
        cfg.optim(),
        &params,
        vec![ParamSpec::manifold(Geometry::Poincare { k })],
    )?;
    // both orientations, so every endpoint gets its own negatives
    let pos: Vec<(usize, usize)> = graph
        .edges()
        .iter()
        .flat_map(|&(u, v)| [(u, v), (v, u)])
        .collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        opt.set_lr(if epoch < cfg.burn_in {
            cfg.lr / 10.0
        } else {
            cfg.lr
        })?;
        let mut neg = Vec::with_capacity(pos.len() * cfg.negatives);
        for &(u, _) in &pos {
            neg.extend(
                sample_negatives(graph, u, cfg.negatives, &mut rng)
                    .into_iter()
                    .map(|v| (u, v)),
            );
        }
        let (tape, loss, x) = record_loss(&params[0], &pos, &neg, cfg.fd, k)?;
        losses.push(tape.value(loss).item());
        let grads = tape.backward(loss)?;
        opt.step(&mut params, &[grads.wrt(x)])?;
    }
    let embedding = params.pop().expect("one parameter");
    Ok(ShallowResult {
        embedding,
        losses,
        train_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Mean average precision of reconstructing each node's neighbors by
/// ranking all other nodes by distance (exhaustive; nodes without neighbors skipped).
pub fn mean_average_precision(graph: &Graph, emb: &Tensor, k: f64) -> f64 {
    let n = graph.n();
    let mut total = 0.0;
    let mut counted = 0;
    for u in 0..n {
        let nb = graph.neighbors(u);
        if nb.is_empty() {
            continue;
        }
        let d: Vec<f64> = (0..n)
            .map(|v| poincare::distance(emb.row(u), emb.row(v), k))
            .collect();
        let mut ap = 0.0;
        for &v in nb {
            let within = (0..n).filter(|&w| w != u && d[w] <= d[v]).count();
            let hits = nb.iter().filter(|&&w| d[w] <= d[v]).count();
            ap += hits as f64 / within as f64;
        }
        total += ap / nb.len() as f64;
        counted += 1;
    }
    if counted == 0 {
        0.0
    } else {
        total / counted as f64
    }
}
