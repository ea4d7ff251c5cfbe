//! Model assembly, forward passes and the training loop.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::{self, Activation};
use super::{check_rows, EmbeddingMatrix, GnnError, Result};
use crate::diff::hyper::{self, CurvVar, EdgeIndex};
use crate::diff::{Tape, Var};
use crate::graphio::{Graph, Split, SplitMask};
use crate::manifold::{lorentz, Model};
use crate::optim::{orthonormalize, Method, OptimConfig, Optimizer, OptimizerState, ParamSpec};
use crate::shallow::FermiDirac;
use crate::tensor::Tensor;

/// Residual target for re-orthogonalizing H2H-GCN weights after a step.
const ORTHO_TOL: f64 = 1e-13;
/// Orthogonality a weight must satisfy before it is used.
const ORTHO_MAX: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Hgnn,
    Hgcn,
    #[serde(alias = "h2h-gcn")]
    H2hgcn,
    Hgcae,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Hgnn,
        ModelKind::Hgcn,
        ModelKind::H2hgcn,
        ModelKind::Hgcae,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Hgnn => "HGNN",
            ModelKind::Hgcn => "HGCN",
            ModelKind::H2hgcn => "H2H-GCN",
            ModelKind::Hgcae => "HGCAE",
        }
    }

    pub fn manifold(self) -> Model {
        match self {
            ModelKind::H2hgcn => Model::Lorentz,
            _ => Model::Poincare,
        }
    }

    pub fn default_method(self) -> Method {
        match self {
            ModelKind::Hgnn => Method::Amsgrad,
            ModelKind::H2hgcn => Method::Sgd,
            ModelKind::Hgcn | ModelKind::Hgcae => Method::Adam,
        }
    }

    pub fn default_activation(self) -> Activation {
        match self {
            ModelKind::Hgnn => Activation::LeakyRelu,
            ModelKind::H2hgcn => Activation::Selu,
            ModelKind::Hgcn | ModelKind::Hgcae => Activation::Relu,
        }
    }

    fn curvature_trainable_by_default(self) -> bool {
        matches!(self, ModelKind::Hgcn | ModelKind::Hgcae)
    }

    fn default_task(self) -> Task {
        match self {
            ModelKind::Hgcae => Task::Reconstruction,
            _ => Task::NodeClassification,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "hgnn" => Ok(ModelKind::Hgnn),
            "hgcn" => Ok(ModelKind::Hgcn),
            "h2hgcn" => Ok(ModelKind::H2hgcn),
            "hgcae" => Ok(ModelKind::Hgcae),
            other => Err(format!("unknown model '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    NodeClassification,
    LinkPrediction,
    Reconstruction,
}

/// Everything needed to rebuild and train one model. Unset options take the
/// per-kind defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub layers: usize,
    pub dim: usize,
    pub hidden: Option<usize>,
    pub curvature: f64,
    pub trainable_curvature: Option<bool>,
    pub manifold: Option<Model>,
    pub method: Option<Method>,
    pub activation: Option<Activation>,
    pub task: Option<Task>,
    pub epochs: usize,
    pub lr: f64,
    pub dropout: f64,
    pub weight_decay: f64,
    pub lambda: f64,
    pub fd: FermiDirac,
    pub seed: u64,
    /// Check every layer output against its manifold invariant.
    pub instrument: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Hgcn,
            layers: 2,
            dim: 10,
            hidden: None,
            curvature: 1.0,
            trainable_curvature: None,
            manifold: None,
            method: None,
            activation: None,
            task: None,
            epochs: 200,
            lr: 0.01,
            dropout: 0.5,
            weight_decay: 5e-4,
            lambda: 1.0,
            fd: FermiDirac::default(),
            seed: 0,
            instrument: false,
        }
    }
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            ..Default::default()
        }
    }

    pub fn trainable(&self) -> bool {
        self.trainable_curvature
            .unwrap_or(self.kind.curvature_trainable_by_default())
    }

    pub fn method(&self) -> Method {
        self.method.unwrap_or(self.kind.default_method())
    }

    pub fn activation(&self) -> Activation {
        self.activation.unwrap_or(self.kind.default_activation())
    }

    pub fn task(&self) -> Task {
        self.task.unwrap_or(self.kind.default_task())
    }

    pub fn hidden(&self) -> usize {
        self.hidden.unwrap_or(if self.kind == ModelKind::Hgcae {
            16
        } else {
            self.dim
        })
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn optim(&self) -> OptimConfig {
        OptimConfig {
            method: self.method(),
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GnnError::Config(m));
        if self.layers == 0 {
            return bad("layers must be ≥ 1".into());
        }
        if self.dim < 2 || self.hidden() < 1 {
            return bad(format!(
                "dim must be ≥ 2 and hidden ≥ 1, got {} and {}",
                self.dim,
                self.hidden()
            ));
        }
        if !(self.curvature > 0.0 && self.curvature.is_finite()) {
            return bad(format!(
                "curvature must be positive, got {}",
                self.curvature
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(GnnError::NegativeLambda(self.lambda));
        }
        self.fd
            .validate()
            .map_err(|e| GnnError::Config(e.to_string()))?;
        self.optim().validate()?;
        if let Some(m) = self.manifold {
            if m != self.kind.manifold() {
                return Err(GnnError::Mismatch(format!(
                    "{} runs on the {} model, not {m}",
                    self.kind,
                    self.kind.manifold()
                )));
            }
        }
        if self.trainable() && !self.kind.curvature_trainable_by_default() {
            return Err(GnnError::Mismatch(format!(
                "{} has fixed curvature",
                self.kind
            )));
        }
        match (self.kind, self.task()) {
            (ModelKind::Hgcae, Task::NodeClassification) => Err(GnnError::Mismatch(
                "HGCAE trains unsupervised; use reconstruction or link-prediction".into(),
            )),
            (k, Task::Reconstruction) if k != ModelKind::Hgcae => Err(GnnError::Mismatch(format!(
                "{k} has no attribute decoder; reconstruction is HGCAE only"
            ))),
            _ => Ok(()),
        }
    }
}

/// Named parameter tensors with their optimizer treatment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
    pub specs: Vec<ParamSpec>,
}

impl Params {
    fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            specs: Vec::new(),
        }
    }

    fn push(&mut self, name: String, t: Tensor, spec: ParamSpec) {
        self.names.push(name);
        self.tensors.push(t);
        self.specs.push(spec);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index(name).map(|i| &self.tensors[i])
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

fn xavier(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-limit..limit))
            .collect(),
    )
}

fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let mut w = Tensor::from_vec(
        d,
        d,
        (0..d * d).map(|_| StandardNormal.sample(rng)).collect(),
    );
    orthonormalize(&mut w, ORTHO_TOL, 200)?;
    Ok(w)
}

/// Layer widths `[in, hidden, …, hidden, out]` for `layers` layers.
fn widths(input: usize, hidden: usize, out: usize, layers: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend(std::iter::repeat_n(hidden, layers - 1));
    w.push(out);
    w
}

fn init_params(cfg: &ModelConfig, feat: usize, rng: &mut ChaCha8Rng) -> Result<Params> {
    let mut p = Params::new();
    let l = cfg.layers;
    let trainable = cfg.trainable();
    let attention_stack = |p: &mut Params, prefix: &str, dims: &[usize], rng: &mut ChaCha8Rng| {
        for i in 0..dims.len() - 1 {
            let (din, dout) = (dims[i], dims[i + 1]);
            p.push(
                format!("{prefix}{i}.w"),
                xavier(dout, din, rng),
                ParamSpec::euclidean(true),
            );
            p.push(
                format!("{prefix}{i}.b"),
                Tensor::zeros(1, dout),
                ParamSpec::euclidean(false),
            );
            p.push(
                format!("{prefix}{i}.att_self"),
                xavier(dout, 1, rng),
                ParamSpec::euclidean(false),
            );
            p.push(
                format!("{prefix}{i}.att_nbr"),
                xavier(dout, 1, rng),
                ParamSpec::euclidean(false),
            );
            if trainable {
                p.push(
                    format!("{prefix}{i}.kappa"),
                    Tensor::scalar(cfg.curvature.ln()),
                    ParamSpec::euclidean(false),
                );
            }
        }
    };
    let out_dim = match cfg.kind {
        ModelKind::Hgnn => {
            let dims = widths(feat, cfg.hidden(), cfg.dim, l);
            for i in 0..l {
                p.push(
                    format!("l{i}.w"),
                    xavier(dims[i + 1], dims[i], rng),
                    ParamSpec::euclidean(true),
                );
            }
            cfg.dim
        }
        ModelKind::Hgcn => {
            attention_stack(&mut p, "l", &widths(feat, cfg.hidden(), cfg.dim, l), rng);
            cfg.dim
        }
        ModelKind::Hgcae => {
            attention_stack(&mut p, "l", &widths(feat, cfg.hidden(), cfg.dim, l), rng);
            attention_stack(&mut p, "d", &widths(cfg.dim, cfg.hidden(), feat, l), rng);
            cfg.dim
        }
        ModelKind::H2hgcn => {
            let d = cfg.dim;
            p.push(
                "in.w".into(),
                xavier(d, feat, rng),
                ParamSpec::euclidean(true),
            );
            let bound = 1.0 / (feat as f64).sqrt();
            let b = (0..d).map(|_| rng.random_range(-bound..bound)).collect();
            p.push(
                "in.b".into(),
                Tensor::row_vector(b),
                ParamSpec::euclidean(false),
            );
            for i in 0..l {
                p.push(
                    format!("l{i}.w"),
                    random_orthogonal(d, rng)?,
                    ParamSpec::euclidean(false),
                );
            }
            d
        }
    };
    if cfg.task() == Task::NodeClassification {
        p.push(
            "head.w".into(),
            xavier(out_dim, 1, rng),
            ParamSpec::euclidean(true),
        );
        p.push(
            "head.b".into(),
            Tensor::scalar(0.0),
            ParamSpec::euclidean(false),
        );
    }
    Ok(p)
}

/// Tape-side view of one forward pass.
struct Forward {
    emb: Var,
    emb_cv: CurvVar,
    tangent: Var,
    recon: Option<Var>,
    logits: Option<Var>,
    /// Layer outputs to check in instrumented mode.
    stages: Vec<(String, Var, Model, CurvVar)>,
    /// `(input, output)` of each Lorentz linear map.
    isometries: Vec<(Var, Var)>,
}

struct Builder<'a> {
    cfg: &'a ModelConfig,
    vars: Vec<Var>,
    params: &'a Params,
    edges: EdgeIndex,
    adj_w: Var,
    x: Var,
    /// Dropout masks keyed by layer transition; `None` in evaluation.
    rng: Option<&'a mut ChaCha8Rng>,
}

impl Builder<'_> {
    fn var(&self, name: &str) -> Var {
        self.vars[self
            .params
            .index(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))]
    }

    fn curv(&self, tape: &mut Tape, name: &str) -> CurvVar {
        match self.params.index(name) {
            Some(i) => CurvVar::from_log_k(tape, self.vars[i]),
            None => CurvVar::constant(tape, self.cfg.curvature),
        }
    }

    fn mask(&mut self, tape: &mut Tape, rows: usize, cols: usize) -> Option<Var> {
        let p = self.cfg.dropout;
        let rng = self.rng.as_deref_mut()?;
        if p == 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - p);
        let m = (0..rows * cols)
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        Some(tape.constant(Tensor::from_vec(rows, cols, m)))
    }

    fn act(&self, layer: usize) -> Activation {
        if layer + 1 < self.cfg.layers {
            self.cfg.activation()
        } else {
            Activation::Identity
        }
    }

    /// Attention stack shared by HGCN and HGCAE (encoder or decoder).
    /// Returns the final points (or the final tangent message when
    /// `tangent_out`) and the curvature of the last layer.
    fn attention_stack(
        &mut self,
        tape: &mut Tape,
        mut h: Var,
        mut cv_prev: CurvVar,
        prefix: &str,
        tangent_out: bool,
        f: &mut Forward,
    ) -> Result<(Var, CurvVar)> {
        let n = self.edges.nodes;
        for l in 0..self.cfg.layers {
            let cv = self.curv(tape, &format!("{prefix}{l}.kappa"));
            if l > 0 || prefix == "d" {
                let m = self.mask(tape, n, tape.shape(h).1);
                h = layers::curvature_change(tape, h, cv_prev, cv, m)?;
            }
            let w = self.var(&format!("{prefix}{l}.w"));
            let b = self.var(&format!("{prefix}{l}.b"));
            let a_s = self.var(&format!("{prefix}{l}.att_self"));
            let a_n = self.var(&format!("{prefix}{l}.att_nbr"));
            let act = self.act(l);
            if self.cfg.kind == ModelKind::Hgcn {
                let lin = layers::hgcn_linear(tape, h, w, b, cv)?;
                f.stages
                    .push((format!("{prefix}{l}.linear"), lin, Model::Poincare, cv));
                h = layers::hgcn_attention_aggregate(tape, lin, &self.edges, a_s, a_n, act, cv)?.0;
            } else if tangent_out && l + 1 == self.cfg.layers {
                let (z, _) = layers::hgcae_message(tape, h, &self.edges, w, b, a_s, a_n, cv)?;
                return Ok((z, cv));
            } else {
                h = layers::hgcae_layer(tape, h, &self.edges, [w, b, a_s, a_n], act, cv)?.0;
            }
            f.stages
                .push((format!("{prefix}{l}"), h, Model::Poincare, cv));
            cv_prev = cv;
        }
        Ok((h, cv_prev))
    }

    fn forward(&mut self, tape: &mut Tape) -> Result<Forward> {
        let kind = self.cfg.kind;
        let n = self.edges.nodes;
        let placeholder = CurvVar::constant(tape, self.cfg.curvature);
        let mut f = Forward {
            emb: self.x,
            emb_cv: placeholder,
            tangent: self.x,
            recon: None,
            logits: None,
            stages: Vec::new(),
            isometries: Vec::new(),
        };
        match kind {
            ModelKind::Hgnn => {
                let cv = placeholder;
                let mut h = hyper::ball_expmap0(tape, self.x, cv)?;
                f.stages.push(("lift".into(), h, Model::Poincare, cv));
                for l in 0..self.cfg.layers {
                    if l > 0 {
                        let m = self.mask(tape, n, tape.shape(h).1);
                        h = layers::curvature_change(tape, h, cv, cv, m)?;
                    }
                    let w = self.var(&format!("l{l}.w"));
                    h = layers::hgnn_layer(tape, h, &self.edges, self.adj_w, w, self.act(l), cv)?;
                    f.stages.push((format!("l{l}"), h, Model::Poincare, cv));
                }
                f.emb = h;
                f.emb_cv = cv;
                f.tangent = hyper::ball_logmap0(tape, h, cv)?;
            }
            ModelKind::Hgcn | ModelKind::Hgcae => {
                let cv0 = self.curv(tape, "l0.kappa");
                let h = hyper::ball_expmap0(tape, self.x, cv0)?;
                f.stages.push(("lift".into(), h, Model::Poincare, cv0));
                let (emb, cv) = self.attention_stack(tape, h, cv0, "l", false, &mut f)?;
                f.emb = emb;
                f.emb_cv = cv;
                f.tangent = hyper::ball_logmap0(tape, emb, cv)?;
                if kind == ModelKind::Hgcae {
                    let (recon, _) = self.attention_stack(tape, emb, cv, "d", true, &mut f)?;
                    f.recon = Some(recon);
                }
            }
            ModelKind::H2hgcn => {
                let cv = placeholder;
                let w_in = self.var("in.w");
                let b_in = self.var("in.b");
                let u = tape.matmul_t(self.x, w_in)?;
                let u = tape.add(u, b_in)?;
                let mut h = hyper::lorentz_expmap0(tape, u, cv)?;
                f.stages.push(("lift".into(), h, Model::Lorentz, cv));
                for l in 0..self.cfg.layers {
                    if l > 0 {
                        if let Some(m) = self.mask(tape, n, self.cfg.dim) {
                            let t = hyper::lorentz_logmap0(tape, h, cv)?;
                            let t = tape.mul(t, m)?;
                            h = hyper::lorentz_expmap0(tape, t, cv)?;
                        }
                    }
                    let name = format!("l{l}.w");
                    let residual = layers::orthogonality_residual(
                        self.params.get(&name).expect("layer weight"),
                    );
                    if residual > ORTHO_MAX {
                        return Err(GnnError::Orthogonality { name, residual });
                    }
                    let lin = layers::h2h_lorentz_linear(tape, h, self.var(&name))?;
                    f.isometries.push((h, lin));
                    f.stages
                        .push((format!("l{l}.linear"), lin, Model::Lorentz, cv));
                    h = layers::h2h_aggregate(tape, lin, &self.edges, self.adj_w, self.act(l), cv)?;
                    f.stages.push((format!("l{l}"), h, Model::Lorentz, cv));
                }
                f.emb = h;
                f.emb_cv = cv;
                f.tangent = hyper::lorentz_logmap0(tape, h, cv)?;
            }
        }
        if self.params.index("head.w").is_some() {
            let z = tape.matmul(f.tangent, self.var("head.w"))?;
            f.logits = Some(tape.add(z, self.var("head.b"))?);
        }
        Ok(f)
    }
}

fn instrument(tape: &Tape, f: &Forward) -> Result<()> {
    for (stage, v, model, cv) in &f.stages {
        check_rows(tape.value(*v), *model, cv.k(tape), stage)?;
    }
    for (i, &(a, b)) in f.isometries.iter().enumerate() {
        let (x, y) = (tape.value(a), tape.value(b));
        for r in 0..x.rows() {
            let before = lorentz::minkowski(x.row(r), x.row(r));
            let after = lorentz::minkowski(y.row(r), y.row(r));
            if (after - before).abs() > 1e-12 * before.abs().max(1.0) {
                return Err(GnnError::Invariant {
                    stage: format!("l{i}.linear"),
                    node: r,
                    detail: format!("Minkowski norm changed from {before} to {after}"),
                });
            }
        }
    }
    Ok(())
}

/// Mean Fermi-Dirac cross-entropy over positive and negative pairs.
fn edge_bce(
    tape: &mut Tape,
    f: &Forward,
    model: Model,
    pos: &[(usize, usize)],
    neg: &[(usize, usize)],
    fd: FermiDirac,
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (pairs, positive) in [(pos, true), (neg, false)] {
        if pairs.is_empty() {
            continue;
        }
        let a: Arc<[usize]> = pairs.iter().map(|p| p.0).collect();
        let b: Arc<[usize]> = pairs.iter().map(|p| p.1).collect();
        let xa = tape.gather(f.emb, a)?;
        let xb = tape.gather(f.emb, b)?;
        let d = match model {
            Model::Lorentz => hyper::lorentz_dist(tape, xa, xb, f.emb_cv)?,
            _ => hyper::poincare_dist(tape, xa, xb, f.emb_cv)?,
        };
        let z = hyper::fermi_dirac_logit(tape, d, fd.r, fd.t);
        let z = if positive { z } else { tape.neg(z) };
        let ll = tape.log_sigmoid(z);
        let s = tape.sum(ll);
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    let total = total.unwrap_or_else(|| tape.scalar(0.0));
    Ok(tape.scale(total, -1.0 / (pos.len() + neg.len()).max(1) as f64))
}

/// Uniform non-edges without self pairs; fewer if the graph is nearly complete.
pub fn sample_non_edges(graph: &Graph, count: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let n = graph.n();
    let capacity = n * (n - 1) / 2 - graph.edges().len();
    let want = count.min(capacity);
    let mut out = Vec::with_capacity(want);
    while out.len() < want {
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        if u != v && !graph.has_edge(u, v) {
            out.push((u, v));
        }
    }
    out
}

/// Result of [`train_model`].
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub embedding: EmbeddingMatrix,
    /// Training loss before each epoch's update.
    pub losses: Vec<f64>,
    pub train_seconds: f64,
    /// Head probabilities of the positive class for every node (supervised kinds).
    pub scores: Option<Vec<f64>>,
    /// Decoded attributes (HGCAE).
    pub recon: Option<Tensor>,
    pub params: Params,
    pub optimizer: OptimizerState,
    /// Final `K` per layer.
    pub curvatures: Vec<f64>,
}

fn build_inputs(
    tape: &mut Tape,
    graph: &Graph,
    params: &Params,
) -> (Vec<Var>, EdgeIndex, Var, Var) {
    let vars = params
        .names
        .iter()
        .zip(&params.tensors)
        .map(|(n, t)| tape.input(n, t.clone()))
        .collect();
    let adj = graph.norm_adj();
    let edges = adj.edge_index();
    let adj_w = hyper::column(tape, adj.weights().to_vec());
    let x = tape.constant(graph.features().clone());
    (vars, edges, adj_w, x)
}

fn check_features(graph: &Graph, params: &Params, cfg: &ModelConfig) -> Result<()> {
    let feat = graph.features().cols();
    let expected = match cfg.kind {
        ModelKind::H2hgcn => params.get("in.w").map(|w| w.cols()),
        _ => params.get("l0.w").map(|w| w.cols()),
    };
    match expected {
        Some(e) if e == feat => Ok(()),
        Some(e) => Err(GnnError::Shape(format!(
            "model expects {e} features, graph has {feat}"
        ))),
        None => Err(GnnError::Checkpoint(
            "parameters do not match the model kind".into(),
        )),
    }
}

/// Trains one model. Supervised kinds need labels and a split and fit the
/// tangent head jointly on the train nodes.
pub fn train_model(
    graph: &Graph,
    cfg: &ModelConfig,
    splits: Option<&SplitMask>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let task = cfg.task();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = init_params(cfg, graph.features().cols(), &mut rng)?;
    let train_idx: Vec<usize>;
    let train_y: Vec<f64>;
    if task == Task::NodeClassification {
        let (labels, splits) = match (graph.labels(), splits) {
            (Some(l), Some(s)) => (l, s),
            _ => return Err(GnnError::MissingLabels),
        };
        train_idx = splits.indices(Split::Train);
        train_y = train_idx.iter().map(|&i| f64::from(labels[i])).collect();
        let pos = train_y.iter().filter(|&&y| y == 1.0).count();
        if pos == 0 || pos == train_y.len() {
            return Err(GnnError::SingleClass);
        }
    } else {
        train_idx = Vec::new();
        train_y = Vec::new();
        if graph.edges().is_empty() {
            return Err(GnnError::Config(
                "edge reconstruction needs at least one edge".into(),
            ));
        }
    }
    let mut opt = Optimizer::new(cfg.optim(), &params.tensors, params.specs.clone())?;
    let model = cfg.kind.manifold();
    let train_idx: Arc<[usize]> = train_idx.into();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let (vars, edges, adj_w, x) = build_inputs(&mut tape, graph, &params);
        let mut b = Builder {
            cfg,
            vars,
            params: &params,
            edges,
            adj_w,
            x,
            rng: Some(&mut rng),
        };
        let f = b.forward(&mut tape)?;
        let vars = b.vars;
        if cfg.instrument {
            instrument(&tape, &f)?;
        }
        let loss = match task {
            Task::NodeClassification => {
                let logits = f.logits.expect("supervised head");
                let z = tape.gather(logits, train_idx.clone())?;
                // −[y log σ(z) + (1 − y) log σ(−z)] = −log σ(z) + (1 − y)·z
                let ls = tape.log_sigmoid(z);
                let one_minus =
                    tape.constant(Tensor::column(train_y.iter().map(|v| 1.0 - v).collect()));
                let lin = tape.mul(one_minus, z)?;
                let per = tape.sub(lin, ls)?;
                tape.mean(per)
            }
            Task::LinkPrediction | Task::Reconstruction => {
                let pos = graph.edges().to_vec();
                let neg = sample_non_edges(graph, pos.len(), &mut rng);
                let rec_a = edge_bce(&mut tape, &f, model, &pos, &neg, cfg.fd)?;
                match (task, f.recon) {
                    (Task::Reconstruction, Some(recon)) => {
                        let diff = tape.sub(recon, x)?;
                        let sq = tape.square(diff);
                        let mse = tape.mean(sq);
                        let weighted = tape.scale(mse, cfg.lambda);
                        tape.add(rec_a, weighted)?
                    }
                    _ => rec_a,
                }
            }
        };
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(GnnError::NonFinite(format!(
                "training loss at epoch {epoch}"
            )));
        }
        losses.push(value);
        let grads = tape.backward_wrt(loss, &vars)?;
        let g: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
        opt.step(&mut params.tensors, &g)?;
        if cfg.kind == ModelKind::H2hgcn {
            for l in 0..cfg.layers {
                let i = params.index(&format!("l{l}.w")).expect("layer weight");
                orthonormalize(&mut params.tensors[i], ORTHO_TOL, 100)?;
            }
        }
    }
    let train_seconds = start.elapsed().as_secs_f64();
    let ev = evaluate(graph, cfg, &params)?;
    Ok(TrainOutput {
        embedding: ev.embedding,
        losses,
        train_seconds,
        scores: ev.scores,
        recon: ev.recon,
        params,
        optimizer: opt.state().clone(),
        curvatures: ev.curvatures,
    })
}

struct Evaluated {
    embedding: EmbeddingMatrix,
    scores: Option<Vec<f64>>,
    recon: Option<Tensor>,
    curvatures: Vec<f64>,
}

/// Forward pass without dropout.
fn evaluate(graph: &Graph, cfg: &ModelConfig, params: &Params) -> Result<Evaluated> {
    check_features(graph, params, cfg)?;
    let mut tape = Tape::new();
    let (vars, edges, adj_w, x) = build_inputs(&mut tape, graph, params);
    let mut b = Builder {
        cfg,
        vars,
        params,
        edges,
        adj_w,
        x,
        rng: None,
    };
    let f = b.forward(&mut tape)?;
    if cfg.instrument {
        instrument(&tape, &f)?;
    }
    let k = f.emb_cv.k(&tape);
    let embedding = EmbeddingMatrix::new(
        cfg.kind.manifold(),
        k,
        tape.value(f.emb).clone(),
        cfg.kind.name(),
        &cfg.hash(),
    )?;
    let scores = f.logits.map(|z| {
        tape.value(z)
            .data()
            .iter()
            .map(|&v| crate::diff::sigmoid(v))
            .collect()
    });
    let mut curvatures = Vec::new();
    let mut names: Vec<&String> = params
        .names
        .iter()
        .filter(|n| n.ends_with(".kappa"))
        .collect();
    names.sort();
    for n in names {
        curvatures.push(params.get(n).expect("listed").item().exp());
    }
    if curvatures.is_empty() {
        curvatures.push(cfg.curvature);
    }
    let recon = f.recon.map(|r| tape.value(r).clone());
    Ok(Evaluated {
        embedding,
        scores,
        recon,
        curvatures,
    })
}

/// Embeds a graph with trained parameters.
pub fn infer(
    graph: &Graph,
    cfg: &ModelConfig,
    params: &Params,
) -> Result<(EmbeddingMatrix, Option<Vec<f64>>)> {
    cfg.validate()?;
    let ev = evaluate(graph, cfg, params)?;
    Ok((ev.embedding, ev.scores))
}
