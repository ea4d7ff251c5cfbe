//! Hyperbolic graph neural networks: HGNN, HGCN, H2H-GCN and HGCAE, the
//! Fermi-Dirac decoder and the tangent-space classification head.

pub mod checkpoint;
pub mod head;
pub mod layers;
mod model;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::Checkpoint;
pub use head::{tangent_logreg_head, HeadConfig, HeadFit};
pub use layers::Activation;
pub use model::{
    infer, sample_non_edges, train_model, ModelConfig, ModelKind, Params, Task, TrainOutput,
};

use crate::diff::DiffError;
use crate::graphio::GraphError;
use crate::manifold::{self, lorentz, poincare, Curvature, GeometryError, ManifoldPoint, Model};
use crate::optim::OptimError;
use crate::shallow::{fermi_dirac_prob, FermiDirac};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum GnnError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("config/manifold mismatch: {0}")]
    Mismatch(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("node {0} has no neighbors and no self-loop")]
    EmptyNeighborhood(usize),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("manifold invariant violated after {stage} at node {node}: {detail}")]
    Invariant {
        stage: String,
        node: usize,
        detail: String,
    },
    #[error("weight {name} is not orthogonal (residual {residual:e})")]
    Orthogonality { name: String, residual: f64 },
    #[error("training split contains a single class")]
    SingleClass,
    #[error("node classification needs labels and a split")]
    MissingLabels,
    #[error("lambda must be ≥ 0, got {0}")]
    NegativeLambda(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GnnError>;

/// Node embeddings sharing one model and curvature, tagged with the model
/// that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    pub model: Model,
    pub k: f64,
    /// One point per row in ambient coordinates.
    pub points: Tensor,
    pub kind: String,
    pub config_hash: String,
}

impl EmbeddingMatrix {
    /// Validates every row against its manifold invariant.
    pub fn new(
        model: Model,
        k: f64,
        points: Tensor,
        kind: &str,
        config_hash: &str,
    ) -> Result<Self> {
        let e = Self {
            model,
            k,
            points,
            kind: kind.to_string(),
            config_hash: config_hash.to_string(),
        };
        e.check()?;
        Ok(e)
    }

    pub fn n(&self) -> usize {
        self.points.rows()
    }

    /// Intrinsic dimension.
    pub fn dim(&self) -> usize {
        match self.model {
            Model::Lorentz => self.points.cols() - 1,
            _ => self.points.cols(),
        }
    }

    pub fn check(&self) -> Result<()> {
        check_rows(&self.points, self.model, self.k, "embedding")
    }

    pub fn point(&self, i: usize) -> Result<ManifoldPoint> {
        Ok(ManifoldPoint::new(
            self.model,
            Curvature::new(self.k)?,
            self.points.row(i).to_vec(),
        )?)
    }

    /// Origin log-map of every row; for Lorentz points only the space part.
    pub fn tangent(&self) -> Tensor {
        let n = self.n();
        let d = self.dim();
        let mut out = Vec::with_capacity(n * d);
        for i in 0..n {
            let row = self.points.row(i);
            match self.model {
                Model::Poincare => out.extend(poincare::logmap0(row, self.k)),
                Model::Lorentz => out.extend(lorentz::logmap0(row, self.k)),
                Model::Klein => {
                    out.extend(lorentz::logmap0(&lorentz::from_klein(row, self.k), self.k))
                }
            }
        }
        Tensor::from_vec(n, d, out)
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.points.row(i), self.points.row(j));
        match self.model {
            Model::Poincare => poincare::distance(a, b, self.k),
            Model::Lorentz => lorentz::distance(a, b, self.k),
            Model::Klein => manifold::klein::distance(a, b, self.k),
        }
    }
}

/// Poincaré rows may touch the clamp radius up to rounding; Lorentz rows use
/// the relative hyperboloid tolerance.
pub(crate) fn check_rows(points: &Tensor, model: Model, k: f64, stage: &str) -> Result<()> {
    let curv = Curvature::new(k)?;
    for i in 0..points.rows() {
        let row = points.row(i);
        let bad = |detail: String| GnnError::Invariant {
            stage: stage.to_string(),
            node: i,
            detail,
        };
        if !row.iter().all(|v| v.is_finite()) {
            return Err(bad("non-finite coordinate".into()));
        }
        if model == Model::Poincare {
            let n = crate::tensor::norm(row);
            if n > poincare::max_norm(k) * (1.0 + 1e-12) {
                return Err(bad(format!(
                    "norm {n} outside the ball of radius {}",
                    k.sqrt()
                )));
            }
        } else {
            manifold::check_coords(model, curv, row).map_err(|e| bad(e.to_string()))?;
        }
    }
    Ok(())
}

/// Treats each feature row as a tangent vector at the origin and exp-maps it.
/// Lorentz rows get time coordinate 0 before lifting.
pub fn feature_lift(features: &Tensor, model: Model, k: f64) -> Result<EmbeddingMatrix> {
    Curvature::new(k)?;
    if let Some(i) = features.data().iter().position(|v| !v.is_finite()) {
        return Err(GnnError::NonFinite(format!(
            "feature row {}",
            i / features.cols().max(1)
        )));
    }
    let n = features.rows();
    let mut out = Vec::new();
    for i in 0..n {
        let row = features.row(i);
        match model {
            Model::Poincare => out.extend(poincare::expmap0(row, k)),
            Model::Lorentz => out.extend(lorentz::expmap0(row, k)),
            Model::Klein => {
                return Err(GnnError::Mismatch(
                    "features lift to the Poincaré or Lorentz model".into(),
                ))
            }
        }
    }
    let cols = model.ambient_dim(features.cols());
    EmbeddingMatrix::new(model, k, Tensor::from_vec(n, cols, out), "lift", "")
}

/// Moves a ball point between curvatures, scaling its distance from the
/// origin by `√(K_from/K_to)`.
pub fn curvature_change(x: &[f64], k_from: f64, k_to: f64) -> Result<Vec<f64>> {
    Curvature::new(k_from)?;
    Curvature::new(k_to)?;
    let s = (k_from / k_to).sqrt();
    let t: Vec<f64> = poincare::logmap0(x, k_from)
        .into_iter()
        .map(|v| v * s)
        .collect();
    Ok(poincare::expmap0(&t, k_to))
}

/// Fermi-Dirac edge probabilities for the requested pairs.
pub fn fermi_dirac_decoder(
    emb: &EmbeddingMatrix,
    pairs: &[(usize, usize)],
    fd: FermiDirac,
) -> Result<Vec<f64>> {
    let n = emb.n();
    pairs
        .iter()
        .map(|&(i, j)| {
            if i >= n || j >= n {
                return Err(GnnError::Shape(format!("pair ({i}, {j}) with {n} nodes")));
            }
            Ok(fermi_dirac_prob(emb.distance(i, j), fd))
        })
        .collect()
}

/// `L_REC-A + λ·L_REC-X` on the ball: binary cross-entropy of the decoder
/// over `pos` and `neg` pairs plus the mean squared attribute error.
#[allow(clippy::too_many_arguments)]
pub fn hgcae_loss(
    emb: &Tensor,
    k: f64,
    pos: &[(usize, usize)],
    neg: &[(usize, usize)],
    recon: &Tensor,
    features: &Tensor,
    lambda: f64,
    fd: FermiDirac,
) -> Result<f64> {
    if lambda < 0.0 {
        return Err(GnnError::NegativeLambda(lambda));
    }
    if recon.shape() != features.shape() {
        return Err(GnnError::Shape(format!(
            "reconstruction {:?} vs features {:?}",
            recon.shape(),
            features.shape()
        )));
    }
    let n = emb.rows();
    let mut bce = 0.0;
    for (pairs, y) in [(pos, true), (neg, false)] {
        for &(i, j) in pairs {
            if i >= n || j >= n {
                return Err(GnnError::Shape(format!("pair ({i}, {j}) with {n} nodes")));
            }
            let z = (fd.r - poincare::distance(emb.row(i), emb.row(j), k)) / fd.t;
            bce -= crate::diff::log_sigmoid(if y { z } else { -z });
        }
    }
    let count = pos.len() + neg.len();
    let rec_a = if count == 0 { 0.0 } else { bce / count as f64 };
    let mse = recon
        .data()
        .iter()
        .zip(features.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / recon.len().max(1) as f64;
    Ok(rec_a + lambda * mse)
}
