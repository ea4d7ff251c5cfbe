//! Second phase of the pipeline: node embeddings are mapped to Euclidean
//! coordinates and nodes are classified as benign (0) or malicious (1) with
//! a k-nearest-neighbour vote or a diagonal Gaussian mixture.
//!
//! The origin log-map does not preserve pairwise distances, so the
//! Euclidean order of two rows can differ from their hyperbolic order. Only
//! distances to the origin survive the map.

mod gmm;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gmm::{gmm_classify, gmm_fit, responsibilities, GmmParams, GmmPrediction};

use crate::gnn::EmbeddingMatrix;
use crate::graphio::{Split, SplitMask};
use crate::manifold::{klein, lorentz, poincare, Model};
use crate::metrics::{self, MetricsReport};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum AnomalyError {
    #[error("invalid detector config: {0}")]
    Config(String),
    #[error("empty training set")]
    EmptyTrain,
    #[error("need at least {needed} training rows, got {got}")]
    TooFewTrain { needed: usize, got: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("label {0} is not binary")]
    Label(u8),
    #[error("no labels on the graph")]
    MissingLabels,
    #[error("mixture component {component} collapsed {times} times")]
    RepeatedCollapse { component: usize, times: usize },
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
}

pub type Result<T> = std::result::Result<T, AnomalyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Knn,
    Gmm,
}

impl DetectorKind {
    /// Suffix used in report rows, e.g. `HGCAE+KNN`.
    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Knn => "KNN",
            DetectorKind::Gmm => "GM",
        }
    }
}

impl FromStr for DetectorKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "knn" => Ok(DetectorKind::Knn),
            "gmm" | "gm" => Ok(DetectorKind::Gmm),
            other => Err(format!("unknown detector '{other}'")),
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DetectorKind::Knn => "knn",
            DetectorKind::Gmm => "gmm",
        })
    }
}

/// Which coordinates the detector sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceKind {
    /// Isometric origin-tangent coordinates from [`to_euclidean`].
    #[default]
    EuclideanAfterLog,
    /// Euclidean distance on the ambient coordinates as stored.
    EuclideanRaw,
    /// Geodesic distance of the embedding's model (kNN only).
    Hyperbolic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Covariance {
    #[default]
    Diagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    pub k: usize,
    pub components: usize,
    pub covariance: Covariance,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    pub distance: DistanceKind,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            kind: DetectorKind::Knn,
            k: 5,
            components: 2,
            covariance: Covariance::Diagonal,
            max_iter: 200,
            tol: 1e-6,
            seed: 0,
            distance: DistanceKind::EuclideanAfterLog,
        }
    }
}

impl DetectorConfig {
    pub fn new(kind: DetectorKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AnomalyError::Config(m));
        if self.k == 0 || self.k.is_multiple_of(2) {
            return bad(format!("k must be odd and ≥ 1, got {}", self.k));
        }
        if self.components == 0 {
            return bad("components must be ≥ 1".into());
        }
        if self.max_iter == 0 {
            return bad("max_iter must be ≥ 1".into());
        }
        if !(self.tol.is_finite() && self.tol >= 0.0) {
            return bad(format!("tol must be finite and ≥ 0, got {}", self.tol));
        }
        if self.kind == DetectorKind::Gmm && self.distance == DistanceKind::Hyperbolic {
            return bad("the Gaussian mixture needs Euclidean coordinates".into());
        }
        Ok(())
    }
}

/// Origin log-map of every node, scaled so that each row's norm equals the
/// node's hyperbolic distance from the origin.
pub fn to_euclidean(emb: &EmbeddingMatrix) -> Tensor {
    let mut t = emb.tangent();
    if emb.model == Model::Poincare {
        let lam0 = poincare::conformal_factor(&vec![0.0; emb.dim()], emb.k);
        t.data_mut().iter_mut().for_each(|v| *v *= lam0);
    }
    t
}

/// How row distances are measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Euclidean,
    Hyperbolic { model: Model, k: f64 },
}

impl Metric {
    /// Any monotone function of the distance; Euclidean skips the root.
    fn rank_key(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
            Metric::Hyperbolic {
                model: Model::Poincare,
                k,
            } => poincare::distance(a, b, k),
            Metric::Hyperbolic {
                model: Model::Lorentz,
                k,
            } => lorentz::distance(a, b, k),
            Metric::Hyperbolic {
                model: Model::Klein,
                k,
            } => klein::distance(a, b, k),
        }
    }
}

/// Labelled training rows; `ids` are the original node ids used to break
/// distance ties.
#[derive(Debug, Clone, Copy)]
pub struct TrainSet<'a> {
    pub x: &'a Tensor,
    pub y: &'a [u8],
    pub ids: &'a [usize],
}

impl<'a> TrainSet<'a> {
    pub fn new(x: &'a Tensor, y: &'a [u8], ids: &'a [usize]) -> Result<Self> {
        if x.rows() != y.len() || y.len() != ids.len() {
            return Err(AnomalyError::Shape(format!(
                "{} rows, {} labels, {} ids",
                x.rows(),
                y.len(),
                ids.len()
            )));
        }
        if let Some(&l) = y.iter().find(|&&l| l > 1) {
            return Err(AnomalyError::Label(l));
        }
        Ok(Self { x, y, ids })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Hard labels and malicious-class scores for a batch of queries.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<u8>,
    pub scores: Vec<f64>,
}

/// Majority label; an exact tie goes to benign.
pub fn majority(labels: &[u8]) -> u8 {
    let ones = labels.iter().filter(|&&l| l == 1).count();
    u8::from(2 * ones > labels.len())
}

/// Majority vote of the `k` nearest training rows. Equal distances are
/// ordered by node id.
pub fn knn_classify(
    train: &TrainSet,
    query: &Tensor,
    k: usize,
    metric: Metric,
) -> Result<Prediction> {
    if train.is_empty() {
        return Err(AnomalyError::EmptyTrain);
    }
    if k == 0 || k.is_multiple_of(2) {
        return Err(AnomalyError::Config(format!(
            "k must be odd and ≥ 1, got {k}"
        )));
    }
    if k > train.len() {
        return Err(AnomalyError::TooFewTrain {
            needed: k,
            got: train.len(),
        });
    }
    if query.rows() > 0 && query.cols() != train.x.cols() {
        return Err(AnomalyError::Shape(format!(
            "query has {} columns, training rows {}",
            query.cols(),
            train.x.cols()
        )));
    }
    let mut labels = Vec::with_capacity(query.rows());
    let mut scores = Vec::with_capacity(query.rows());
    let mut order: Vec<(f64, usize, u8)> = Vec::with_capacity(train.len());
    for q in 0..query.rows() {
        let row = query.row(q);
        order.clear();
        order.extend((0..train.len()).map(|i| {
            (
                metric.rank_key(row, train.x.row(i)),
                train.ids[i],
                train.y[i],
            )
        }));
        let by_key =
            |a: &(f64, usize, u8), b: &(f64, usize, u8)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < order.len() {
            order.select_nth_unstable_by(k - 1, by_key);
        }
        let mal = order[..k].iter().filter(|e| e.2 == 1).count();
        labels.push(u8::from(2 * mal > k));
        scores.push(mal as f64 / k as f64);
    }
    Ok(Prediction { labels, scores })
}

/// Predictions on one split, in node order.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPredictions {
    pub split: Split,
    pub nodes: Vec<usize>,
    pub y_true: Vec<u8>,
    pub y_pred: Vec<u8>,
    pub scores: Vec<f64>,
}

impl SplitPredictions {
    pub fn report(&self, model: &str, tt_seconds: Option<f64>) -> Result<MetricsReport> {
        Ok(MetricsReport::evaluate(
            model,
            &self.y_true,
            &self.y_pred,
            &self.scores,
            tt_seconds,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub kind: DetectorKind,
    pub val: SplitPredictions,
    pub test: SplitPredictions,
    /// Wall-clock seconds for fitting and scoring.
    pub seconds: f64,
    pub gmm: Option<GmmParams>,
}

/// Fits the detector on the train split and scores the val and test splits.
pub fn detect(
    emb: &EmbeddingMatrix,
    labels: &[u8],
    splits: &SplitMask,
    cfg: &DetectorConfig,
) -> Result<Detection> {
    cfg.validate()?;
    let n = emb.n();
    if labels.len() != n || splits.train.len() != n {
        return Err(AnomalyError::Shape(format!(
            "{n} embeddings, {} labels, {} split entries",
            labels.len(),
            splits.train.len()
        )));
    }
    let (out, seconds) = metrics::time_block(|| -> Result<_> {
        let (x, metric) = match cfg.distance {
            DistanceKind::EuclideanAfterLog => (to_euclidean(emb), Metric::Euclidean),
            DistanceKind::EuclideanRaw => (emb.points.clone(), Metric::Euclidean),
            DistanceKind::Hyperbolic => (
                emb.points.clone(),
                Metric::Hyperbolic {
                    model: emb.model,
                    k: emb.k,
                },
            ),
        };
        let train_ids = splits.indices(Split::Train);
        let train_x = select_rows(&x, &train_ids);
        let train_y: Vec<u8> = train_ids.iter().map(|&i| labels[i]).collect();
        let train = TrainSet::new(&train_x, &train_y, &train_ids)?;
        if train.is_empty() {
            return Err(AnomalyError::EmptyTrain);
        }
        let params = match cfg.kind {
            DetectorKind::Gmm => Some(gmm_fit(&train_x, cfg)?),
            DetectorKind::Knn => None,
        };
        let score = |split: Split| -> Result<SplitPredictions> {
            let nodes = splits.indices(split);
            let q = select_rows(&x, &nodes);
            let p = match &params {
                Some(g) => gmm_classify(g, &train, &q)?.prediction,
                None => knn_classify(&train, &q, cfg.k, metric)?,
            };
            let y_true = nodes.iter().map(|&i| labels[i]).collect();
            Ok(SplitPredictions {
                split,
                nodes,
                y_true,
                y_pred: p.labels,
                scores: p.scores,
            })
        };
        let val = score(Split::Val)?;
        let test = score(Split::Test)?;
        Ok((val, test, params))
    });
    let (val, test, gmm) = out?;
    Ok(Detection {
        kind: cfg.kind,
        val,
        test,
        seconds,
        gmm,
    })
}

pub(crate) fn select_rows(x: &Tensor, rows: &[usize]) -> Tensor {
    let c = x.cols();
    let mut out = Vec::with_capacity(rows.len() * c);
    for &i in rows {
        out.extend_from_slice(x.row(i));
    }
    Tensor::from_vec(rows.len(), c, out)
}

/// Predictions CSV with columns `node_id,split,y_true,y_pred,score`, val rows
/// before test rows.
pub fn predictions_csv(det: &Detection, node_ids: &[i64]) -> Result<String> {
    splits_csv(&[&det.val, &det.test], node_ids)
}

/// Predictions CSV over any sequence of splits, in the order given.
pub fn splits_csv(splits: &[&SplitPredictions], node_ids: &[i64]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| AnomalyError::Shape(e.to_string());
    w.write_record(["node_id", "split", "y_true", "y_pred", "score"])
        .map_err(io)?;
    for sp in splits {
        for (j, &i) in sp.nodes.iter().enumerate() {
            let id = node_ids
                .get(i)
                .ok_or_else(|| AnomalyError::Shape(format!("no id for node {i}")))?;
            w.write_record([
                id.to_string(),
                sp.split.tag().to_string(),
                sp.y_true[j].to_string(),
                sp.y_pred[j].to_string(),
                sp.scores[j].to_string(),
            ])
            .map_err(io)?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| AnomalyError::Shape(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
