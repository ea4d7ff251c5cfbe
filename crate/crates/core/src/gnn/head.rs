//! Logistic regression on origin-tangent embeddings.

use serde::{Deserialize, Serialize};

use super::{EmbeddingMatrix, GnnError, Result};
use crate::diff::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            lr: 0.5,
            l2: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadFit {
    pub w: Vec<f64>,
    pub b: f64,
    /// Logit of the positive class for every node.
    pub logits: Vec<f64>,
    pub train_accuracy: f64,
}

impl HeadFit {
    pub fn probabilities(&self) -> Vec<f64> {
        self.logits.iter().map(|&z| sigmoid(z)).collect()
    }
}

/// Full-batch gradient descent on the mean logistic loss of the train nodes.
pub fn tangent_logreg_head(
    emb: &EmbeddingMatrix,
    labels: &[u8],
    train: &[usize],
    cfg: &HeadConfig,
) -> Result<HeadFit> {
    let n = emb.n();
    if labels.len() != n {
        return Err(GnnError::Shape(format!(
            "{} labels for {n} nodes",
            labels.len()
        )));
    }
    let mut train = train.to_vec();
    train.sort_unstable();
    train.dedup();
    if let Some(&i) = train.iter().find(|&&i| i >= n) {
        return Err(GnnError::Shape(format!("train index {i} with {n} nodes")));
    }
    let pos = train.iter().filter(|&&i| labels[i] == 1).count();
    if pos == 0 || pos == train.len() {
        return Err(GnnError::SingleClass);
    }
    let x = emb.tangent();
    let d = x.cols();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let m = train.len() as f64;
    for _ in 0..cfg.epochs {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for &i in &train {
            let row = x.row(i);
            let z = b + row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let e = sigmoid(z) - f64::from(labels[i]);
            for (g, a) in gw.iter_mut().zip(row) {
                *g += e * a;
            }
            gb += e;
        }
        for (wj, g) in w.iter_mut().zip(&gw) {
            *wj -= cfg.lr * (g / m + cfg.l2 * *wj);
        }
        b -= cfg.lr * gb / m;
    }
    let logits: Vec<f64> = (0..n)
        .map(|i| b + x.row(i).iter().zip(&w).map(|(a, c)| a * c).sum::<f64>())
        .collect();
    let correct = train
        .iter()
        .filter(|&&i| u8::from(logits[i] > 0.0) == labels[i])
        .count();
    if !logits.iter().all(|z| z.is_finite()) {
        return Err(GnnError::NonFinite("head logits".into()));
    }
    Ok(HeadFit {
        w,
        b,
        logits,
        train_accuracy: correct as f64 / m,
    })
}
