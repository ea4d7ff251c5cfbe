//! Diagonal-covariance Gaussian mixture fitted by EM.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{majority, AnomalyError, DetectorConfig, Prediction, Result, TrainSet};
use crate::tensor::Tensor;

/// Variances below this mark a collapsed component.
pub const VAR_FLOOR: f64 = 1e-9;
/// Re-spreads allowed per fit before giving up.
pub const MAX_COLLAPSES: usize = 3;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub weights: Vec<f64>,
    /// `components × d`.
    pub means: Tensor,
    /// `components × d`, diagonal entries.
    pub variances: Tensor,
    /// Dimensions with nonzero training variance; the rest are left out of the
    /// density.
    pub active: Vec<bool>,
    /// Mean per-row log-likelihood at each E-step since the last re-spread.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub collapses: usize,
}

impl GmmParams {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    fn log_joint(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            let (m, v) = (self.means.row(j), self.variances.row(j));
            let mut s = 0.0;
            for d in 0..x.len() {
                if self.active[d] {
                    let e = x[d] - m[d];
                    s += LN_2PI + v[d].ln() + e * e / v[d];
                }
            }
            *o = self.weights[j].ln() - 0.5 * s;
        }
    }
}

/// Log responsibilities (row-normalised in log space) and per-row
/// log-likelihoods.
fn e_step(p: &GmmParams, x: &Tensor) -> (Tensor, Vec<f64>) {
    let k = p.components();
    let mut logr = Tensor::zeros(x.rows(), k);
    let mut lse = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let row = logr.row_mut(i);
        p.log_joint(x.row(i), row);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let l = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= l);
        lse.push(l);
    }
    (logr, lse)
}

/// Posterior component probabilities, one row per query.
pub fn responsibilities(p: &GmmParams, x: &Tensor) -> Tensor {
    e_step(p, x).0.map(f64::exp)
}

/// Closed-form M-step; `Err(j)` names a collapsed component.
fn m_step(logr: &Tensor, x: &Tensor, prev: &GmmParams) -> std::result::Result<GmmParams, usize> {
    let (n, d, k) = (x.rows(), x.cols(), prev.components());
    let r = logr.map(f64::exp);
    let mut weights = vec![0.0; k];
    let mut means = Tensor::zeros(k, d);
    let mut variances = Tensor::zeros(k, d);
    for j in 0..k {
        let nk: f64 = (0..n).map(|i| r.get(i, j)).sum();
        if nk <= f64::MIN_POSITIVE {
            return Err(j);
        }
        weights[j] = nk / n as f64;
        let mu = means.row_mut(j);
        for i in 0..n {
            let ri = r.get(i, j);
            mu.iter_mut().zip(x.row(i)).for_each(|(m, v)| *m += ri * v);
        }
        mu.iter_mut().for_each(|m| *m /= nk);
        let mu = means.row(j).to_vec();
        let var = variances.row_mut(j);
        for i in 0..n {
            let ri = r.get(i, j);
            for (c, v) in var.iter_mut().enumerate() {
                let e = x.get(i, c) - mu[c];
                *v += ri * e * e;
            }
        }
        var.iter_mut().for_each(|v| *v /= nk);
        for c in 0..d {
            if !prev.active[c] {
                var[c] = prev.variances.get(j, c);
            } else if var[c] < VAR_FLOOR {
                return Err(j);
            }
        }
    }
    Ok(GmmParams {
        weights,
        means,
        variances,
        ..prev.clone()
    })
}

fn column_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = x.shape();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        mean.iter_mut().zip(x.row(i)).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for i in 0..n {
        for c in 0..d {
            let e = x.get(i, c) - mean[c];
            var[c] += e * e;
        }
    }
    var.iter_mut().for_each(|v| *v /= n as f64);
    (mean, var)
}

/// k-means++ seeding: the first mean is a uniform row, each further one is
/// drawn with probability proportional to its squared distance from the
/// nearest chosen mean.
fn kmeans_pp(x: &Tensor, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = x.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = vec![f64::INFINITY; n];
    while chosen.len() < k {
        let last = x.row(*chosen.last().expect("nonempty"));
        for (i, dv) in d2.iter_mut().enumerate() {
            let e: f64 = x
                .row(i)
                .iter()
                .zip(last)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            *dv = dv.min(e);
        }
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &dv) in d2.iter().enumerate() {
                acc += dv;
                if dv > 0.0 && acc > u {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        chosen.push(pick);
    }
    chosen
}

/// Fits a diagonal mixture by EM from a k-means++ start. Stops when the mean
/// log-likelihood gains less than `cfg.tol` or after `cfg.max_iter` steps.
pub fn gmm_fit(x: &Tensor, cfg: &DetectorConfig) -> Result<GmmParams> {
    let k = cfg.components;
    if k == 0 {
        return Err(AnomalyError::Config("components must be ≥ 1".into()));
    }
    if x.rows() == 0 {
        return Err(AnomalyError::EmptyTrain);
    }
    if x.rows() < k {
        return Err(AnomalyError::TooFewTrain {
            needed: k,
            got: x.rows(),
        });
    }
    if !x.all_finite() {
        return Err(AnomalyError::Shape(
            "non-finite training coordinates".into(),
        ));
    }
    let (_, var) = column_stats(x);
    let active: Vec<bool> = var.iter().map(|&v| v >= VAR_FLOOR).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds = kmeans_pp(x, k, &mut rng);
    let init = GmmParams {
        weights: vec![1.0 / k as f64; k],
        means: super::select_rows(x, &seeds),
        variances: Tensor::from_vec(
            k,
            x.cols(),
            (0..k).flat_map(|_| var.iter().copied()).collect(),
        ),
        active,
        log_likelihood: Vec::new(),
        iterations: 0,
        converged: false,
        collapses: 0,
    };
    em(x, init, cfg.max_iter, cfg.tol)
}

pub(crate) fn em(x: &Tensor, mut p: GmmParams, max_iter: usize, tol: f64) -> Result<GmmParams> {
    let (_, global_var) = column_stats(x);
    while p.iterations < max_iter {
        let (logr, lse) = e_step(&p, x);
        let ll = lse.iter().sum::<f64>() / lse.len() as f64;
        let done = p.log_likelihood.last().is_some_and(|&prev| ll - prev < tol);
        p.log_likelihood.push(ll);
        if done {
            p.converged = true;
            return Ok(p);
        }
        p.iterations += 1;
        match m_step(&logr, x, &p) {
            Ok(next) => p = next,
            Err(j) => {
                p.collapses += 1;
                if p.collapses > MAX_COLLAPSES {
                    return Err(AnomalyError::RepeatedCollapse {
                        component: j,
                        times: p.collapses,
                    });
                }
                let worst = (0..lse.len())
                    .min_by(|&a, &b| lse[a].total_cmp(&lse[b]).then(a.cmp(&b)))
                    .expect("nonempty");
                log::warn!("mixture component {j} collapsed; re-spreading at row {worst}");
                p.means.row_mut(j).copy_from_slice(x.row(worst));
                p.variances.row_mut(j).copy_from_slice(&global_var);
                p.weights[j] = 1.0 / p.components() as f64;
                let s: f64 = p.weights.iter().sum();
                p.weights.iter_mut().for_each(|w| *w /= s);
                p.log_likelihood.clear();
            }
        }
    }
    let (_, lse) = e_step(&p, x);
    p.log_likelihood
        .push(lse.iter().sum::<f64>() / lse.len() as f64);
    Ok(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmPrediction {
    pub prediction: Prediction,
    /// Label assigned to each component.
    pub component_labels: Vec<u8>,
    pub responsibilities: Tensor,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Labels every component by the majority label of the training rows it
/// claims, then labels queries by their most responsible component. The
/// score is the responsibility mass on malicious components.
pub fn gmm_classify(p: &GmmParams, train: &TrainSet, query: &Tensor) -> Result<GmmPrediction> {
    if train.is_empty() {
        return Err(AnomalyError::EmptyTrain);
    }
    let d = p.means.cols();
    if train.x.cols() != d || (query.rows() > 0 && query.cols() != d) {
        return Err(AnomalyError::Shape(format!("mixture is {d}-dimensional")));
    }
    let global = majority(train.y);
    let rt = responsibilities(p, train.x);
    let mut claimed: Vec<Vec<u8>> = vec![Vec::new(); p.components()];
    for i in 0..train.len() {
        claimed[argmax(rt.row(i))].push(train.y[i]);
    }
    let component_labels: Vec<u8> = claimed
        .iter()
        .map(|c| if c.is_empty() { global } else { majority(c) })
        .collect();
    let rq = responsibilities(p, query);
    let mut labels = Vec::with_capacity(query.rows());
    let mut scores = Vec::with_capacity(query.rows());
    for i in 0..query.rows() {
        let r = rq.row(i);
        labels.push(component_labels[argmax(r)]);
        let s: f64 = r
            .iter()
            .zip(&component_labels)
            .filter(|(_, &l)| l == 1)
            .map(|(v, _)| v)
            .sum();
        scores.push(s.clamp(0.0, 1.0));
    }
    Ok(GmmPrediction {
        prediction: Prediction { labels, scores },
        component_labels,
        responsibilities: rq,
    })
}
