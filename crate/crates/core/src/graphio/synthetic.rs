//! Seeded synthetic graphs: a two-block benchmark and a Cora-shaped stand-in.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Graph, GraphError, Result};
use crate::tensor::Tensor;

/// Two-block stochastic block model; block 1 is labelled malicious.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoBlock {
    pub nodes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub noise: f64,
    pub malicious_fraction: f64,
}

impl Default for TwoBlock {
    fn default() -> Self {
        Self {
            nodes: 100,
            p_in: 0.2,
            p_out: 0.02,
            feature_dim: 16,
            noise: 0.1,
            malicious_fraction: 0.5,
        }
    }
}

impl TwoBlock {
    /// Feature `j` of node `i` is `[j == block(i)] + N(0, noise)`.
    pub fn generate(&self, seed: u64) -> Result<Graph> {
        let n = self.nodes;
        if n < 2 || self.feature_dim < 2 {
            return Err(GraphError::Invalid(
                "two-block graph needs ≥ 2 nodes and ≥ 2 feature dims".into(),
            ));
        }
        for p in [self.p_in, self.p_out, self.malicious_fraction] {
            if !(0.0..=1.0).contains(&p) {
                return Err(GraphError::Invalid(format!(
                    "probability {p} outside [0, 1]"
                )));
            }
        }
        let noise = Normal::new(0.0, self.noise).map_err(|e| GraphError::Invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_bad = (self.malicious_fraction * n as f64).round() as usize;
        let block: Vec<u8> = (0..n).map(|i| u8::from(i >= n - n_bad)).collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let p = if block[i] == block[j] {
                    self.p_in
                } else {
                    self.p_out
                };
                if rng.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        let mut x = Tensor::zeros(n, self.feature_dim);
        for i in 0..n {
            for j in 0..self.feature_dim {
                let base = if j == block[i] as usize { 1.0 } else { 0.0 };
                x.set(i, j, base + noise.sample(&mut rng));
            }
        }
        Graph::new((0..n as i64).collect(), edges, x, Some(block))
    }
}

/// Citation-network stand-in with Cora's published shape: 2708 nodes, 5429
/// undirected edges, 1433 sparse binary features over 7 topics. Topics 0 and
/// 6 are labelled 1.
pub fn cora_like(seed: u64) -> Result<Graph> {
    const SIZES: [usize; 7] = [351, 217, 418, 818, 426, 298, 180];
    const EDGES: usize = 5429;
    const WORDS: usize = 1433;
    const WORDS_PER_NODE: usize = 18;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topic: Vec<usize> = SIZES
        .iter()
        .enumerate()
        .flat_map(|(t, &s)| std::iter::repeat_n(t, s))
        .collect();
    let n = topic.len();
    let members: Vec<Vec<usize>> = (0..7)
        .map(|t| (0..n).filter(|&i| topic[i] == t).collect())
        .collect();
    let mut seen = HashSet::new();
    let mut edges = Vec::with_capacity(EDGES);
    let mut add = |u: usize, v: usize, edges: &mut Vec<(usize, usize)>| {
        if u != v && seen.insert((u.min(v), u.max(v))) {
            edges.push((u.min(v), u.max(v)));
        }
    };
    for i in 0..n {
        let m = &members[topic[i]];
        let mut j = i;
        while j == i {
            j = m[rng.random_range(0..m.len())];
        }
        add(i, j, &mut edges);
    }
    while edges.len() < EDGES {
        let u = rng.random_range(0..n);
        let v = if rng.random::<f64>() < 0.8 {
            let m = &members[topic[u]];
            m[rng.random_range(0..m.len())]
        } else {
            rng.random_range(0..n)
        };
        add(u, v, &mut edges);
    }
    let span = WORDS / 7;
    let mut x = Tensor::zeros(n, WORDS);
    for i in 0..n {
        for _ in 0..WORDS_PER_NODE {
            let w = if rng.random::<f64>() < 0.6 {
                topic[i] * span + rng.random_range(0..span)
            } else {
                rng.random_range(0..WORDS)
            };
            x.set(i, w, 1.0);
        }
    }
    let labels = topic.iter().map(|&t| u8::from(t == 0 || t == 6)).collect();
    let ids = (0..n as i64).map(|i| 31 + 17 * i).collect();
    Graph::new(ids, edges, x, Some(labels))
}
