//! Graphs, file loaders, Ã normalization and stratified splits.

pub mod synthetic;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diff::hyper::EdgeIndex;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: weighted edges are not supported (expected \"src dst\")")]
    Weighted { line: usize },
    #[error("feature file has {found} rows, graph has {expected} nodes")]
    RowCount { expected: usize, found: usize },
    #[error("feature file row {row}, column '{column}': '{value}' is not a number")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("feature file row {row}: label '{value}' is not 0 or 1")]
    BadLabel { row: usize, value: String },
    #[error("feature file has no row for node {0}")]
    MissingNode(i64),
    #[error("feature file lists node {0} twice")]
    DuplicateNode(i64),
    #[error("class {class} has {count} members; at least 3 are needed to stratify")]
    TooFewInClass { class: u8, count: usize },
    #[error("split ratios must be positive and sum to 1, got {0:?}")]
    Ratios([f64; 3]),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, GraphError>;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parsed edge-list file.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeList {
    /// Original id of each compacted node.
    pub node_ids: Vec<i64>,
    /// Undirected edges `(u, v)` with `u < v`, in first-appearance order.
    pub edges: Vec<(usize, usize)>,
    /// Non-comment, non-blank lines read.
    pub records: usize,
}

impl EdgeList {
    pub fn n(&self) -> usize {
        self.node_ids.len()
    }
}

pub fn load_edge_list(path: &Path) -> Result<EdgeList> {
    parse_edge_list(&read(path)?)
}

pub fn parse_edge_list(text: &str) -> Result<EdgeList> {
    let mut index: HashMap<i64, usize> = HashMap::new();
    let mut node_ids = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut edges = Vec::new();
    let mut records = 0;
    let mut id_of = |raw: i64, node_ids: &mut Vec<i64>| {
        *index.entry(raw).or_insert_with(|| {
            node_ids.push(raw);
            node_ids.len() - 1
        })
    };
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        match tokens.len() {
            2 => {}
            3 => return Err(GraphError::Weighted { line: line_no }),
            k => {
                return Err(GraphError::Parse {
                    line: line_no,
                    msg: format!("expected 2 tokens, found {k}"),
                })
            }
        }
        let parse = |t: &str| {
            t.parse::<i64>().map_err(|_| GraphError::Parse {
                line: line_no,
                msg: format!("'{t}' is not an integer node id"),
            })
        };
        let (a, b) = (parse(tokens[0])?, parse(tokens[1])?);
        records += 1;
        let u = id_of(a, &mut node_ids);
        let v = id_of(b, &mut node_ids);
        if u == v {
            continue;
        }
        let key = (u.min(v), u.max(v));
        if seen.insert(key) {
            edges.push(key);
        }
    }
    Ok(EdgeList {
        node_ids,
        edges,
        records,
    })
}

/// Node features and optional binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub features: Tensor,
    pub labels: Option<Vec<u8>>,
    /// Node ids from a leading `node_id` column, in file order.
    pub node_ids: Option<Vec<i64>>,
}

pub fn load_features_labels(path: &Path) -> Result<FeatureTable> {
    parse_features_labels(&read(path)?)
}

/// CSV with a header. An optional first column `node_id` names nodes by their
/// original id; an optional last column `label` holds 0/1.
pub fn parse_features_labels(text: &str) -> Result<FeatureTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let has_id = header
        .first()
        .is_some_and(|h| h.eq_ignore_ascii_case("node_id"));
    let has_label = header.len() > usize::from(has_id)
        && header
            .last()
            .is_some_and(|h| h.eq_ignore_ascii_case("label"));
    let start = usize::from(has_id);
    let end = header.len() - usize::from(has_label);
    let d = end - start;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    let mut rows = 0;
    for (r, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        if has_id {
            let raw = &rec[0];
            ids.push(raw.parse::<i64>().map_err(|_| GraphError::NonNumeric {
                row,
                column: header[0].clone(),
                value: raw.to_string(),
            })?);
        }
        for j in start..end {
            let raw = &rec[j];
            let v: f64 = raw.parse().map_err(|_| GraphError::NonNumeric {
                row,
                column: header[j].clone(),
                value: raw.to_string(),
            })?;
            if !v.is_finite() {
                return Err(GraphError::NonNumeric {
                    row,
                    column: header[j].clone(),
                    value: raw.to_string(),
                });
            }
            data.push(v);
        }
        if has_label {
            let raw = &rec[header.len() - 1];
            let label = match raw.parse::<f64>() {
                Ok(0.0) => 0,
                Ok(1.0) => 1,
                _ => {
                    return Err(GraphError::BadLabel {
                        row,
                        value: raw.to_string(),
                    })
                }
            };
            labels.push(label);
        }
        rows += 1;
    }
    Ok(FeatureTable {
        features: Tensor::from_vec(rows, d, data),
        labels: has_label.then_some(labels),
        node_ids: has_id.then_some(ids),
    })
}

/// Divides each row by its L1 norm; all-zero rows are left unchanged.
pub fn row_normalize(x: &mut Tensor) {
    for i in 0..x.rows() {
        let s: f64 = x.row(i).iter().map(|v| v.abs()).sum();
        if s > 0.0 {
            x.row_mut(i).iter_mut().for_each(|v| *v /= s);
        }
    }
}

/// `Ã = D̃^{−1/2}(A + I)D̃^{−1/2}` stored as weighted in-edges grouped by target.
#[derive(Debug, Clone, PartialEq)]
pub struct NormAdj {
    n: usize,
    offsets: Vec<usize>,
    src: Arc<[usize]>,
    dst: Arc<[usize]>,
    weight: Vec<f64>,
}

impl NormAdj {
    pub fn n(&self) -> usize {
        self.n
    }

    /// `(j, Ã_ij)` for row `i`, including the self-loop, ascending in `j`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.src[r.clone()]
            .iter()
            .copied()
            .zip(self.weight[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(k, _)| k == j).map_or(0.0, |(_, w)| w)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weight
    }

    /// Message-passing index: edge `e` sends from `src[e]` to `dst[e]`.
    pub fn edge_index(&self) -> EdgeIndex {
        EdgeIndex {
            src: self.src.clone(),
            dst: self.dst.clone(),
            nodes: self.n,
        }
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, w) in self.row(i) {
                t.set(i, j, w);
            }
        }
        t
    }
}

/// Sorted neighbor lists of an undirected edge set.
pub fn neighbor_lists(edges: &[(usize, usize)], n: usize) -> Vec<Vec<usize>> {
    let mut nb = vec![Vec::new(); n];
    for &(u, v) in edges {
        nb[u].push(v);
        nb[v].push(u);
    }
    for l in &mut nb {
        l.sort_unstable();
        l.dedup();
    }
    nb
}

pub fn normalize_adjacency(edges: &[(usize, usize)], n: usize) -> NormAdj {
    let nb = neighbor_lists(edges, n);
    let deg: Vec<f64> = nb.iter().map(|l| (l.len() + 1) as f64).collect();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut src = Vec::new();
    let mut dst = Vec::new();
    let mut weight = Vec::new();
    offsets.push(0);
    for (i, l) in nb.iter().enumerate() {
        let mut row: Vec<usize> = l.clone();
        row.push(i);
        row.sort_unstable();
        for j in row {
            src.push(j);
            dst.push(i);
            weight.push(1.0 / (deg[i].sqrt() * deg[j].sqrt()));
        }
        offsets.push(src.len());
    }
    NormAdj {
        n,
        offsets,
        src: src.into(),
        dst: dst.into(),
        weight,
    }
}

/// An undirected, unweighted attributed graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_ids: Vec<i64>,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    features: Tensor,
    labels: Option<Vec<u8>>,
    adj: NormAdj,
}

impl Graph {
    pub fn new(
        node_ids: Vec<i64>,
        edges: Vec<(usize, usize)>,
        features: Tensor,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let n = node_ids.len();
        if n == 0 {
            return Err(GraphError::Invalid("graph has no nodes".into()));
        }
        if features.rows() != n {
            return Err(GraphError::RowCount {
                expected: n,
                found: features.rows(),
            });
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(GraphError::RowCount {
                    expected: n,
                    found: l.len(),
                });
            }
            if let Some(row) = l.iter().position(|&v| v > 1) {
                return Err(GraphError::BadLabel {
                    row: row + 1,
                    value: l[row].to_string(),
                });
            }
        }
        let mut canon = Vec::with_capacity(edges.len());
        let mut seen = std::collections::HashSet::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(GraphError::Invalid(format!(
                    "edge ({u}, {v}) references a node ≥ {n}"
                )));
            }
            if u != v && seen.insert((u.min(v), u.max(v))) {
                canon.push((u.min(v), u.max(v)));
            }
        }
        let neighbors = neighbor_lists(&canon, n);
        let adj = normalize_adjacency(&canon, n);
        Ok(Self {
            node_ids,
            edges: canon,
            neighbors,
            features,
            labels,
            adj,
        })
    }

    pub fn n(&self) -> usize {
        self.node_ids.len()
    }

    pub fn node_ids(&self) -> &[i64] {
        &self.node_ids
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors[u].binary_search(&v).is_ok()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn norm_adj(&self) -> &NormAdj {
        &self.adj
    }
}

/// Loads an edge list and an optional feature/label table.
///
/// Without a feature file every node gets a one-hot identity feature. With a
/// `node_id` column, rows are matched to edge-list ids and ids absent from the
/// edge list become isolated nodes; otherwise row `i` is compacted node `i`.
pub fn load_graph(
    edges_path: &Path,
    features_path: Option<&Path>,
    normalize: bool,
) -> Result<Graph> {
    let el = load_edge_list(edges_path)?;
    let table = features_path.map(load_features_labels).transpose()?;
    assemble(el, table, normalize)
}

pub fn assemble(el: EdgeList, table: Option<FeatureTable>, normalize: bool) -> Result<Graph> {
    let EdgeList {
        mut node_ids,
        edges,
        ..
    } = el;
    let Some(table) = table else {
        let n = node_ids.len();
        return Graph::new(node_ids, edges, Tensor::identity(n), None);
    };
    let (mut features, labels) = match table.node_ids {
        None => {
            if table.features.rows() != node_ids.len() {
                return Err(GraphError::RowCount {
                    expected: node_ids.len(),
                    found: table.features.rows(),
                });
            }
            (table.features, table.labels)
        }
        Some(ids) => {
            let mut row_of: HashMap<i64, usize> = HashMap::with_capacity(ids.len());
            for (r, &id) in ids.iter().enumerate() {
                if row_of.insert(id, r).is_some() {
                    return Err(GraphError::DuplicateNode(id));
                }
            }
            let known: std::collections::HashSet<i64> = node_ids.iter().copied().collect();
            node_ids.extend(ids.iter().copied().filter(|id| !known.contains(id)));
            let d = table.features.cols();
            let mut data = Vec::with_capacity(node_ids.len() * d);
            let mut labels = table
                .labels
                .as_ref()
                .map(|_| Vec::with_capacity(node_ids.len()));
            for id in &node_ids {
                let r = *row_of.get(id).ok_or(GraphError::MissingNode(*id))?;
                data.extend_from_slice(table.features.row(r));
                if let (Some(out), Some(src)) = (labels.as_mut(), table.labels.as_ref()) {
                    out.push(src[r]);
                }
            }
            (Tensor::from_vec(node_ids.len(), d, data), labels)
        }
    };
    if normalize {
        row_normalize(&mut features);
    }
    Graph::new(node_ids, edges, features, labels)
}

/// Writes `src dst` lines using original node ids.
pub fn write_edge_list(graph: &Graph) -> String {
    let mut s = String::new();
    for &(u, v) in graph.edges() {
        s.push_str(&format!("{} {}\n", graph.node_ids[u], graph.node_ids[v]));
    }
    s
}

/// Writes the feature table with `node_id` and, when present, `label` columns.
pub fn write_features(graph: &Graph) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let d = graph.features.cols();
    let mut header = vec!["node_id".to_string()];
    header.extend((0..d).map(|j| format!("f{j}")));
    if graph.labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for i in 0..graph.n() {
        let mut rec = vec![graph.node_ids[i].to_string()];
        rec.extend(graph.features.row(i).iter().map(|v| format!("{v}")));
        if let Some(l) = &graph.labels {
            rec.push(l[i].to_string());
        }
        w.write_record(&rec)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| GraphError::Invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn tag(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Disjoint train/val/test membership over all nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMask {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl SplitMask {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        let m = match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        };
        m.iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn of(&self, i: usize) -> Option<Split> {
        if self.train[i] {
            Some(Split::Train)
        } else if self.val[i] {
            Some(Split::Val)
        } else if self.test[i] {
            Some(Split::Test)
        } else {
            None
        }
    }
}

pub const DEFAULT_RATIOS: [f64; 3] = [0.7, 0.2, 0.1];

/// Largest-remainder apportionment of `total` by `weights` (which sum to 1).
fn apportion(total: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let ideal: Vec<f64> = ratios.iter().map(|r| r * total as f64).collect();
    let mut out = [0usize; 3];
    for (o, q) in out.iter_mut().zip(&ideal) {
        *o = q.floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        (ideal[b] - ideal[b].floor())
            .total_cmp(&(ideal[a] - ideal[a].floor()))
            .then(a.cmp(&b))
    });
    let mut left = total - out.iter().sum::<usize>();
    for &s in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[s] += 1;
        left -= 1;
    }
    out
}

/// One augmenting step of the bipartite assignment of +1 bumps: a row with
/// slack takes a free cell, possibly displacing other rows along a chain of
/// columns until a column with slack is reached.
fn augment(bumped: &mut [[bool; 3]], row_left: &mut [usize], col_left: &mut [usize; 3]) -> bool {
    let rows = bumped.len();
    // parent[r] = (row that took over r's cell, that cell's column)
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; rows];
    let mut visited = vec![false; rows];
    let mut queue = std::collections::VecDeque::new();
    for r in 0..rows {
        if row_left[r] > 0 {
            visited[r] = true;
            queue.push_back(r);
        }
    }
    while let Some(r) = queue.pop_front() {
        for s in 0..3 {
            if bumped[r][s] {
                continue;
            }
            if col_left[s] > 0 {
                bumped[r][s] = true;
                let mut cur = r;
                while let Some((pr, ps)) = parent[cur] {
                    bumped[cur][ps] = false;
                    bumped[pr][ps] = true;
                    cur = pr;
                }
                row_left[cur] -= 1;
                col_left[s] -= 1;
                return true;
            }
            for r2 in 0..rows {
                if !visited[r2] && bumped[r2][s] {
                    visited[r2] = true;
                    parent[r2] = Some((r, s));
                    queue.push_back(r2);
                }
            }
        }
    }
    false
}

/// Stratified split: each class is shuffled with the seed and cut in the
/// given ratios; cell counts are rounded so that both per-class and overall
/// counts stay within one node of their ideal values.
pub fn make_splits(labels: &[u8], seed: u64, ratios: [f64; 3]) -> Result<SplitMask> {
    if ratios.iter().any(|r| !(*r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(GraphError::Ratios(ratios));
    }
    let n = labels.len();
    let mut classes: Vec<u8> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let members: Vec<Vec<usize>> = classes
        .iter()
        .map(|&c| (0..n).filter(|&i| labels[i] == c).collect())
        .collect();
    for (c, m) in classes.iter().zip(&members) {
        if m.len() < 3 {
            return Err(GraphError::TooFewInClass {
                class: *c,
                count: m.len(),
            });
        }
    }
    // controlled rounding of the class × split table
    let totals = apportion(n, &ratios);
    let ideal: Vec<[f64; 3]> = members
        .iter()
        .map(|m| ratios.map(|r| r * m.len() as f64))
        .collect();
    let mut counts: Vec<[usize; 3]> = ideal
        .iter()
        .map(|q| q.map(|v| v.floor() as usize))
        .collect();
    let mut row_left: Vec<usize> = members
        .iter()
        .zip(&counts)
        .map(|(m, c)| m.len() - c.iter().sum::<usize>())
        .collect();
    let mut col_left: [usize; 3] =
        std::array::from_fn(|s| totals[s] - counts.iter().map(|c| c[s]).sum::<usize>());
    let mut cells: Vec<(usize, usize)> = (0..members.len())
        .flat_map(|c| (0..3).map(move |s| (c, s)))
        .collect();
    cells.sort_by(|&(c1, s1), &(c2, s2)| {
        let f1 = ideal[c1][s1] - ideal[c1][s1].floor();
        let f2 = ideal[c2][s2] - ideal[c2][s2].floor();
        f2.total_cmp(&f1).then((c1, s1).cmp(&(c2, s2)))
    });
    // greedy by fractional part, then augmenting paths for whatever is left
    let mut bumped = vec![[false; 3]; members.len()];
    for &(c, s) in &cells {
        if row_left[c] > 0 && col_left[s] > 0 {
            bumped[c][s] = true;
            row_left[c] -= 1;
            col_left[s] -= 1;
        }
    }
    while row_left.iter().any(|&r| r > 0) {
        if !augment(&mut bumped, &mut row_left, &mut col_left) {
            break;
        }
    }
    for (c, row) in bumped.iter().enumerate() {
        for s in 0..3 {
            counts[c][s] += usize::from(row[s]);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = SplitMask {
        train: vec![false; n],
        val: vec![false; n],
        test: vec![false; n],
    };
    for (m, cnt) in members.iter().zip(&counts) {
        let mut perm = m.clone();
        perm.shuffle(&mut rng);
        let (a, b) = (cnt[0], cnt[0] + cnt[1]);
        for (k, &i) in perm.iter().enumerate() {
            match k {
                k if k < a => mask.train[i] = true,
                k if k < b => mask.val[i] = true,
                _ => mask.test[i] = true,
            }
        }
    }
    Ok(mask)
}
