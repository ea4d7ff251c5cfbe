//! Embedding CSV: header `node_id,model,k,x0,…,x{m-1}`, one row per node.
//! Reals are written in shortest round-trip form, so a file read back gives
//! the identical matrix.

use crate::gnn::{EmbeddingMatrix, GnnError};
use crate::manifold::Model;
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum EmbFileError {
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("{0} node ids for {1} rows")]
    Ids(usize, usize),
    #[error(transparent)]
    Invalid(#[from] GnnError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, EmbFileError>;

pub fn write_embedding(emb: &EmbeddingMatrix, node_ids: &[i64]) -> Result<String> {
    if node_ids.len() != emb.n() {
        return Err(EmbFileError::Ids(node_ids.len(), emb.n()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let m = emb.points.cols();
    let mut header = vec!["node_id".to_string(), "model".into(), "k".into()];
    header.extend((0..m).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    let (tag, k) = (emb.model.tag(), emb.k.to_string());
    for (i, id) in node_ids.iter().enumerate() {
        let mut rec = vec![id.to_string(), tag.to_string(), k.clone()];
        rec.extend(emb.points.row(i).iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| EmbFileError::Parse {
        line: 0,
        detail: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Parses an embedding file; every row must share one model and `K`.
pub fn read_embedding(text: &str) -> Result<(Vec<i64>, EmbeddingMatrix)> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = r.headers()?.clone();
    let cols = header.len();
    let err = |line: usize, detail: String| EmbFileError::Parse { line, detail };
    if cols < 4 || &header[0] != "node_id" || &header[1] != "model" || &header[2] != "k" {
        return Err(err(1, "expected header node_id,model,k,x0,...".into()));
    }
    for (j, h) in header.iter().skip(3).enumerate() {
        if h != format!("x{j}") {
            return Err(err(
                1,
                format!("column {} should be x{j}, found '{h}'", j + 4),
            ));
        }
    }
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut shared: Option<(Model, f64)> = None;
    for (row, rec) in r.records().enumerate() {
        let line = row + 2;
        let rec = rec?;
        let id: i64 = rec[0]
            .trim()
            .parse()
            .map_err(|_| err(line, format!("bad node id '{}'", &rec[0])))?;
        let model: Model = rec[1]
            .trim()
            .parse()
            .map_err(|e: String| err(line, e))?;
        let k: f64 = rec[2]
            .trim()
            .parse()
            .map_err(|_| err(line, format!("bad curvature '{}'", &rec[2])))?;
        match shared {
            None => shared = Some((model, k)),
            Some((m0, k0)) if m0 != model || k0 != k => {
                return Err(err(
                    line,
                    format!("row has {model} K={k}, file started with {m0} K={k0}"),
                ));
            }
            _ => {}
        }
        for j in 3..cols {
            let v: f64 = rec[j]
                .trim()
                .parse()
                .map_err(|_| err(line, format!("bad coordinate '{}'", &rec[j])))?;
            data.push(v);
        }
        ids.push(id);
    }
    let (model, k) = shared.ok_or_else(|| err(2, "no embedding rows".into()))?;
    let points = Tensor::from_vec(ids.len(), cols - 3, data);
    let emb = EmbeddingMatrix::new(model, k, points, "file", "")?;
    Ok((ids, emb))
}
