//! The verbs: embed, detect, run, check, synth.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use ghyp_core::anomaly::{self, AnomalyError, DetectorKind, SplitPredictions};
use ghyp_core::embfile;
use ghyp_core::gnn::{self, Checkpoint, EmbeddingMatrix, GnnError, Task};
use ghyp_core::graphio::{self, synthetic, Graph, Split, SplitMask};
use ghyp_core::manifold::Model;
use ghyp_core::metrics::{self, MetricsReport};
use ghyp_core::shallow;
use ghyp_core::suites::{self, SuiteReport};
use serde_json::json;

use crate::artifacts::{config_hash, read_input, sha256_hex, FileDigest, Manifest, Staged, TOOL};
use crate::config::{self, DetectorSection, ExperimentConfig, Format, ModelSection, Overrides};
use crate::CliError;

fn gnn_err(stage: &'static str, e: GnnError) -> CliError {
    match e {
        GnnError::Config(_)
        | GnnError::Mismatch(_)
        | GnnError::MissingLabels
        | GnnError::SingleClass
        | GnnError::NegativeLambda(_)
        | GnnError::Graph(_) => CliError::Invalid(format!("{stage}: {e}")),
        other => CliError::runtime(stage, other),
    }
}

fn anomaly_err(stage: &'static str, e: AnomalyError) -> CliError {
    match e {
        AnomalyError::RepeatedCollapse { .. } | AnomalyError::Metrics(_) => {
            CliError::runtime(stage, e)
        }
        other => CliError::Invalid(format!("{stage}: {other}")),
    }
}

fn graph_err(e: graphio::GraphError) -> CliError {
    CliError::Invalid(format!("data: {e}"))
}

fn render(rows: &[MetricsReport], format: Format) -> String {
    match format {
        Format::Csv => metrics::report_csv(rows),
        Format::Markdown => metrics::report_markdown(rows),
    }
}

fn to_json(v: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// Phase-one products shared by `embed` and `run`.
struct PhaseOne {
    graph: Graph,
    splits: Option<SplitMask>,
    embedding: EmbeddingMatrix,
    checkpoint: Option<String>,
    /// Head probabilities for supervised kinds.
    head: Option<Vec<f64>>,
    seconds: f64,
}

fn phase_one(cfg: &ExperimentConfig) -> Result<PhaseOne, CliError> {
    cfg.check_paths()?;
    let graph = graphio::load_graph(
        &cfg.data.edges,
        cfg.data.features.as_deref(),
        cfg.data.normalize,
    )
    .map_err(graph_err)?;
    let splits = match graph.labels() {
        Some(y) => Some(graphio::make_splits(y, cfg.seed, cfg.data.split).map_err(graph_err)?),
        None => None,
    };
    match &cfg.model {
        ModelSection::Gnn(m) => {
            if m.task() == Task::NodeClassification && splits.is_none() {
                return Err(CliError::Invalid(format!(
                    "embed: {} classifies nodes and needs a [data] features file with a label column",
                    m.kind.name()
                )));
            }
            let out =
                gnn::train_model(&graph, m, splits.as_ref()).map_err(|e| gnn_err("embed", e))?;
            let ckpt = Checkpoint::new(m, &out, graph.features().cols())
                .to_json()
                .map_err(|e| gnn_err("embed", e))?;
            Ok(PhaseOne {
                seconds: out.train_seconds,
                head: out.scores,
                embedding: out.embedding,
                checkpoint: Some(ckpt),
                splits,
                graph,
            })
        }
        ModelSection::Shallow(s) => {
            let res = shallow::train_shallow(&graph, s).map_err(|e| match e {
                shallow::ShallowError::Config(_) | shallow::ShallowError::NoEdges => {
                    CliError::Invalid(format!("embed: {e}"))
                }
                other => CliError::runtime("embed", other),
            })?;
            let hash = sha256_hex(serde_json::to_string(s).expect("serializable").as_bytes());
            let embedding = EmbeddingMatrix::new(
                Model::Poincare,
                s.curvature,
                res.embedding,
                "shallow",
                &hash,
            )
            .map_err(|e| gnn_err("embed", e))?;
            Ok(PhaseOne {
                seconds: res.train_seconds,
                head: None,
                embedding,
                checkpoint: None,
                splits,
                graph,
            })
        }
    }
}

/// Hash of the resolved experiment with input paths replaced by their
/// contents' digests and the output directory left out.
fn experiment_hash(cfg: &ExperimentConfig, inputs: &[FileDigest]) -> String {
    let mut v = serde_json::to_value(cfg).expect("serializable");
    v["data"]["edges"] = json!(null);
    v["data"]["features"] = json!(null);
    v["output"]["dir"] = json!(null);
    let digests: Vec<&str> = inputs.iter().map(|d| d.sha256.as_str()).collect();
    let body = v.to_string();
    let mut parts = vec![body.as_str()];
    parts.extend(digests);
    config_hash(&parts)
}

fn experiment_inputs(cfg: &ExperimentConfig) -> Result<Vec<FileDigest>, CliError> {
    let mut paths = vec![cfg.data.edges.clone()];
    paths.extend(cfg.data.features.clone());
    paths
        .iter()
        .map(|p| {
            Ok(FileDigest {
                path: p.display().to_string(),
                sha256: sha256_hex(&read_input(p)?),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EmbedOutcome {
    pub dir: PathBuf,
    pub tt_seconds: f64,
}

/// Phase one only: embedding, checkpoint (GNN kinds) and manifest.
pub fn embed(config_path: &Path, ov: &Overrides) -> Result<EmbedOutcome, CliError> {
    let cfg = config::load(config_path, ov)?;
    cfg.check_paths()?;
    let inputs = experiment_inputs(&cfg)?;
    let hash = experiment_hash(&cfg, &inputs);
    let p1 = phase_one(&cfg)?;
    let mut staged = Staged::new(&cfg.output.dir, format!("embed-{}", &hash[..12]));
    let emb = embfile::write_embedding(&p1.embedding, p1.graph.node_ids())
        .map_err(|e| CliError::runtime("embed", e))?;
    staged.add("embedding.csv", emb);
    if let Some(c) = p1.checkpoint {
        staged.add("checkpoint.json", c);
    }
    let timing = cfg
        .record_time
        .then(|| json!({ "phase_one_seconds": p1.seconds }));
    let manifest = Manifest {
        tool: TOOL,
        version: env!("CARGO_PKG_VERSION"),
        command: "embed".into(),
        config_hash: hash,
        seed: cfg.seed,
        config: serde_json::to_value(&cfg).expect("serializable"),
        inputs,
        outputs: staged.digests(),
        timing,
    };
    staged.add("manifest.json", to_json(&manifest));
    Ok(EmbedOutcome {
        dir: staged.commit()?,
        tt_seconds: p1.seconds,
    })
}

#[derive(Debug, Clone)]
pub struct ReportOutcome {
    pub dir: PathBuf,
    pub rows: Vec<MetricsReport>,
    pub report: String,
}

/// Runs every configured detector on one embedding. Rows are named
/// `<model>+<KIND>` and TT adds `base_seconds` to the detector's own time.
fn run_detectors(
    emb: &EmbeddingMatrix,
    labels: &[u8],
    splits: &SplitMask,
    node_ids: &[i64],
    det: &DetectorSection,
    seed: u64,
    model: &str,
    base_seconds: Option<f64>,
    staged: &mut Staged,
) -> Result<
    (
        Vec<MetricsReport>,
        serde_json::Map<String, serde_json::Value>,
    ),
    CliError,
> {
    let mut rows = Vec::new();
    let mut times = serde_json::Map::new();
    for &kind in &det.kinds {
        let d = anomaly::detect(emb, labels, splits, &det.config(kind, seed))
            .map_err(|e| anomaly_err("detect", e))?;
        let csv = anomaly::predictions_csv(&d, node_ids).map_err(|e| anomaly_err("detect", e))?;
        staged.add(&format!("predictions-{kind}.csv"), csv);
        let tt = base_seconds.map(|b| b + d.seconds);
        rows.push(
            d.test
                .report(&format!("{model}+{}", kind.name()), tt)
                .map_err(|e| anomaly_err("detect", e))?,
        );
        times.insert(kind.to_string(), json!(d.seconds));
    }
    Ok((rows, times))
}

/// Both phases end to end: one report row per detector, plus a row for the
/// model's own classifier head when it has one.
pub fn run(config_path: &Path, ov: &Overrides) -> Result<ReportOutcome, CliError> {
    let cfg = config::load(config_path, ov)?;
    cfg.check_paths()?;
    if cfg.data.features.is_none() {
        return Err(CliError::Invalid(
            "run: detection needs a [data] features file with a label column".into(),
        ));
    }
    let inputs = experiment_inputs(&cfg)?;
    let hash = experiment_hash(&cfg, &inputs);
    let p1 = phase_one(&cfg)?;
    let (Some(labels), Some(splits)) = (p1.graph.labels(), p1.splits.as_ref()) else {
        return Err(CliError::Invalid(
            "run: the features file has no label column".into(),
        ));
    };
    let mut staged = Staged::new(&cfg.output.dir, format!("run-{}", &hash[..12]));
    let node_ids = p1.graph.node_ids();
    let emb = embfile::write_embedding(&p1.embedding, node_ids)
        .map_err(|e| CliError::runtime("embed", e))?;
    staged.add("embedding.csv", emb);
    if let Some(c) = &p1.checkpoint {
        staged.add("checkpoint.json", c.clone());
    }
    let base = cfg.record_time.then_some(p1.seconds);
    let name = cfg.model.name();
    let mut rows = Vec::new();
    if let Some(scores) = &p1.head {
        let part = |split: Split| {
            let nodes = splits.indices(split);
            let s: Vec<f64> = nodes.iter().map(|&i| scores[i]).collect();
            SplitPredictions {
                split,
                y_true: nodes.iter().map(|&i| labels[i]).collect(),
                y_pred: s.iter().map(|&v| u8::from(v >= 0.5)).collect(),
                scores: s,
                nodes,
            }
        };
        let (val, test) = (part(Split::Val), part(Split::Test));
        let csv =
            anomaly::splits_csv(&[&val, &test], node_ids).map_err(|e| anomaly_err("run", e))?;
        staged.add("predictions-head.csv", csv);
        rows.push(test.report(name, base).map_err(|e| anomaly_err("run", e))?);
    }
    let (det_rows, times) = run_detectors(
        &p1.embedding,
        labels,
        splits,
        node_ids,
        &cfg.detector,
        cfg.seed,
        name,
        base,
        &mut staged,
    )?;
    rows.extend(det_rows);
    let report = render(&rows, cfg.output.format);
    staged.add(cfg.output.format.file_name(), report.clone());
    let timing = cfg
        .record_time
        .then(|| json!({ "phase_one_seconds": p1.seconds, "detector_seconds": times }));
    let manifest = Manifest {
        tool: TOOL,
        version: env!("CARGO_PKG_VERSION"),
        command: "run".into(),
        config_hash: hash,
        seed: cfg.seed,
        config: serde_json::to_value(&cfg).expect("serializable"),
        inputs,
        outputs: staged.digests(),
        timing,
    };
    staged.add("manifest.json", to_json(&manifest));
    Ok(ReportOutcome {
        dir: staged.commit()?,
        rows,
        report,
    })
}

#[derive(Debug, Clone, Default)]
pub struct DetectArgs {
    pub embedding: PathBuf,
    pub labels: PathBuf,
    pub config: Option<PathBuf>,
    pub detector: Option<DetectorKind>,
    /// Model name for report rows.
    pub name: Option<String>,
    pub overrides: Overrides,
}

#[derive(serde::Deserialize)]
struct SplitOnly {
    #[serde(default)]
    data: Option<SplitTable>,
}

#[derive(serde::Deserialize)]
struct SplitTable {
    split: Option<[f64; 3]>,
}

/// Detector, split, output and run settings for `detect`; `[model]` and the
/// data paths are ignored.
fn detect_settings(
    args: &DetectArgs,
) -> Result<(DetectorSection, [f64; 3], config::OutputSection, u64, bool), CliError> {
    let (mut det, mut split, mut output, mut seed, mut record_time) = (
        DetectorSection::default(),
        graphio::DEFAULT_RATIOS,
        config::OutputSection::default(),
        None,
        true,
    );
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::Invalid(format!("cannot read config {}: {e}", path.display()))
        })?;
        let f = config::parse_partial(&text, path)?;
        det = f.detector;
        output = f.output;
        seed = f.run.seed;
        record_time = f.run.record_time;
        let s: SplitOnly = toml::from_str(&text)
            .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        if let Some(r) = s.data.and_then(|d| d.split) {
            split = r;
        }
    }
    if let Some(k) = args.detector {
        det.kinds = vec![k];
    }
    let seed = args.overrides.seed.or(seed).ok_or_else(|| {
        CliError::Invalid("detect: no seed; pass --seed or set [run] seed in --config".into())
    })?;
    det.validate(seed)?;
    if let Some(o) = &args.overrides.out {
        output.dir = o.clone();
    }
    if let Some(f) = args.overrides.format {
        output.format = f;
    }
    Ok((det, split, output, seed, record_time))
}

/// Reorders labels to follow `ids`; both files must list the same nodes.
fn align_labels(ids: &[i64], label_ids: &[i64], labels: &[u8]) -> Result<Vec<u8>, CliError> {
    let map: HashMap<i64, u8> = label_ids
        .iter()
        .copied()
        .zip(labels.iter().copied())
        .collect();
    let emb_set: std::collections::HashSet<i64> = ids.iter().copied().collect();
    let mut offending: Vec<i64> = ids
        .iter()
        .copied()
        .filter(|i| !map.contains_key(i))
        .collect();
    offending.extend(label_ids.iter().copied().filter(|i| !emb_set.contains(i)));
    if !offending.is_empty() || map.len() != label_ids.len() {
        let first: Vec<String> = offending.iter().take(5).map(i64::to_string).collect();
        return Err(CliError::Invalid(format!(
            "detect: embedding and label node sets differ ({} unmatched ids; first: {})",
            offending.len(),
            if first.is_empty() {
                "duplicate label ids".to_string()
            } else {
                first.join(", ")
            }
        )));
    }
    Ok(ids.iter().map(|i| map[i]).collect())
}

/// Phase two on a saved embedding.
pub fn detect(args: &DetectArgs) -> Result<ReportOutcome, CliError> {
    let (det, split, output, seed, record_time) = detect_settings(args)?;
    let emb_bytes = read_input(&args.embedding)?;
    let lab_bytes = read_input(&args.labels)?;
    let text = String::from_utf8(emb_bytes.clone())
        .map_err(|_| CliError::Invalid(format!("{}: not UTF-8", args.embedding.display())))?;
    let (ids, emb) = embfile::read_embedding(&text)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", args.embedding.display())))?;
    let table = graphio::load_features_labels(&args.labels).map_err(graph_err)?;
    let (Some(label_ids), Some(labels)) = (table.node_ids.as_ref(), table.labels.as_ref()) else {
        return Err(CliError::Invalid(format!(
            "{}: labels file needs a node_id first column and a label last column",
            args.labels.display()
        )));
    };
    let y = align_labels(&ids, label_ids, labels)?;
    let splits = graphio::make_splits(&y, seed, split).map_err(graph_err)?;
    let name = args.name.clone().unwrap_or_else(|| "Embedding".to_string());
    let inputs = vec![
        FileDigest {
            path: args.embedding.display().to_string(),
            sha256: sha256_hex(&emb_bytes),
        },
        FileDigest {
            path: args.labels.display().to_string(),
            sha256: sha256_hex(&lab_bytes),
        },
    ];
    let settings = json!({
        "detector": det,
        "split": split,
        "seed": seed,
        "record_time": record_time,
        "format": output.format,
        "name": name,
    });
    let body = settings.to_string();
    let hash = config_hash(&[body.as_str(), &inputs[0].sha256, &inputs[1].sha256]);
    let mut staged = Staged::new(&output.dir, format!("detect-{}", &hash[..12]));
    let base = record_time.then_some(0.0);
    let (rows, times) = run_detectors(
        &emb,
        &y,
        &splits,
        &ids,
        &det,
        seed,
        &name,
        base,
        &mut staged,
    )?;
    let report = render(&rows, output.format);
    staged.add(output.format.file_name(), report.clone());
    let manifest = Manifest {
        tool: TOOL,
        version: env!("CARGO_PKG_VERSION"),
        command: "detect".into(),
        config_hash: hash,
        seed,
        config: settings,
        inputs,
        outputs: staged.digests(),
        timing: record_time.then(|| json!({ "detector_seconds": times })),
    };
    staged.add("manifest.json", to_json(&manifest));
    Ok(ReportOutcome {
        dir: staged.commit()?,
        rows,
        report,
    })
}

/// Geometry, gradient and metric suites at full size.
pub fn check(seed: u64) -> Vec<SuiteReport> {
    vec![
        suites::geometry_suite(seed, 10_000),
        suites::gradient_suite(seed, 100),
        suites::metrics_suite(seed, 1000),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SynthKind {
    TwoBlock,
    CoraLike,
}

/// Writes `graph.edges` and `graph.csv` (features and labels) into `dir`.
pub fn synth(kind: SynthKind, seed: u64, dir: &Path) -> Result<(PathBuf, PathBuf), CliError> {
    let graph = match kind {
        SynthKind::TwoBlock => synthetic::TwoBlock::default().generate(seed),
        SynthKind::CoraLike => synthetic::cora_like(seed),
    }
    .map_err(|e| CliError::runtime("synth", e))?;
    let io =
        |p: &Path, e: std::io::Error| CliError::runtime("synth", format!("{}: {e}", p.display()));
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let edges = dir.join("graph.edges");
    let feats = dir.join("graph.csv");
    fs::write(&edges, graphio::write_edge_list(&graph)).map_err(|e| io(&edges, e))?;
    let table = graphio::write_features(&graph).map_err(|e| CliError::runtime("synth", e))?;
    fs::write(&feats, table).map_err(|e| io(&feats, e))?;
    Ok((edges, feats))
}
