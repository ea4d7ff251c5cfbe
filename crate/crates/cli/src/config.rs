//! Experiment config: `key = value` lines under `[section]` headers (the
//! TOML subset documented in the README).

use std::path::{Path, PathBuf};

use ghyp_core::anomaly::{Covariance, DetectorConfig, DetectorKind, DistanceKind};
use ghyp_core::gnn::ModelConfig;
use ghyp_core::graphio::DEFAULT_RATIOS;
use ghyp_core::shallow::ShallowConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub edges: PathBuf,
    #[serde(default)]
    pub features: Option<PathBuf>,
    #[serde(default = "yes")]
    pub normalize: bool,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
}

fn yes() -> bool {
    true
}

fn default_split() -> [f64; 3] {
    DEFAULT_RATIOS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelSection {
    Gnn(ModelConfig),
    Shallow(ShallowConfig),
}

impl ModelSection {
    /// Row label used in reports.
    pub fn name(&self) -> &'static str {
        match self {
            ModelSection::Gnn(m) => m.kind.name(),
            ModelSection::Shallow(_) => "Poincare",
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            ModelSection::Gnn(m) => m.seed = seed,
            ModelSection::Shallow(s) => s.seed = seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub kinds: Vec<DetectorKind>,
    pub k: usize,
    pub components: usize,
    pub covariance: Covariance,
    pub max_iter: usize,
    pub tol: f64,
    pub distance: DistanceKind,
}

impl Default for DetectorSection {
    fn default() -> Self {
        let d = DetectorConfig::new(DetectorKind::Knn);
        Self {
            kinds: vec![DetectorKind::Knn],
            k: d.k,
            components: d.components,
            covariance: d.covariance,
            max_iter: d.max_iter,
            tol: d.tol,
            distance: d.distance,
        }
    }
}

impl DetectorSection {
    pub fn config(&self, kind: DetectorKind, seed: u64) -> DetectorConfig {
        DetectorConfig {
            kind,
            k: self.k,
            components: self.components,
            covariance: self.covariance,
            max_iter: self.max_iter,
            tol: self.tol,
            seed,
            distance: self.distance,
        }
    }

    pub fn validate(&self, seed: u64) -> Result<(), CliError> {
        if self.kinds.is_empty() {
            return Err(CliError::Invalid(
                "[detector] kinds must list at least one detector".into(),
            ));
        }
        for (i, k) in self.kinds.iter().enumerate() {
            if self.kinds[..i].contains(k) {
                return Err(CliError::Invalid(format!(
                    "[detector] kinds lists {k} twice"
                )));
            }
            self.config(*k, seed)
                .validate()
                .map_err(|e| CliError::Invalid(format!("[detector] {e}")))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Markdown,
}

impl Format {
    pub fn file_name(self) -> &'static str {
        match self {
            Format::Csv => "report.csv",
            Format::Markdown => "report.md",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub format: Format,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            format: Format::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "yes")]
    pub record_time: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: None,
            record_time: true,
        }
    }
}

/// A fully resolved experiment: relative paths are anchored at the config
/// file's directory and the seed is fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub detector: DetectorSection,
    pub output: OutputSection,
    pub seed: u64,
    pub record_time: bool,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

const SECTIONS: [&str; 5] = ["data", "model", "detector", "output", "run"];

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Outer {
    data: Option<DataSection>,
    #[serde(default)]
    detector: DetectorSection,
    #[serde(default)]
    output: OutputSection,
    #[serde(default)]
    run: RunSection,
}

#[derive(Deserialize)]
struct GnnOnly {
    model: ModelConfig,
}

#[derive(Deserialize)]
struct ShallowOnly {
    model: ShallowConfig,
}

fn toml_err(path: &Path, e: toml::de::Error) -> CliError {
    CliError::Invalid(format!("{}: {}", path.display(), e.to_string().trim_end()))
}

/// Header name when `line` is a `[section]` line.
fn header(line: &str) -> Option<&str> {
    let t = line.trim();
    let t = t.split('#').next().unwrap_or("").trim();
    t.strip_prefix('[')?.strip_suffix(']').map(str::trim)
}

/// `[model]` and its subtables such as `[model.fd]`.
fn within(header: &str, section: &str) -> bool {
    header
        .strip_prefix(section)
        .is_some_and(|rest| rest.is_empty() || rest.starts_with('.'))
}

/// Keeps only the lines of `[section]` in place, so that parse errors still
/// report the line number of the original file. `skip` names keys to drop.
fn isolate(text: &str, section: &str, skip: &[&str]) -> String {
    let mut inside = false;
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        if let Some(h) = header(line) {
            inside = within(h, section);
            if inside {
                out.push_str(line);
            }
        } else if inside {
            let key = line.split('=').next().unwrap_or("").trim();
            if !skip.contains(&key) {
                out.push_str(line);
            }
        }
        out.push('\n');
    }
    out
}

fn without(text: &str, section: &str) -> String {
    let mut inside = false;
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        if let Some(h) = header(line) {
            inside = within(h, section);
        }
        if !inside {
            out.push_str(line);
        }
        out.push('\n');
    }
    out
}

/// Parses config text. `path` is used for diagnostics and to resolve
/// relative paths.
pub fn parse(text: &str, path: &Path, ov: &Overrides) -> Result<ExperimentConfig, CliError> {
    let doc: toml::Table = toml::from_str(text).map_err(|e| toml_err(path, e))?;
    for key in doc.keys() {
        if !SECTIONS.contains(&key.as_str()) {
            return Err(CliError::Invalid(format!(
                "{}: unknown section [{key}]; expected one of {}",
                path.display(),
                SECTIONS.join(", ")
            )));
        }
    }
    let outer: Outer = toml::from_str(&without(text, "model")).map_err(|e| toml_err(path, e))?;
    let Some(model_table) = doc.get("model").and_then(|m| m.as_table()) else {
        return Err(CliError::Invalid(format!(
            "{}: missing [model] section",
            path.display()
        )));
    };
    if model_table.contains_key("seed") {
        return Err(CliError::Invalid(format!(
            "{}: [model] seed is not allowed; set it under [run]",
            path.display()
        )));
    }
    let kind = match model_table.get("kind") {
        Some(toml::Value::String(s)) => s.clone(),
        Some(_) => {
            return Err(CliError::Invalid(format!(
                "{}: [model] kind must be a string",
                path.display()
            )))
        }
        None => {
            return Err(CliError::Invalid(format!(
                "{}: [model] kind is required",
                path.display()
            )))
        }
    };
    let mut model = if kind == "shallow" {
        let m: ShallowOnly =
            toml::from_str(&isolate(text, "model", &["kind"])).map_err(|e| toml_err(path, e))?;
        ModelSection::Shallow(m.model)
    } else {
        let m: GnnOnly =
            toml::from_str(&isolate(text, "model", &[])).map_err(|e| toml_err(path, e))?;
        ModelSection::Gnn(m.model)
    };
    let Some(mut data) = outer.data else {
        return Err(CliError::Invalid(format!(
            "{}: missing [data] section",
            path.display()
        )));
    };
    let seed = ov.seed.or(outer.run.seed).ok_or_else(|| {
        CliError::Invalid(format!(
            "{}: no seed; set [run] seed or pass --seed",
            path.display()
        ))
    })?;
    model.set_seed(seed);
    match &model {
        ModelSection::Gnn(m) => m
            .validate()
            .map_err(|e| CliError::Invalid(format!("[model] {e}")))?,
        ModelSection::Shallow(s) => s
            .validate()
            .map_err(|e| CliError::Invalid(format!("[model] {e}")))?,
    }
    outer.detector.validate(seed)?;

    let base = path.parent().unwrap_or(Path::new(""));
    data.edges = base.join(&data.edges);
    data.features = data.features.map(|f| base.join(f));
    let mut output = outer.output;
    output.dir = base.join(&output.dir);
    if let Some(out) = &ov.out {
        output.dir = out.clone();
    }
    if let Some(f) = ov.format {
        output.format = f;
    }
    Ok(ExperimentConfig {
        data,
        model,
        detector: outer.detector,
        output,
        seed,
        record_time: outer.run.record_time,
    })
}

/// `[detector]`, `[output]` and `[run]` of a config, for `detect`; the
/// other sections are skipped.
#[derive(Debug, Clone)]
pub struct Partial {
    pub detector: DetectorSection,
    pub output: OutputSection,
    pub run: RunSection,
}

pub fn parse_partial(text: &str, path: &Path) -> Result<Partial, CliError> {
    let rest = without(&without(text, "model"), "data");
    let outer: Outer = toml::from_str(&rest).map_err(|e| toml_err(path, e))?;
    let mut output = outer.output;
    output.dir = path.parent().unwrap_or(Path::new("")).join(&output.dir);
    Ok(Partial {
        detector: outer.detector,
        output,
        run: outer.run,
    })
}

/// Reads and parses a config file; a missing file is an input error naming
/// the path.
pub fn load(path: &Path, ov: &Overrides) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Invalid(format!("cannot read config {}: {e}", path.display())))?;
    parse(&text, path, ov)
}

impl ExperimentConfig {
    /// Referenced input files must exist.
    pub fn check_paths(&self) -> Result<(), CliError> {
        let mut paths = vec![&self.data.edges];
        paths.extend(self.data.features.as_ref());
        for p in paths {
            if !p.is_file() {
                return Err(CliError::Invalid(format!(
                    "input file not found: {}",
                    p.display()
                )));
            }
        }
        Ok(())
    }
}
