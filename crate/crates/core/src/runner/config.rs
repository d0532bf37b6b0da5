//! Experiment configuration: a TOML file with `[data]`, `[model]`, `[train]`
//! and `[eval]` sections.
//!
//! Validation is total. Every unknown key, type error, missing required key
//! and key that does not apply to the chosen model is collected and reported
//! in a single [`Error::Config`].

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use toml::{Table, Value};

use crate::data::{parse_split, Separator, SplitSpec};
use crate::error::{Error, Result};
use crate::metrics::Protocol;
use crate::models::{Optimizer, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelName {
    BiasedSvd,
    Fm,
    AutoRec,
    BprMf,
    Cml,
    Gmf,
    Mlp,
    NeuMf,
    Cdae,
    Prme,
    Caser,
    AttRec,
}

impl ModelName {
    pub const ALL: [ModelName; 12] = [
        Self::BiasedSvd,
        Self::Fm,
        Self::AutoRec,
        Self::BprMf,
        Self::Cml,
        Self::Gmf,
        Self::Mlp,
        Self::NeuMf,
        Self::Cdae,
        Self::Prme,
        Self::Caser,
        Self::AttRec,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::BiasedSvd => "biasedsvd",
            Self::Fm => "fm",
            Self::AutoRec => "autorec",
            Self::BprMf => "bprmf",
            Self::Cml => "cml",
            Self::Gmf => "gmf",
            Self::Mlp => "mlp",
            Self::NeuMf => "neumf",
            Self::Cdae => "cdae",
            Self::Prme => "prme",
            Self::Caser => "caser",
            Self::AttRec => "attrec",
        }
    }

    pub fn task(self) -> Task {
        match self {
            Self::BiasedSvd | Self::Fm | Self::AutoRec => Task::Rating,
            _ => Task::Ranking,
        }
    }

    pub fn is_sequential(self) -> bool {
        matches!(self, Self::Prme | Self::Caser | Self::AttRec)
    }

    /// Model keys besides `name` and `k`: (key, required).
    fn model_keys(self) -> &'static [(&'static str, bool)] {
        match self {
            Self::BiasedSvd | Self::Fm | Self::AutoRec | Self::BprMf | Self::Gmf => &[],
            Self::Cml => &[("margin", true)],
            Self::Mlp | Self::NeuMf => &[("layers", false)],
            Self::Cdae => &[("dropout_q", true)],
            Self::Prme => &[("alpha", true)],
            Self::Caser => &[("L", false), ("T", false), ("n_h", false), ("n_v", false)],
            Self::AttRec => &[("L", false), ("omega", true), ("margin", true), ("clip_rho", true)],
        }
    }

    /// Negatives per positive when `neg_samples` is absent.
    pub fn default_neg_samples(self) -> usize {
        match self {
            Self::Gmf | Self::Mlp | Self::NeuMf | Self::Cdae => 4,
            Self::BiasedSvd | Self::Fm | Self::AutoRec => 0,
            _ => 1,
        }
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Uirt,
    Libfm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub path: PathBuf,
    pub format: DataFormat,
    pub split: SplitSpec,
    pub seed: u64,
    pub binarize_threshold: Option<f64>,
    pub has_header: bool,
    pub separator: Option<Separator>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub name: ModelName,
    pub k: usize,
    pub layers: Option<Vec<usize>>,
    pub window: Option<usize>,
    pub horizon: Option<usize>,
    pub margin: Option<f64>,
    pub alpha: Option<f64>,
    pub omega: Option<f64>,
    pub dropout_q: Option<f64>,
    pub n_h: Option<usize>,
    pub n_v: Option<usize>,
    pub clip_rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub lr: f64,
    pub l2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub neg_samples: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub cutoffs: Vec<usize>,
    pub protocol: Protocol,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Ranking settings; `None` for rating models.
    pub eval: Option<EvalConfig>,
}

/// Pulls typed keys out of one section, recording problems instead of
/// stopping at the first.
struct Section<'a> {
    name: &'static str,
    table: Table,
    errors: &'a mut Vec<String>,
}

impl Section<'_> {
    fn raw(&mut self, key: &str, required: bool) -> Option<Value> {
        let v = self.table.remove(key);
        if v.is_none() && required {
            self.errors
                .push(format!("[{}] missing required key `{key}`", self.name));
        }
        v
    }

    fn type_error(&mut self, key: &str, want: &str, got: &Value) {
        self.errors.push(format!(
            "[{}] `{key}` must be {want}, got {}",
            self.name,
            got.type_str()
        ));
    }

    fn string(&mut self, key: &str, required: bool) -> Option<String> {
        match self.raw(key, required)? {
            Value::String(s) => Some(s),
            other => {
                self.type_error(key, "a string", &other);
                None
            }
        }
    }

    fn float(&mut self, key: &str, required: bool) -> Option<f64> {
        match self.raw(key, required)? {
            Value::Float(f) => Some(f),
            Value::Integer(i) => Some(i as f64),
            other => {
                self.type_error(key, "a number", &other);
                None
            }
        }
    }

    fn uint(&mut self, key: &str, required: bool) -> Option<u64> {
        match self.raw(key, required)? {
            Value::Integer(i) if i >= 0 => Some(i as u64),
            other => {
                self.type_error(key, "a non-negative integer", &other);
                None
            }
        }
    }

    fn usize(&mut self, key: &str, required: bool) -> Option<usize> {
        self.uint(key, required).map(|v| v as usize)
    }

    fn bool(&mut self, key: &str, required: bool) -> Option<bool> {
        match self.raw(key, required)? {
            Value::Boolean(b) => Some(b),
            other => {
                self.type_error(key, "a boolean", &other);
                None
            }
        }
    }

    fn uint_list(&mut self, key: &str, required: bool) -> Option<Vec<usize>> {
        let v = self.raw(key, required)?;
        let parsed = match &v {
            Value::Array(items) => items
                .iter()
                .map(|x| match x {
                    Value::Integer(i) if *i >= 0 => Some(*i as usize),
                    _ => None,
                })
                .collect::<Option<Vec<_>>>(),
            _ => None,
        };
        if parsed.is_none() {
            self.type_error(key, "a list of non-negative integers", &v);
        }
        parsed
    }

    fn check(&mut self, key: &str, ok: bool, msg: impl fmt::Display) {
        if !ok {
            self.errors.push(format!("[{}] `{key}` {msg}", self.name));
        }
    }

    /// Reports keys that are present but do not apply.
    fn reject(&mut self, key: &str, why: &str) {
        if self.table.remove(key).is_some() {
            self.errors
                .push(format!("[{}] `{key}` does not apply: {why}", self.name));
        }
    }

    fn finish(self) {
        let mut keys: Vec<&String> = self.table.keys().collect();
        keys.sort();
        for k in keys {
            self.errors.push(format!("[{}] unknown key `{k}`", self.name));
        }
    }
}

fn section<'a>(
    root: &mut Table,
    name: &'static str,
    required: bool,
    errors: &'a mut Vec<String>,
) -> Option<Section<'a>> {
    match root.remove(name) {
        Some(Value::Table(table)) => Some(Section { name, table, errors }),
        Some(other) => {
            errors.push(format!("`{name}` must be a section, got {}", other.type_str()));
            None
        }
        None if required => {
            errors.push(format!("missing section [{name}]"));
            None
        }
        None => Some(Section {
            name,
            table: Table::new(),
            errors,
        }),
    }
}

fn parse_protocol(text: &str) -> Option<Protocol> {
    match text.split_once(':') {
        None if text == "full" => Some(Protocol::Full),
        Some(("sampled", m)) => m.parse::<usize>().ok().filter(|&m| m > 0).map(Protocol::Sampled),
        _ => None,
    }
}

fn parse_separator(text: &str) -> Option<Separator> {
    match text {
        "tab" | "\t" => Some(Separator::Tab),
        "comma" | "," => Some(Separator::Comma),
        "whitespace" | " " => Some(Separator::Whitespace),
        _ => None,
    }
}

fn separator_name(s: Separator) -> &'static str {
    match s {
        Separator::Tab => "tab",
        Separator::Comma => "comma",
        Separator::Whitespace => "whitespace",
    }
}

impl ExperimentConfig {
    /// Parses and validates config text. Relative data paths are kept as
    /// written.
    pub fn parse(text: &str) -> Result<Self> {
        let mut root: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(vec![e.message().trim().to_string()]))?;
        let mut errors = Vec::new();

        let model_name = match root.get("model") {
            Some(Value::Table(t)) => t
                .get("name")
                .and_then(Value::as_str)
                .and_then(|n| n.parse::<ModelName>().ok()),
            _ => None,
        };

        let data = section(&mut root, "data", true, &mut errors).map(|mut s| {
            let path = s.string("path", true);
            let format = s.string("format", true).and_then(|f| match f.as_str() {
                "uirt" => Some(DataFormat::Uirt),
                "libfm" => Some(DataFormat::Libfm),
                other => {
                    s.check("format", false, format!("must be uirt or libfm, got `{other}`"));
                    None
                }
            });
            let split_text = s.string("split", true);
            let seed = s.uint("seed", true);
            let split = split_text.and_then(|t| match parse_split(&t, seed.unwrap_or(0)) {
                Ok(sp) => Some(sp),
                Err(e) => {
                    s.check("split", false, format!("is invalid: {e}"));
                    None
                }
            });
            let binarize_threshold = match model_name {
                Some(m) if m.task() == Task::Rating && m != ModelName::Fm => {
                    s.reject("binarize_threshold", "rating models train on raw ratings");
                    None
                }
                _ => s.float("binarize_threshold", false),
            };
            if let Some(t) = binarize_threshold {
                s.check("binarize_threshold", t.is_finite(), "must be finite");
            }
            let has_header = s.bool("has_header", false);
            let separator = s.string("separator", false).and_then(|t| {
                let sep = parse_separator(&t);
                s.check(
                    "separator",
                    sep.is_some(),
                    format!("must be tab, comma or whitespace, got `{t}`"),
                );
                sep
            });
            if format == Some(DataFormat::Libfm) {
                if has_header.is_some() || separator.is_some() {
                    s.check("format", false, "libfm files take no has_header/separator");
                }
                if let Some(sp) = split {
                    s.check(
                        "split",
                        matches!(sp, SplitSpec::RandomHoldout { .. }),
                        "must be random:<ratio> for libfm data (rows carry no user or time)",
                    );
                }
                if let Some(m) = model_name {
                    s.check(
                        "format",
                        m == ModelName::Fm,
                        format!("libfm data only feeds fm, not {m}"),
                    );
                }
            }
            if let Some(m) = model_name {
                if m.is_sequential() {
                    if let Some(sp) = split {
                        s.check(
                            "split",
                            !matches!(sp, SplitSpec::RandomHoldout { .. }),
                            "must be loo or temporal:<ratio> for sequential models",
                        );
                    }
                }
            }
            s.finish();
            (path, format, split, seed, binarize_threshold, has_header, separator)
        });

        let model = section(&mut root, "model", true, &mut errors).map(|mut s| {
            if let Some(name) = s.string("name", true) {
                if model_name.is_none() {
                    let names: Vec<&str> = ModelName::ALL.iter().map(|m| m.as_str()).collect();
                    s.check(
                        "name",
                        false,
                        format!("`{name}` is unknown (expected one of {})", names.join(", ")),
                    );
                }
            }
            let k = s.usize("k", true);
            if let Some(k) = k {
                s.check("k", k > 0, "must be positive");
            }
            let mut out = ModelConfig {
                name: model_name.unwrap_or(ModelName::BiasedSvd),
                k: k.unwrap_or(0),
                layers: None,
                window: None,
                horizon: None,
                margin: None,
                alpha: None,
                omega: None,
                dropout_q: None,
                n_h: None,
                n_v: None,
                clip_rho: None,
            };
            if let Some(m) = model_name {
                let keys = m.model_keys();
                let req = |key: &str| keys.iter().find(|x| x.0 == key).map(|x| x.1);
                for key in [
                    "layers",
                    "L",
                    "T",
                    "margin",
                    "alpha",
                    "omega",
                    "dropout_q",
                    "n_h",
                    "n_v",
                    "clip_rho",
                ] {
                    match req(key) {
                        None => s.reject(key, &format!("not a parameter of {m}")),
                        Some(required) => match key {
                            "layers" => out.layers = s.uint_list(key, required),
                            "L" => out.window = s.usize(key, required),
                            "T" => out.horizon = s.usize(key, required),
                            "margin" => out.margin = s.float(key, required),
                            "alpha" => out.alpha = s.float(key, required),
                            "omega" => out.omega = s.float(key, required),
                            "dropout_q" => out.dropout_q = s.float(key, required),
                            "n_h" => out.n_h = s.usize(key, required),
                            "n_v" => out.n_v = s.usize(key, required),
                            "clip_rho" => out.clip_rho = s.float(key, required),
                            _ => unreachable!(),
                        },
                    }
                }
                if let (Some(layers), Some(k)) = (&out.layers, k) {
                    s.check(
                        "layers",
                        layers.len() >= 2 && layers[0] == 2 * k && !layers.contains(&0),
                        format!("must start at 2k = {} and list at least two positive sizes", 2 * k),
                    );
                }
                if m == ModelName::Mlp || m == ModelName::NeuMf {
                    if let (None, Some(k)) = (&out.layers, k) {
                        s.check("k", k >= 2, "must be at least 2 for the default [2k, k, k/2] tower");
                    }
                }
                for (key, v) in [("L", out.window), ("T", out.horizon)] {
                    if let Some(v) = v {
                        s.check(key, v > 0, "must be positive");
                    }
                }
                if let (Some(h), Some(v)) = (out.n_h, out.n_v) {
                    s.check("n_h", h + v > 0, "and `n_v` cannot both be zero");
                }
                if let Some(x) = out.margin {
                    s.check("margin", x.is_finite() && x >= 0.0, "must be a finite number >= 0");
                }
                for (key, v) in [("alpha", out.alpha), ("omega", out.omega)] {
                    if let Some(v) = v {
                        s.check(key, (0.0..=1.0).contains(&v), "must lie in [0, 1]");
                    }
                }
                if let Some(q) = out.dropout_q {
                    s.check("dropout_q", (0.0..1.0).contains(&q), "must lie in [0, 1)");
                }
                if let Some(r) = out.clip_rho {
                    s.check("clip_rho", r.is_finite() && r > 0.0, "must be positive");
                }
            }
            s.finish();
            out
        });

        let train = section(&mut root, "train", true, &mut errors).map(|mut s| {
            let optimizer = s.string("optimizer", true).and_then(|o| match o.as_str() {
                "sgd" => Some(Optimizer::Sgd),
                "adam" => Some(Optimizer::Adam),
                other => {
                    s.check("optimizer", false, format!("must be sgd or adam, got `{other}`"));
                    None
                }
            });
            let lr = s.float("lr", true);
            if let Some(lr) = lr {
                s.check("lr", lr.is_finite() && lr > 0.0, "must be positive");
            }
            let l2 = s.float("l2", false);
            if let Some(l2) = l2 {
                s.check("l2", l2.is_finite() && l2 >= 0.0, "must be >= 0");
            }
            let epochs = s.usize("epochs", true);
            let batch_size = s.usize("batch_size", true);
            if let Some(b) = batch_size {
                s.check("batch_size", b > 0, "must be positive");
            }
            let neg_samples = match model_name {
                Some(m) if m.task() == Task::Rating => {
                    s.reject("neg_samples", "rating models sample no negatives");
                    None
                }
                _ => s.usize("neg_samples", false),
            };
            if let (Some(n), Some(m)) = (neg_samples, model_name) {
                let pairwise = matches!(
                    m,
                    ModelName::BprMf | ModelName::Cml | ModelName::Prme | ModelName::AttRec
                );
                s.check("neg_samples", n > 0 || !pairwise, format!("must be positive for {m}"));
            }
            let seed = s.uint("seed", true);
            s.finish();
            TrainConfig {
                optimizer: optimizer.unwrap_or(Optimizer::Adam),
                lr: lr.unwrap_or(0.0),
                l2: l2.unwrap_or(0.0),
                epochs: epochs.unwrap_or(0),
                batch_size: batch_size.unwrap_or(0),
                neg_samples,
                seed: seed.unwrap_or(0),
            }
        });

        let ranking = model_name.map(|m| m.task() == Task::Ranking);
        let eval = section(&mut root, "eval", ranking == Some(true), &mut errors).and_then(|mut s| {
            if ranking == Some(false) {
                for key in ["cutoffs", "protocol"] {
                    s.reject(key, "rating models report rmse and mae only");
                }
                let _ = s.usize("threads", false);
                s.finish();
                return None;
            }
            let cutoffs = s.uint_list("cutoffs", true);
            if let Some(c) = &cutoffs {
                s.check(
                    "cutoffs",
                    !c.is_empty() && !c.contains(&0),
                    "must be a non-empty list of positive integers",
                );
            }
            let protocol = s.string("protocol", true).and_then(|p| {
                let parsed = parse_protocol(&p);
                s.check(
                    "protocol",
                    parsed.is_some(),
                    format!("must be full or sampled:<m>, got `{p}`"),
                );
                parsed
            });
            let threads = s.usize("threads", false);
            if let Some(t) = threads {
                s.check("threads", t > 0, "must be positive");
            }
            s.finish();
            Some(EvalConfig {
                cutoffs: cutoffs.unwrap_or_default(),
                protocol: protocol.unwrap_or(Protocol::Full),
                threads: threads.unwrap_or(1),
            })
        });

        let mut extra: Vec<&String> = root.keys().collect();
        extra.sort();
        for k in extra {
            errors.push(format!("unknown section or key `{k}`"));
        }
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        let (path, format, split, seed, binarize_threshold, has_header, separator) =
            data.expect("validated data section");
        Ok(Self {
            data: DataConfig {
                path: PathBuf::from(path.expect("validated")),
                format: format.expect("validated"),
                split: split.expect("validated"),
                seed: seed.expect("validated"),
                binarize_threshold,
                has_header: has_header.unwrap_or(false),
                separator,
            },
            model: model.expect("validated model section"),
            train: train.expect("validated train section"),
            eval,
        })
    }

    /// Reads a config file; a relative data path is resolved against the
    /// config file's directory and made absolute.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        if cfg.data.path.is_relative() {
            let base = path.parent().unwrap_or_else(|| Path::new(""));
            cfg.data.path = base.join(&cfg.data.path);
        }
        if let Ok(abs) = std::path::absolute(&cfg.data.path) {
            cfg.data.path = abs;
        }
        Ok(cfg)
    }

    pub fn neg_samples(&self) -> usize {
        self.train.neg_samples.unwrap_or(self.model.name.default_neg_samples())
    }

    /// Canonical TOML: fixed key order, only keys that are set. Parsing the
    /// output yields an equal config.
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        let d = &self.data;
        let _ = writeln!(out, "[data]");
        let _ = writeln!(out, "path = {}", Value::String(d.path.display().to_string()));
        let _ = writeln!(
            out,
            "format = \"{}\"",
            if d.format == DataFormat::Uirt { "uirt" } else { "libfm" }
        );
        let _ = writeln!(out, "split = \"{}\"", d.split);
        let _ = writeln!(out, "seed = {}", d.seed);
        if let Some(t) = d.binarize_threshold {
            let _ = writeln!(out, "binarize_threshold = {}", Value::Float(t));
        }
        if d.has_header {
            let _ = writeln!(out, "has_header = true");
        }
        if let Some(s) = d.separator {
            let _ = writeln!(out, "separator = \"{}\"", separator_name(s));
        }
        let m = &self.model;
        let _ = writeln!(out, "\n[model]");
        let _ = writeln!(out, "name = \"{}\"", m.name);
        let _ = writeln!(out, "k = {}", m.k);
        if let Some(l) = &m.layers {
            let list: Vec<String> = l.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "layers = [{}]", list.join(", "));
        }
        for (key, v) in [("L", m.window), ("T", m.horizon), ("n_h", m.n_h), ("n_v", m.n_v)] {
            if let Some(v) = v {
                let _ = writeln!(out, "{key} = {v}");
            }
        }
        for (key, v) in [
            ("margin", m.margin),
            ("alpha", m.alpha),
            ("omega", m.omega),
            ("dropout_q", m.dropout_q),
            ("clip_rho", m.clip_rho),
        ] {
            if let Some(v) = v {
                let _ = writeln!(out, "{key} = {}", Value::Float(v));
            }
        }
        let t = &self.train;
        let _ = writeln!(out, "\n[train]");
        let _ = writeln!(
            out,
            "optimizer = \"{}\"",
            if t.optimizer == Optimizer::Sgd { "sgd" } else { "adam" }
        );
        let _ = writeln!(out, "lr = {}", Value::Float(t.lr));
        let _ = writeln!(out, "l2 = {}", Value::Float(t.l2));
        let _ = writeln!(out, "epochs = {}", t.epochs);
        let _ = writeln!(out, "batch_size = {}", t.batch_size);
        if let Some(n) = t.neg_samples {
            let _ = writeln!(out, "neg_samples = {n}");
        }
        let _ = writeln!(out, "seed = {}", t.seed);
        if let Some(e) = &self.eval {
            let _ = writeln!(out, "\n[eval]");
            let list: Vec<String> = e.cutoffs.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "cutoffs = [{}]", list.join(", "));
            let _ = writeln!(out, "protocol = \"{}\"", e.protocol);
            if e.threads != 1 {
                let _ = writeln!(out, "threads = {}", e.threads);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BPR: &str = r#"
[data]
path = "ratings.tsv"
format = "uirt"
split = "loo"
seed = 3
binarize_threshold = 4

[model]
name = "bprmf"
k = 8

[train]
optimizer = "adam"
lr = 0.01
l2 = 0.001
epochs = 5
batch_size = 64
seed = 9

[eval]
cutoffs = [5, 10]
protocol = "sampled:100"
"#;

    fn errors(text: &str) -> Vec<String> {
        match ExperimentConfig::parse(text) {
            Err(Error::Config(e)) => e,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn parses_a_ranking_config() {
        let c = ExperimentConfig::parse(BPR).unwrap();
        assert_eq!(c.model.name, ModelName::BprMf);
        assert_eq!(c.data.binarize_threshold, Some(4.0));
        assert_eq!(c.eval.as_ref().unwrap().protocol, Protocol::Sampled(100));
        assert_eq!(c.neg_samples(), 1);
    }

    #[test]
    fn canonical_text_round_trips() {
        let c = ExperimentConfig::parse(BPR).unwrap();
        let again = ExperimentConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.to_toml(), again.to_toml());
    }

    #[test]
    fn every_problem_is_reported_at_once() {
        let text = BPR
            .replace("k = 8", "k = 8\nkk = 3\nmargin = 0.5")
            .replace("lr = 0.01", "lr = \"fast\"")
            .replace("seed = 9", "");
        let e = errors(&text);
        assert!(e.iter().any(|m| m.contains("unknown key `kk`")), "{e:?}");
        assert!(e.iter().any(|m| m.contains("`margin` does not apply")), "{e:?}");
        assert!(e.iter().any(|m| m.contains("`lr` must be a number")), "{e:?}");
        assert!(
            e.iter().any(|m| m.contains("[train] missing required key `seed`")),
            "{e:?}"
        );
        assert_eq!(e.len(), 4, "{e:?}");
    }

    #[test]
    fn model_specific_keys_are_required() {
        let e = errors(&BPR.replace("\"bprmf\"", "\"cml\""));
        assert_eq!(e, vec!["[model] missing required key `margin`".to_string()]);
    }

    #[test]
    fn rating_models_reject_ranking_settings() {
        let text = BPR.replace("\"bprmf\"", "\"biasedsvd\"");
        let e = errors(&text);
        assert!(e.iter().any(|m| m.contains("`cutoffs` does not apply")));
        assert!(e.iter().any(|m| m.contains("`protocol` does not apply")));
        assert!(e.iter().any(|m| m.contains("`binarize_threshold` does not apply")));
    }

    #[test]
    fn unknown_model_lists_choices() {
        let e = errors(&BPR.replace("\"bprmf\"", "\"svdpp\""));
        assert!(e[0].contains("`svdpp` is unknown") && e[0].contains("attrec"), "{e:?}");
    }

    #[test]
    fn syntax_errors_surface() {
        assert!(matches!(ExperimentConfig::parse("[data"), Err(Error::Config(_))));
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("exp.toml");
        fs::write(&p, BPR).unwrap();
        let c = ExperimentConfig::from_file(&p).unwrap();
        assert_eq!(c.data.path, dir.path().join("ratings.tsv"));
    }
}
