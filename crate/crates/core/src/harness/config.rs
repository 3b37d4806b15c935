use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::generation::{PromptTemplate, UtilityMetric, DEFAULT_TIMEOUT};
use crate::retrievers::Bm25Params;

pub const DEFAULT_ALPHAS: [f64; 4] = [1.0, 2.0, 4.0, 8.0];
pub const DEFAULT_SAMPLES: usize = 100;
pub const DEFAULT_TOPK: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub enum RetrieverSpec {
    Bm25(Bm25Params),
    /// Precomputed scores stored inline under this name, or read from a run file.
    Scores(String),
    Oracle,
}

impl RetrieverSpec {
    pub fn name(&self) -> String {
        match self {
            Self::Bm25(_) => "bm25".into(),
            Self::Scores(name) => name.clone(),
            Self::Oracle => "oracle".into(),
        }
    }
}

impl FromStr for RetrieverSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bm25" => Ok(Self::Bm25(Bm25Params::default())),
            "oracle" => Ok(Self::Oracle),
            _ => match s.strip_prefix("scores:") {
                Some(name) if !name.is_empty() => Ok(Self::Scores(name.to_owned())),
                _ => Err(Error::Config(format!(
                    "unknown retriever `{s}` (expected bm25, scores:NAME or oracle)"
                ))),
            },
        }
    }
}

impl fmt::Display for RetrieverSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Bm25(p) => write!(f, "bm25(k1={},b={})", p.k1, p.b),
            Self::Scores(name) => write!(f, "scores:{name}"),
            Self::Oracle => f.write_str("oracle"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GeneratorSpec {
    Synthetic,
    Command(String),
}

impl FromStr for GeneratorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "synthetic" {
            return Ok(Self::Synthetic);
        }
        match s.strip_prefix("cmd:") {
            Some(cmd) => {
                let cmd = cmd.trim().trim_matches('"').trim();
                if cmd.is_empty() {
                    return Err(Error::Config("empty generator command".into()));
                }
                Ok(Self::Command(cmd.to_owned()))
            }
            None => Err(Error::Config(format!(
                "unknown generator `{s}` (expected synthetic or cmd:\"...\")"
            ))),
        }
    }
}

impl fmt::Display for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Synthetic => f.write_str("synthetic"),
            Self::Command(cmd) => write!(f, "cmd:{cmd}"),
        }
    }
}

/// Comma-separated list of non-negative temperatures.
pub fn parse_alphas(s: &str) -> Result<Vec<f64>> {
    let alphas = s
        .split(',')
        .map(|a| {
            a.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad alpha `{a}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    validate_alphas(&alphas)?;
    Ok(alphas)
}

fn validate_alphas(alphas: &[f64]) -> Result<()> {
    if alphas.is_empty() {
        return Err(Error::Config("at least one alpha is required".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
        return Err(Error::Config(format!(
            "alpha must be finite and >= 0, got {a}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub collection: PathBuf,
    pub retriever: RetrieverSpec,
    pub scores_file: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub generator: GeneratorSpec,
    pub metric: UtilityMetric,
    pub template: PromptTemplate,
    pub alphas: Vec<f64>,
    pub samples: usize,
    pub topk: usize,
    pub seed: u64,
    /// Deterministic baseline only, no alpha sweep.
    pub baseline_only: bool,
    pub out: PathBuf,
    pub workers: Option<usize>,
    pub timeout: Duration,
    pub dump_samples: bool,
}

impl ExperimentConfig {
    pub fn new(collection: PathBuf, out: PathBuf) -> Self {
        Self {
            collection,
            retriever: RetrieverSpec::Bm25(Bm25Params::default()),
            scores_file: None,
            labels: None,
            generator: GeneratorSpec::Synthetic,
            metric: UtilityMetric::TokenF1,
            template: PromptTemplate::default(),
            alphas: DEFAULT_ALPHAS.to_vec(),
            samples: DEFAULT_SAMPLES,
            topk: DEFAULT_TOPK,
            seed: 0,
            baseline_only: false,
            out,
            workers: None,
            timeout: DEFAULT_TIMEOUT,
            dump_samples: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_alphas(&self.alphas)?;
        if self.samples == 0 {
            return Err(Error::Config("samples must be >= 1".into()));
        }
        if self.topk == 0 {
            return Err(Error::Config("topk must be >= 1".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        Ok(())
    }

    /// Short digest of every setting that can change results. Output paths
    /// and worker counts are excluded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        let mut field = |name: &str, value: String| {
            h.update(name.as_bytes());
            h.update([0]);
            h.update(value.as_bytes());
            h.update([0]);
        };
        field("collection", self.collection.display().to_string());
        field("retriever", self.retriever.to_string());
        field(
            "scores_file",
            self.scores_file
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        field(
            "labels",
            self.labels
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        field("generator", self.generator.to_string());
        field("metric", self.metric.to_string());
        field("template", self.template.template().to_owned());
        field("delimiter", self.template.delimiter().to_owned());
        field("alphas", format!("{:?}", self.alphas));
        field("samples", self.samples.to_string());
        field("topk", self.topk.to_string());
        field("seed", self.seed.to_string());
        hex::encode(&h.finalize()[..8])
    }
}

/// Alphas in a config file may be an array or a comma-separated string.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum AlphaList {
    List(Vec<f64>),
    Text(String),
}

impl AlphaList {
    pub fn resolve(&self) -> Result<Vec<f64>> {
        match self {
            Self::List(v) => {
                validate_alphas(v)?;
                Ok(v.clone())
            }
            Self::Text(s) => parse_alphas(s),
        }
    }
}

/// Settings read from a `key = value` config file; every key is optional
/// and command-line flags take precedence.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub collection: Option<PathBuf>,
    pub retriever: Option<String>,
    pub scores_file: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub generator: Option<String>,
    pub metric: Option<String>,
    pub template: Option<PathBuf>,
    pub delimiter: Option<String>,
    pub alphas: Option<AlphaList>,
    pub samples: Option<usize>,
    pub topk: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub timeout_secs: Option<f64>,
    pub bm25_k1: Option<f64>,
    pub bm25_b: Option<f64>,
    pub dump_samples: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Field-wise merge where `self` wins.
    pub fn or(self, fallback: FileConfig) -> FileConfig {
        FileConfig {
            collection: self.collection.or(fallback.collection),
            retriever: self.retriever.or(fallback.retriever),
            scores_file: self.scores_file.or(fallback.scores_file),
            labels: self.labels.or(fallback.labels),
            generator: self.generator.or(fallback.generator),
            metric: self.metric.or(fallback.metric),
            template: self.template.or(fallback.template),
            delimiter: self.delimiter.or(fallback.delimiter),
            alphas: self.alphas.or(fallback.alphas),
            samples: self.samples.or(fallback.samples),
            topk: self.topk.or(fallback.topk),
            seed: self.seed.or(fallback.seed),
            out: self.out.or(fallback.out),
            workers: self.workers.or(fallback.workers),
            timeout_secs: self.timeout_secs.or(fallback.timeout_secs),
            bm25_k1: self.bm25_k1.or(fallback.bm25_k1),
            bm25_b: self.bm25_b.or(fallback.bm25_b),
            dump_samples: self.dump_samples.or(fallback.dump_samples),
        }
    }

    pub fn into_experiment(self) -> Result<ExperimentConfig> {
        let collection = self
            .collection
            .ok_or_else(|| Error::Config("--collection is required".into()))?;
        let out = self.out.unwrap_or_else(|| PathBuf::from("fairrag-out"));
        let mut config = ExperimentConfig::new(collection, out);
        if let Some(r) = self.retriever {
            config.retriever = r.parse()?;
        }
        if let RetrieverSpec::Bm25(params) = &mut config.retriever {
            params.k1 = self.bm25_k1.unwrap_or(params.k1);
            params.b = self.bm25_b.unwrap_or(params.b);
        }
        config.scores_file = self.scores_file;
        config.labels = self.labels;
        if let Some(g) = self.generator {
            config.generator = g.parse()?;
        }
        if let Some(m) = self.metric {
            config.metric = m.parse()?;
        }
        let delimiter = self.delimiter.unwrap_or_else(|| "\n".into());
        config.template = match self.template {
            Some(path) => PromptTemplate::load(&path, &delimiter)?,
            None => PromptTemplate::new(PromptTemplate::default().template(), delimiter)?,
        };
        if let Some(a) = self.alphas {
            config.alphas = a.resolve()?;
        }
        config.samples = self.samples.unwrap_or(config.samples);
        config.topk = self.topk.unwrap_or(config.topk);
        config.seed = self.seed.unwrap_or(config.seed);
        config.workers = self.workers;
        if let Some(secs) = self.timeout_secs {
            if !(secs > 0.0 && secs.is_finite()) {
                return Err(Error::Config("timeout_secs must be positive".into()));
            }
            config.timeout = Duration::from_secs_f64(secs);
        }
        config.dump_samples = self.dump_samples.unwrap_or(false);
        config.validate()?;
        Ok(config)
    }
}
