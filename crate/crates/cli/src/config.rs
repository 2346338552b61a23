//! Run configuration: flat `key = value` pairs under `[section]` headers.
//! Lines starting with `#` and blank lines are ignored; every key is
//! validated against the known set. The grammar is documented in the README.

use std::path::{Path, PathBuf};

use citerank_core::corpus::SyntheticConfig;
use citerank_core::eval::DomainPairMode;
use citerank_core::model::ModelConfig;
use citerank_core::training::{NegativeScope, TrainConfig};

use crate::CliError;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub workdir: PathBuf,
    pub stopwords: Option<PathBuf>,
    pub max_terms: usize,
    pub synth: SyntheticConfig,
    /// Architecture settings; `input_dim` is replaced by the realized
    /// vocabulary size when the pipeline runs.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub train_frac: f64,
    pub val_frac: f64,
    pub k: usize,
    pub thresholds: Vec<f64>,
    pub domain_pair_mode: DomainPairMode,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            edges: None,
            workdir: PathBuf::from("work"),
            stopwords: None,
            max_terms: 300,
            synth: SyntheticConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            train_frac: 0.655,
            val_frac: 0.116,
            k: 20,
            thresholds: vec![0.25, 0.5, 0.75, 0.9, 0.95, 0.99, 0.999],
            domain_pair_mode: DomainPairMode::Joint,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Data(format!("config line {}: expected key = value", ln + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.apply(&section, key, value).map_err(|msg| {
                CliError::Data(format!("config line {}: {msg}", ln + 1))
            })?;
        }
        cfg.validate()?;
        // the generator and the trainer share the run seed
        cfg.synth.seed = cfg.seed;
        cfg.train.seed = cfg.seed;
        Ok(cfg)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<(), String> {
        match (section, key) {
            ("paths", "corpus") => self.corpus = Some(PathBuf::from(value)),
            ("paths", "edges") => self.edges = Some(PathBuf::from(value)),
            ("paths", "workdir") => self.workdir = PathBuf::from(value),
            ("paths", "stopwords") => self.stopwords = Some(PathBuf::from(value)),
            ("corpus", "max_terms") => self.max_terms = parse(key, value)?,
            ("synth", "n_docs") => self.synth.n_docs = parse(key, value)?,
            ("synth", "n_domains") => self.synth.n_domains = parse(key, value)?,
            ("synth", "within_domain_rate") => self.synth.within_domain_rate = parse(key, value)?,
            ("synth", "mean_out_degree") => self.synth.mean_out_degree = parse(key, value)?,
            ("synth", "vocab_size") => self.synth.vocab_size = parse(key, value)?,
            ("synth", "featureless_frac") => self.synth.featureless_frac = parse(key, value)?,
            ("synth", "doc_len") => self.synth.doc_len = parse(key, value)?,
            ("model", "embed_dim") => self.model.embed_dim = parse(key, value)?,
            ("model", "n_layers") => self.model.n_layers = parse(key, value)?,
            ("model", "n_heads") => self.model.n_heads = parse(key, value)?,
            ("model", "ffn_hidden") => self.model.ffn_hidden = parse(key, value)?,
            ("model", "adj_dropout_p") => self.model.adj_dropout_p = parse(key, value)?,
            ("model", "ffn_dropout_p") => self.model.ffn_dropout_p = parse(key, value)?,
            ("model", "learned_residual") => {
                self.model.use_learned_residual = parse_bool(key, value)?
            }
            ("model", "bilinear") => self.model.use_bilinear = parse_bool(key, value)?,
            ("train", "learning_rate") => self.train.learning_rate = parse(key, value)?,
            ("train", "total_updates") => self.train.total_updates = parse(key, value)?,
            ("train", "neg_ratio") => self.train.neg_ratio = parse(key, value)?,
            ("train", "eval_every") => self.train.eval_every = parse(key, value)?,
            ("train", "train_frac") => self.train_frac = parse(key, value)?,
            ("train", "val_frac") => self.val_frac = parse(key, value)?,
            ("train", "negative_scope") => {
                self.train.negative_scope = match value {
                    "train" => NegativeScope::TrainRows,
                    "global" => NegativeScope::Global,
                    other => return Err(format!("negative_scope must be train|global, got {other:?}")),
                }
            }
            ("eval", "k") => {
                self.k = parse(key, value)?;
                self.train.k = self.k;
            }
            ("eval", "thresholds") => {
                self.thresholds = value
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<f64>()
                            .map_err(|_| format!("bad threshold {s:?}"))
                    })
                    .collect::<Result<Vec<f64>, String>>()?;
            }
            ("eval", "domain_pair_mode") => {
                self.domain_pair_mode = match value {
                    "joint" => DomainPairMode::Joint,
                    "per-source" => DomainPairMode::PerSource,
                    other => {
                        return Err(format!("domain_pair_mode must be joint|per-source, got {other:?}"))
                    }
                }
            }
            ("run", "seed") => self.seed = parse(key, value)?,
            _ => return Err(format!("unknown key {section:?}.{key:?}")),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.thresholds.is_empty()
            || self.thresholds.iter().any(|&t| !(0.0 < t && t < 1.0))
            || self.thresholds.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(CliError::Data(
                "eval.thresholds must be strictly ascending values in (0,1)".into(),
            ));
        }
        if self.train_frac < 0.0 || self.val_frac < 0.0 || self.train_frac + self.val_frac > 1.0 {
            return Err(CliError::Data(
                "train.train_frac + train.val_frac must stay within [0,1]".into(),
            ));
        }
        if self.max_terms == 0 {
            return Err(CliError::Data("corpus.max_terms must be >= 1".into()));
        }
        Ok(())
    }

    /// Path of an output artifact: `<workdir>/<command>-<seed>.<ext>`.
    pub fn artifact(&self, command: &str, ext: &str) -> PathBuf {
        self.workdir.join(format!("{command}-{}.{ext}", self.seed))
    }

    pub fn default_checkpoint(&self) -> PathBuf {
        self.artifact("train", "ckpt")
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse::<T>()
        .map_err(|_| format!("cannot parse value {value:?} for {key}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("{key} must be true or false, got {value:?}")),
    }
}
