//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::losses::{LossSpec, LossVariant, Smoothing};
use crate::sampling::StepOptions;
use crate::schedules::AlphaPolicy;
use crate::transformer::ModelConfig;
use crate::{Error, Result};

use super::adam::AdamConfig;

/// Every key a run configuration may contain, with its default (empty means
/// required or unset).
pub const KEYS: &[(&str, &str)] = &[
    ("train_src", ""),
    ("train_tgt", ""),
    ("valid_src", ""),
    ("valid_tgt", ""),
    ("distill_tgt", ""),
    ("out_dir", ""),
    ("vocab_size", "32000"),
    ("d_model", "64"),
    ("n_heads", "4"),
    ("layers_enc", "2"),
    ("layers_dec", "2"),
    ("d_ff", "256"),
    ("dropout", "0.1"),
    ("max_len", "256"),
    ("share_embeddings", "false"),
    ("variant", "CE"),
    ("smoothing", "0.1"),
    ("smooth_oracle", "true"),
    ("m", "0.5"),
    ("fixed_alpha", ""),
    ("d", "0.8"),
    ("scheduled_sampling", ""),
    ("word_oracle", ""),
    ("lr", "0.0007"),
    ("beta1", "0.9"),
    ("beta2", "0.98"),
    ("adam_eps", "1e-8"),
    ("patience", "4"),
    ("factor", "0.5"),
    ("max_tokens", "2048"),
    ("pretrain_epochs", "5"),
    ("total_iter", "3000"),
    ("seed", "1"),
    ("data_seed", "2"),
    ("step_seed", "3"),
];

/// Optimizer, schedule and loop settings shared by file-based and in-memory
/// training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub model: ModelConfig,
    pub loss: LossSpec,
    pub step: StepOptions,
    /// Final teacher-forcing probability of the ε decay.
    pub d: f64,
    pub adam: AdamConfig,
    pub lr: f64,
    pub patience: usize,
    pub factor: f64,
    pub max_tokens: usize,
    pub pretrain_epochs: usize,
    pub total_iter: usize,
    /// Parameter initialization.
    pub seed: u64,
    /// Batch composition and order. Dropout, mixing and oracle streams come
    /// from `loss.rng_seed`.
    pub data_seed: u64,
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        if !(self.d > 0.0 && self.d < 1.0) {
            return Err(Error::OutOfRange { name: "d", value: self.d, range: "(0, 1)" });
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::OutOfRange { name: "lr", value: self.lr, range: "(0, inf)" });
        }
        if !(self.factor > 0.0 && self.factor <= 1.0) {
            return Err(Error::OutOfRange { name: "factor", value: self.factor, range: "(0, 1]" });
        }
        if self.total_iter == 0 {
            return Err(Error::Config("total_iter must be positive".into()));
        }
        if self.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be positive".into()));
        }
        if let Some(scale) = self.step.word_oracle {
            if !(scale >= 0.0 && scale.is_finite()) {
                return Err(Error::OutOfRange { name: "word_oracle", value: scale, range: "[0, inf)" });
            }
        }
        Ok(())
    }
}

/// A parsed run configuration file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train_src: PathBuf,
    pub train_tgt: PathBuf,
    pub valid_src: PathBuf,
    pub valid_tgt: PathBuf,
    pub distill_tgt: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub vocab_size: usize,
    /// Vocabulary sizes are filled in once the corpus is read.
    pub settings: TrainSettings,
}

struct Fields {
    map: BTreeMap<String, String>,
}

impl Fields {
    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    fn required(&self, key: &str) -> Result<&str> {
        self.raw(key).ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    fn parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.required(key)?;
        raw.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse {raw:?}")))
    }

    fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(_) => self.parse(key).map(Some),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map: BTreeMap<String, String> = KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let key = key.trim();
            if !map.contains_key(key) {
                return Err(Error::Config(format!("line {}: unknown key `{key}`", n + 1)));
            }
            map.insert(key.to_owned(), value.trim().to_owned());
        }
        let f = Fields { map };

        let variant: LossVariant = f.parse("variant")?;
        let alpha = match f.optional::<f64>("fixed_alpha")? {
            Some(a) => AlphaPolicy::Fixed(a),
            None => AlphaPolicy::Linear { m: f.parse("m")? },
        };
        let mut step = StepOptions::for_variant(variant);
        if let Some(ss) = f.optional::<bool>("scheduled_sampling")? {
            step.scheduled_sampling = ss || variant.is_scheduled_sampling();
        }
        step.word_oracle = f.optional("word_oracle")?;

        let settings = TrainSettings {
            model: ModelConfig {
                vocab_src: 1,
                vocab_tgt: 1,
                d_model: f.parse("d_model")?,
                n_heads: f.parse("n_heads")?,
                n_layers_enc: f.parse("layers_enc")?,
                n_layers_dec: f.parse("layers_dec")?,
                d_ff: f.parse("d_ff")?,
                dropout: f.parse("dropout")?,
                max_len: f.parse("max_len")?,
                share_embeddings: f.parse("share_embeddings")?,
            },
            loss: LossSpec {
                variant,
                smoothing: Smoothing { gamma: f.parse("smoothing")?, oracle_terms: f.parse("smooth_oracle")? },
                alpha,
                rng_seed: f.parse("step_seed")?,
            },
            step,
            d: f.parse("d")?,
            adam: AdamConfig { beta1: f.parse("beta1")?, beta2: f.parse("beta2")?, eps: f.parse("adam_eps")? },
            lr: f.parse("lr")?,
            patience: f.parse("patience")?,
            factor: f.parse("factor")?,
            max_tokens: f.parse("max_tokens")?,
            pretrain_epochs: f.parse("pretrain_epochs")?,
            total_iter: f.parse("total_iter")?,
            seed: f.parse("seed")?,
            data_seed: f.parse("data_seed")?,
        };
        let cfg = RunConfig {
            train_src: f.parse("train_src")?,
            train_tgt: f.parse("train_tgt")?,
            valid_src: f.parse("valid_src")?,
            valid_tgt: f.parse("valid_tgt")?,
            distill_tgt: f.optional("distill_tgt")?,
            out_dir: f.parse("out_dir")?,
            vocab_size: f.parse("vocab_size")?,
            settings,
        };
        if cfg.settings.loss.variant == LossVariant::SelfDistill && cfg.distill_tgt.is_none() {
            return Err(Error::Config("SELF_DISTILL needs `distill_tgt`".into()));
        }
        Ok(cfg)
    }

    /// Parses the file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.train_src, &mut cfg.train_tgt, &mut cfg.valid_src, &mut cfg.valid_tgt, &mut cfg.out_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(p) = cfg.distill_tgt.as_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Every input file must exist before training starts.
    pub fn check_paths(&self) -> Result<()> {
        let inputs = [
            Some(&self.train_src),
            Some(&self.train_tgt),
            Some(&self.valid_src),
            Some(&self.valid_tgt),
            self.distill_tgt.as_ref(),
        ];
        for p in inputs.into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")));
            }
        }
        Ok(())
    }
}

/// `model.conf` sidecar written next to checkpoints.
pub fn model_config_to_text(c: &ModelConfig) -> String {
    format!(
        "vocab_src = {}\nvocab_tgt = {}\nd_model = {}\nn_heads = {}\nlayers_enc = {}\nlayers_dec = {}\nd_ff = {}\ndropout = {}\nmax_len = {}\nshare_embeddings = {}\n",
        c.vocab_src, c.vocab_tgt, c.d_model, c.n_heads, c.n_layers_enc, c.n_layers_dec, c.d_ff, c.dropout, c.max_len, c.share_embeddings
    )
}

pub fn model_config_from_text(text: &str) -> Result<ModelConfig> {
    let mut map = BTreeMap::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("model.conf: bad line {line:?}")))?;
        map.insert(k.trim().to_owned(), v.trim().to_owned());
    }
    let f = Fields { map };
    let c = ModelConfig {
        vocab_src: f.parse("vocab_src")?,
        vocab_tgt: f.parse("vocab_tgt")?,
        d_model: f.parse("d_model")?,
        n_heads: f.parse("n_heads")?,
        n_layers_enc: f.parse("layers_enc")?,
        n_layers_dec: f.parse("layers_dec")?,
        d_ff: f.parse("d_ff")?,
        dropout: f.parse("dropout")?,
        max_len: f.parse("max_len")?,
        share_embeddings: f.parse("share_embeddings")?,
    };
    c.validate()?;
    Ok(c)
}
