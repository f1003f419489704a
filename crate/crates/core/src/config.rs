//! Model and training configuration, read from `key = value` files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::TagScheme;
use crate::error::{Error, Result};
use crate::fusion::FusionSettings;
use crate::graph::GraphVariant;
use crate::tape::MaskMode;

/// Architecture hyperparameters; stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Character embedding and hidden size.
    pub d_c: usize,
    /// Word embedding size.
    pub d_w: usize,
    /// FFN inner size; 0 means `4 · d_c`.
    pub d_ff: usize,
    pub heads: usize,
    pub layers: usize,
    pub scheme: TagScheme,
    #[serde(with = "variant_name")]
    pub variant: GraphVariant,
    #[serde(with = "mask_mode_name")]
    pub mask_mode: MaskMode,
    /// Shortest lexicon word matched against sentences.
    pub min_word_len: usize,
    /// Forbid ill-formed label transitions when decoding.
    pub constrained_decoding: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_c: 300,
            d_w: 200,
            d_ff: 0,
            heads: 10,
            layers: 1,
            scheme: TagScheme::Bio,
            variant: GraphVariant::Standard,
            mask_mode: MaskMode::Additive,
            min_word_len: 2,
            constrained_decoding: false,
        }
    }
}

impl ModelConfig {
    pub fn ffn_dim(&self) -> usize {
        if self.d_ff == 0 {
            4 * self.d_c
        } else {
            self.d_ff
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_c == 0 || self.d_w == 0 {
            return Err(Error::Config("d_c and d_w must be positive".into()));
        }
        if !self.d_c.is_multiple_of(2) || !self.d_w.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "d_c ({}) and d_w ({}) must be even for sinusoidal positions",
                self.d_c, self.d_w
            )));
        }
        if self.heads == 0 || !self.d_c.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_c = {} is not divisible by heads = {}",
                self.d_c, self.heads
            )));
        }
        if self.min_word_len == 0 {
            return Err(Error::Config("min_word_len must be at least 1".into()));
        }
        Ok(())
    }

    pub fn fusion_settings(&self, dropout: f64) -> FusionSettings {
        FusionSettings {
            heads: self.heads,
            mask_mode: self.mask_mode,
            dropout,
        }
    }
}

mod variant_name {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &GraphVariant, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(v.name())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<GraphVariant, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

mod mask_mode_name {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &MaskMode, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(mask_mode_str(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<MaskMode, D::Error> {
        let s = String::deserialize(d)?;
        parse_mask_mode(&s).map_err(serde::de::Error::custom)
    }
}

fn mask_mode_str(m: MaskMode) -> &'static str {
    match m {
        MaskMode::Additive => "additive",
        MaskMode::Multiplicative => "multiplicative",
    }
}

fn parse_mask_mode(s: &str) -> Result<MaskMode> {
    match s {
        "additive" => Ok(MaskMode::Additive),
        "multiplicative" => Ok(MaskMode::Multiplicative),
        _ => Err(Error::Config(format!(
            "unknown mask mode '{s}' (expected additive or multiplicative)"
        ))),
    }
}

/// Everything `train` needs. Unset paths are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lambda0: f64,
    pub lambda1: f64,
    pub tau: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub embedding_dropout: f64,
    pub fusion_dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Half-width of the uniform range for randomly initialized embeddings.
    pub init_scale: f64,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub char_embeddings: Option<PathBuf>,
    pub word_embeddings: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            lambda0: 0.5,
            lambda1: 0.8,
            tau: 0.1,
            learning_rate: 2e-5,
            weight_decay: 0.05,
            embedding_dropout: 0.5,
            fusion_dropout: 0.3,
            epochs: 15,
            batch_size: 16,
            seed: 42,
            init_scale: 0.1,
            train: None,
            dev: None,
            test: None,
            lexicon: None,
            char_embeddings: None,
            word_embeddings: None,
            out_dir: None,
        }
    }
}

/// Keys accepted by [`TrainConfig::set`].
pub const KEYS: &[&str] = &[
    "d_c",
    "d_w",
    "d_ff",
    "heads",
    "layers",
    "scheme",
    "variant",
    "mask_mode",
    "min_word_len",
    "constrained_decoding",
    "lambda0",
    "lambda1",
    "tau",
    "learning_rate",
    "weight_decay",
    "embedding_dropout",
    "fusion_dropout",
    "epochs",
    "batch_size",
    "seed",
    "init_scale",
    "train",
    "dev",
    "test",
    "lexicon",
    "char_embeddings",
    "word_embeddings",
    "out_dir",
];

fn parse_num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, found '{value}'"))),
    }
}

impl TrainConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, path)?;
        // Relative data paths are resolved against the config file's directory.
        if let Some(dir) = path.parent() {
            for p in cfg.paths_mut().into_iter().flatten() {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Parses `key = value` lines on top of the defaults. `#` starts a comment.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected 'key = value'".into()))?;
            cfg.set(key.trim(), value.trim()).map_err(|e| err(e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn paths_mut(&mut self) -> [&mut Option<PathBuf>; 7] {
        [
            &mut self.train,
            &mut self.dev,
            &mut self.test,
            &mut self.lexicon,
            &mut self.char_embeddings,
            &mut self.word_embeddings,
            &mut self.out_dir,
        ]
    }

    /// Sets one key; used for both file entries and command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "d_c" => m.d_c = parse_num(key, value)?,
            "d_w" => m.d_w = parse_num(key, value)?,
            "d_ff" => m.d_ff = parse_num(key, value)?,
            "heads" => m.heads = parse_num(key, value)?,
            "layers" => m.layers = parse_num(key, value)?,
            "scheme" => m.scheme = value.parse()?,
            "variant" => m.variant = value.parse()?,
            "mask_mode" => m.mask_mode = parse_mask_mode(value)?,
            "min_word_len" => m.min_word_len = parse_num(key, value)?,
            "constrained_decoding" => m.constrained_decoding = parse_bool(key, value)?,
            "lambda0" => self.lambda0 = parse_num(key, value)?,
            "lambda1" => self.lambda1 = parse_num(key, value)?,
            "tau" => self.tau = parse_num(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "weight_decay" => self.weight_decay = parse_num(key, value)?,
            "embedding_dropout" => self.embedding_dropout = parse_num(key, value)?,
            "fusion_dropout" => self.fusion_dropout = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "init_scale" => self.init_scale = parse_num(key, value)?,
            "train" => self.train = Some(value.into()),
            "dev" => self.dev = Some(value.into()),
            "test" => self.test = Some(value.into()),
            "lexicon" => self.lexicon = Some(value.into()),
            "char_embeddings" => self.char_embeddings = Some(value.into()),
            "word_embeddings" => self.word_embeddings = Some(value.into()),
            "out_dir" => self.out_dir = Some(value.into()),
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        for (name, v) in [("lambda0", self.lambda0), ("lambda1", self.lambda1), ("tau", self.tau)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} must lie in [0, 1]")));
            }
        }
        for (name, v) in [
            ("embedding_dropout", self.embedding_dropout),
            ("fusion_dropout", self.fusion_dropout),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} must lie in [0, 1)")));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight_decay must be finite and non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Renders the configuration in the same `key = value` format it is read from.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("d_c", m.d_c.to_string());
        kv("d_w", m.d_w.to_string());
        kv("d_ff", m.d_ff.to_string());
        kv("heads", m.heads.to_string());
        kv("layers", m.layers.to_string());
        kv("scheme", m.scheme.to_string());
        kv("variant", m.variant.to_string());
        kv("mask_mode", mask_mode_str(m.mask_mode).to_string());
        kv("min_word_len", m.min_word_len.to_string());
        kv("constrained_decoding", m.constrained_decoding.to_string());
        kv("lambda0", self.lambda0.to_string());
        kv("lambda1", self.lambda1.to_string());
        kv("tau", self.tau.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("embedding_dropout", self.embedding_dropout.to_string());
        kv("fusion_dropout", self.fusion_dropout.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("seed", self.seed.to_string());
        kv("init_scale", self.init_scale.to_string());
        let paths = [
            ("train", &self.train),
            ("dev", &self.dev),
            ("test", &self.test),
            ("lexicon", &self.lexicon),
            ("char_embeddings", &self.char_embeddings),
            ("word_embeddings", &self.word_embeddings),
            ("out_dir", &self.out_dir),
        ];
        for (k, p) in paths {
            if let Some(p) = p {
                kv(k, p.display().to_string());
            }
        }
        out
    }
}
