//! Flat `key = value` experiment configuration with flag overrides.
//!
//! Unknown keys are rejected at load so typos fail fast. Re-serializing a
//! parsed config yields a normalized form (sorted keys, canonical
//! spacing); parsing that form round-trips exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use decsde_core::decsde::{EmbedMode, TransformKind};
use decsde_core::nmt::{ModelConfig, TieMode};
use decsde_core::pipeline::{ExperimentSetup, LangText};
use decsde_core::trainer::{AdamConfig, TrainConfig};

use crate::CliError;

/// Keys with fixed names; `u.<lang>` and the per-language corpus path
/// overrides are validated by prefix.
const KNOWN_KEYS: &[&str] = &[
    "data_dir",
    "out_dir",
    "src_vocab",
    "src_merges",
    "tgt_vocab",
    "tgt_merges",
    "ngrams",
    "langs",
    "u",
    "embed_mode",
    "tie_mode",
    "enc_layers",
    "dec_layers",
    "heads",
    "dim",
    "ffn_dim",
    "dropout",
    "max_len",
    "latent",
    "vocab_size",
    "word_top_k",
    "n_max",
    "min_count",
    "lr_peak",
    "warmup_steps",
    "max_epochs",
    "label_smoothing",
    "batch_tokens",
    "seed",
    "beta1",
    "beta2",
    "adam_eps",
    "sampling_temperature",
    "beam",
    "length_alpha",
];

const KNOWN_PREFIXES: &[&str] = &[
    "u.",
    "train_src.",
    "train_tgt.",
    "dev_src.",
    "dev_tgt.",
    "test_src.",
    "test_tgt.",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentConfig {
    map: BTreeMap<String, String>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("config line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            Self::check_key(&key)?;
            if map.insert(key.clone(), value).is_some() {
                return Err(CliError::Config(format!(
                    "config line {}: duplicate key {key:?}",
                    lineno + 1
                )));
            }
        }
        Ok(ExperimentConfig { map })
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn check_key(key: &str) -> Result<(), CliError> {
        if KNOWN_KEYS.contains(&key) || KNOWN_PREFIXES.iter().any(|p| key.starts_with(p)) {
            Ok(())
        } else {
            Err(CliError::Config(format!("unknown config key {key:?}")))
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        Self::check_key(key)?;
        self.map.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    /// Canonical serialization: sorted keys, `key = value` lines.
    pub fn to_normalized_string(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.map {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    fn str_or(&self, key: &str, default: &str) -> String {
        self.get(key).unwrap_or(default).to_string()
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Config(format!("{key}: bad integer {v:?}"))),
        }
    }

    fn u64_or(&self, key: &str, default: u64) -> Result<u64, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Config(format!("{key}: bad integer {v:?}"))),
        }
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64, CliError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Config(format!("{key}: bad number {v:?}"))),
        }
    }

    pub fn langs(&self) -> Result<Vec<String>, CliError> {
        let raw = self
            .get("langs")
            .ok_or_else(|| CliError::Config("missing `langs` (e.g. `langs = hrl,lrl`)".into()))?;
        let langs: Vec<String> = raw
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if langs.is_empty() {
            return Err(CliError::Config("`langs` lists no languages".into()));
        }
        Ok(langs)
    }

    pub fn embed_mode(&self) -> Result<EmbedMode, CliError> {
        EmbedMode::parse(&self.str_or("embed_mode", "decsde"))
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn rank_for(&self, lang: &str) -> Result<usize, CliError> {
        if let Some(v) = self.get(&format!("u.{lang}")) {
            return v
                .parse()
                .map_err(|_| CliError::Config(format!("u.{lang}: bad integer {v:?}")));
        }
        self.usize_or("u", 4)
    }

    pub fn beam(&self) -> Result<usize, CliError> {
        self.usize_or("beam", 5)
    }

    pub fn length_alpha(&self) -> Result<f64, CliError> {
        self.f64_or("length_alpha", 1.0)
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.u64_or("seed", 1)
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.str_or("out_dir", "run"))
    }

    pub fn data_dir(&self) -> Result<PathBuf, CliError> {
        self.get("data_dir")
            .map(PathBuf::from)
            .ok_or_else(|| CliError::Config("missing `data_dir`".into()))
    }

    /// Assembles the full experiment setup from config values.
    pub fn to_setup(&self) -> Result<ExperimentSetup, CliError> {
        let embed_mode = self.embed_mode()?;
        let langs = self.langs()?;
        let mut languages = Vec::with_capacity(langs.len());
        for code in &langs {
            let kind = match embed_mode {
                EmbedMode::DecSdeFullTransform => TransformKind::Full,
                EmbedMode::DecSdeNoTransform => TransformKind::None,
                _ => TransformKind::LowRank {
                    rank: self.rank_for(code)?,
                },
            };
            languages.push((code.clone(), kind));
        }
        let default_tie = if embed_mode.ties_by_default() {
            TieMode::TwoWay
        } else {
            TieMode::Untied
        };
        let tie_mode = match self.get("tie_mode") {
            None => default_tie,
            Some(v) => TieMode::parse(v).map_err(|e| CliError::Config(e.to_string()))?,
        };
        let model = ModelConfig {
            enc_layers: self.usize_or("enc_layers", 2)?,
            dec_layers: self.usize_or("dec_layers", 2)?,
            heads: self.usize_or("heads", 4)?,
            dim: self.usize_or("dim", 64)?,
            ffn_dim: self.usize_or("ffn_dim", 128)?,
            dropout_p: self.f64_or("dropout", 0.3)?,
            embed_mode,
            tie_mode,
            max_len: self.usize_or("max_len", 64)?,
            latent: self.usize_or("latent", 64)?,
        };
        let train = TrainConfig {
            lr_peak: self.f64_or("lr_peak", 5e-4)?,
            warmup_steps: self.u64_or("warmup_steps", 400)?,
            max_epochs: self.usize_or("max_epochs", 50)?,
            dropout: self.f64_or("dropout", 0.3)?,
            label_smoothing: self.f64_or("label_smoothing", 0.1)?,
            batch_tokens: self.usize_or("batch_tokens", 2000)?,
            seed: self.seed()?,
            adam: AdamConfig {
                beta1: self.f64_or("beta1", 0.9)?,
                beta2: self.f64_or("beta2", 0.98)?,
                eps: self.f64_or("adam_eps", 1e-9)?,
            },
            sampling_temperature: self.f64_or("sampling_temperature", 1.0)?,
        };
        Ok(ExperimentSetup {
            model,
            train,
            vocab_size: self.usize_or("vocab_size", 2000)?,
            word_top_k: self.usize_or("word_top_k", 4000)?,
            n_max: self.usize_or("n_max", 4)?,
            min_count: self.u64_or("min_count", 1)?,
            languages,
        })
    }

    /// Path of one corpus file, honoring explicit per-language overrides
    /// and falling back to `{data_dir}/{lang}.{split}.{side}`.
    pub fn corpus_path(&self, kind: &str, lang: &str) -> Result<PathBuf, CliError> {
        if let Some(p) = self.get(&format!("{kind}.{lang}")) {
            return Ok(PathBuf::from(p));
        }
        let (split, side) = kind
            .split_once('_')
            .ok_or_else(|| CliError::Config(format!("bad corpus kind {kind:?}")))?;
        Ok(self.data_dir()?.join(format!("{lang}.{split}.{side}")))
    }

    pub fn artifact_path(&self, key: &str, default_name: &str) -> PathBuf {
        match self.get(key) {
            Some(p) => PathBuf::from(p),
            None => self.out_dir().join(default_name),
        }
    }

    /// Loads training and dev text for every configured language.
    pub fn load_lang_texts(&self) -> Result<Vec<LangText>, CliError> {
        let mut out = Vec::new();
        for code in self.langs()? {
            out.push(LangText {
                code: code.clone(),
                train_src: read_lines(&self.corpus_path("train_src", &code)?)?,
                train_tgt: read_lines(&self.corpus_path("train_tgt", &code)?)?,
                dev_src: read_lines(&self.corpus_path("dev_src", &code)?)?,
                dev_tgt: read_lines(&self.corpus_path("dev_tgt", &code)?)?,
            });
        }
        Ok(out)
    }
}

pub fn read_lines(path: &Path) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(str::to_string).collect())
}

pub fn write_lines(path: &Path, lines: &[String]) -> Result<(), CliError> {
    let mut out = String::new();
    for l in lines {
        out.push_str(l);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
