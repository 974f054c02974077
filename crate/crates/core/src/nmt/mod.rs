//! Transformer encoder-decoder with language-flag multilingual training.
//!
//! The encoder reads the source sentence with a `<2xxx>` flag prepended;
//! the decoder embeds target subwords through the configured embedding
//! mode and projects to the vocabulary through the tied embedding matrix
//! (or a separate projection when tying is off).

mod decode;
mod model;

pub use decode::{beam_decode, greedy_decode, DEFAULT_BEAM, DEFAULT_LENGTH_ALPHA};
pub use model::TransformerModel;

use std::fmt;

use crate::decsde::{DecSdeError, EmbedMode};
use crate::kernel::KernelError;
use crate::segmenter::{BOS_ID, EOS_ID, PAD_ID};

#[derive(Debug, Clone, PartialEq)]
pub enum NmtError {
    Kernel(KernelError),
    Embed(DecSdeError),
    BadConfig(String),
    MixedLanguageBatch,
    EmptyBatch,
}

impl fmt::Display for NmtError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Kernel(e) => write!(f, "{e}"),
            Self::Embed(e) => write!(f, "{e}"),
            Self::BadConfig(detail) => write!(f, "bad model config: {detail}"),
            Self::MixedLanguageBatch => {
                write!(f, "batch mixes target languages; one language per batch")
            }
            Self::EmptyBatch => write!(f, "empty batch"),
        }
    }
}

impl std::error::Error for NmtError {}

impl From<KernelError> for NmtError {
    fn from(e: KernelError) -> Self {
        NmtError::Kernel(e)
    }
}

impl From<DecSdeError> for NmtError {
    fn from(e: DecSdeError) -> Self {
        NmtError::Embed(e)
    }
}

/// How the decoder embedding matrix is shared.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieMode {
    /// Decoder input embedding and pre-softmax projection share storage.
    TwoWay,
    /// Additionally the encoder lookup shares it (joint vocabulary only).
    ThreeWay,
    /// Separate projection matrix.
    Untied,
}

impl TieMode {
    pub fn parse(s: &str) -> Result<Self, NmtError> {
        match s {
            "two-way" => Ok(TieMode::TwoWay),
            "three-way" => Ok(TieMode::ThreeWay),
            "none" => Ok(TieMode::Untied),
            _ => Err(NmtError::BadConfig(format!("unknown tie mode {s:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TieMode::TwoWay => "two-way",
            TieMode::ThreeWay => "three-way",
            TieMode::Untied => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub ffn_dim: usize,
    pub dropout_p: f64,
    pub embed_mode: EmbedMode,
    pub tie_mode: TieMode,
    pub max_len: usize,
    /// Latent semantic size `s` of the embedding engine.
    pub latent: usize,
}

impl Default for ModelConfig {
    /// Desk-scale defaults, CPU-trainable in minutes.
    fn default() -> Self {
        ModelConfig {
            enc_layers: 2,
            dec_layers: 2,
            heads: 4,
            dim: 64,
            ffn_dim: 128,
            dropout_p: 0.3,
            embed_mode: EmbedMode::DecSde,
            tie_mode: TieMode::TwoWay,
            max_len: 64,
            latent: 64,
        }
    }
}

impl ModelConfig {
    /// The configuration the reference setup trains at (GPU scale).
    pub fn paper_scale() -> Self {
        ModelConfig {
            enc_layers: 6,
            dec_layers: 6,
            heads: 4,
            dim: 512,
            ffn_dim: 1024,
            dropout_p: 0.3,
            embed_mode: EmbedMode::DecSde,
            tie_mode: TieMode::TwoWay,
            max_len: 256,
            latent: 10_000,
        }
    }

    pub fn validate(&self) -> Result<(), NmtError> {
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(NmtError::BadConfig(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(NmtError::BadConfig(format!(
                "dropout {} not in [0,1)",
                self.dropout_p
            )));
        }
        if self.enc_layers == 0 || self.dec_layers == 0 || self.max_len == 0 {
            return Err(NmtError::BadConfig("layers and max_len must be > 0".into()));
        }
        Ok(())
    }
}

/// One padded training batch. The language flag is already prepended to
/// every source sentence; `tgt_out` is `tgt_in` shifted by one with EOS
/// appended.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub src_len: usize,
    pub tgt_len: usize,
    /// Flattened `[size, src_len]`.
    pub src_ids: Vec<usize>,
    /// True at PAD positions of `src_ids`.
    pub src_pad: Vec<bool>,
    /// Flattened `[size, tgt_len]`, starts with BOS.
    pub tgt_in: Vec<usize>,
    /// Flattened `[size, tgt_len]`, ends with EOS.
    pub tgt_out: Vec<usize>,
    /// True where `tgt_out` is a real token (counted in the loss).
    pub tgt_mask: Vec<bool>,
    /// Language index per sentence.
    pub langs: Vec<usize>,
}

impl Batch {
    /// Builds a padded batch. `flag_ids[lang]` is the source-vocabulary id
    /// of the language's flag token, prepended to each source sentence.
    pub fn build(
        src_seqs: &[Vec<usize>],
        tgt_seqs: &[Vec<usize>],
        langs: &[usize],
        flag_ids: &[usize],
        max_len: usize,
    ) -> Result<Batch, NmtError> {
        if src_seqs.is_empty() || src_seqs.len() != tgt_seqs.len() || langs.len() != src_seqs.len()
        {
            return Err(NmtError::EmptyBatch);
        }
        let size = src_seqs.len();
        for &l in langs {
            if l >= flag_ids.len() {
                return Err(NmtError::BadConfig(format!(
                    "language index {l} has no flag token"
                )));
            }
        }
        // source: flag + tokens + EOS
        let src_budget = max_len.saturating_sub(2).max(1);
        let srcs: Vec<Vec<usize>> = src_seqs
            .iter()
            .zip(langs)
            .map(|(s, &l)| {
                let mut v = Vec::with_capacity(s.len().min(src_budget) + 2);
                v.push(flag_ids[l]);
                v.extend(s.iter().take(src_budget));
                v.push(EOS_ID);
                v
            })
            .collect();
        let tgt_budget = max_len.saturating_sub(1).max(1);
        let tgts: Vec<Vec<usize>> = tgt_seqs
            .iter()
            .map(|t| t.iter().take(tgt_budget).copied().collect())
            .collect();

        let src_len = srcs.iter().map(Vec::len).max().unwrap();
        let tgt_len = tgts.iter().map(Vec::len).max().unwrap() + 1; // BOS or EOS slot

        let mut src_ids = vec![PAD_ID; size * src_len];
        let mut src_pad = vec![true; size * src_len];
        let mut tgt_in = vec![PAD_ID; size * tgt_len];
        let mut tgt_out = vec![PAD_ID; size * tgt_len];
        let mut tgt_mask = vec![false; size * tgt_len];
        for b in 0..size {
            for (l, &id) in srcs[b].iter().enumerate() {
                src_ids[b * src_len + l] = id;
                src_pad[b * src_len + l] = false;
            }
            tgt_in[b * tgt_len] = BOS_ID;
            for (l, &id) in tgts[b].iter().enumerate() {
                tgt_in[b * tgt_len + l + 1] = id;
                tgt_out[b * tgt_len + l] = id;
                tgt_mask[b * tgt_len + l] = true;
            }
            tgt_out[b * tgt_len + tgts[b].len()] = EOS_ID;
            tgt_mask[b * tgt_len + tgts[b].len()] = true;
        }
        Ok(Batch {
            size,
            src_len,
            tgt_len,
            src_ids,
            src_pad,
            tgt_in,
            tgt_out,
            tgt_mask,
            langs: langs.to_vec(),
        })
    }

    /// The single language of the batch; mixed batches are rejected.
    pub fn lang(&self) -> Result<usize, NmtError> {
        let first = *self.langs.first().ok_or(NmtError::EmptyBatch)?;
        if self.langs.iter().any(|&l| l != first) {
            return Err(NmtError::MixedLanguageBatch);
        }
        Ok(first)
    }

    /// Number of real (loss-counted) target tokens.
    pub fn target_tokens(&self) -> usize {
        self.tgt_mask.iter().filter(|&&m| m).count()
    }
}
