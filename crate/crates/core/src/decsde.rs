//! The embedding engine: character-aware lexical embeddings, per-language
//! low-rank transforms, latent semantic attention, weight tying and
//! precomputed inference tables.
//!
//! A subword `w` of language `i` is embedded in four stages:
//!
//! 1. lexical: `c(w) = tanh(Wc . BoN(w))` over its character n-gram counts;
//! 2. language transform: `c_i(w) = tanh((I + U_i V_i) . c(w))` (low-rank),
//!    or `tanh(W_i . c(w))` (full), or `c(w)` unchanged (transform ablation);
//! 3. latent semantics: attention over a shared matrix,
//!    `s(w) = Ws . softmax(Ws^T . c_i(w))`;
//! 4. sum: `e(w) = c_i(w) + s(w)`.
//!
//! Special tokens (PAD/BOS/EOS/UNK/flags) have no meaningful spelling and
//! use dedicated learned rows instead. The full-vocabulary embedding matrix
//! doubles as the pre-softmax projection when weight tying is on, and can
//! be precomputed once parameters are frozen, making decoding as cheap as
//! a plain lookup table.

use std::fmt;
use std::sync::Arc;

use crate::chargrams::{bon_vector, NGramVocab};
use crate::kernel::{
    KernelError, ParamId, ParamSet, Rng, SparseMatrix, Tape, Tensor, ValueId,
};
use crate::segmenter::SubwordVocab;

#[derive(Debug, Clone, PartialEq)]
pub enum DecSdeError {
    Kernel(KernelError),
    UnknownLanguage(String),
    StaleTable { table_version: u64, params_version: u64 },
    BadConfig(String),
}

impl fmt::Display for DecSdeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Kernel(e) => write!(f, "{e}"),
            Self::UnknownLanguage(code) => write!(f, "unknown language {code:?}"),
            Self::StaleTable {
                table_version,
                params_version,
            } => write!(
                f,
                "stale embedding table: built at parameter version {table_version}, \
                 parameters now at {params_version}"
            ),
            Self::BadConfig(detail) => write!(f, "bad embedding config: {detail}"),
        }
    }
}

impl std::error::Error for DecSdeError {}

impl From<KernelError> for DecSdeError {
    fn from(e: KernelError) -> Self {
        DecSdeError::Kernel(e)
    }
}

/// A registered target language.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LanguageId {
    pub code: String,
    pub index: usize,
}

/// Which embedding variant a model runs with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedMode {
    /// Full pipeline with low-rank transforms and tying.
    DecSde,
    /// Ablation: separate output projection instead of tying.
    DecSdeNoTying,
    /// Ablation: full-rank `d x d` language transforms.
    DecSdeFullTransform,
    /// Ablation: no language transform stage at all.
    DecSdeNoTransform,
    /// Plain lookup embedding over the subword vocabulary.
    LookupPiece,
    /// Plain lookup embedding over the word-level vocabulary.
    LookupWord,
}

impl EmbedMode {
    pub fn is_decsde(&self) -> bool {
        !matches!(self, EmbedMode::LookupPiece | EmbedMode::LookupWord)
    }

    pub fn is_word_level(&self) -> bool {
        matches!(self, EmbedMode::LookupWord)
    }

    /// Tying default for the variant; only the no-tying ablation unties.
    pub fn ties_by_default(&self) -> bool {
        !matches!(self, EmbedMode::DecSdeNoTying)
    }

    pub fn parse(s: &str) -> Result<Self, DecSdeError> {
        match s {
            "decsde" => Ok(EmbedMode::DecSde),
            "decsde-no-tying" => Ok(EmbedMode::DecSdeNoTying),
            "decsde-full-transform" => Ok(EmbedMode::DecSdeFullTransform),
            "decsde-no-transform" => Ok(EmbedMode::DecSdeNoTransform),
            "lookup-piece" => Ok(EmbedMode::LookupPiece),
            "lookup-word" => Ok(EmbedMode::LookupWord),
            _ => Err(DecSdeError::BadConfig(format!("unknown embed mode {s:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            EmbedMode::DecSde => "decsde",
            EmbedMode::DecSdeNoTying => "decsde-no-tying",
            EmbedMode::DecSdeFullTransform => "decsde-full-transform",
            EmbedMode::DecSdeNoTransform => "decsde-no-transform",
            EmbedMode::LookupPiece => "lookup-piece",
            EmbedMode::LookupWord => "lookup-word",
        }
    }
}

/// Per-language transform parameters.
#[derive(Debug, Clone)]
pub enum LangTransform {
    /// `I + U V` with `U: [d, u]`, `V: [u, d]`, applied inside tanh.
    LowRank { u: ParamId, v: ParamId, rank: usize },
    /// Full `d x d` matrix, applied inside tanh.
    Full(ParamId),
    /// Transform stage removed; the lexical embedding passes through
    /// untouched (no tanh).
    None,
}

/// Structural choice of transform per language, before parameters exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    LowRank { rank: usize },
    Full,
    None,
}

/// All trainable embedding parameters, as handles into a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct DecSdeParams {
    /// Character n-gram embedding table, stored `[n, d]` (row per gram).
    pub w_c: ParamId,
    /// Shared latent semantic matrix, stored `[d, s]`.
    pub w_s: ParamId,
    /// Transform per registered language, indexed by `LanguageId::index`.
    pub transforms: Vec<LangTransform>,
    /// Learned rows for special tokens, `[num_specials, d]`.
    pub special_rows: ParamId,
    pub dim: usize,
    pub latent: usize,
}

/// Precomputed `V x d` embedding matrix for one language, stamped with the
/// parameter version it was built from.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
    pub language: LanguageId,
    pub params_version: u64,
}

impl EmbeddingTable {
    /// Rejects use of a table built from parameters that changed since.
    pub fn check_fresh(&self, params: &ParamSet) -> Result<(), DecSdeError> {
        if self.params_version != params.version() {
            return Err(DecSdeError::StaleTable {
                table_version: self.params_version,
                params_version: params.version(),
            });
        }
        Ok(())
    }

    /// Writes the table: magic `DSTB`, language, version stamp, `V x d`
    /// little-endian `f32` rows.
    pub fn save(&self, path: &std::path::Path) -> Result<(), DecSdeError> {
        let mut buf: Vec<u8> = Vec::with_capacity(32 + self.matrix.numel() * 4);
        buf.extend_from_slice(b"DSTB");
        let code = self.language.code.as_bytes();
        buf.extend_from_slice(&(code.len() as u32).to_le_bytes());
        buf.extend_from_slice(code);
        buf.extend_from_slice(&(self.language.index as u32).to_le_bytes());
        buf.extend_from_slice(&self.params_version.to_le_bytes());
        buf.extend_from_slice(&(self.matrix.shape()[0] as u32).to_le_bytes());
        buf.extend_from_slice(&(self.matrix.shape()[1] as u32).to_le_bytes());
        for &v in self.matrix.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        std::fs::write(path, buf)
            .map_err(|e| DecSdeError::BadConfig(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, DecSdeError> {
        let buf = std::fs::read(path)
            .map_err(|e| DecSdeError::BadConfig(format!("{}: {e}", path.display())))?;
        let corrupt = || DecSdeError::BadConfig(format!("{}: not a table file", path.display()));
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], DecSdeError> {
            if pos + n > buf.len() {
                return Err(corrupt());
            }
            let s = &buf[pos..pos + n];
            pos += n;
            Ok(s)
        };
        if take(4)? != b"DSTB" {
            return Err(corrupt());
        }
        let code_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let code = String::from_utf8(take(code_len)?.to_vec()).map_err(|_| corrupt())?;
        let index = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let params_version = u64::from_le_bytes(take(8)?.try_into().unwrap());
        let rows = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let raw = take(rows * cols * 4)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(EmbeddingTable {
            matrix: Tensor::from_vec(&[rows, cols], data).map_err(|_| corrupt())?,
            language: LanguageId { code, index },
            params_version,
        })
    }
}

/// Lexical stage: `tanh(Wc . BoN)` for a stack of BoN rows.
pub fn char_aware_embedding(
    tape: &mut Tape,
    params: &ParamSet,
    w_c: ParamId,
    bon_rows: Arc<SparseMatrix>,
) -> Result<ValueId, KernelError> {
    let table = tape.param(params, w_c);
    let bag = tape.bag_sum(bon_rows, table)?;
    tape.tanh(bag)
}

/// Language transform stage over a `[B, d]` batch of lexical embeddings.
pub fn lang_transform(
    tape: &mut Tape,
    params: &ParamSet,
    transform: &LangTransform,
    c: ValueId,
) -> Result<ValueId, KernelError> {
    match transform {
        LangTransform::LowRank { u, v, .. } => {
            let uv = tape.param(params, *u);
            let vv = tape.param(params, *v);
            let cv = tape.matmul_nt(c, vv)?; // [B, u]
            let cuv = tape.matmul_nt(cv, uv)?; // [B, d]
            let sum = tape.add(c, cuv)?;
            tape.tanh(sum)
        }
        LangTransform::Full(w) => {
            let wv = tape.param(params, *w);
            let wc = tape.matmul_nt(c, wv)?;
            tape.tanh(wc)
        }
        LangTransform::None => Ok(c),
    }
}

/// Latent semantic stage: attention over the shared matrix using the
/// transformed lexical embedding as query.
pub fn latent_semantic(
    tape: &mut Tape,
    params: &ParamSet,
    w_s: ParamId,
    c_i: ValueId,
) -> Result<ValueId, KernelError> {
    let ws = tape.param(params, w_s); // [d, s]
    let logits = tape.matmul(c_i, ws)?; // [B, s]
    let attn = tape.softmax_last(logits)?;
    tape.matmul_nt(attn, ws) // [B, d]
}

/// Tied pre-softmax projection: `logits = hidden . table^T`, no bias.
pub fn tied_logits(
    tape: &mut Tape,
    hidden: ValueId,
    table: ValueId,
) -> Result<ValueId, KernelError> {
    tape.matmul_nt(hidden, table)
}

/// Plain lookup embedding: row gather from an embedding table value.
pub fn lookup_embed(
    tape: &mut Tape,
    table: ValueId,
    ids: &[usize],
) -> Result<ValueId, KernelError> {
    tape.gather_rows(table, ids)
}

/// The embedding engine bound to one vocabulary and n-gram inventory.
#[derive(Debug, Clone)]
pub struct DecSdeEmbedder {
    pub params: DecSdeParams,
    languages: Vec<LanguageId>,
    bon: Arc<SparseMatrix>,
    ngrams: NGramVocab,
    num_specials: usize,
    vocab_len: usize,
    full_ids: Vec<usize>,
}

impl DecSdeEmbedder {
    /// Creates fresh parameters for the given vocabulary and languages.
    ///
    /// All matrices initialize uniformly in `[-1/sqrt(d), 1/sqrt(d)]`;
    /// low-rank `U` factors start at zero so every language transform
    /// begins as the identity.
    pub fn new(
        vocab: &SubwordVocab,
        ngrams: &NGramVocab,
        dim: usize,
        latent: usize,
        languages: &[(String, TransformKind)],
        params: &mut ParamSet,
        rng: &mut Rng,
    ) -> Result<Self, DecSdeError> {
        if dim == 0 || latent == 0 {
            return Err(DecSdeError::BadConfig("dim and latent must be > 0".into()));
        }
        for (code, kind) in languages {
            if let TransformKind::LowRank { rank } = kind {
                if *rank >= dim {
                    return Err(DecSdeError::BadConfig(format!(
                        "rank {rank} for {code:?} must be < dim {dim}"
                    )));
                }
            }
        }
        let bound = 1.0 / (dim as f64).sqrt();
        let bon = crate::chargrams::bon_matrix(vocab, ngrams)
            .map_err(|e| DecSdeError::BadConfig(e.to_string()))?;
        // keep initial bag-sum pre-activations inside tanh's linear range:
        // a token sums ~avg_bag gram vectors, so shrink the per-gram scale
        // by sqrt of that count
        let regular_tokens = (vocab.len() - vocab.num_specials()).max(1);
        let avg_bag: f64 = bon
            .entries()
            .iter()
            .map(|&(_, _, w)| w)
            .sum::<f64>()
            / regular_tokens as f64;
        let wc_bound = bound / avg_bag.max(1.0).sqrt();
        let w_c = params.add_uniform("decsde.w_c", &[ngrams.len(), dim], wc_bound, rng);
        let w_s = params.add_uniform("decsde.w_s", &[dim, latent], bound, rng);
        let mut transforms = Vec::with_capacity(languages.len());
        let mut lang_ids = Vec::with_capacity(languages.len());
        for (index, (code, kind)) in languages.iter().enumerate() {
            let t = match kind {
                TransformKind::LowRank { rank } => LangTransform::LowRank {
                    u: params.add(format!("decsde.{code}.u"), Tensor::zeros(&[dim, *rank])),
                    v: params.add_uniform(format!("decsde.{code}.v"), &[*rank, dim], bound, rng),
                    rank: *rank,
                },
                TransformKind::Full => LangTransform::Full(params.add_uniform(
                    format!("decsde.{code}.w"),
                    &[dim, dim],
                    bound,
                    rng,
                )),
                TransformKind::None => LangTransform::None,
            };
            transforms.push(t);
            lang_ids.push(LanguageId {
                code: code.clone(),
                index,
            });
        }
        let special_rows = params.add_uniform(
            "decsde.special_rows",
            &[vocab.num_specials(), dim],
            bound,
            rng,
        );
        Ok(DecSdeEmbedder {
            params: DecSdeParams {
                w_c,
                w_s,
                transforms,
                special_rows,
                dim,
                latent,
            },
            languages: lang_ids,
            bon: Arc::new(bon),
            ngrams: ngrams.clone(),
            num_specials: vocab.num_specials(),
            vocab_len: vocab.len(),
            full_ids: (0..vocab.len()).collect(),
        })
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab_len
    }

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn languages(&self) -> &[LanguageId] {
        &self.languages
    }

    pub fn language(&self, code: &str) -> Result<&LanguageId, DecSdeError> {
        self.languages
            .iter()
            .find(|l| l.code == code)
            .ok_or_else(|| DecSdeError::UnknownLanguage(code.to_string()))
    }

    fn transform_for(&self, lang: usize) -> Result<&LangTransform, DecSdeError> {
        self.params
            .transforms
            .get(lang)
            .ok_or_else(|| DecSdeError::UnknownLanguage(format!("index {lang}")))
    }

    /// Shared pipeline over a stacked BoN matrix. `special_overrides[r]`
    /// replaces row `r` with the given special row when set.
    fn embed_bon_rows(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        bon_rows: Arc<SparseMatrix>,
        special_overrides: &[Option<usize>],
        lang: usize,
    ) -> Result<ValueId, DecSdeError> {
        debug_assert_eq!(bon_rows.rows(), special_overrides.len());
        let transform = self.transform_for(lang)?.clone();
        let lex = char_aware_embedding(tape, params, self.params.w_c, bon_rows)?;
        let transformed = lang_transform(tape, params, &transform, lex)?;
        let sem = latent_semantic(tape, params, self.params.w_s, transformed)?;
        let embedded = tape.add(transformed, sem)?;

        if special_overrides.iter().all(Option::is_none) {
            return Ok(embedded);
        }
        let keep: Vec<f64> = special_overrides
            .iter()
            .map(|o| if o.is_some() { 0.0 } else { 1.0 })
            .collect();
        let drop: Vec<f64> = keep.iter().map(|k| 1.0 - k).collect();
        let special_idx: Vec<usize> = special_overrides
            .iter()
            .map(|o| o.unwrap_or(0))
            .collect();
        let rows = tape.param(params, self.params.special_rows);
        let gathered = tape.gather_rows(rows, &special_idx)?;
        let kept = tape.row_scale(embedded, &keep)?;
        let replaced = tape.row_scale(gathered, &drop)?;
        Ok(tape.add(kept, replaced)?)
    }

    /// Embeds a batch of token ids on the tape; gradients flow into every
    /// embedding parameter. Row `b` equals `embed_token(token_ids[b])`.
    pub fn embed_batch(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        token_ids: &[usize],
        lang: usize,
    ) -> Result<ValueId, DecSdeError> {
        let bon_rows = Arc::new(self.bon.select_rows(token_ids)?);
        let overrides: Vec<Option<usize>> = token_ids
            .iter()
            .map(|&t| if t < self.num_specials { Some(t) } else { None })
            .collect();
        self.embed_bon_rows(tape, params, bon_rows, &overrides, lang)
    }

    /// Embeds the entire vocabulary, one row per token id. This is the
    /// matrix used for tied logits during training.
    pub fn embed_full_vocab(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        lang: usize,
    ) -> Result<ValueId, DecSdeError> {
        let overrides: Vec<Option<usize>> = self
            .full_ids
            .iter()
            .map(|&t| if t < self.num_specials { Some(t) } else { None })
            .collect();
        self.embed_bon_rows(tape, params, Arc::clone(&self.bon), &overrides, lang)
    }

    /// On-the-fly single-token embedding (inference path).
    pub fn embed_token(
        &self,
        params: &ParamSet,
        token_id: usize,
        lang: usize,
    ) -> Result<Vec<f64>, DecSdeError> {
        if token_id >= self.vocab_len {
            return Err(DecSdeError::Kernel(KernelError::IndexOutOfRange {
                op: "embed_token",
                index: token_id,
                bound: self.vocab_len,
            }));
        }
        let mut tape = Tape::new();
        let out = self.embed_batch(&mut tape, params, &[token_id], lang)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Embeds an arbitrary string through the spelling pipeline (used for
    /// word-level embedding analyses; no special-token handling).
    pub fn embed_string(
        &self,
        params: &ParamSet,
        word: &str,
        lang: usize,
    ) -> Result<Vec<f64>, DecSdeError> {
        let bon = bon_vector(word, &self.ngrams);
        let row: Vec<(usize, f64)> = bon
            .entries()
            .iter()
            .map(|&(id, c)| (id, c as f64))
            .collect();
        let bon_rows = Arc::new(SparseMatrix::from_rows(&[row], self.ngrams.len())?);
        let mut tape = Tape::new();
        let out = self.embed_bon_rows(&mut tape, params, bon_rows, &[None], lang)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Precomputes the full `V x d` table for one language from frozen
    /// parameters, stamped with the current parameter version.
    pub fn precompute_table(
        &self,
        params: &ParamSet,
        lang: usize,
    ) -> Result<EmbeddingTable, DecSdeError> {
        let mut tape = Tape::new();
        let out = self.embed_full_vocab(&mut tape, params, lang)?;
        Ok(EmbeddingTable {
            matrix: tape.value(out).clone(),
            language: self.languages[lang].clone(),
            params_version: params.version(),
        })
    }
}
