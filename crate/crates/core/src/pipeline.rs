//! End-to-end experiment assembly: vocabularies from raw text, encoded
//! corpora, model construction and corpus translation.
//!
//! The decoder vocabulary is trained jointly over all target-language
//! corpora (weight tying needs one decoder vocabulary); the source side
//! gets its own vocabulary with one `<2xxx>` flag per target language.
//! The word-level baseline swaps in frequency vocabularies on both sides.

use std::fmt;

use crate::chargrams::{build_ngram_vocab, ChargramError, NGramVocab};
use crate::decsde::{DecSdeError, EmbedMode, EmbeddingTable, TransformKind};
use crate::kernel::{ParamSet, Rng};
use crate::nmt::{greedy_decode, beam_decode, ModelConfig, NmtError, TransformerModel};
use crate::segmenter::{
    build_word_vocab, decode_pieces, decode_words, encode_sentence, encode_words,
    standard_specials, train_bpe, MergeTable, SegmenterError, SubwordVocab, BOUNDARY,
};
use crate::trainer::{ParallelCorpus, TrainConfig, TrainError};

#[derive(Debug, Clone, PartialEq)]
pub enum PipelineError {
    Segmenter(SegmenterError),
    Chargram(ChargramError),
    Embed(DecSdeError),
    Nmt(NmtError),
    Train(TrainError),
    BadSetup(String),
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Segmenter(e) => write!(f, "{e}"),
            Self::Chargram(e) => write!(f, "{e}"),
            Self::Embed(e) => write!(f, "{e}"),
            Self::Nmt(e) => write!(f, "{e}"),
            Self::Train(e) => write!(f, "{e}"),
            Self::BadSetup(detail) => write!(f, "bad experiment setup: {detail}"),
        }
    }
}

impl std::error::Error for PipelineError {}

impl From<SegmenterError> for PipelineError {
    fn from(e: SegmenterError) -> Self {
        Self::Segmenter(e)
    }
}
impl From<ChargramError> for PipelineError {
    fn from(e: ChargramError) -> Self {
        Self::Chargram(e)
    }
}
impl From<DecSdeError> for PipelineError {
    fn from(e: DecSdeError) -> Self {
        Self::Embed(e)
    }
}
impl From<NmtError> for PipelineError {
    fn from(e: NmtError) -> Self {
        Self::Nmt(e)
    }
}
impl From<TrainError> for PipelineError {
    fn from(e: TrainError) -> Self {
        Self::Train(e)
    }
}

/// Raw text for one target language.
#[derive(Debug, Clone, Default)]
pub struct LangText {
    pub code: String,
    pub train_src: Vec<String>,
    pub train_tgt: Vec<String>,
    pub dev_src: Vec<String>,
    pub dev_tgt: Vec<String>,
}

/// Everything fixed before training starts.
#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Subword vocabulary size (piece modes).
    pub vocab_size: usize,
    /// Word vocabulary size (word mode).
    pub word_top_k: usize,
    pub n_max: usize,
    pub min_count: u64,
    /// Per-language transform choices, in flag order.
    pub languages: Vec<(String, TransformKind)>,
}

/// Vocabularies and merge tables for one experiment.
#[derive(Debug, Clone)]
pub struct VocabSet {
    pub src_vocab: SubwordVocab,
    pub src_merges: Option<MergeTable>,
    pub tgt_vocab: SubwordVocab,
    pub tgt_merges: Option<MergeTable>,
    pub ngrams: Option<NGramVocab>,
}

impl VocabSet {
    pub fn encode_src(&self, line: &str) -> Vec<usize> {
        match &self.src_merges {
            Some(mt) => encode_sentence(line, mt, &self.src_vocab),
            None => encode_words(line, &self.src_vocab),
        }
    }

    pub fn encode_tgt(&self, line: &str) -> Vec<usize> {
        match &self.tgt_merges {
            Some(mt) => encode_sentence(line, mt, &self.tgt_vocab),
            None => encode_words(line, &self.tgt_vocab),
        }
    }

    pub fn decode_tgt(&self, ids: &[usize]) -> String {
        match &self.tgt_merges {
            Some(_) => decode_pieces(ids, &self.tgt_vocab),
            None => decode_words(ids, &self.tgt_vocab),
        }
    }

    pub fn flag_ids(&self, languages: &[(String, TransformKind)]) -> Result<Vec<usize>, PipelineError> {
        languages
            .iter()
            .map(|(code, _)| {
                self.src_vocab.flag_id(code).ok_or_else(|| {
                    PipelineError::BadSetup(format!("no flag token for language {code:?}"))
                })
            })
            .collect()
    }
}

/// Filesystem locations for the vocabulary artifacts of one experiment.
#[derive(Debug, Clone)]
pub struct VocabPaths {
    pub src_vocab: std::path::PathBuf,
    pub src_merges: std::path::PathBuf,
    pub tgt_vocab: std::path::PathBuf,
    pub tgt_merges: std::path::PathBuf,
    pub ngrams: std::path::PathBuf,
}

impl VocabPaths {
    pub fn under(dir: &std::path::Path) -> Self {
        VocabPaths {
            src_vocab: dir.join("src.vocab.tsv"),
            src_merges: dir.join("src.merges.txt"),
            tgt_vocab: dir.join("tgt.vocab.tsv"),
            tgt_merges: dir.join("tgt.merges.txt"),
            ngrams: dir.join("ngrams.tsv"),
        }
    }

    /// Whether every artifact required by the mode is present on disk.
    pub fn all_present(&self, mode: EmbedMode) -> bool {
        let mut required = vec![&self.src_vocab, &self.tgt_vocab];
        if !mode.is_word_level() {
            required.push(&self.src_merges);
            required.push(&self.tgt_merges);
        }
        if mode.is_decsde() {
            required.push(&self.ngrams);
        }
        required.iter().all(|p| p.exists())
    }
}

impl VocabSet {
    pub fn save(&self, paths: &VocabPaths) -> Result<(), PipelineError> {
        self.src_vocab.save(&paths.src_vocab)?;
        self.tgt_vocab.save(&paths.tgt_vocab)?;
        if let Some(m) = &self.src_merges {
            m.save(&paths.src_merges)?;
        }
        if let Some(m) = &self.tgt_merges {
            m.save(&paths.tgt_merges)?;
        }
        if let Some(n) = &self.ngrams {
            n.save(&paths.ngrams)?;
        }
        Ok(())
    }

    pub fn load(mode: EmbedMode, paths: &VocabPaths) -> Result<Self, PipelineError> {
        let src_vocab = SubwordVocab::load(&paths.src_vocab)?;
        let tgt_vocab = SubwordVocab::load(&paths.tgt_vocab)?;
        let (src_merges, tgt_merges) = if mode.is_word_level() {
            (None, None)
        } else {
            (
                Some(MergeTable::load(&paths.src_merges)?),
                Some(MergeTable::load(&paths.tgt_merges)?),
            )
        };
        let ngrams = if mode.is_decsde() {
            Some(NGramVocab::load(&paths.ngrams)?)
        } else {
            None
        };
        Ok(VocabSet {
            src_vocab,
            src_merges,
            tgt_vocab,
            tgt_merges,
            ngrams,
        })
    }
}

/// Constructs the model with fresh seeded parameters over existing
/// vocabularies.
pub fn build_model(
    setup: &ExperimentSetup,
    vocabs: &VocabSet,
) -> Result<(TransformerModel, ParamSet), PipelineError> {
    let mut params = ParamSet::new();
    let mut rng = Rng::seed(setup.train.seed);
    let model = TransformerModel::new(
        setup.model.clone(),
        &vocabs.src_vocab,
        &vocabs.tgt_vocab,
        vocabs.ngrams.as_ref(),
        &setup.languages,
        &mut params,
        &mut rng,
    )?;
    Ok((model, params))
}

/// Trains vocabularies from raw text according to the embedding mode.
pub fn build_vocabs(
    setup: &ExperimentSetup,
    data: &[LangText],
) -> Result<VocabSet, PipelineError> {
    if data.is_empty() {
        return Err(PipelineError::BadSetup("no language data".into()));
    }
    let flag_codes: Vec<&str> = setup.languages.iter().map(|(c, _)| c.as_str()).collect();
    let src_specials = standard_specials(&flag_codes);
    let tgt_specials = standard_specials(&[]);

    let src_lines: Vec<&String> = data.iter().flat_map(|d| d.train_src.iter()).collect();
    let tgt_lines: Vec<&String> = data.iter().flat_map(|d| d.train_tgt.iter()).collect();

    if setup.model.embed_mode.is_word_level() {
        let src_vocab = build_word_vocab(&src_lines, setup.word_top_k, &src_specials)?;
        let tgt_vocab = build_word_vocab(&tgt_lines, setup.word_top_k, &tgt_specials)?;
        return Ok(VocabSet {
            src_vocab,
            src_merges: None,
            tgt_vocab,
            tgt_merges: None,
            ngrams: None,
        });
    }

    let (src_merges, src_vocab) = train_bpe(&src_lines, setup.vocab_size, BOUNDARY, &src_specials)?;
    let (tgt_merges, tgt_vocab) = train_bpe(&tgt_lines, setup.vocab_size, BOUNDARY, &tgt_specials)?;
    let ngrams = if setup.model.embed_mode.is_decsde() {
        Some(build_ngram_vocab(&tgt_vocab, setup.n_max, setup.min_count)?)
    } else {
        None
    };
    Ok(VocabSet {
        src_vocab,
        src_merges: Some(src_merges),
        tgt_vocab,
        tgt_merges: Some(tgt_merges),
        ngrams,
    })
}

/// Encodes raw language text into training corpora.
pub fn encode_corpora(
    vocabs: &VocabSet,
    data: &[LangText],
) -> Result<Vec<ParallelCorpus>, PipelineError> {
    let mut corpora = Vec::with_capacity(data.len());
    for (index, lang) in data.iter().enumerate() {
        if lang.train_src.len() != lang.train_tgt.len()
            || lang.dev_src.len() != lang.dev_tgt.len()
        {
            return Err(PipelineError::BadSetup(format!(
                "language {:?}: unaligned corpus sides",
                lang.code
            )));
        }
        corpora.push(ParallelCorpus {
            lang_code: lang.code.clone(),
            lang_index: index,
            train_src: lang.train_src.iter().map(|s| vocabs.encode_src(s)).collect(),
            train_tgt: lang.train_tgt.iter().map(|s| vocabs.encode_tgt(s)).collect(),
            dev_src: lang.dev_src.iter().map(|s| vocabs.encode_src(s)).collect(),
            dev_tgt: lang.dev_tgt.iter().map(|s| vocabs.encode_tgt(s)).collect(),
        });
    }
    Ok(corpora)
}

/// A ready-to-train experiment.
pub struct BuiltExperiment {
    pub model: TransformerModel,
    pub params: ParamSet,
    pub vocabs: VocabSet,
    pub corpora: Vec<ParallelCorpus>,
    pub flag_ids: Vec<usize>,
}

/// Builds vocabularies, encodes corpora and constructs the model with
/// fresh seeded parameters.
pub fn build_experiment(
    setup: &ExperimentSetup,
    data: &[LangText],
) -> Result<BuiltExperiment, PipelineError> {
    if setup.languages.len() != data.len() {
        return Err(PipelineError::BadSetup(format!(
            "{} languages configured, {} corpora supplied",
            setup.languages.len(),
            data.len()
        )));
    }
    for ((code, _), lang) in setup.languages.iter().zip(data) {
        if code != &lang.code {
            return Err(PipelineError::BadSetup(format!(
                "language order mismatch: {code:?} vs {:?}",
                lang.code
            )));
        }
    }
    let vocabs = build_vocabs(setup, data)?;
    let corpora = encode_corpora(&vocabs, data)?;
    let flag_ids = vocabs.flag_ids(&setup.languages)?;
    let (model, params) = build_model(setup, &vocabs)?;
    Ok(BuiltExperiment {
        model,
        params,
        vocabs,
        corpora,
        flag_ids,
    })
}

/// Greedy or beam translation of raw source lines with a precomputed
/// table; returns detokenized text.
#[allow(clippy::too_many_arguments)]
pub fn translate_lines(
    model: &TransformerModel,
    params: &ParamSet,
    vocabs: &VocabSet,
    table: &EmbeddingTable,
    lines: &[String],
    lang_index: usize,
    flag_id: usize,
    beam: usize,
    alpha: f64,
    max_len: usize,
) -> Result<Vec<String>, PipelineError> {
    let mut out = Vec::with_capacity(lines.len());
    for line in lines {
        let src = vocabs.encode_src(line);
        let ids = if beam <= 1 {
            greedy_decode(model, params, &src, lang_index, flag_id, table, max_len)?
        } else {
            beam_decode(
                model, params, &src, lang_index, flag_id, table, beam, alpha, max_len,
            )?
        };
        out.push(vocabs.decode_tgt(&ids));
    }
    Ok(out)
}

/// Convenience: a default desk-scale setup for the given embedding mode
/// and per-language low-rank ranks.
pub fn desk_setup(
    mode: EmbedMode,
    lang_ranks: &[(&str, usize)],
    seed: u64,
) -> ExperimentSetup {
    let languages: Vec<(String, TransformKind)> = lang_ranks
        .iter()
        .map(|(code, rank)| {
            let kind = match mode {
                EmbedMode::DecSdeFullTransform => TransformKind::Full,
                EmbedMode::DecSdeNoTransform => TransformKind::None,
                _ => TransformKind::LowRank { rank: *rank },
            };
            (code.to_string(), kind)
        })
        .collect();
    let model = ModelConfig {
        embed_mode: mode,
        tie_mode: if mode.ties_by_default() {
            crate::nmt::TieMode::TwoWay
        } else {
            crate::nmt::TieMode::Untied
        },
        ..ModelConfig::default()
    };
    let train = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    ExperimentSetup {
        model,
        train,
        vocab_size: 2000,
        word_top_k: 4000,
        n_max: 4,
        min_count: 1,
        languages,
    }
}
