//! Multilingual NMT toolkit built around character n-gram decoder
//! embeddings with per-language low-rank transforms, weight tying and
//! precomputed inference tables.
//!
//! The crate is organized bottom-up:
//!
//! - [`kernel`]: dense tensors, a fixed-op autodiff tape, sparse count
//!   matrices and a seeded RNG.
//! - [`segmenter`]: BPE subword vocabulary training and application, plus
//!   a word-level baseline vocabulary.
//! - [`chargrams`]: character n-gram inventories and bag-of-n-gram count
//!   vectors for every subword.
//! - [`decsde`]: the embedding engine combining lexical character
//!   embeddings, language-specific low-rank transforms and latent
//!   semantic attention, with weight tying and precomputed tables.
//! - [`nmt`]: a small transformer encoder-decoder with language-flag
//!   multilingual training and greedy/beam decoding.
//! - [`trainer`]: Adam with inverse-square-root learning rate warmup,
//!   label smoothing, deterministic batching and binary checkpoints.
//! - [`evalbench`]: BLEU, embedding-similarity retrieval, rare-word F1,
//!   speed benchmarks and synthetic transfer corpora.

pub mod chargrams;
pub mod decsde;
pub mod evalbench;
pub mod kernel;
pub mod nmt;
pub mod pipeline;
pub mod segmenter;
pub mod trainer;
