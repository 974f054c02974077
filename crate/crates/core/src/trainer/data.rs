//! Encoded parallel corpora and deterministic token-budget batching.

use crate::kernel::Rng;
use crate::nmt::{Batch, NmtError};

/// One language pair's encoded sentences, train and dev splits.
#[derive(Debug, Clone)]
pub struct ParallelCorpus {
    pub lang_code: String,
    pub lang_index: usize,
    pub train_src: Vec<Vec<usize>>,
    pub train_tgt: Vec<Vec<usize>>,
    pub dev_src: Vec<Vec<usize>>,
    pub dev_tgt: Vec<Vec<usize>>,
}

impl ParallelCorpus {
    pub fn len(&self) -> usize {
        self.train_src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_src.is_empty()
    }
}

/// Packs sentence indices into batches under a token budget: a batch costs
/// `rows * max(len)`, counting the longer side of each pair plus overhead
/// for flag/BOS/EOS slots.
fn pack(
    src: &[Vec<usize>],
    tgt: &[Vec<usize>],
    order: &[usize],
    batch_tokens: usize,
) -> Vec<Vec<usize>> {
    let mut batches = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut max_len = 0usize;
    for &i in order {
        let cost = src[i].len().max(tgt[i].len()) + 2;
        let new_max = max_len.max(cost);
        if !current.is_empty() && (current.len() + 1) * new_max > batch_tokens {
            batches.push(std::mem::take(&mut current));
            max_len = 0;
        }
        max_len = max_len.max(cost);
        current.push(i);
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

/// Builds one epoch's batches for a corpus. The (shuffled) order is
/// stably re-sorted by sentence cost before packing so batches waste
/// little padding; the epoch schedule re-shuffles batch order afterwards.
pub fn corpus_batches(
    corpus: &ParallelCorpus,
    order: &[usize],
    batch_tokens: usize,
    flag_ids: &[usize],
    max_len: usize,
) -> Result<Vec<Batch>, NmtError> {
    let mut order = order.to_vec();
    order.sort_by_key(|&i| corpus.train_src[i].len().max(corpus.train_tgt[i].len()));
    let groups = pack(&corpus.train_src, &corpus.train_tgt, &order, batch_tokens);
    groups
        .into_iter()
        .map(|group| {
            let src: Vec<Vec<usize>> = group.iter().map(|&i| corpus.train_src[i].clone()).collect();
            let tgt: Vec<Vec<usize>> = group.iter().map(|&i| corpus.train_tgt[i].clone()).collect();
            let langs = vec![corpus.lang_index; group.len()];
            Batch::build(&src, &tgt, &langs, flag_ids, max_len)
        })
        .collect()
}

/// Fixed-order dev batches for perplexity evaluation.
pub fn dev_batches(
    corpus: &ParallelCorpus,
    batch_tokens: usize,
    flag_ids: &[usize],
    max_len: usize,
) -> Result<Vec<Batch>, NmtError> {
    let order: Vec<usize> = (0..corpus.dev_src.len()).collect();
    let groups = pack(&corpus.dev_src, &corpus.dev_tgt, &order, batch_tokens);
    groups
        .into_iter()
        .map(|group| {
            let src: Vec<Vec<usize>> = group.iter().map(|&i| corpus.dev_src[i].clone()).collect();
            let tgt: Vec<Vec<usize>> = group.iter().map(|&i| corpus.dev_tgt[i].clone()).collect();
            let langs = vec![corpus.lang_index; group.len()];
            Batch::build(&src, &tgt, &langs, flag_ids, max_len)
        })
        .collect()
}

/// One epoch's interleaved batch schedule over all corpora.
///
/// Every training batch of every corpus appears once (proportional mixing);
/// a sampling temperature above 1 additionally duplicates batches of the
/// smaller corpora by `(n_c / n_min)^(1/T - 1)` relative to proportional.
pub fn epoch_schedule(
    corpora: &[ParallelCorpus],
    per_corpus_batches: &[usize],
    temperature: f64,
    rng: &mut Rng,
) -> Vec<(usize, usize)> {
    debug_assert_eq!(corpora.len(), per_corpus_batches.len());
    let sizes: Vec<f64> = corpora.iter().map(|c| c.len().max(1) as f64).collect();
    let max_size = sizes.iter().cloned().fold(1.0, f64::max);
    let mut schedule: Vec<(usize, usize)> = Vec::new();
    for (c, &n_batches) in per_corpus_batches.iter().enumerate() {
        // proportional share is one pass; temperature > 1 upsamples the
        // smaller corpora toward uniform
        let boost = if temperature > 1.0 {
            (max_size / sizes[c]).powf(1.0 - 1.0 / temperature)
        } else {
            1.0
        };
        let repeats = boost.round().max(1.0) as usize;
        for r in 0..repeats {
            let _ = r;
            for b in 0..n_batches {
                schedule.push((c, b));
            }
        }
    }
    rng.shuffle(&mut schedule);
    schedule
}
