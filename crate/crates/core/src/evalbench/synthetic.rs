//! Synthetic desk-scale transfer corpora: an invented source language and
//! two related target languages sharing word roots, where the low-resource
//! side is derived from the high-resource side by seeded accent-like
//! character substitutions.

use crate::kernel::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    /// Number of shared word roots (concepts).
    pub root_vocab: usize,
    /// Target mean edit distance between paired HRL/LRL words.
    pub corruption_rate: f64,
    pub hrl_train: usize,
    pub lrl_train: usize,
    pub hrl_dev: usize,
    pub lrl_dev: usize,
    pub lrl_test: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Fraction of concepts whose LRL form appears in LRL training data;
    /// the rest are only reachable through HRL transfer.
    pub lrl_seen_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 1,
            root_vocab: 120,
            corruption_rate: 1.5,
            hrl_train: 5000,
            lrl_train: 400,
            hrl_dev: 200,
            lrl_dev: 100,
            lrl_test: 200,
            min_words: 3,
            max_words: 8,
            lrl_seen_fraction: 0.7,
        }
    }
}

/// Aligned sentence lists for one language pair split.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawSplit {
    pub src: Vec<String>,
    pub tgt: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub config: SyntheticConfig,
    /// Per-concept source words.
    pub src_words: Vec<String>,
    /// Per-concept HRL target words.
    pub hrl_words: Vec<String>,
    /// Per-concept LRL target words (corrupted HRL forms).
    pub lrl_words: Vec<String>,
    /// Concepts whose LRL form occurs in LRL training sentences.
    pub lrl_seen_concepts: Vec<usize>,
    pub hrl_train: RawSplit,
    pub hrl_dev: RawSplit,
    pub lrl_train: RawSplit,
    pub lrl_dev: RawSplit,
    pub lrl_test: RawSplit,
}

const CONSONANTS: &[char] = &['b', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v'];
const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];

/// Accent-like substitution alternatives per character.
fn substitutes(c: char) -> &'static [char] {
    match c {
        'a' => &['á', 'ä'],
        'e' => &['é', 'ê'],
        'i' => &['í'],
        'o' => &['ó', 'ö'],
        'u' => &['ú', 'ü'],
        'b' => &['p'],
        'd' => &['t'],
        'g' => &['k'],
        'k' => &['g'],
        'l' => &['r'],
        'm' => &['n'],
        'n' => &['m'],
        'p' => &['b'],
        'r' => &['l'],
        's' => &['z'],
        't' => &['d'],
        'v' => &['f'],
        'f' => &['v'],
        _ => &['x'],
    }
}

fn syllable_word(rng: &mut Rng, syllables: usize) -> String {
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(CONSONANTS[rng.below(CONSONANTS.len())]);
        w.push(VOWELS[rng.below(VOWELS.len())]);
    }
    w
}

fn unique_words(rng: &mut Rng, count: usize, prefix: &str) -> Vec<String> {
    let mut words = Vec::with_capacity(count);
    let mut seen = std::collections::HashSet::new();
    while words.len() < count {
        let syllables = 2 + rng.below(2);
        let w = format!("{prefix}{}", syllable_word(rng, syllables));
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    words
}

/// Applies `k` character substitutions at distinct positions; each
/// substitution has edit distance one, so the pair distance equals `k`.
fn corrupt(word: &str, k: usize, rng: &mut Rng) -> String {
    let mut chars: Vec<char> = word.chars().collect();
    let k = k.min(chars.len());
    let mut positions: Vec<usize> = (0..chars.len()).collect();
    rng.shuffle(&mut positions);
    for &pos in positions.iter().take(k) {
        let options = substitutes(chars[pos]);
        chars[pos] = options[rng.below(options.len())];
    }
    chars.into_iter().collect()
}

fn sample_sentences(
    rng: &mut Rng,
    count: usize,
    concepts: &[usize],
    src_words: &[String],
    tgt_words: &[String],
    min_words: usize,
    max_words: usize,
) -> RawSplit {
    let mut split = RawSplit::default();
    for _ in 0..count {
        let len = min_words + rng.below(max_words - min_words + 1);
        let mut src = Vec::with_capacity(len);
        let mut tgt = Vec::with_capacity(len);
        for _ in 0..len {
            let c = concepts[rng.below(concepts.len())];
            src.push(src_words[c].clone());
            tgt.push(tgt_words[c].clone());
        }
        split.src.push(src.join(" "));
        split.tgt.push(tgt.join(" "));
    }
    split
}

/// Generates the paired corpora. Deterministic for a fixed config.
pub fn make_synthetic_pair(config: &SyntheticConfig) -> SyntheticPair {
    let mut rng = Rng::seed(config.seed);
    let src_words = unique_words(&mut rng, config.root_vocab, "e");
    let hrl_words = unique_words(&mut rng, config.root_vocab, "");

    // per-concept corruption count drawn around the configured rate
    let lrl_words: Vec<String> = hrl_words
        .iter()
        .map(|w| {
            let base = config.corruption_rate.floor() as usize;
            let extra = usize::from(rng.next_f64() < config.corruption_rate.fract());
            corrupt(w, base + extra, &mut rng)
        })
        .collect();

    let all_concepts: Vec<usize> = (0..config.root_vocab).collect();
    let mut shuffled = all_concepts.clone();
    rng.shuffle(&mut shuffled);
    let seen_count = ((config.root_vocab as f64 * config.lrl_seen_fraction).round() as usize)
        .clamp(1, config.root_vocab);
    let mut lrl_seen: Vec<usize> = shuffled[..seen_count].to_vec();
    lrl_seen.sort_unstable();

    let hrl_train = sample_sentences(
        &mut rng,
        config.hrl_train,
        &all_concepts,
        &src_words,
        &hrl_words,
        config.min_words,
        config.max_words,
    );
    let hrl_dev = sample_sentences(
        &mut rng,
        config.hrl_dev,
        &all_concepts,
        &src_words,
        &hrl_words,
        config.min_words,
        config.max_words,
    );
    let lrl_train = sample_sentences(
        &mut rng,
        config.lrl_train,
        &lrl_seen,
        &src_words,
        &lrl_words,
        config.min_words,
        config.max_words,
    );
    let lrl_dev = sample_sentences(
        &mut rng,
        config.lrl_dev,
        &lrl_seen,
        &src_words,
        &lrl_words,
        config.min_words,
        config.max_words,
    );
    let lrl_test = sample_sentences(
        &mut rng,
        config.lrl_test,
        &all_concepts,
        &src_words,
        &lrl_words,
        config.min_words,
        config.max_words,
    );

    SyntheticPair {
        config: config.clone(),
        src_words,
        hrl_words,
        lrl_words,
        lrl_seen_concepts: lrl_seen,
        hrl_train,
        hrl_dev,
        lrl_train,
        lrl_dev,
        lrl_test,
    }
}

impl SyntheticPair {
    /// Mean edit distance between paired HRL/LRL word forms.
    pub fn mean_pair_distance(&self) -> f64 {
        let total: usize = self
            .hrl_words
            .iter()
            .zip(&self.lrl_words)
            .map(|(h, l)| super::analysis::edit_distance(h, l))
            .sum();
        total as f64 / self.hrl_words.len() as f64
    }
}
