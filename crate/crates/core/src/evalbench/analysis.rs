//! Embedding-similarity retrieval (MRR per edit distance) and rare-word
//! F1 by training-frequency bucket.

use std::collections::HashMap;

use super::EvalError;

/// Levenshtein distance over unicode scalar values.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let ac: Vec<char> = a.chars().collect();
    let bc: Vec<char> = b.chars().collect();
    if ac.is_empty() {
        return bc.len();
    }
    let mut prev: Vec<usize> = (0..=bc.len()).collect();
    let mut cur = vec![0usize; bc.len() + 1];
    for (i, &ca) in ac.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in bc.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[bc.len()]
}

/// A related word pair with its recorded edit distance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordPair {
    pub hrl_word: String,
    pub lrl_word: String,
    pub distance: usize,
}

/// Pairs grouped for the retrieval analysis; distances are validated
/// against [`edit_distance`] on construction.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WordPairSet {
    pairs: Vec<WordPair>,
}

impl WordPairSet {
    pub fn new(pairs: Vec<WordPair>) -> Result<Self, EvalError> {
        for p in &pairs {
            let actual = edit_distance(&p.hrl_word, &p.lrl_word);
            if actual != p.distance {
                return Err(EvalError::Mismatch(format!(
                    "pair ({:?}, {:?}) recorded distance {} but actual is {actual}",
                    p.hrl_word, p.lrl_word, p.distance
                )));
            }
            if !(1..=4).contains(&p.distance) {
                return Err(EvalError::Mismatch(format!(
                    "pair distance {} outside 1..=4",
                    p.distance
                )));
            }
        }
        Ok(WordPairSet { pairs })
    }

    pub fn pairs(&self) -> &[WordPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// All cross-language pairs with Levenshtein distance in `1..=4`, capped
/// per distance bucket in input order.
pub fn extract_word_pairs<S: AsRef<str>>(
    hrl_words: &[S],
    lrl_words: &[S],
    cap_per_bucket: usize,
) -> WordPairSet {
    let mut buckets = [0usize; 5];
    let mut pairs = Vec::new();
    for l in lrl_words {
        for h in hrl_words {
            let d = edit_distance(h.as_ref(), l.as_ref());
            if (1..=4).contains(&d) && buckets[d] < cap_per_bucket {
                buckets[d] += 1;
                pairs.push(WordPair {
                    hrl_word: h.as_ref().to_string(),
                    lrl_word: l.as_ref().to_string(),
                    distance: d,
                });
            }
        }
    }
    WordPairSet { pairs }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Mean reciprocal rank per edit-distance bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct MrrReport {
    /// `(distance, mrr, pair_count)` for distances 1..=4 with pairs.
    pub buckets: Vec<(usize, f64, usize)>,
}

impl MrrReport {
    pub fn mrr_at(&self, distance: usize) -> Option<f64> {
        self.buckets
            .iter()
            .find(|(d, _, _)| *d == distance)
            .map(|&(_, m, _)| m)
    }
}

/// Ranks the HRL candidate vocabulary by cosine similarity to each LRL
/// query word's embedding; MRR is the mean of `1/rank` of the paired word.
///
/// Candidate order breaks exact similarity ties lexicographically, so the
/// ranking is deterministic.
pub fn embedding_mrr(
    pairs: &WordPairSet,
    hrl_candidates: &[String],
    mut lrl_embed: impl FnMut(&str) -> Vec<f64>,
    mut hrl_embed: impl FnMut(&str) -> Vec<f64>,
) -> Result<MrrReport, EvalError> {
    let mut cand_embeddings: Vec<(String, Vec<f64>)> = Vec::with_capacity(hrl_candidates.len());
    for w in hrl_candidates {
        cand_embeddings.push((w.clone(), hrl_embed(w)));
    }
    let mut sums: HashMap<usize, (f64, usize)> = HashMap::new();
    for pair in pairs.pairs() {
        if !hrl_candidates.iter().any(|w| w == &pair.hrl_word) {
            return Err(EvalError::Mismatch(format!(
                "paired word {:?} missing from the candidate vocabulary",
                pair.hrl_word
            )));
        }
        let query = lrl_embed(&pair.lrl_word);
        let mut scored: Vec<(&String, f64)> = cand_embeddings
            .iter()
            .map(|(w, e)| (w, cosine(&query, e)))
            .collect();
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(b.0))
        });
        let rank = scored
            .iter()
            .position(|(w, _)| *w == &pair.hrl_word)
            .expect("presence checked")
            + 1;
        let entry = sums.entry(pair.distance).or_insert((0.0, 0));
        entry.0 += 1.0 / rank as f64;
        entry.1 += 1;
    }
    let mut buckets: Vec<(usize, f64, usize)> = sums
        .into_iter()
        .map(|(d, (sum, n))| (d, sum / n as f64, n))
        .collect();
    buckets.sort_by_key(|&(d, _, _)| d);
    Ok(MrrReport { buckets })
}

/// Precision/recall/F1 of word occurrences, bucketed by training-corpus
/// frequency: `[0,1), [1,2), [2,4), [4,8), ...` doubling, final bucket
/// open-ended.
#[derive(Debug, Clone, PartialEq)]
pub struct F1Bucket {
    pub lo: u64,
    pub hi: u64, // exclusive; u64::MAX marks the open bucket
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ref_count: u64,
    pub hyp_count: u64,
}

impl F1Bucket {
    pub fn label(&self) -> String {
        if self.hi == u64::MAX {
            format!("[{},inf)", self.lo)
        } else {
            format!("[{},{})", self.lo, self.hi)
        }
    }
}

fn bucket_index(freq: u64, buckets: &[(u64, u64)]) -> usize {
    buckets
        .iter()
        .position(|&(lo, hi)| freq >= lo && freq < hi)
        .expect("buckets cover u64")
}

fn standard_buckets() -> Vec<(u64, u64)> {
    let mut edges = vec![(0u64, 1u64), (1, 2)];
    let mut lo = 2u64;
    while lo <= 512 {
        edges.push((lo, lo * 2));
        lo *= 2;
    }
    edges.push((lo, u64::MAX));
    edges
}

/// Word F1 per frequency bucket over whitespace tokens. Matches are
/// clipped per sentence: `sum_s min(count_hyp(w), count_ref(w))`.
pub fn rare_word_f1<S: AsRef<str>>(
    hyps: &[S],
    refs: &[S],
    train_freq: &HashMap<String, u64>,
) -> Result<Vec<F1Bucket>, EvalError> {
    if hyps.len() != refs.len() {
        return Err(EvalError::Mismatch(format!(
            "{} hypotheses vs {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let buckets = standard_buckets();
    let mut matches = vec![0u64; buckets.len()];
    let mut hyp_counts = vec![0u64; buckets.len()];
    let mut ref_counts = vec![0u64; buckets.len()];

    for (h, r) in hyps.iter().zip(refs) {
        let mut hc: HashMap<&str, u64> = HashMap::new();
        for w in h.as_ref().split_whitespace() {
            *hc.entry(w).or_insert(0) += 1;
        }
        let mut rc: HashMap<&str, u64> = HashMap::new();
        for w in r.as_ref().split_whitespace() {
            *rc.entry(w).or_insert(0) += 1;
        }
        for (&w, &c) in &hc {
            let b = bucket_index(train_freq.get(w).copied().unwrap_or(0), &buckets);
            hyp_counts[b] += c;
            let clipped = c.min(rc.get(w).copied().unwrap_or(0));
            matches[b] += clipped;
        }
        for (&w, &c) in &rc {
            let b = bucket_index(train_freq.get(w).copied().unwrap_or(0), &buckets);
            ref_counts[b] += c;
        }
    }

    Ok(buckets
        .iter()
        .enumerate()
        .map(|(i, &(lo, hi))| {
            let p = if hyp_counts[i] > 0 {
                matches[i] as f64 / hyp_counts[i] as f64
            } else {
                0.0
            };
            let r = if ref_counts[i] > 0 {
                matches[i] as f64 / ref_counts[i] as f64
            } else {
                0.0
            };
            let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            F1Bucket {
                lo,
                hi,
                precision: p,
                recall: r,
                f1,
                ref_count: ref_counts[i],
                hyp_count: hyp_counts[i],
            }
        })
        .collect())
}
