//! Character n-gram inventories and bag-of-n-gram count vectors.
//!
//! Tokens are sequences of unicode scalar values; the boundary marker
//! counts as an ordinary character so word-initial subwords keep their
//! positional information.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use crate::kernel::{KernelError, SparseMatrix};
use crate::segmenter::SubwordVocab;

#[derive(Debug, Clone, PartialEq)]
pub enum ChargramError {
    BadNMax(usize),
    Io(String),
    Parse { path: String, line: usize, detail: String },
    Kernel(KernelError),
}

impl fmt::Display for ChargramError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BadNMax(n) => write!(f, "n_max {n} outside [1, 8]"),
            Self::Io(detail) => write!(f, "io error: {detail}"),
            Self::Parse { path, line, detail } => write!(f, "{path}:{line}: {detail}"),
            Self::Kernel(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ChargramError {}

impl From<KernelError> for ChargramError {
    fn from(e: KernelError) -> Self {
        ChargramError::Kernel(e)
    }
}

/// All contiguous substrings of length `1..=min(n_max, len)`, with
/// multiplicities. An empty token yields an empty multiset.
pub fn extract_ngrams(token: &str, n_max: usize) -> BTreeMap<String, u64> {
    let chars: Vec<char> = token.chars().collect();
    let mut grams = BTreeMap::new();
    for n in 1..=n_max.min(chars.len()) {
        for window in chars.windows(n) {
            *grams.entry(window.iter().collect::<String>()).or_insert(0) += 1;
        }
    }
    grams
}

/// Character n-gram inventory with dense ids, ordered by frequency
/// (descending) then lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramVocab {
    grams: Vec<String>,
    ids: HashMap<String, usize>,
    counts: Vec<u64>,
    n_max: usize,
    min_count: u64,
}

impl NGramVocab {
    pub fn from_entries(
        entries: Vec<(String, u64)>,
        n_max: usize,
        min_count: u64,
    ) -> Result<Self, ChargramError> {
        if !(1..=8).contains(&n_max) {
            return Err(ChargramError::BadNMax(n_max));
        }
        let mut grams = Vec::with_capacity(entries.len());
        let mut counts = Vec::with_capacity(entries.len());
        let mut ids = HashMap::with_capacity(entries.len());
        for (g, c) in entries {
            ids.insert(g.clone(), grams.len());
            grams.push(g);
            counts.push(c);
        }
        Ok(NGramVocab {
            grams,
            ids,
            counts,
            n_max,
            min_count,
        })
    }

    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    pub fn gram(&self, id: usize) -> &str {
        &self.grams[id]
    }

    pub fn id(&self, gram: &str) -> Option<usize> {
        self.ids.get(gram).copied()
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts[id]
    }

    /// Writes `gram<TAB>id<TAB>count` rows after an `#n_max` header.
    pub fn save(&self, path: &Path) -> Result<(), ChargramError> {
        let mut out = String::new();
        out.push_str(&format!("#n_max\t{}\t{}\n", self.n_max, self.min_count));
        for (i, g) in self.grams.iter().enumerate() {
            out.push_str(&format!("{g}\t{i}\t{}\n", self.counts[i]));
        }
        fs::write(path, out).map_err(|e| ChargramError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ChargramError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ChargramError::Io(format!("{}: {e}", path.display())))?;
        let mut n_max = 4usize;
        let mut min_count = 1u64;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(ChargramError::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    detail: "expected gram<TAB>id<TAB>count".into(),
                });
            }
            if parts[0] == "#n_max" {
                n_max = parts[1].parse().map_err(|_| ChargramError::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    detail: format!("bad n_max {:?}", parts[1]),
                })?;
                min_count = parts[2].parse().map_err(|_| ChargramError::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    detail: format!("bad min_count {:?}", parts[2]),
                })?;
                continue;
            }
            let id: usize = parts[1].parse().map_err(|_| ChargramError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                detail: format!("bad id {:?}", parts[1]),
            })?;
            if id != entries.len() {
                return Err(ChargramError::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    detail: format!("ids must be dense, expected {}", entries.len()),
                });
            }
            let count: u64 = parts[2].parse().map_err(|_| ChargramError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                detail: format!("bad count {:?}", parts[2]),
            })?;
            entries.push((parts[0].to_string(), count));
        }
        NGramVocab::from_entries(entries, n_max, min_count)
    }
}

/// Builds the n-gram inventory over all non-special tokens of a subword
/// vocabulary. Counts sum occurrences across tokens; grams below
/// `min_count` are pruned.
pub fn build_ngram_vocab(
    v: &SubwordVocab,
    n_max: usize,
    min_count: u64,
) -> Result<NGramVocab, ChargramError> {
    if !(1..=8).contains(&n_max) {
        return Err(ChargramError::BadNMax(n_max));
    }
    let mut totals: BTreeMap<String, u64> = BTreeMap::new();
    for id in 0..v.len() {
        if v.is_special(id) {
            continue;
        }
        for (gram, count) in extract_ngrams(v.token(id), n_max) {
            *totals.entry(gram).or_insert(0) += count;
        }
    }
    let mut entries: Vec<(String, u64)> = totals
        .into_iter()
        .filter(|(_, c)| *c >= min_count)
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    NGramVocab::from_entries(entries, n_max, min_count)
}

/// Sparse bag-of-n-grams count vector: `(gram_id, count)` pairs with
/// strictly increasing ids. Out-of-vocabulary grams are dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoNVector {
    entries: Vec<(usize, u64)>,
}

impl BoNVector {
    pub fn entries(&self) -> &[(usize, u64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_count(&self) -> u64 {
        self.entries.iter().map(|&(_, c)| c).sum()
    }
}

pub fn bon_vector(token: &str, ngv: &NGramVocab) -> BoNVector {
    let mut entries: Vec<(usize, u64)> = extract_ngrams(token, ngv.n_max())
        .into_iter()
        .filter_map(|(gram, count)| ngv.id(&gram).map(|id| (id, count)))
        .collect();
    entries.sort_by_key(|&(id, _)| id);
    BoNVector { entries }
}

/// Stacks one BoN row per vocabulary token into a `V x n` sparse matrix.
/// Special-token rows stay empty; they bypass the spelling pipeline.
pub fn bon_matrix(v: &SubwordVocab, ngv: &NGramVocab) -> Result<SparseMatrix, ChargramError> {
    let mut entries = Vec::new();
    for id in 0..v.len() {
        if v.is_special(id) {
            continue;
        }
        for &(gram_id, count) in bon_vector(v.token(id), ngv).entries() {
            entries.push((id, gram_id, count as f64));
        }
    }
    Ok(SparseMatrix::new(v.len(), ngv.len(), entries)?)
}
