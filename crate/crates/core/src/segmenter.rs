//! Subword vocabulary construction and application.
//!
//! Deterministic BPE with a word-initial boundary marker builds the fixed
//! decoder vocabulary; a whitespace word vocabulary backs the word-level
//! baseline. Externally produced vocab/merge files can be imported through
//! the same TSV formats written here.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

/// Word-initial boundary marker, prepended before segmentation and
/// restored to a space when decoding.
pub const BOUNDARY: char = '\u{2581}'; // ▁

pub const PAD_TOKEN: &str = "<pad>";
pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";
pub const UNK_TOKEN: &str = "<unk>";

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const UNK_ID: usize = 3;

/// `<2xxx>` language-flag token for a target language code.
pub fn flag_token(lang_code: &str) -> String {
    format!("<2{lang_code}>")
}

/// PAD/BOS/EOS/UNK plus one flag token per listed target language.
pub fn standard_specials(flag_langs: &[&str]) -> Vec<String> {
    let mut specials = vec![
        PAD_TOKEN.to_string(),
        BOS_TOKEN.to_string(),
        EOS_TOKEN.to_string(),
        UNK_TOKEN.to_string(),
    ];
    for code in flag_langs {
        specials.push(flag_token(code));
    }
    specials
}

#[derive(Debug, Clone, PartialEq)]
pub enum SegmenterError {
    EmptyCorpus,
    VocabTooSmall { requested: usize, minimum: usize },
    InvalidVocab(String),
    Io(String),
    Parse { path: String, line: usize, detail: String },
}

impl fmt::Display for SegmenterError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyCorpus => write!(f, "corpus contains no words"),
            Self::VocabTooSmall { requested, minimum } => write!(
                f,
                "vocab size {requested} too small; needs at least {minimum} \
                 (specials + distinct characters)"
            ),
            Self::InvalidVocab(detail) => write!(f, "invalid vocabulary: {detail}"),
            Self::Io(detail) => write!(f, "io error: {detail}"),
            Self::Parse { path, line, detail } => {
                write!(f, "{path}:{line}: {detail}")
            }
        }
    }
}

impl std::error::Error for SegmenterError {}

/// Fixed token inventory with dense ids; specials occupy the lowest ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SubwordVocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
    counts: Vec<u64>,
    num_specials: usize,
}

impl SubwordVocab {
    /// Builds from specials plus `(token, count)` rows; validates density
    /// and uniqueness.
    pub fn new(
        specials: &[String],
        entries: Vec<(String, u64)>,
    ) -> Result<Self, SegmenterError> {
        let mut tokens = Vec::with_capacity(specials.len() + entries.len());
        let mut counts = Vec::with_capacity(specials.len() + entries.len());
        for s in specials {
            tokens.push(s.clone());
            counts.push(0);
        }
        for (t, c) in entries {
            tokens.push(t);
            counts.push(c);
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(SegmenterError::InvalidVocab("empty token".into()));
            }
            if ids.insert(t.clone(), i).is_some() {
                return Err(SegmenterError::InvalidVocab(format!(
                    "duplicate token {t:?}"
                )));
            }
        }
        Ok(SubwordVocab {
            tokens,
            ids,
            counts,
            num_specials: specials.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_specials(&self) -> usize {
        self.num_specials
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < self.num_specials
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts[id]
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK_ID)
    }

    /// Id of the `<2xxx>` flag for a language code, if registered.
    pub fn flag_id(&self, lang_code: &str) -> Option<usize> {
        self.id(&flag_token(lang_code))
    }

    /// All language codes that have flag tokens, in id order.
    pub fn flag_langs(&self) -> Vec<String> {
        self.tokens[..self.num_specials]
            .iter()
            .filter_map(|t| {
                t.strip_prefix("<2")
                    .and_then(|rest| rest.strip_suffix('>'))
                    .map(str::to_string)
            })
            .collect()
    }

    /// Writes `token<TAB>id<TAB>count`, one row per token, specials first.
    pub fn save(&self, path: &Path) -> Result<(), SegmenterError> {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            out.push_str(&format!("{t}\t{i}\t{}\n", self.counts[i]));
        }
        fs::write(path, out).map_err(|e| SegmenterError::Io(format!("{}: {e}", path.display())))
    }

    /// Loads a vocab TSV; specials are recognized by their literal
    /// spellings and must occupy the lowest ids.
    pub fn load(path: &Path) -> Result<Self, SegmenterError> {
        let text = fs::read_to_string(path)
            .map_err(|e| SegmenterError::Io(format!("{}: {e}", path.display())))?;
        let mut specials = Vec::new();
        let mut entries = Vec::new();
        let mut in_specials = true;
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let (token, id_s, count_s) = match (parts.next(), parts.next(), parts.next()) {
                (Some(t), Some(i), Some(c)) => (t, i, c),
                _ => {
                    return Err(SegmenterError::Parse {
                        path: path.display().to_string(),
                        line: lineno + 1,
                        detail: "expected token<TAB>id<TAB>count".into(),
                    })
                }
            };
            let id: usize = id_s.parse().map_err(|_| SegmenterError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                detail: format!("bad id {id_s:?}"),
            })?;
            let count: u64 = count_s.parse().map_err(|_| SegmenterError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                detail: format!("bad count {count_s:?}"),
            })?;
            if id != specials.len() + entries.len() {
                return Err(SegmenterError::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    detail: format!("ids must be dense, expected {}", specials.len() + entries.len()),
                });
            }
            let is_special = matches!(token, PAD_TOKEN | BOS_TOKEN | EOS_TOKEN | UNK_TOKEN)
                || (token.starts_with("<2") && token.ends_with('>'));
            if is_special {
                if !in_specials {
                    return Err(SegmenterError::Parse {
                        path: path.display().to_string(),
                        line: lineno + 1,
                        detail: format!("special token {token:?} after regular tokens"),
                    });
                }
                specials.push(token.to_string());
            } else {
                in_specials = false;
                entries.push((token.to_string(), count));
            }
        }
        if specials.len() < 4 {
            return Err(SegmenterError::InvalidVocab(
                "vocab must start with <pad>, <s>, </s>, <unk>".into(),
            ));
        }
        SubwordVocab::new(&specials, entries)
    }
}

/// Ordered BPE merge rules; list position is priority.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeTable {
    merges: Vec<(String, String)>,
    rank: HashMap<(String, String), usize>,
}

impl MergeTable {
    pub fn new(merges: Vec<(String, String)>) -> Self {
        let rank = merges
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        MergeTable { merges, rank }
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    fn rank_of(&self, pair: &(String, String)) -> Option<usize> {
        self.rank.get(pair).copied()
    }

    /// Writes one merge per line: `left<SPACE>right`.
    pub fn save(&self, path: &Path) -> Result<(), SegmenterError> {
        let mut out = String::new();
        for (l, r) in &self.merges {
            out.push_str(&format!("{l} {r}\n"));
        }
        fs::write(path, out).map_err(|e| SegmenterError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, SegmenterError> {
        let text = fs::read_to_string(path)
            .map_err(|e| SegmenterError::Io(format!("{}: {e}", path.display())))?;
        let mut merges = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.splitn(2, ' ');
            match (parts.next(), parts.next()) {
                (Some(l), Some(r)) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_string(), r.to_string()));
                }
                _ => {
                    return Err(SegmenterError::Parse {
                        path: path.display().to_string(),
                        line: lineno + 1,
                        detail: "expected `left right`".into(),
                    })
                }
            }
        }
        Ok(MergeTable::new(merges))
    }
}

fn word_symbols(word: &str, boundary: char) -> Vec<String> {
    let mut symbols = vec![boundary.to_string()];
    symbols.extend(word.chars().map(|c| c.to_string()));
    symbols
}

/// Picks the most frequent adjacent pair; ties go to the lexicographically
/// smaller `(left, right)`.
fn best_pair(counts: &HashMap<(String, String), u64>) -> Option<((String, String), u64)> {
    let mut best: Option<(&(String, String), u64)> = None;
    for (pair, &count) in counts {
        best = match best {
            None => Some((pair, count)),
            Some((bp, bc)) => {
                if count > bc || (count == bc && pair < bp) {
                    Some((pair, count))
                } else {
                    Some((bp, bc))
                }
            }
        };
    }
    best.map(|(p, c)| (p.clone(), c))
}

fn merge_in_place(symbols: &mut Vec<String>, left: &str, right: &str) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == left && symbols[i + 1] == right {
            let fused = format!("{left}{right}");
            symbols[i] = fused;
            symbols.remove(i + 1);
        } else {
            i += 1;
        }
    }
}

/// Trains a BPE merge table and vocabulary over whitespace-split words.
///
/// Merging is greedy on the highest-frequency adjacent pair and stops when
/// the token inventory reaches `vocab_size` or no pair occurs twice.
pub fn train_bpe<S: AsRef<str>>(
    corpus: &[S],
    vocab_size: usize,
    boundary: char,
    specials: &[String],
) -> Result<(MergeTable, SubwordVocab), SegmenterError> {
    let mut word_freq: BTreeMap<String, u64> = BTreeMap::new();
    for line in corpus {
        for word in line.as_ref().split_whitespace() {
            *word_freq.entry(word.to_string()).or_insert(0) += 1;
        }
    }
    if word_freq.is_empty() {
        return Err(SegmenterError::EmptyCorpus);
    }

    let mut words: Vec<(Vec<String>, u64)> = word_freq
        .iter()
        .map(|(w, &f)| (word_symbols(w, boundary), f))
        .collect();

    let mut inventory: BTreeSet<String> = BTreeSet::new();
    for (symbols, _) in &words {
        for s in symbols {
            inventory.insert(s.clone());
        }
    }
    let minimum = specials.len() + inventory.len();
    if vocab_size <= minimum {
        return Err(SegmenterError::VocabTooSmall {
            requested: vocab_size,
            minimum: minimum + 1,
        });
    }

    let base_chars: Vec<String> = inventory.iter().cloned().collect();
    let mut merges: Vec<(String, String)> = Vec::new();
    let mut merge_tokens: Vec<String> = Vec::new();

    while specials.len() + inventory.len() < vocab_size {
        let mut pair_counts: HashMap<(String, String), u64> = HashMap::new();
        for (symbols, freq) in &words {
            for pair in symbols.windows(2) {
                *pair_counts
                    .entry((pair[0].clone(), pair[1].clone()))
                    .or_insert(0) += freq;
            }
        }
        let ((left, right), count) = match best_pair(&pair_counts) {
            Some(bc) => bc,
            None => break,
        };
        if count < 2 {
            break;
        }
        for (symbols, _) in &mut words {
            merge_in_place(symbols, &left, &right);
        }
        let fused = format!("{left}{right}");
        if inventory.insert(fused.clone()) {
            merge_tokens.push(fused);
        }
        merges.push((left, right));
    }

    // Token counts over the final segmentation of the training corpus.
    let mut seg_counts: HashMap<&str, u64> = HashMap::new();
    for (symbols, freq) in &words {
        for s in symbols {
            *seg_counts.entry(s.as_str()).or_insert(0) += freq;
        }
    }

    let mut entries = Vec::with_capacity(base_chars.len() + merge_tokens.len());
    for t in base_chars.into_iter().chain(merge_tokens) {
        let c = seg_counts.get(t.as_str()).copied().unwrap_or(0);
        entries.push((t, c));
    }
    let vocab = SubwordVocab::new(specials, entries)?;
    Ok((MergeTable::new(merges), vocab))
}

/// Segments one word into final BPE symbols.
fn segment_word(word: &str, mt: &MergeTable, boundary: char) -> Vec<String> {
    let mut symbols = word_symbols(word, boundary);
    loop {
        let mut best: Option<(usize, usize)> = None; // (rank, position)
        for i in 0..symbols.len().saturating_sub(1) {
            let pair = (symbols[i].clone(), symbols[i + 1].clone());
            if let Some(rank) = mt.rank_of(&pair) {
                if best.is_none_or(|(br, _)| rank < br) {
                    best = Some((rank, i));
                }
            }
        }
        match best {
            Some((rank, _)) => {
                let (l, r) = mt.merges()[rank].clone();
                merge_in_place(&mut symbols, &l, &r);
            }
            None => break,
        }
    }
    symbols
}

/// Deterministic segmentation of a sentence into token ids. Unknown
/// residual symbols map to UNK. No BOS/EOS are added here.
pub fn encode_sentence(s: &str, mt: &MergeTable, v: &SubwordVocab) -> Vec<usize> {
    let mut ids = Vec::new();
    for word in s.split_whitespace() {
        for sym in segment_word(word, mt, BOUNDARY) {
            ids.push(v.id_or_unk(&sym));
        }
    }
    ids
}

/// Inverse of [`encode_sentence`] up to whitespace normalization.
pub fn decode_pieces(ids: &[usize], v: &SubwordVocab) -> String {
    let mut out = String::new();
    for &id in ids {
        if v.is_special(id) {
            continue;
        }
        out.push_str(v.token(id));
    }
    out.replace(BOUNDARY, " ").trim().to_string()
}

/// Whitespace normalization used by the round-trip property.
pub fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Builds the word-level baseline vocabulary: the `top_k` most frequent
/// whitespace tokens, ties broken lexicographically.
pub fn build_word_vocab<S: AsRef<str>>(
    corpora: &[S],
    top_k: usize,
    specials: &[String],
) -> Result<SubwordVocab, SegmenterError> {
    if top_k == 0 {
        return Err(SegmenterError::InvalidVocab("top_k must be >= 1".into()));
    }
    let mut freq: BTreeMap<String, u64> = BTreeMap::new();
    for line in corpora {
        for word in line.as_ref().split_whitespace() {
            *freq.entry(word.to_string()).or_insert(0) += 1;
        }
    }
    if freq.is_empty() {
        return Err(SegmenterError::EmptyCorpus);
    }
    let mut by_freq: Vec<(String, u64)> = freq.into_iter().collect();
    by_freq.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    by_freq.truncate(top_k);
    SubwordVocab::new(specials, by_freq)
}

/// Word-level encoding for the lookup-word baseline; OOV maps to UNK.
pub fn encode_words(s: &str, v: &SubwordVocab) -> Vec<usize> {
    s.split_whitespace().map(|w| v.id_or_unk(w)).collect()
}

/// Inverse of [`encode_words`].
pub fn decode_words(ids: &[usize], v: &SubwordVocab) -> String {
    let words: Vec<&str> = ids
        .iter()
        .filter(|&&id| !v.is_special(id))
        .map(|&id| v.token(id))
        .collect();
    words.join(" ")
}
