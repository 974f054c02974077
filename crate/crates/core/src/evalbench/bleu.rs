//! Corpus-level BLEU-4 with 13a-style tokenization and exponential
//! smoothing for zero n-gram counts.
//!
//! Tokenization rules, applied in order to ` line ` (padded with spaces):
//! 1. every char in the punctuation class gets spaces around it
//!    (the class spans `{|}~`, `[\]^_\``, space through `&`, `(`
//!    through `+`, `:` through `@`, and `/`);
//! 2. `.` and `,` get spaces when preceded by a non-digit;
//! 3. `.` and `,` get spaces when followed by a non-digit;
//! 4. `-` gets spaces when preceded by a digit.
//!
//! Rules 2-4 consume non-overlapping pairs left to right.
//!
//! Smoothing: running over n = 1..4, a zero match count at order n doubles
//! a running denominator factor and scores `1 / (factor * total_n)`.

use std::collections::HashMap;

use super::EvalError;

const MAX_ORDER: usize = 4;

fn in_punct_class(c: char) -> bool {
    matches!(c,
        '{'..='~' | '['..='`' | ' '..='&' | '('..='+' | ':'..='@' | '/')
}

/// Non-overlapping left-to-right pair rewrite, like a global regex sub of
/// a two-character pattern.
fn sub_pairs(
    s: &str,
    first: impl Fn(char) -> bool,
    second: impl Fn(char) -> bool,
    rewrite: impl Fn(char, char) -> String,
) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len() + 8);
    let mut i = 0;
    while i < chars.len() {
        if i + 1 < chars.len() && first(chars[i]) && second(chars[i + 1]) {
            out.push_str(&rewrite(chars[i], chars[i + 1]));
            i += 2;
        } else {
            out.push(chars[i]);
            i += 1;
        }
    }
    out
}

pub fn tokenize_13a(line: &str) -> Vec<String> {
    let mut s = line.replace("<skipped>", "");
    s = s.replace("-\n", "");
    s = s.replace('\n', " ");
    if s.contains('&') {
        s = s
            .replace("&quot;", "\"")
            .replace("&amp;", "&")
            .replace("&lt;", "<")
            .replace("&gt;", ">");
    }
    let mut t = format!(" {s} ");
    t = t
        .chars()
        .map(|c| {
            if c != ' ' && c != '.' && c != ',' && c != '-' && in_punct_class(c) {
                format!(" {c} ")
            } else {
                c.to_string()
            }
        })
        .collect();
    t = sub_pairs(
        &t,
        |a| !a.is_ascii_digit(),
        |b| b == '.' || b == ',',
        |a, b| format!("{a} {b} "),
    );
    t = sub_pairs(
        &t,
        |a| a == '.' || a == ',',
        |b| !b.is_ascii_digit(),
        |a, b| format!(" {a} {b}"),
    );
    t = sub_pairs(
        &t,
        |a| a.is_ascii_digit(),
        |b| b == '-',
        |a, b| format!("{a} {b} "),
    );
    t.split_whitespace().map(str::to_string).collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<String, u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.join("\u{1}")).or_insert(0) += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    /// Corpus BLEU in `[0, 100]`.
    pub score: f64,
    /// Modified n-gram precisions `p1..p4` in `[0, 1]` (pre-smoothing).
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

/// Corpus BLEU-4 over one hypothesis per reference.
pub fn bleu_corpus<S: AsRef<str>>(hyps: &[S], refs: &[S]) -> Result<BleuReport, EvalError> {
    if hyps.len() != refs.len() {
        return Err(EvalError::Mismatch(format!(
            "{} hypotheses vs {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let mut matches = [0u64; MAX_ORDER];
    let mut totals = [0u64; MAX_ORDER];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (h, r) in hyps.iter().zip(refs) {
        let ht = tokenize_13a(h.as_ref());
        let rt = tokenize_13a(r.as_ref());
        hyp_len += ht.len();
        ref_len += rt.len();
        for n in 1..=MAX_ORDER {
            let hc = ngram_counts(&ht, n);
            let rc = ngram_counts(&rt, n);
            for (gram, &count) in &hc {
                let clipped = count.min(rc.get(gram).copied().unwrap_or(0));
                matches[n - 1] += clipped;
            }
            totals[n - 1] += ht.len().saturating_sub(n - 1) as u64;
        }
    }

    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        if totals[n] > 0 {
            precisions[n] = matches[n] as f64 / totals[n] as f64;
        }
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };

    if hyp_len == 0 || totals.contains(&0) {
        return Ok(BleuReport {
            score: 0.0,
            precisions,
            brevity_penalty,
            hyp_len,
            ref_len,
        });
    }

    let mut smooth = 1.0f64;
    let mut log_sum = 0.0f64;
    for n in 0..MAX_ORDER {
        let p = if matches[n] == 0 {
            smooth *= 2.0;
            1.0 / (smooth * totals[n] as f64)
        } else {
            precisions[n]
        };
        log_sum += p.ln();
    }
    let score = 100.0 * brevity_penalty * (log_sum / MAX_ORDER as f64).exp();
    Ok(BleuReport {
        score,
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
    })
}
