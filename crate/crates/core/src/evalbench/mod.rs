//! Evaluation and benchmarking: corpus BLEU, embedding-similarity
//! retrieval, rare-word F1, speed measurements and synthetic transfer
//! corpora, plus CSV / gnuplot report formatting.

mod analysis;
mod bleu;
mod speed;
mod synthetic;

pub use analysis::{
    cosine, edit_distance, embedding_mrr, extract_word_pairs, rare_word_f1, F1Bucket, MrrReport,
    WordPair, WordPairSet,
};
pub use bleu::{bleu_corpus, tokenize_13a, BleuReport};
pub use speed::{
    bench_decode, bench_train_epoch, median, speed_bench, time_decode_set, SpeedReport,
};
pub use synthetic::{make_synthetic_pair, RawSplit, SyntheticConfig, SyntheticPair};

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum EvalError {
    Mismatch(String),
    Io(String),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Mismatch(detail) => write!(f, "evaluation input mismatch: {detail}"),
            Self::Io(detail) => write!(f, "io error: {detail}"),
        }
    }
}

impl std::error::Error for EvalError {}

fn mrr_rows(primary: &MrrReport, baseline: &MrrReport) -> Vec<(usize, f64, f64, f64)> {
    let mut rows = Vec::new();
    for &(d, mrr, _) in &primary.buckets {
        if let Some(base) = baseline.mrr_at(d) {
            rows.push((d, mrr, base, mrr - base));
        }
    }
    rows
}

/// `edit_distance,mrr_primary,mrr_baseline,gain` rows.
pub fn mrr_gain_csv(primary: &MrrReport, baseline: &MrrReport) -> String {
    let mut out = String::from("edit_distance,mrr_primary,mrr_baseline,gain\n");
    for (d, a, b, gain) in mrr_rows(primary, baseline) {
        out.push_str(&format!("{d},{a:.6},{b:.6},{gain:.6}\n"));
    }
    out
}

/// Space-separated gnuplot data with a comment header.
pub fn mrr_gain_dat(primary: &MrrReport, baseline: &MrrReport) -> String {
    let mut out = String::from("# edit_distance mrr_primary mrr_baseline gain\n");
    for (d, a, b, gain) in mrr_rows(primary, baseline) {
        out.push_str(&format!("{d} {a:.6} {b:.6} {gain:.6}\n"));
    }
    out
}

fn f1_rows<'a>(
    primary: &'a [F1Bucket],
    baseline: &'a [F1Bucket],
) -> Vec<(&'a F1Bucket, &'a F1Bucket)> {
    primary
        .iter()
        .zip(baseline)
        .filter(|(p, b)| p.ref_count > 0 || b.ref_count > 0)
        .collect()
}

/// `bucket,f1_primary,f1_baseline,gain` rows over non-empty buckets.
pub fn f1_gain_csv(primary: &[F1Bucket], baseline: &[F1Bucket]) -> String {
    let mut out = String::from("freq_bucket,f1_primary,f1_baseline,gain\n");
    for (p, b) in f1_rows(primary, baseline) {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            p.label(),
            p.f1,
            b.f1,
            p.f1 - b.f1
        ));
    }
    out
}

pub fn f1_gain_dat(primary: &[F1Bucket], baseline: &[F1Bucket]) -> String {
    let mut out = String::from("# bucket_lo f1_primary f1_baseline gain\n");
    for (p, b) in f1_rows(primary, baseline) {
        out.push_str(&format!(
            "{} {:.6} {:.6} {:.6}\n",
            p.lo,
            p.f1,
            b.f1,
            p.f1 - b.f1
        ));
    }
    out
}

/// `label,bleu,p1,p2,p3,p4,bp,hyp_len,ref_len` rows.
pub fn bleu_csv(rows: &[(String, BleuReport)]) -> String {
    let mut out = String::from("system,bleu,p1,p2,p3,p4,brevity_penalty,hyp_len,ref_len\n");
    for (label, r) in rows {
        out.push_str(&format!(
            "{label},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{},{}\n",
            r.score,
            r.precisions[0],
            r.precisions[1],
            r.precisions[2],
            r.precisions[3],
            r.brevity_penalty,
            r.hyp_len,
            r.ref_len
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mrr_reports_format_gain() {
        let primary = MrrReport {
            buckets: vec![(1, 0.9, 10), (2, 0.7, 5)],
        };
        let baseline = MrrReport {
            buckets: vec![(1, 0.5, 10), (2, 0.6, 5)],
        };
        let csv = mrr_gain_csv(&primary, &baseline);
        assert!(csv.contains("1,0.900000,0.500000,0.400000"));
        let dat = mrr_gain_dat(&primary, &baseline);
        assert!(dat.starts_with("# "));
        assert!(dat.contains("2 0.700000 0.600000 0.100000"));
    }
}
