//! Greedy and beam decoding with precomputed embedding tables.
//!
//! Inference embeds target prefixes by row lookup into the precomputed
//! table and projects through the same matrix (or the separate projection
//! when tying is off), so the per-step cost matches a plain lookup model.

use crate::decsde::EmbeddingTable;
use crate::kernel::{ParamSet, Rng, Tape, ValueId};
use crate::segmenter::{BOS_ID, EOS_ID};

use super::model::TransformerModel;
use super::{Batch, NmtError};

/// Length-normalization exponent used when callers pass no override.
pub const DEFAULT_LENGTH_ALPHA: f64 = 1.0;
pub const DEFAULT_BEAM: usize = 5;

fn encode_source(
    model: &TransformerModel,
    tape: &mut Tape,
    params: &ParamSet,
    src_tokens: &[usize],
    lang: usize,
    flag_id: usize,
) -> Result<(ValueId, Batch), NmtError> {
    let batch = Batch::build(
        &[src_tokens.to_vec()],
        &[Vec::new()],
        &[lang],
        &{
            let mut flags = vec![0usize; lang + 1];
            flags[lang] = flag_id;
            flags
        },
        model.config.max_len,
    )?;
    let mut rng = Rng::seed(0); // no dropout at inference; never drawn
    let enc = model.encode(tape, params, &batch, false, &mut rng)?;
    Ok((enc, batch))
}

/// Last-position logits for a prefix, with banned ids masked out.
#[allow(clippy::too_many_arguments)]
fn step_logits(
    model: &TransformerModel,
    tape: &mut Tape,
    params: &ParamSet,
    prefix: &[usize],
    enc: ValueId,
    batch: &Batch,
    table_v: ValueId,
    lang: usize,
) -> Result<Vec<f64>, NmtError> {
    let mut rng = Rng::seed(0);
    let hidden = model.decoder_hidden(
        tape,
        params,
        prefix,
        1,
        prefix.len(),
        enc,
        batch.src_len,
        &batch.src_pad,
        lang,
        false,
        &mut rng,
        Some(table_v),
    )?;
    // only the newest position feeds the next-token distribution
    let last_hidden = tape.gather_rows(hidden, &[prefix.len() - 1])?;
    let logits = model.project(tape, params, last_hidden, lang, Some(table_v))?;
    let mut row: Vec<f64> = tape.value(logits).data().to_vec();
    for &banned in &model.banned_output_ids {
        row[banned] = f64::NEG_INFINITY;
    }
    Ok(row)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

/// Greedy decoding: argmax token per step until EOS or `max_len`.
/// Returns generated token ids without BOS/EOS.
pub fn greedy_decode(
    model: &TransformerModel,
    params: &ParamSet,
    src_tokens: &[usize],
    lang: usize,
    flag_id: usize,
    table: &EmbeddingTable,
    max_len: usize,
) -> Result<Vec<usize>, NmtError> {
    table.check_fresh(params)?;
    let mut tape = Tape::new();
    let (enc, batch) = encode_source(model, &mut tape, params, src_tokens, lang, flag_id)?;
    let table_v = tape.constant(table.matrix.clone());

    let mut out: Vec<usize> = Vec::new();
    for _ in 0..max_len {
        let mut prefix = Vec::with_capacity(out.len() + 1);
        prefix.push(BOS_ID);
        prefix.extend(&out);
        let row = step_logits(model, &mut tape, params, &prefix, enc, &batch, table_v, lang)?;
        let next = argmax(&row);
        if next == EOS_ID {
            break;
        }
        out.push(next);
    }
    Ok(out)
}

#[derive(Clone)]
struct Hypothesis {
    ids: Vec<usize>,
    logp: f64,
    finished: bool,
}

impl Hypothesis {
    /// Length-normalized score: summed log-probability over `len^alpha`.
    fn score(&self, alpha: f64) -> f64 {
        let len = self.ids.len().max(1) as f64;
        self.logp / len.powf(alpha)
    }
}

/// Beam search with length-normalized scores. `beam == 1` reproduces
/// [`greedy_decode`] exactly.
#[allow(clippy::too_many_arguments)]
pub fn beam_decode(
    model: &TransformerModel,
    params: &ParamSet,
    src_tokens: &[usize],
    lang: usize,
    flag_id: usize,
    table: &EmbeddingTable,
    beam: usize,
    alpha: f64,
    max_len: usize,
) -> Result<Vec<usize>, NmtError> {
    if beam == 0 {
        return Err(NmtError::BadConfig("beam size must be >= 1".into()));
    }
    table.check_fresh(params)?;
    let mut tape = Tape::new();
    let (enc, batch) = encode_source(model, &mut tape, params, src_tokens, lang, flag_id)?;
    let table_v = tape.constant(table.matrix.clone());

    let mut live = vec![Hypothesis {
        ids: Vec::new(),
        logp: 0.0,
        finished: false,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for _ in 0..max_len {
        if live.is_empty() {
            break;
        }
        let mut candidates: Vec<Hypothesis> = Vec::new();
        for hyp in &live {
            let mut prefix = Vec::with_capacity(hyp.ids.len() + 1);
            prefix.push(BOS_ID);
            prefix.extend(&hyp.ids);
            let row =
                step_logits(model, &mut tape, params, &prefix, enc, &batch, table_v, lang)?;
            let logps = log_softmax(&row);
            // only the top `beam` extensions of each hypothesis can survive
            let mut order: Vec<usize> = (0..logps.len()).collect();
            order.sort_by(|&a, &b| logps[b].partial_cmp(&logps[a]).unwrap().then(a.cmp(&b)));
            for &tok in order.iter().take(beam) {
                if logps[tok] == f64::NEG_INFINITY {
                    continue;
                }
                let mut ids = hyp.ids.clone();
                let is_eos = tok == EOS_ID;
                if !is_eos {
                    ids.push(tok);
                }
                candidates.push(Hypothesis {
                    ids,
                    logp: hyp.logp + logps[tok],
                    finished: is_eos,
                });
            }
        }
        candidates.sort_by(|a, b| b.logp.partial_cmp(&a.logp).unwrap());
        candidates.truncate(beam);
        live = Vec::new();
        for c in candidates {
            if c.finished {
                finished.push(c);
            } else {
                live.push(c);
            }
        }
        if finished.len() >= beam {
            break;
        }
    }
    // out-of-budget hypotheses compete as-is
    finished.extend(live);
    finished
        .into_iter()
        .max_by(|a, b| a.score(alpha).partial_cmp(&b.score(alpha)).unwrap())
        .map(|h| h.ids)
        .ok_or_else(|| NmtError::BadConfig("no hypothesis produced".into()))
}
