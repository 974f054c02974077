//! The transformer stack: pre-norm self/cross attention with sinusoidal
//! positions, wired to the configured decoder embedding mode.

use crate::decsde::{
    lookup_embed, tied_logits, DecSdeEmbedder, EmbedMode, EmbeddingTable, TransformKind,
};
use crate::kernel::{ParamId, ParamSet, Rng, Tape, Tensor, ValueId};
use crate::segmenter::SubwordVocab;

use super::{Batch, ModelConfig, NmtError, TieMode};

const NEG_INF: f64 = -1e9;

struct AttnParams {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
}

struct EncLayer {
    ln1: (ParamId, ParamId),
    attn: AttnParams,
    ln2: (ParamId, ParamId),
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

struct DecLayer {
    ln1: (ParamId, ParamId),
    self_attn: AttnParams,
    ln2: (ParamId, ParamId),
    cross_attn: AttnParams,
    ln3: (ParamId, ParamId),
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Decoder-side embedding storage.
pub(crate) enum TargetEmbedding {
    DecSde(Box<DecSdeEmbedder>),
    Lookup(ParamId),
}

pub struct TransformerModel {
    pub config: ModelConfig,
    pub src_vocab_len: usize,
    pub tgt_vocab_len: usize,
    /// Target-vocabulary ids never emitted while decoding (PAD and any
    /// language flags present in a joint vocabulary).
    pub banned_output_ids: Vec<usize>,
    pub(crate) tgt_embed: TargetEmbedding,
    src_embed: Option<ParamId>,
    enc_layers: Vec<EncLayer>,
    enc_final_ln: (ParamId, ParamId),
    dec_layers: Vec<DecLayer>,
    dec_final_ln: (ParamId, ParamId),
    out_proj: Option<ParamId>,
    num_languages: usize,
}

fn add_attn(params: &mut ParamSet, prefix: &str, dim: usize, rng: &mut Rng) -> AttnParams {
    let bound = 1.0 / (dim as f64).sqrt();
    AttnParams {
        wq: params.add_uniform(format!("{prefix}.wq"), &[dim, dim], bound, rng),
        wk: params.add_uniform(format!("{prefix}.wk"), &[dim, dim], bound, rng),
        wv: params.add_uniform(format!("{prefix}.wv"), &[dim, dim], bound, rng),
        wo: params.add_uniform(format!("{prefix}.wo"), &[dim, dim], bound, rng),
    }
}

fn add_ln(params: &mut ParamSet, prefix: &str, dim: usize) -> (ParamId, ParamId) {
    (
        params.add(format!("{prefix}.gain"), Tensor::filled(&[dim], 1.0)),
        params.add(format!("{prefix}.bias"), Tensor::zeros(&[dim])),
    )
}

impl TransformerModel {
    /// Builds fresh parameters. `ngrams` is required for the spelling-aware
    /// embedding modes; `languages` registers one transform per target
    /// language in flag order.
    pub fn new(
        config: ModelConfig,
        src_vocab: &SubwordVocab,
        tgt_vocab: &SubwordVocab,
        ngrams: Option<&crate::chargrams::NGramVocab>,
        languages: &[(String, TransformKind)],
        params: &mut ParamSet,
        rng: &mut Rng,
    ) -> Result<Self, NmtError> {
        config.validate()?;
        if languages.is_empty() {
            return Err(NmtError::BadConfig("no target languages".into()));
        }
        let dim = config.dim;
        let bound = 1.0 / (dim as f64).sqrt();

        let tgt_embed = if config.embed_mode.is_decsde() {
            let ngrams = ngrams.ok_or_else(|| {
                NmtError::BadConfig("spelling-aware modes need an n-gram vocabulary".into())
            })?;
            let kinds: Vec<(String, TransformKind)> = languages
                .iter()
                .map(|(code, kind)| {
                    let kind = match config.embed_mode {
                        EmbedMode::DecSdeFullTransform => TransformKind::Full,
                        EmbedMode::DecSdeNoTransform => TransformKind::None,
                        _ => *kind,
                    };
                    (code.clone(), kind)
                })
                .collect();
            TargetEmbedding::DecSde(Box::new(DecSdeEmbedder::new(
                tgt_vocab,
                ngrams,
                dim,
                config.latent,
                &kinds,
                params,
                rng,
            )?))
        } else {
            TargetEmbedding::Lookup(params.add_uniform(
                "tgt_embed",
                &[tgt_vocab.len(), dim],
                bound,
                rng,
            ))
        };

        let src_embed = if config.tie_mode == TieMode::ThreeWay {
            if src_vocab.tokens() != tgt_vocab.tokens() {
                return Err(NmtError::BadConfig(
                    "three-way tying requires a joint source/target vocabulary".into(),
                ));
            }
            None
        } else {
            Some(params.add_uniform("src_embed", &[src_vocab.len(), dim], bound, rng))
        };

        let mut enc_layers = Vec::with_capacity(config.enc_layers);
        for i in 0..config.enc_layers {
            let p = format!("enc.{i}");
            enc_layers.push(EncLayer {
                ln1: add_ln(params, &format!("{p}.ln1"), dim),
                attn: add_attn(params, &format!("{p}.attn"), dim, rng),
                ln2: add_ln(params, &format!("{p}.ln2"), dim),
                w1: params.add_uniform(format!("{p}.ffn.w1"), &[dim, config.ffn_dim], bound, rng),
                b1: params.add(format!("{p}.ffn.b1"), Tensor::zeros(&[config.ffn_dim])),
                w2: params.add_uniform(
                    format!("{p}.ffn.w2"),
                    &[config.ffn_dim, dim],
                    1.0 / (config.ffn_dim as f64).sqrt(),
                    rng,
                ),
                b2: params.add(format!("{p}.ffn.b2"), Tensor::zeros(&[dim])),
            });
        }
        let enc_final_ln = add_ln(params, "enc.final_ln", dim);

        let mut dec_layers = Vec::with_capacity(config.dec_layers);
        for i in 0..config.dec_layers {
            let p = format!("dec.{i}");
            dec_layers.push(DecLayer {
                ln1: add_ln(params, &format!("{p}.ln1"), dim),
                self_attn: add_attn(params, &format!("{p}.self"), dim, rng),
                ln2: add_ln(params, &format!("{p}.ln2"), dim),
                cross_attn: add_attn(params, &format!("{p}.cross"), dim, rng),
                ln3: add_ln(params, &format!("{p}.ln3"), dim),
                w1: params.add_uniform(format!("{p}.ffn.w1"), &[dim, config.ffn_dim], bound, rng),
                b1: params.add(format!("{p}.ffn.b1"), Tensor::zeros(&[config.ffn_dim])),
                w2: params.add_uniform(
                    format!("{p}.ffn.w2"),
                    &[config.ffn_dim, dim],
                    1.0 / (config.ffn_dim as f64).sqrt(),
                    rng,
                ),
                b2: params.add(format!("{p}.ffn.b2"), Tensor::zeros(&[dim])),
            });
        }
        let dec_final_ln = add_ln(params, "dec.final_ln", dim);

        let out_proj = if config.tie_mode == TieMode::Untied {
            Some(params.add_uniform("out_proj", &[tgt_vocab.len(), dim], bound, rng))
        } else {
            None
        };

        let mut banned: Vec<usize> = vec![crate::segmenter::PAD_ID];
        for (i, tok) in tgt_vocab.tokens().iter().enumerate() {
            if tok.starts_with("<2") && tok.ends_with('>') {
                banned.push(i);
            }
        }

        Ok(TransformerModel {
            config,
            src_vocab_len: src_vocab.len(),
            tgt_vocab_len: tgt_vocab.len(),
            banned_output_ids: banned,
            tgt_embed,
            src_embed,
            enc_layers,
            enc_final_ln,
            dec_layers,
            dec_final_ln,
            out_proj,
            num_languages: languages.len(),
        })
    }

    pub fn num_languages(&self) -> usize {
        self.num_languages
    }

    pub fn embedder(&self) -> Option<&DecSdeEmbedder> {
        match &self.tgt_embed {
            TargetEmbedding::DecSde(e) => Some(e),
            TargetEmbedding::Lookup(_) => None,
        }
    }

    /// The plain lookup embedding parameter, when not in a spelling-aware
    /// mode.
    pub fn lookup_table_param(&self) -> Option<ParamId> {
        match &self.tgt_embed {
            TargetEmbedding::DecSde(_) => None,
            TargetEmbedding::Lookup(id) => Some(*id),
        }
    }

    /// Sinusoidal positional encodings tiled over a flattened batch.
    fn positions(&self, batch: usize, len: usize) -> Tensor {
        let d = self.config.dim;
        let mut pe = vec![0.0f64; batch * len * d];
        for l in 0..len {
            for j in 0..d {
                let i = (j / 2 * 2) as f64;
                let angle = l as f64 / (10_000f64).powf(i / d as f64);
                let v = if j % 2 == 0 { angle.sin() } else { angle.cos() };
                for b in 0..batch {
                    pe[(b * len + l) * d + j] = v;
                }
            }
        }
        Tensor::from_vec(&[batch * len, d], pe).expect("pe shape")
    }

    /// Additive attention mask `[batch*heads, q_len, k_len]`: 0 where
    /// attendable, a large negative number where masked.
    fn attn_mask(
        &self,
        batch: usize,
        q_len: usize,
        k_len: usize,
        key_pad: Option<&[bool]>,
        causal: bool,
    ) -> Tensor {
        let heads = self.config.heads;
        let mut m = vec![0.0f64; batch * heads * q_len * k_len];
        for b in 0..batch {
            for q in 0..q_len {
                for k in 0..k_len {
                    let masked = (causal && k > q)
                        || key_pad.is_some_and(|pad| pad[b * k_len + k]);
                    if masked {
                        for h in 0..heads {
                            m[((b * heads + h) * q_len + q) * k_len + k] = NEG_INF;
                        }
                    }
                }
            }
        }
        Tensor::from_vec(&[batch * heads, q_len, k_len], m).expect("mask shape")
    }

    #[allow(clippy::too_many_arguments)]
    fn multi_head(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        p: &AttnParams,
        queries: ValueId,
        keys_values: ValueId,
        batch: usize,
        q_len: usize,
        k_len: usize,
        mask: &Tensor,
    ) -> Result<ValueId, NmtError> {
        let heads = self.config.heads;
        let dk = self.config.dim / heads;
        let wq = tape.param(params, p.wq);
        let wk = tape.param(params, p.wk);
        let wv = tape.param(params, p.wv);
        let wo = tape.param(params, p.wo);
        let q = tape.matmul(queries, wq)?;
        let k = tape.matmul(keys_values, wk)?;
        let v = tape.matmul(keys_values, wv)?;
        let qh = tape.split_heads(q, batch, q_len, heads)?;
        let kh = tape.split_heads(k, batch, k_len, heads)?;
        let vh = tape.split_heads(v, batch, k_len, heads)?;
        let scores = tape.bmm_nt(qh, kh)?;
        let scaled = tape.scale(scores, 1.0 / (dk as f64).sqrt())?;
        let mask_v = tape.constant(mask.clone());
        let masked = tape.add(scaled, mask_v)?;
        let attn = tape.softmax_last(masked)?;
        let ctx = tape.bmm(attn, vh)?;
        let merged = tape.merge_heads(ctx, batch, q_len, heads)?;
        Ok(tape.matmul(merged, wo)?)
    }

    #[allow(clippy::too_many_arguments)]
    fn ffn(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        x: ValueId,
        w1: ParamId,
        b1: ParamId,
        w2: ParamId,
        b2: ParamId,
    ) -> Result<ValueId, NmtError> {
        let w1v = tape.param(params, w1);
        let b1v = tape.param(params, b1);
        let w2v = tape.param(params, w2);
        let b2v = tape.param(params, b2);
        let h = tape.matmul(x, w1v)?;
        let h = tape.add_bias(h, b1v)?;
        let h = tape.relu(h)?;
        let h = tape.matmul(h, w2v)?;
        Ok(tape.add_bias(h, b2v)?)
    }

    fn layer_norm(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        x: ValueId,
        ln: (ParamId, ParamId),
    ) -> Result<ValueId, NmtError> {
        let g = tape.param(params, ln.0);
        let b = tape.param(params, ln.1);
        Ok(tape.layer_norm(x, g, b)?)
    }

    fn dropout(
        &self,
        tape: &mut Tape,
        x: ValueId,
        train: bool,
        rng: &mut Rng,
    ) -> Result<ValueId, NmtError> {
        if train {
            Ok(tape.dropout(x, self.config.dropout_p, rng)?)
        } else {
            Ok(x)
        }
    }

    /// Embeds source ids: the plain source lookup table, or the shared
    /// target table under three-way tying.
    fn embed_source(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        ids: &[usize],
        lang: usize,
    ) -> Result<ValueId, NmtError> {
        match self.src_embed {
            Some(table) => {
                let t = tape.param(params, table);
                Ok(lookup_embed(tape, t, ids)?)
            }
            None => {
                let table = self.target_table_value(tape, params, lang)?;
                Ok(lookup_embed(tape, table, ids)?)
            }
        }
    }

    /// The full `V x d` target embedding matrix as a tape value.
    fn target_table_value(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        lang: usize,
    ) -> Result<ValueId, NmtError> {
        match &self.tgt_embed {
            TargetEmbedding::DecSde(e) => Ok(e.embed_full_vocab(tape, params, lang)?),
            TargetEmbedding::Lookup(id) => Ok(tape.param(params, *id)),
        }
    }

    /// Encoder stack over a prepared batch; returns `[B*Ls, d]`.
    pub fn encode(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        batch: &Batch,
        train: bool,
        rng: &mut Rng,
    ) -> Result<ValueId, NmtError> {
        let lang = batch.lang()?;
        let scale = (self.config.dim as f64).sqrt();
        let emb = self.embed_source(tape, params, &batch.src_ids, lang)?;
        let emb = tape.scale(emb, scale)?;
        let pe = tape.constant(self.positions(batch.size, batch.src_len));
        let mut x = tape.add(emb, pe)?;
        x = self.dropout(tape, x, train, rng)?;

        let mask = self.attn_mask(
            batch.size,
            batch.src_len,
            batch.src_len,
            Some(&batch.src_pad),
            false,
        );
        for layer in &self.enc_layers {
            let normed = self.layer_norm(tape, params, x, layer.ln1)?;
            let attn = self.multi_head(
                tape,
                params,
                &layer.attn,
                normed,
                normed,
                batch.size,
                batch.src_len,
                batch.src_len,
                &mask,
            )?;
            let attn = self.dropout(tape, attn, train, rng)?;
            x = tape.add(x, attn)?;
            let normed = self.layer_norm(tape, params, x, layer.ln2)?;
            let ff = self.ffn(tape, params, normed, layer.w1, layer.b1, layer.w2, layer.b2)?;
            let ff = self.dropout(tape, ff, train, rng)?;
            x = tape.add(x, ff)?;
        }
        self.layer_norm(tape, params, x, self.enc_final_ln)
    }

    /// Decoder stack producing logits `[B*Lt, V]` over the target
    /// vocabulary, using the configured embedding and tying.
    pub fn decode_forward(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        batch: &Batch,
        enc_out: ValueId,
        train: bool,
        rng: &mut Rng,
    ) -> Result<ValueId, NmtError> {
        let lang = batch.lang()?;
        let hidden = self.decoder_hidden(
            tape, params, &batch.tgt_in, batch.size, batch.tgt_len, enc_out, batch.src_len,
            &batch.src_pad, lang, train, rng, None,
        )?;
        self.project(tape, params, hidden, lang, None)
    }

    /// Shared decoder body. `fixed_table` short-circuits target embedding
    /// through a precomputed matrix (inference).
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn decoder_hidden(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        tgt_in: &[usize],
        batch: usize,
        tgt_len: usize,
        enc_out: ValueId,
        src_len: usize,
        src_pad: &[bool],
        lang: usize,
        train: bool,
        rng: &mut Rng,
        fixed_table: Option<ValueId>,
    ) -> Result<ValueId, NmtError> {
        let scale = (self.config.dim as f64).sqrt();
        let emb = match fixed_table {
            Some(table) => lookup_embed(tape, table, tgt_in)?,
            None => match &self.tgt_embed {
                TargetEmbedding::DecSde(e) => e.embed_batch(tape, params, tgt_in, lang)?,
                TargetEmbedding::Lookup(id) => {
                    let t = tape.param(params, *id);
                    lookup_embed(tape, t, tgt_in)?
                }
            },
        };
        let emb = tape.scale(emb, scale)?;
        let pe = tape.constant(self.positions(batch, tgt_len));
        let mut x = tape.add(emb, pe)?;
        x = self.dropout(tape, x, train, rng)?;

        let tgt_pad: Vec<bool> = tgt_in
            .iter()
            .map(|&id| id == crate::segmenter::PAD_ID)
            .collect();
        let self_mask = self.attn_mask(batch, tgt_len, tgt_len, Some(&tgt_pad), true);
        let cross_mask = self.attn_mask(batch, tgt_len, src_len, Some(src_pad), false);

        for layer in &self.dec_layers {
            let normed = self.layer_norm(tape, params, x, layer.ln1)?;
            let attn = self.multi_head(
                tape,
                params,
                &layer.self_attn,
                normed,
                normed,
                batch,
                tgt_len,
                tgt_len,
                &self_mask,
            )?;
            let attn = self.dropout(tape, attn, train, rng)?;
            x = tape.add(x, attn)?;

            let normed = self.layer_norm(tape, params, x, layer.ln2)?;
            let cross = self.multi_head(
                tape,
                params,
                &layer.cross_attn,
                normed,
                enc_out,
                batch,
                tgt_len,
                src_len,
                &cross_mask,
            )?;
            let cross = self.dropout(tape, cross, train, rng)?;
            x = tape.add(x, cross)?;

            let normed = self.layer_norm(tape, params, x, layer.ln3)?;
            let ff = self.ffn(tape, params, normed, layer.w1, layer.b1, layer.w2, layer.b2)?;
            let ff = self.dropout(tape, ff, train, rng)?;
            x = tape.add(x, ff)?;
        }
        self.layer_norm(tape, params, x, self.dec_final_ln)
    }

    /// Projects decoder states to vocabulary logits through the tied table
    /// or the separate projection.
    pub(crate) fn project(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        hidden: ValueId,
        lang: usize,
        fixed_table: Option<ValueId>,
    ) -> Result<ValueId, NmtError> {
        match self.out_proj {
            Some(proj) => {
                let p = tape.param(params, proj);
                Ok(tied_logits(tape, hidden, p)?)
            }
            None => {
                let table = match fixed_table {
                    Some(t) => t,
                    None => self.target_table_value(tape, params, lang)?,
                };
                Ok(tied_logits(tape, hidden, table)?)
            }
        }
    }

    /// Full forward pass to the label-smoothed loss.
    pub fn loss(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        batch: &Batch,
        label_smoothing: f64,
        train: bool,
        rng: &mut Rng,
    ) -> Result<ValueId, NmtError> {
        let enc = self.encode(tape, params, batch, train, rng)?;
        let logits = self.decode_forward(tape, params, batch, enc, train, rng)?;
        Ok(tape.label_smoothed_ce(logits, &batch.tgt_out, &batch.tgt_mask, label_smoothing)?)
    }

    /// Precomputed decode table for one language (inference). For lookup
    /// modes this snapshots the embedding parameter.
    pub fn decode_table(
        &self,
        params: &ParamSet,
        lang_index: usize,
        lang_code: &str,
    ) -> Result<EmbeddingTable, NmtError> {
        match &self.tgt_embed {
            TargetEmbedding::DecSde(e) => Ok(e.precompute_table(params, lang_index)?),
            TargetEmbedding::Lookup(id) => Ok(EmbeddingTable {
                matrix: params.get(*id).value.clone(),
                language: crate::decsde::LanguageId {
                    code: lang_code.to_string(),
                    index: lang_index,
                },
                params_version: params.version(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chargrams::build_ngram_vocab;
    use crate::segmenter::{standard_specials, SubwordVocab};

    fn vocab(tokens: &[&str], flags: &[&str]) -> SubwordVocab {
        SubwordVocab::new(
            &standard_specials(flags),
            tokens.iter().map(|t| (t.to_string(), 1)).collect(),
        )
        .unwrap()
    }

    fn small_config(mode: EmbedMode, tie: TieMode) -> ModelConfig {
        ModelConfig {
            enc_layers: 1,
            dec_layers: 1,
            heads: 2,
            dim: 8,
            ffn_dim: 16,
            dropout_p: 0.0,
            embed_mode: mode,
            tie_mode: tie,
            max_len: 16,
            latent: 5,
        }
    }

    fn build(
        mode: EmbedMode,
        tie: TieMode,
        seed: u64,
    ) -> (TransformerModel, ParamSet, SubwordVocab, SubwordVocab) {
        let src_v = vocab(&["sa", "sb", "sc"], &["hrl", "lrl"]);
        let tgt_v = vocab(&["ta", "tb", "tc", "tatb"], &[]);
        let ngv = build_ngram_vocab(&tgt_v, 3, 1).unwrap();
        let mut params = ParamSet::new();
        let mut rng = Rng::seed(seed);
        let langs = vec![
            ("hrl".to_string(), TransformKind::LowRank { rank: 2 }),
            ("lrl".to_string(), TransformKind::LowRank { rank: 2 }),
        ];
        let model = TransformerModel::new(
            small_config(mode, tie),
            &src_v,
            &tgt_v,
            Some(&ngv),
            &langs,
            &mut params,
            &mut rng,
        )
        .unwrap();
        (model, params, src_v, tgt_v)
    }

    fn flag_ids(src_v: &SubwordVocab) -> Vec<usize> {
        vec![src_v.flag_id("hrl").unwrap(), src_v.flag_id("lrl").unwrap()]
    }

    fn toy_batch(src_v: &SubwordVocab) -> Batch {
        Batch::build(
            &[vec![6, 7], vec![8]],
            &[vec![4, 5, 6], vec![5]],
            &[0, 0],
            &flag_ids(src_v),
            16,
        )
        .unwrap()
    }

    #[test]
    fn encoder_output_shape_contract() {
        let (model, params, src_v, _) = build(EmbedMode::DecSde, TieMode::TwoWay, 1);
        let batch = toy_batch(&src_v);
        let mut tape = Tape::new();
        let mut rng = Rng::seed(0);
        let enc = model
            .encode(&mut tape, &params, &batch, false, &mut rng)
            .unwrap();
        assert_eq!(
            tape.value(enc).shape(),
            &[batch.size * batch.src_len, model.config.dim]
        );
    }

    #[test]
    fn pad_positions_do_not_leak_into_other_outputs() {
        let (model, params, src_v, _) = build(EmbedMode::DecSde, TieMode::TwoWay, 2);
        let batch = toy_batch(&src_v);
        // second sentence is padded at the tail; swap the PAD id there for
        // a real token id while keeping the pad mask: outputs elsewhere
        // must not move.
        let mut altered = batch.clone();
        let last = batch.size * batch.src_len - 1;
        assert!(altered.src_pad[last]);
        altered.src_ids[last] = 6;

        let mut rng = Rng::seed(0);
        let mut tape_a = Tape::new();
        let a = model
            .encode(&mut tape_a, &params, &batch, false, &mut rng)
            .unwrap();
        let mut tape_b = Tape::new();
        let b = model
            .encode(&mut tape_b, &params, &altered, false, &mut rng)
            .unwrap();
        let d = model.config.dim;
        for row in 0..batch.size * batch.src_len {
            if batch.src_pad[row] {
                continue;
            }
            for j in 0..d {
                assert_eq!(
                    tape_a.value(a).at2(row, j),
                    tape_b.value(b).at2(row, j),
                    "non-pad row {row} changed"
                );
            }
        }
    }

    #[test]
    fn causal_mask_blocks_future_positions() {
        let (model, params, src_v, _) = build(EmbedMode::DecSde, TieMode::TwoWay, 3);
        let batch = Batch::build(
            &[vec![6, 7]],
            &[vec![4, 5, 6]],
            &[0],
            &flag_ids(&src_v),
            16,
        )
        .unwrap();
        let mut rng = Rng::seed(0);
        let mut tape = Tape::new();
        let enc = model
            .encode(&mut tape, &params, &batch, false, &mut rng)
            .unwrap();
        let logits = model
            .decode_forward(&mut tape, &params, &batch, enc, false, &mut rng)
            .unwrap();

        // perturb the target token at position 2 (0-based)
        let mut altered = batch.clone();
        altered.tgt_in[2] = 6;
        let mut tape_b = Tape::new();
        let enc_b = model
            .encode(&mut tape_b, &params, &altered, false, &mut rng)
            .unwrap();
        let logits_b = model
            .decode_forward(&mut tape_b, &params, &altered, enc_b, false, &mut rng)
            .unwrap();

        let v = model.tgt_vocab_len;
        for pos in 0..2 {
            for j in 0..v {
                assert_eq!(
                    tape.value(logits).at2(pos, j),
                    tape_b.value(logits_b).at2(pos, j),
                    "logits at position {pos} changed by a future-token edit"
                );
            }
        }
        // and the perturbed position itself must see a difference somewhere
        let changed = (0..v).any(|j| {
            tape.value(logits).at2(2, j) != tape_b.value(logits_b).at2(2, j)
        });
        assert!(changed);
    }

    #[test]
    fn tying_removes_the_projection_matrix() {
        let (_, tied_params, _, tgt_v) = build(EmbedMode::LookupPiece, TieMode::TwoWay, 4);
        let (_, untied_params, _, _) = build(EmbedMode::LookupPiece, TieMode::Untied, 4);
        let extra = untied_params.total_values() - tied_params.total_values();
        assert_eq!(extra, tgt_v.len() * 8);
        assert!(tied_params.find("out_proj").is_none());
        assert!(untied_params.find("out_proj").is_some());
    }

    #[test]
    fn loss_gradient_reaches_gram_embeddings() {
        let (model, mut params, src_v, _) = build(EmbedMode::DecSde, TieMode::TwoWay, 5);
        let batch = toy_batch(&src_v);
        let mut rng = Rng::seed(0);
        let mut tape = Tape::new();
        let loss = model
            .loss(&mut tape, &params, &batch, 0.1, false, &mut rng)
            .unwrap();
        tape.backward(loss, &mut params).unwrap();
        let w_c = params.find("decsde.w_c").unwrap();
        let nonzero = params
            .get(w_c)
            .grad
            .data()
            .iter()
            .filter(|g| **g != 0.0)
            .count();
        assert!(nonzero > 0, "gram-embedding gradient is all zero");
    }

    #[test]
    fn language_choice_changes_logits_when_transforms_differ() {
        let (model, mut params, src_v, _) = build(EmbedMode::DecSde, TieMode::TwoWay, 6);
        // make lrl's transform distinct
        let u = params.find("decsde.lrl.u").unwrap();
        for v in params.get_mut(u).value.data_mut() {
            *v = 0.7;
        }
        let mk = |lang: usize| {
            Batch::build(
                &[vec![6, 7]],
                &[vec![4, 5]],
                &[lang],
                &flag_ids(&src_v),
                16,
            )
            .unwrap()
        };
        let mut rng = Rng::seed(0);
        let run = |batch: &Batch, params: &ParamSet, rng: &mut Rng| {
            let mut tape = Tape::new();
            let enc = model.encode(&mut tape, params, batch, false, rng).unwrap();
            let logits = model
                .decode_forward(&mut tape, params, batch, enc, false, rng)
                .unwrap();
            tape.value(logits).data().to_vec()
        };
        let a = run(&mk(0), &params, &mut rng);
        let b = run(&mk(1), &params, &mut rng);
        assert_ne!(a, b);
    }

    #[test]
    fn three_way_tying_requires_joint_vocab() {
        let src_v = vocab(&["sa"], &["hrl"]);
        let tgt_v = vocab(&["ta"], &[]);
        let ngv = build_ngram_vocab(&tgt_v, 2, 1).unwrap();
        let mut params = ParamSet::new();
        let mut rng = Rng::seed(9);
        let langs = vec![("hrl".to_string(), TransformKind::LowRank { rank: 1 })];
        let out = TransformerModel::new(
            small_config(EmbedMode::DecSde, TieMode::ThreeWay),
            &src_v,
            &tgt_v,
            Some(&ngv),
            &langs,
            &mut params,
            &mut rng,
        );
        assert!(matches!(out, Err(NmtError::BadConfig(_))));
    }

    #[test]
    fn three_way_tying_shares_the_table_with_the_encoder() {
        let joint = vocab(&["ta", "tb"], &["hrl"]);
        let ngv = build_ngram_vocab(&joint, 2, 1).unwrap();
        let mut params = ParamSet::new();
        let mut rng = Rng::seed(10);
        let langs = vec![("hrl".to_string(), TransformKind::LowRank { rank: 1 })];
        let model = TransformerModel::new(
            small_config(EmbedMode::LookupPiece, TieMode::ThreeWay),
            &joint,
            &joint,
            Some(&ngv),
            &langs,
            &mut params,
            &mut rng,
        )
        .unwrap();
        assert!(params.find("src_embed").is_none());
        let batch = Batch::build(
            &[vec![5]],
            &[vec![6]],
            &[0],
            &[joint.flag_id("hrl").unwrap()],
            8,
        )
        .unwrap();
        let mut tape = Tape::new();
        let loss = model
            .loss(&mut tape, &params, &batch, 0.0, false, &mut rng)
            .unwrap();
        tape.backward(loss, &mut params).unwrap();
        let te = params.find("tgt_embed").unwrap();
        assert!(params.get(te).grad.data().iter().any(|g| *g != 0.0));
    }
}
