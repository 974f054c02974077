//! Manual tuning probe for the synthetic transfer experiment. Ignored by
//! default; run with
//! `cargo test --test tuning -- --ignored --nocapture`
//! to see per-epoch timing, dev perplexity and test BLEU per system.

use std::time::Instant;

use decsde_core::decsde::{EmbedMode, TransformKind};
use decsde_core::evalbench::{bleu_corpus, make_synthetic_pair, SyntheticConfig};
use decsde_core::nmt::ModelConfig;
use decsde_core::pipeline::{build_experiment, translate_lines, ExperimentSetup, LangText};
use decsde_core::trainer::{train, TrainConfig, TrainState};

fn lang_texts(pair: &decsde_core::evalbench::SyntheticPair) -> Vec<LangText> {
    vec![
        LangText {
            code: "hrl".into(),
            train_src: pair.hrl_train.src.clone(),
            train_tgt: pair.hrl_train.tgt.clone(),
            dev_src: pair.hrl_dev.src.clone(),
            dev_tgt: pair.hrl_dev.tgt.clone(),
        },
        LangText {
            code: "lrl".into(),
            train_src: pair.lrl_train.src.clone(),
            train_tgt: pair.lrl_train.tgt.clone(),
            dev_src: pair.lrl_dev.src.clone(),
            dev_tgt: pair.lrl_dev.tgt.clone(),
        },
    ]
}

#[test]
#[ignore]
fn tuning_probe() {
    let pair = make_synthetic_pair(&SyntheticConfig {
        seed: 1,
        root_vocab: 50,
        min_words: 3,
        max_words: 5,
        ..SyntheticConfig::default()
    });
    let data = lang_texts(&pair);
    for mode in [EmbedMode::DecSde, EmbedMode::LookupPiece] {
        let kind = if mode == EmbedMode::DecSde {
            TransformKind::LowRank { rank: 4 }
        } else {
            TransformKind::None
        };
        let setup = ExperimentSetup {
            model: ModelConfig {
                dropout_p: 0.1,
                embed_mode: mode,
                max_len: 32,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                lr_peak: 1e-3,
                warmup_steps: 100,
                max_epochs: 0,
                dropout: 0.1,
                batch_tokens: 2000,
                seed: 1,
                ..TrainConfig::default()
            },
            vocab_size: 2000,
            word_top_k: 4000,
            n_max: 4,
            min_count: 1,
            languages: vec![("hrl".into(), kind), ("lrl".into(), kind)],
        };
        let start = Instant::now();
        let built = build_experiment(&setup, &data).unwrap();
        println!(
            "{}: src vocab {}, tgt vocab {}, ngrams {}, built in {:.1}s",
            mode.as_str(),
            built.vocabs.src_vocab.len(),
            built.vocabs.tgt_vocab.len(),
            built.vocabs.ngrams.as_ref().map_or(0, |n| n.len()),
            start.elapsed().as_secs_f64()
        );
        let mut state = TrainState::fresh(built.params, setup.train.seed);
        let mut cfg = setup.train.clone();
        for epoch in 1..=14usize {
            cfg.max_epochs = epoch;
            let t = Instant::now();
            let stats = train(
                &built.model,
                &mut state,
                &built.corpora,
                &built.flag_ids,
                &cfg,
                &setup.languages,
                None,
                &[],
            )
            .unwrap();
            let s = stats.last().unwrap();
            let mut line = format!(
                "  epoch {epoch:>2}: {:.1}s loss {:.3} dev_ppl {:.2}",
                t.elapsed().as_secs_f64(),
                s.mean_loss,
                s.dev_ppl
            );
            if epoch % 2 == 0 {
                let td = Instant::now();
                let table = built.model.decode_table(&state.params, 1, "lrl").unwrap();
                let hyps = translate_lines(
                    &built.model,
                    &state.params,
                    &built.vocabs,
                    &table,
                    &pair.lrl_test.src,
                    1,
                    built.flag_ids[1],
                    1,
                    1.0,
                    64,
                )
                .unwrap();
                let bleu = bleu_corpus(&hyps, &pair.lrl_test.tgt).unwrap().score;
                line.push_str(&format!(
                    "  test BLEU {bleu:.2} (decode {:.1}s)",
                    td.elapsed().as_secs_f64()
                ));
            }
            println!("{line}");
        }
    }
}
