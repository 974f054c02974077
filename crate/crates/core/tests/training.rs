//! End-to-end training behavior: determinism, exact resume, memorization
//! and a toy copy task decoded with precomputed tables.

use decsde_core::decsde::EmbedMode;
use decsde_core::kernel::Rng;
use decsde_core::pipeline::{build_experiment, desk_setup, translate_lines, LangText};
use decsde_core::trainer::{train, Checkpoint, OptimizerState, TrainState};

fn copy_task_data(sentences: usize, seed: u64) -> LangText {
    // a 5-symbol toy language; target copies the source
    let symbols = ["ba", "ke", "li", "mo", "tu"];
    let mut rng = Rng::seed(seed);
    let mut lines = Vec::with_capacity(sentences);
    for _ in 0..sentences {
        let len = 2 + rng.below(4);
        let words: Vec<&str> = (0..len).map(|_| symbols[rng.below(5)]).collect();
        lines.push(words.join(" "));
    }
    LangText {
        code: "hrl".into(),
        train_src: lines.clone(),
        train_tgt: lines.clone(),
        dev_src: lines[..4.min(lines.len())].to_vec(),
        dev_tgt: lines[..4.min(lines.len())].to_vec(),
    }
}

fn tiny_setup(mode: EmbedMode, seed: u64) -> decsde_core::pipeline::ExperimentSetup {
    let mut setup = desk_setup(mode, &[("hrl", 2)], seed);
    setup.vocab_size = 80;
    setup.model.enc_layers = 1;
    setup.model.dec_layers = 1;
    setup.model.heads = 2;
    setup.model.dim = 32;
    setup.model.ffn_dim = 64;
    setup.model.latent = 16;
    setup.model.max_len = 24;
    setup.model.dropout_p = 0.1;
    setup.train.dropout = 0.1;
    setup.train.batch_tokens = 400;
    setup.train.warmup_steps = 40;
    setup.train.lr_peak = 3e-3;
    setup
}

fn params_bits(params: &decsde_core::kernel::ParamSet) -> Vec<u64> {
    params
        .iter()
        .flat_map(|p| p.value.data().iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn fixed_seed_training_is_bit_deterministic() {
    let data = vec![copy_task_data(40, 11)];
    let run = || {
        let mut setup = tiny_setup(EmbedMode::DecSde, 21);
        setup.train.max_epochs = 2;
        let built = build_experiment(&setup, &data).unwrap();
        let mut state = TrainState::fresh(built.params, setup.train.seed);
        let stats = train(
            &built.model,
            &mut state,
            &built.corpora,
            &built.flag_ids,
            &setup.train,
            &setup.languages,
            None,
            &[],
        )
        .unwrap();
        (params_bits(&state.params), stats)
    };
    let (bits_a, stats_a) = run();
    let (bits_b, stats_b) = run();
    assert_eq!(bits_a, bits_b, "parameters diverged across identical runs");
    for (a, b) in stats_a.iter().zip(&stats_b) {
        assert_eq!(a.mean_loss, b.mean_loss);
        assert_eq!(a.dev_ppl, b.dev_ppl);
    }
}

#[test]
fn resume_from_checkpoint_continues_exactly() {
    let data = vec![copy_task_data(40, 13)];
    let dir = std::env::temp_dir().join("decsde_resume_test");
    let _ = std::fs::remove_dir_all(&dir);

    // run A: 4 epochs straight through
    let mut setup = tiny_setup(EmbedMode::DecSde, 31);
    setup.train.max_epochs = 4;
    let built = build_experiment(&setup, &data).unwrap();
    let mut state = TrainState::fresh(built.params, setup.train.seed);
    let stats_full = train(
        &built.model,
        &mut state,
        &built.corpora,
        &built.flag_ids,
        &setup.train,
        &setup.languages,
        None,
        &[],
    )
    .unwrap();
    let full_bits = params_bits(&state.params);

    // run B: 2 epochs, checkpoint, restore, 2 more
    let mut setup_b = tiny_setup(EmbedMode::DecSde, 31);
    setup_b.train.max_epochs = 2;
    let built_b = build_experiment(&setup_b, &data).unwrap();
    let mut state_b = TrainState::fresh(built_b.params, setup_b.train.seed);
    let stats_head = train(
        &built_b.model,
        &mut state_b,
        &built_b.corpora,
        &built_b.flag_ids,
        &setup_b.train,
        &setup_b.languages,
        Some(&dir),
        &[],
    )
    .unwrap();

    let ck = Checkpoint::load(&dir.join("last.ckpt")).unwrap();
    let mut setup_c = tiny_setup(EmbedMode::DecSde, 31);
    setup_c.train.max_epochs = 4;
    let built_c = build_experiment(&setup_c, &data).unwrap();
    let mut params_c = built_c.params;
    let mut opt_c = OptimizerState::new(&params_c);
    let rng_c = ck.restore(&mut params_c, &mut opt_c).unwrap();
    let mut state_c = TrainState {
        params: params_c,
        opt: opt_c,
        rng: rng_c,
        epoch: ck.epoch,
        global_step: ck.global_step,
        best_dev_ppl: ck.best_dev_ppl,
    };
    let stats_tail = train(
        &built_c.model,
        &mut state_c,
        &built_c.corpora,
        &built_c.flag_ids,
        &setup_c.train,
        &setup_c.languages,
        None,
        &[],
    )
    .unwrap();

    assert_eq!(full_bits, params_bits(&state_c.params));
    // the loss curve is the concatenation of the two runs
    let resumed: Vec<f64> = stats_head
        .iter()
        .chain(&stats_tail)
        .map(|s| s.mean_loss)
        .collect();
    let straight: Vec<f64> = stats_full.iter().map(|s| s.mean_loss).collect();
    assert_eq!(straight, resumed);
}

#[test]
fn memorization_corpus_overfits() {
    // 50-sentence memorization corpus reaches a small training loss
    let data = vec![copy_task_data(50, 17)];
    let mut setup = tiny_setup(EmbedMode::DecSde, 41);
    setup.train.max_epochs = 200;
    setup.train.label_smoothing = 0.0;
    setup.train.dropout = 0.0;
    setup.model.dropout_p = 0.0;
    let built = build_experiment(&setup, &data).unwrap();
    let mut state = TrainState::fresh(built.params, setup.train.seed);
    let stats = train(
        &built.model,
        &mut state,
        &built.corpora,
        &built.flag_ids,
        &setup.train,
        &setup.languages,
        None,
        &[],
    )
    .unwrap();
    let best = stats.iter().map(|s| s.mean_loss).fold(f64::INFINITY, f64::min);
    assert!(
        best < 0.1,
        "training loss should fall below 0.1, reached {best}"
    );
}

#[test]
fn trained_model_copies_held_out_strings() {
    let data = vec![copy_task_data(150, 19)];
    let mut setup = tiny_setup(EmbedMode::DecSde, 51);
    setup.train.max_epochs = 60;
    setup.train.dropout = 0.0;
    setup.model.dropout_p = 0.0;
    let built = build_experiment(&setup, &data).unwrap();
    let mut state = TrainState::fresh(built.params, setup.train.seed);
    train(
        &built.model,
        &mut state,
        &built.corpora,
        &built.flag_ids,
        &setup.train,
        &setup.languages,
        None,
        &[],
    )
    .unwrap();

    // held-out strings from the same 5-symbol language
    let held_out = vec![
        "tu mo ba".to_string(),
        "ke li".to_string(),
        "mo mo tu ke".to_string(),
    ];
    let table = built.model.decode_table(&state.params, 0, "hrl").unwrap();
    let out = translate_lines(
        &built.model,
        &state.params,
        &built.vocabs,
        &table,
        &held_out,
        0,
        built.flag_ids[0],
        1,
        1.0,
        16,
    )
    .unwrap();
    let copied = held_out.iter().zip(&out).filter(|(a, b)| a == b).count();
    assert!(
        copied >= 2,
        "copy task should generalize; copied {copied}/3: {out:?}"
    );
}
