//! One function per subcommand; each delegates to the library and maps
//! failures onto the documented exit codes.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use decsde_core::decsde::EmbeddingTable;
use decsde_core::evalbench::{
    bleu_corpus, bleu_csv, embedding_mrr, f1_gain_csv, f1_gain_dat, make_synthetic_pair,
    mrr_gain_csv, mrr_gain_dat, rare_word_f1, speed_bench, MrrReport, SyntheticConfig, WordPair,
    WordPairSet,
};
use decsde_core::kernel::ParamSet;
use decsde_core::nmt::TransformerModel;
use decsde_core::pipeline::{
    build_model, build_vocabs, encode_corpora, translate_lines, ExperimentSetup, LangText,
    VocabPaths, VocabSet,
};
use decsde_core::segmenter::BOUNDARY;
use decsde_core::trainer::{
    find_checkpoint, train, Checkpoint, OptimizerState, ParallelCorpus, TrainState,
};

use crate::config::{read_lines, write_lines, ExperimentConfig};
use crate::flags::Flags;
use crate::CliError;

pub fn run(cmd: &str, args: &[String]) -> Result<(), CliError> {
    let mut flags = Flags::parse(args)?;
    match cmd {
        "make-synthetic" => make_synthetic(&mut flags),
        "build-vocab" => build_vocab(&mut flags),
        "build-ngrams" => build_ngrams(&mut flags),
        "train" => cmd_train(&mut flags),
        "translate" => translate(&mut flags),
        "precompute" => precompute(&mut flags),
        "analyze-embeddings" => analyze_embeddings(&mut flags),
        "eval-bleu" => eval_bleu(&mut flags),
        "bench" => bench(&mut flags),
        other => Err(CliError::Config(format!(
            "unknown command {other:?}; run `decsde --help`"
        ))),
    }
}

fn load_config(flags: &mut Flags) -> Result<ExperimentConfig, CliError> {
    let path = flags.take_required("config")?;
    ExperimentConfig::from_file(Path::new(&path))
}

fn vocab_paths(cfg: &ExperimentConfig) -> VocabPaths {
    VocabPaths {
        src_vocab: cfg.artifact_path("src_vocab", "src.vocab.tsv"),
        src_merges: cfg.artifact_path("src_merges", "src.merges.txt"),
        tgt_vocab: cfg.artifact_path("tgt_vocab", "tgt.vocab.tsv"),
        tgt_merges: cfg.artifact_path("tgt_merges", "tgt.merges.txt"),
        ngrams: cfg.artifact_path("ngrams", "ngrams.tsv"),
    }
}

/// Loads vocabulary artifacts if present, otherwise builds them from the
/// corpora (when available) and saves them.
fn ensure_vocabs(
    cfg: &ExperimentConfig,
    setup: &ExperimentSetup,
    data: Option<&[LangText]>,
) -> Result<VocabSet, CliError> {
    let paths = vocab_paths(cfg);
    if paths.all_present(setup.model.embed_mode) {
        return Ok(VocabSet::load(setup.model.embed_mode, &paths)?);
    }
    let data = data.ok_or_else(|| {
        CliError::Data(format!(
            "vocabulary artifacts missing under {}; run `decsde build-vocab` first",
            cfg.out_dir().display()
        ))
    })?;
    let vocabs = build_vocabs(setup, data)?;
    fs::create_dir_all(cfg.out_dir())
        .map_err(|e| CliError::Data(format!("{}: {e}", cfg.out_dir().display())))?;
    vocabs.save(&paths)?;
    Ok(vocabs)
}

fn lang_index(cfg: &ExperimentConfig, code: &str) -> Result<usize, CliError> {
    cfg.langs()?
        .iter()
        .position(|l| l == code)
        .ok_or_else(|| CliError::Config(format!("language {code:?} not in `langs`")))
}

/// Builds the model and restores parameters from a checkpoint.
fn restore_model(
    cfg: &ExperimentConfig,
    setup: &ExperimentSetup,
    vocabs: &VocabSet,
    checkpoint: Option<&str>,
) -> Result<(TransformerModel, ParamSet, Checkpoint), CliError> {
    let ck_path = match checkpoint {
        Some(p) => PathBuf::from(p),
        None => find_checkpoint(&cfg.out_dir()),
    };
    let ck = Checkpoint::load(&ck_path)?;
    let (model, mut params) = build_model(setup, vocabs)?;
    let mut opt = OptimizerState::new(&params);
    ck.restore(&mut params, &mut opt)?;
    Ok((model, params, ck))
}

fn make_synthetic(flags: &mut Flags) -> Result<(), CliError> {
    let out = PathBuf::from(flags.take_required("out")?);
    let config = SyntheticConfig {
        seed: flags.take_u64("seed", 1)?,
        root_vocab: flags.take_usize("roots", 120)?,
        corruption_rate: flags.take_f64("corruption", 1.5)?,
        hrl_train: flags.take_usize("hrl-train", 5000)?,
        lrl_train: flags.take_usize("lrl-train", 400)?,
        hrl_dev: flags.take_usize("hrl-dev", 200)?,
        lrl_dev: flags.take_usize("lrl-dev", 100)?,
        lrl_test: flags.take_usize("lrl-test", 200)?,
        min_words: flags.take_usize("min-words", 3)?,
        max_words: flags.take_usize("max-words", 8)?,
        lrl_seen_fraction: flags.take_f64("seen-fraction", 0.7)?,
    };
    std::mem::take(flags).reject_unknown()?;
    let pair = make_synthetic_pair(&config);
    fs::create_dir_all(&out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;

    let splits = [
        ("hrl.train", &pair.hrl_train),
        ("hrl.dev", &pair.hrl_dev),
        ("lrl.train", &pair.lrl_train),
        ("lrl.dev", &pair.lrl_dev),
        ("lrl.test", &pair.lrl_test),
    ];
    for (name, split) in splits {
        write_lines(&out.join(format!("{name}.src")), &split.src)?;
        write_lines(&out.join(format!("{name}.tgt")), &split.tgt)?;
    }
    let mut pairs = String::from("hrl\tlrl\tdistance\n");
    for (h, l) in pair.hrl_words.iter().zip(&pair.lrl_words) {
        let d = decsde_core::evalbench::edit_distance(h, l);
        pairs.push_str(&format!("{h}\t{l}\t{d}\n"));
    }
    fs::write(out.join("word_pairs.tsv"), pairs)
        .map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;

    println!(
        "synthetic pair written to {}: {} concepts, hrl {} / lrl {} train sentences, \
         mean pair edit distance {:.2}",
        out.display(),
        config.root_vocab,
        pair.hrl_train.src.len(),
        pair.lrl_train.src.len(),
        pair.mean_pair_distance()
    );
    Ok(())
}

fn build_vocab(flags: &mut Flags) -> Result<(), CliError> {
    let mut cfg = load_config(flags)?;
    std::mem::take(flags).apply_overrides(&mut cfg)?;
    let setup = cfg.to_setup()?;
    let data = cfg.load_lang_texts()?;
    let vocabs = build_vocabs(&setup, &data)?;
    fs::create_dir_all(cfg.out_dir())
        .map_err(|e| CliError::Data(format!("{}: {e}", cfg.out_dir().display())))?;
    let paths = vocab_paths(&cfg);
    vocabs.save(&paths)?;
    println!(
        "source vocab: {} tokens -> {}",
        vocabs.src_vocab.len(),
        paths.src_vocab.display()
    );
    println!(
        "target vocab: {} tokens -> {}",
        vocabs.tgt_vocab.len(),
        paths.tgt_vocab.display()
    );
    if let Some(ngv) = &vocabs.ngrams {
        println!("n-grams: {} -> {}", ngv.len(), paths.ngrams.display());
    }
    Ok(())
}

fn build_ngrams(flags: &mut Flags) -> Result<(), CliError> {
    let mut cfg = load_config(flags)?;
    std::mem::take(flags).apply_overrides(&mut cfg)?;
    let setup = cfg.to_setup()?;
    let paths = vocab_paths(&cfg);
    if !paths.tgt_vocab.exists() {
        return Err(CliError::Data(format!(
            "{}: target vocabulary missing; run `decsde build-vocab` first",
            paths.tgt_vocab.display()
        )));
    }
    let tgt_vocab = decsde_core::segmenter::SubwordVocab::load(&paths.tgt_vocab)?;
    let ngv = decsde_core::chargrams::build_ngram_vocab(&tgt_vocab, setup.n_max, setup.min_count)
        .map_err(|e| CliError::from(decsde_core::pipeline::PipelineError::Chargram(e)))?;
    ngv.save(&paths.ngrams)
        .map_err(|e| CliError::Data(e.to_string()))?;
    println!(
        "{} n-grams (n_max {}) -> {}",
        ngv.len(),
        setup.n_max,
        paths.ngrams.display()
    );
    Ok(())
}

fn cmd_train(flags: &mut Flags) -> Result<(), CliError> {
    let resume = flags.take_bool("resume");
    let mut cfg = load_config(flags)?;
    std::mem::take(flags).apply_overrides(&mut cfg)?;
    let setup = cfg.to_setup()?;
    let data = cfg.load_lang_texts()?;
    let vocabs = ensure_vocabs(&cfg, &setup, Some(&data))?;
    let corpora = encode_corpora(&vocabs, &data)?;
    let flag_ids = vocabs.flag_ids(&setup.languages)?;
    let (model, params) = build_model(&setup, &vocabs)?;

    let mut state = if resume {
        let ck_path = cfg.out_dir().join("last.ckpt");
        let ck = Checkpoint::load(&ck_path)?;
        let mut params = params;
        let mut opt = OptimizerState::new(&params);
        let rng = ck.restore(&mut params, &mut opt)?;
        println!(
            "resuming from {} at epoch {}",
            ck_path.display(),
            ck.epoch
        );
        TrainState {
            params,
            opt,
            rng,
            epoch: ck.epoch,
            global_step: ck.global_step,
            best_dev_ppl: ck.best_dev_ppl,
        }
    } else {
        TrainState::fresh(params, setup.train.seed)
    };

    // snapshot the effective configuration next to the checkpoints
    fs::create_dir_all(cfg.out_dir())
        .map_err(|e| CliError::Data(format!("{}: {e}", cfg.out_dir().display())))?;
    fs::write(
        cfg.out_dir().join("config.resolved.cfg"),
        cfg.to_normalized_string(),
    )
    .map_err(|e| CliError::Data(format!("{}: {e}", cfg.out_dir().display())))?;

    let paths = vocab_paths(&cfg);
    let artifacts: Vec<(String, String)> = vec![
        ("src_vocab".into(), paths.src_vocab.display().to_string()),
        ("tgt_vocab".into(), paths.tgt_vocab.display().to_string()),
        ("ngrams".into(), paths.ngrams.display().to_string()),
    ];
    let stats = train(
        &model,
        &mut state,
        &corpora,
        &flag_ids,
        &setup.train,
        &setup.languages,
        Some(&cfg.out_dir()),
        &artifacts,
    )?;
    for s in &stats {
        println!(
            "epoch {:>3}  step {:>6}  loss {:.4}  lr {:.6}  dev_ppl {:.3}",
            s.epoch, s.steps, s.mean_loss, s.lr, s.dev_ppl
        );
    }
    println!(
        "done: best dev ppl {:.3}; checkpoints in {}",
        state.best_dev_ppl,
        cfg.out_dir().display()
    );
    Ok(())
}

fn translate(flags: &mut Flags) -> Result<(), CliError> {
    let lang = flags.take_required("lang")?;
    let input = flags.take_required("input")?;
    let output = flags.take("output");
    let checkpoint = flags.take("checkpoint");
    let table_path = flags.take("table");
    let mut cfg = load_config(flags)?;
    std::mem::take(flags).apply_overrides(&mut cfg)?;
    let setup = cfg.to_setup()?;
    let vocabs = ensure_vocabs(&cfg, &setup, None)?;
    let (model, params, _ck) = restore_model(&cfg, &setup, &vocabs, checkpoint.as_deref())?;
    let idx = lang_index(&cfg, &lang)?;
    let table = match table_path {
        Some(p) => {
            let t = EmbeddingTable::load(Path::new(&p))?;
            if t.language.code != lang {
                return Err(CliError::Config(format!(
                    "table {} is for language {:?}, not {lang:?}",
                    p, t.language.code
                )));
            }
            t.check_fresh(&params)?;
            t
        }
        None => model.decode_table(&params, idx, &lang)?,
    };
    let flag_ids = vocabs.flag_ids(&setup.languages)?;
    let lines = read_lines(Path::new(&input))?;
    let hyps = translate_lines(
        &model,
        &params,
        &vocabs,
        &table,
        &lines,
        idx,
        flag_ids[idx],
        cfg.beam()?,
        cfg.length_alpha()?,
        setup.model.max_len,
    )?;
    match output {
        Some(path) => {
            write_lines(Path::new(&path), &hyps)?;
            println!("{} sentences -> {path}", hyps.len());
        }
        None => {
            for h in &hyps {
                println!("{h}");
            }
        }
    }
    Ok(())
}

fn precompute(flags: &mut Flags) -> Result<(), CliError> {
    let lang = flags.take_required("lang")?;
    let checkpoint = flags.take("checkpoint");
    let out = flags.take("out");
    let mut cfg = load_config(flags)?;
    std::mem::take(flags).apply_overrides(&mut cfg)?;
    let setup = cfg.to_setup()?;
    let vocabs = ensure_vocabs(&cfg, &setup, None)?;
    let (model, params, _ck) = restore_model(&cfg, &setup, &vocabs, checkpoint.as_deref())?;
    let idx = lang_index(&cfg, &lang)?;
    let table = model.decode_table(&params, idx, &lang)?;
    let path = out
        .map(PathBuf::from)
        .unwrap_or_else(|| cfg.out_dir().join(format!("{lang}.table.bin")));
    table.save(&path)?;
    println!(
        "precomputed table for {lang}: {} x {} (parameter version {}) -> {}",
        table.matrix.shape()[0],
        table.matrix.shape()[1],
        table.params_version,
        path.display()
    );
    Ok(())
}

fn load_pairs(path: &Path) -> Result<WordPairSet, CliError> {
    let mut pairs = Vec::new();
    for (lineno, line) in read_lines(path)?.iter().enumerate() {
        if line.is_empty() || line.starts_with("hrl\t") {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(CliError::Data(format!(
                "{}:{}: expected hrl<TAB>lrl<TAB>distance",
                path.display(),
                lineno + 1
            )));
        }
        let distance: usize = parts[2].parse().map_err(|_| {
            CliError::Data(format!(
                "{}:{}: bad distance {:?}",
                path.display(),
                lineno + 1,
                parts[2]
            ))
        })?;
        if (1..=4).contains(&distance) {
            pairs.push(WordPair {
                hrl_word: parts[0].to_string(),
                lrl_word: parts[1].to_string(),
                distance,
            });
        }
    }
    Ok(WordPairSet::new(pairs)?)
}

/// Word-level embedding for analysis. Spelling-aware models embed the
/// whole word (with the boundary marker) through the pipeline; lookup
/// models average their subword rows.
fn embed_word(
    model: &TransformerModel,
    params: &ParamSet,
    vocabs: &VocabSet,
    lang: usize,
    word: &str,
) -> Result<Vec<f64>, CliError> {
    if let Some(embedder) = model.embedder() {
        return Ok(embedder.embed_string(params, &format!("{BOUNDARY}{word}"), lang)?);
    }
    let table = model
        .lookup_table_param()
        .expect("non-spelling model has a lookup table");
    let matrix = &params.get(table).value;
    let d = matrix.shape()[1];
    let ids = vocabs.encode_tgt(word);
    let mut mean = vec![0.0; d];
    if ids.is_empty() {
        return Ok(mean);
    }
    for &id in &ids {
        for j in 0..d {
            mean[j] += matrix.at2(id, j);
        }
    }
    for v in &mut mean {
        *v /= ids.len() as f64;
    }
    Ok(mean)
}

fn mrr_for_system(
    cfg: &ExperimentConfig,
    pairs: &WordPairSet,
    candidates: &[String],
    hrl_lang: usize,
    lrl_lang: usize,
) -> Result<MrrReport, CliError> {
    let setup = cfg.to_setup()?;
    let vocabs = ensure_vocabs(cfg, &setup, None)?;
    let (model, params, _ck) = restore_model(cfg, &setup, &vocabs, None)?;

    let mut hrl_cache: HashMap<String, Vec<f64>> = HashMap::new();
    for w in candidates {
        hrl_cache.insert(w.clone(), embed_word(&model, &params, &vocabs, hrl_lang, w)?);
    }
    let mut lrl_cache: HashMap<String, Vec<f64>> = HashMap::new();
    for p in pairs.pairs() {
        if !lrl_cache.contains_key(&p.lrl_word) {
            lrl_cache.insert(
                p.lrl_word.clone(),
                embed_word(&model, &params, &vocabs, lrl_lang, &p.lrl_word)?,
            );
        }
    }
    Ok(embedding_mrr(
        pairs,
        candidates,
        |w| lrl_cache[w].clone(),
        |w| hrl_cache[w].clone(),
    )?)
}

fn analyze_embeddings(flags: &mut Flags) -> Result<(), CliError> {
    let baseline_path = flags.take_required("baseline-config")?;
    let pairs_path = flags.take_required("pairs")?;
    let out_prefix = flags.take("out-prefix");
    let hrl_flag = flags.take("hrl-lang");
    let lrl_flag = flags.take("lrl-lang");
    let mut cfg = load_config(flags)?;
    std::mem::take(flags).apply_overrides(&mut cfg)?;
    let baseline_cfg = ExperimentConfig::from_file(Path::new(&baseline_path))?;

    let langs = cfg.langs()?;
    let hrl_code = hrl_flag.unwrap_or_else(|| langs[0].clone());
    let lrl_code = lrl_flag.unwrap_or_else(|| langs[langs.len() - 1].clone());
    let hrl_lang = lang_index(&cfg, &hrl_code)?;
    let lrl_lang = lang_index(&cfg, &lrl_code)?;

    let pairs = load_pairs(Path::new(&pairs_path))?;
    if pairs.is_empty() {
        return Err(CliError::Data(format!(
            "{pairs_path}: no pairs with edit distance 1..4"
        )));
    }
    let candidates: Vec<String> = pairs
        .pairs()
        .iter()
        .map(|p| p.hrl_word.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let primary = mrr_for_system(&cfg, &pairs, &candidates, hrl_lang, lrl_lang)?;
    let baseline = mrr_for_system(&baseline_cfg, &pairs, &candidates, hrl_lang, lrl_lang)?;

    let prefix = out_prefix
        .map(PathBuf::from)
        .unwrap_or_else(|| cfg.out_dir().join("embedding_mrr"));
    if let Some(dir) = prefix.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    let csv = mrr_gain_csv(&primary, &baseline);
    fs::write(prefix.with_extension("csv"), &csv)
        .map_err(|e| CliError::Data(format!("{}: {e}", prefix.display())))?;
    fs::write(prefix.with_extension("dat"), mrr_gain_dat(&primary, &baseline))
        .map_err(|e| CliError::Data(format!("{}: {e}", prefix.display())))?;
    print!("{csv}");
    println!("reports -> {}.csv / .dat", prefix.display());
    Ok(())
}

fn eval_bleu(flags: &mut Flags) -> Result<(), CliError> {
    let hyp_path = flags.take_required("hyp")?;
    let ref_path = flags.take_required("ref")?;
    let label = flags.take("label").unwrap_or_else(|| "system".into());
    let csv_out = flags.take("csv");
    let baseline_hyp = flags.take("baseline-hyp");
    let freq_corpus = flags.take("freq-corpus");
    let f1_prefix = flags.take("f1-prefix");
    std::mem::take(flags).reject_unknown()?;

    let hyps = read_lines(Path::new(&hyp_path))?;
    let refs = read_lines(Path::new(&ref_path))?;
    let report = bleu_corpus(&hyps, &refs)?;
    println!(
        "BLEU = {:.2}  {:.1}/{:.1}/{:.1}/{:.1}  (BP = {:.3}, hyp_len = {}, ref_len = {})",
        report.score,
        100.0 * report.precisions[0],
        100.0 * report.precisions[1],
        100.0 * report.precisions[2],
        100.0 * report.precisions[3],
        report.brevity_penalty,
        report.hyp_len,
        report.ref_len
    );
    let mut rows = vec![(label.clone(), report)];
    if let Some(bh) = &baseline_hyp {
        let baseline = bleu_corpus(&read_lines(Path::new(bh))?, &refs)?;
        println!("baseline BLEU = {:.2}", baseline.score);
        rows.push(("baseline".into(), baseline));
    }
    if let Some(path) = csv_out {
        fs::write(Path::new(&path), bleu_csv(&rows))
            .map_err(|e| CliError::Data(format!("{path}: {e}")))?;
    }

    if let Some(fc) = freq_corpus {
        let mut freq: HashMap<String, u64> = HashMap::new();
        for line in read_lines(Path::new(&fc))? {
            for w in line.split_whitespace() {
                *freq.entry(w.to_string()).or_insert(0) += 1;
            }
        }
        let primary_f1 = rare_word_f1(&hyps, &refs, &freq)?;
        let prefix = f1_prefix
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("rare_word_f1"));
        match baseline_hyp {
            Some(bh) => {
                let baseline_f1 =
                    rare_word_f1(&read_lines(Path::new(&bh))?, &refs, &freq)?;
                fs::write(prefix.with_extension("csv"), f1_gain_csv(&primary_f1, &baseline_f1))
                    .map_err(|e| CliError::Data(format!("{}: {e}", prefix.display())))?;
                fs::write(prefix.with_extension("dat"), f1_gain_dat(&primary_f1, &baseline_f1))
                    .map_err(|e| CliError::Data(format!("{}: {e}", prefix.display())))?;
            }
            None => {
                let mut out = String::from("freq_bucket,precision,recall,f1,ref_count\n");
                for b in primary_f1.iter().filter(|b| b.ref_count > 0) {
                    out.push_str(&format!(
                        "{},{:.6},{:.6},{:.6},{}\n",
                        b.label(),
                        b.precision,
                        b.recall,
                        b.f1,
                        b.ref_count
                    ));
                }
                fs::write(prefix.with_extension("csv"), out)
                    .map_err(|e| CliError::Data(format!("{}: {e}", prefix.display())))?;
            }
        }
        println!("rare-word F1 -> {}.csv", prefix.display());
    }
    Ok(())
}

struct BenchSide {
    label: String,
    decode_sec: f64,
    train_sec: f64,
}

#[allow(clippy::too_many_arguments)]
fn bench_side(
    cfg: &ExperimentConfig,
    lang: &str,
    test_src: &Path,
    decode_runs: usize,
    train_runs: usize,
) -> Result<BenchSide, CliError> {
    let setup = cfg.to_setup()?;
    let data = cfg.load_lang_texts()?;
    let vocabs = ensure_vocabs(cfg, &setup, Some(&data))?;
    let corpora: Vec<ParallelCorpus> = encode_corpora(&vocabs, &data)?;
    let flag_ids = vocabs.flag_ids(&setup.languages)?;
    let (model, mut params) = build_model(&setup, &vocabs)?;
    let ck_path = find_checkpoint(&cfg.out_dir());
    if ck_path.exists() {
        let ck = Checkpoint::load(&ck_path)?;
        let mut opt = OptimizerState::new(&params);
        ck.restore(&mut params, &mut opt)?;
    }
    let idx = lang_index(cfg, lang)?;
    let src_ids: Vec<Vec<usize>> = read_lines(test_src)?
        .iter()
        .map(|l| vocabs.encode_src(l))
        .collect();
    // table construction is excluded from decode timing: precomputation
    // happens once, before the timed region
    let table = model.decode_table(&params, idx, lang)?;
    let report = speed_bench(
        &model,
        &params,
        &table,
        &src_ids,
        idx,
        flag_ids[idx],
        &corpora,
        &flag_ids,
        &setup.train,
        decode_runs,
        train_runs,
    )?;
    Ok(BenchSide {
        label: setup.model.embed_mode.as_str().to_string(),
        decode_sec: report.decode_sec,
        train_sec: report.train_sec_per_epoch,
    })
}

fn bench(flags: &mut Flags) -> Result<(), CliError> {
    let baseline_path = flags.take_required("baseline-config")?;
    let lang = flags.take("lang");
    let input = flags.take("input");
    let decode_runs = flags.take_usize("decode-runs", 3)?;
    let train_runs = flags.take_usize("train-runs", 3)?;
    let csv_out = flags.take("csv");
    let mut cfg = load_config(flags)?;
    std::mem::take(flags).apply_overrides(&mut cfg)?;
    let baseline_cfg = ExperimentConfig::from_file(Path::new(&baseline_path))?;

    let langs = cfg.langs()?;
    let lang = lang.unwrap_or_else(|| langs[langs.len() - 1].clone());
    let test_src = match input {
        Some(p) => PathBuf::from(p),
        None => cfg.data_dir()?.join(format!("{lang}.test.src")),
    };

    let primary = bench_side(&cfg, &lang, &test_src, decode_runs, train_runs)?;
    let baseline = bench_side(&baseline_cfg, &lang, &test_src, decode_runs, train_runs)?;

    println!("system           train_sec/epoch   decode_sec");
    for side in [&primary, &baseline] {
        println!(
            "{:<16} {:>15.3} {:>12.3}",
            side.label, side.train_sec, side.decode_sec
        );
    }
    println!(
        "decode ratio ({} / {}): {:.3}",
        primary.label,
        baseline.label,
        primary.decode_sec / baseline.decode_sec
    );
    println!(
        "train ratio  ({} / {}): {:.3}",
        primary.label,
        baseline.label,
        primary.train_sec / baseline.train_sec
    );
    if let Some(path) = csv_out {
        let mut out = String::from("system,train_sec_per_epoch,decode_sec\n");
        for side in [&primary, &baseline] {
            out.push_str(&format!(
                "{},{:.6},{:.6}\n",
                side.label, side.train_sec, side.decode_sec
            ));
        }
        fs::write(Path::new(&path), out).map_err(|e| CliError::Data(format!("{path}: {e}")))?;
    }
    Ok(())
}
