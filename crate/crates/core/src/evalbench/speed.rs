//! Wall-clock speed benchmarks: decode time over a test set and training
//! time per epoch, median of repeated runs on a warm cache.

use std::time::Instant;

use crate::decsde::EmbeddingTable;
use crate::kernel::{set_finite_checks, ParamSet, Rng, Tape};
use crate::nmt::{greedy_decode, NmtError, TransformerModel};
use crate::trainer::{
    adam_step, corpus_batches, epoch_schedule, lr_schedule, OptimizerState, ParallelCorpus,
    TrainConfig, TrainError,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedReport {
    pub decode_sec: f64,
    pub train_sec_per_epoch: f64,
    pub decode_runs: Vec<f64>,
    pub train_runs: Vec<f64>,
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if v.is_empty() {
        return f64::NAN;
    }
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// One greedy pass over the test set; returns elapsed seconds.
#[allow(clippy::too_many_arguments)]
pub fn time_decode_set(
    model: &TransformerModel,
    params: &ParamSet,
    table: &EmbeddingTable,
    test_src: &[Vec<usize>],
    lang: usize,
    flag_id: usize,
    max_len: usize,
) -> Result<f64, NmtError> {
    let start = Instant::now();
    for src in test_src {
        let _ = greedy_decode(model, params, src, lang, flag_id, table, max_len)?;
    }
    Ok(start.elapsed().as_secs_f64())
}

/// A dedicated one-thread pool: benchmarks pin a single thread so the
/// two systems are compared under identical conditions.
fn pinned_pool() -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("single-thread pool")
}

/// Median-of-`runs` decode timing with one untimed warm-up pass, pinned
/// to a single thread. Per-op finite checks are switched off for the
/// timed region (benchmark mode) and restored after.
#[allow(clippy::too_many_arguments)]
pub fn bench_decode(
    model: &TransformerModel,
    params: &ParamSet,
    table: &EmbeddingTable,
    test_src: &[Vec<usize>],
    lang: usize,
    flag_id: usize,
    max_len: usize,
    runs: usize,
) -> Result<Vec<f64>, NmtError> {
    pinned_pool().install(|| {
        set_finite_checks(false);
        let result = (|| {
            let _ = time_decode_set(model, params, table, test_src, lang, flag_id, max_len)?;
            let mut times = Vec::with_capacity(runs);
            for _ in 0..runs.max(1) {
                times.push(time_decode_set(
                    model, params, table, test_src, lang, flag_id, max_len,
                )?);
            }
            Ok(times)
        })();
        set_finite_checks(true);
        result
    })
}

/// Composite benchmark: median decode time over the test set and median
/// training time per epoch, each pinned to one thread with a warm cache.
#[allow(clippy::too_many_arguments)]
pub fn speed_bench(
    model: &TransformerModel,
    params: &ParamSet,
    table: &EmbeddingTable,
    test_src: &[Vec<usize>],
    lang: usize,
    flag_id: usize,
    corpora: &[ParallelCorpus],
    flag_ids: &[usize],
    config: &TrainConfig,
    decode_runs: usize,
    train_runs: usize,
) -> Result<SpeedReport, TrainError> {
    let decode_runs_v = bench_decode(
        model,
        params,
        table,
        test_src,
        lang,
        flag_id,
        model.config.max_len,
        decode_runs,
    )
    .map_err(TrainError::Nmt)?;
    let train_runs_v = bench_train_epoch(model, params, corpora, flag_ids, config, train_runs)?;
    Ok(SpeedReport {
        decode_sec: median(&decode_runs_v),
        train_sec_per_epoch: median(&train_runs_v),
        decode_runs: decode_runs_v,
        train_runs: train_runs_v,
    })
}

/// Times one training epoch (forward, backward, optimizer) on a fresh
/// clone of the parameters per run so every run does identical work.
pub fn bench_train_epoch(
    model: &TransformerModel,
    params: &ParamSet,
    corpora: &[ParallelCorpus],
    flag_ids: &[usize],
    config: &TrainConfig,
    runs: usize,
) -> Result<Vec<f64>, TrainError> {
    pinned_pool().install(|| {
        bench_train_epoch_inner(model, params, corpora, flag_ids, config, runs)
    })
}

fn bench_train_epoch_inner(
    model: &TransformerModel,
    params: &ParamSet,
    corpora: &[ParallelCorpus],
    flag_ids: &[usize],
    config: &TrainConfig,
    runs: usize,
) -> Result<Vec<f64>, TrainError> {
    set_finite_checks(false);
    let result = (|| {
        let mut times = Vec::with_capacity(runs);
        for run in 0..runs.max(1) {
            let mut p = params.clone();
            let mut opt = OptimizerState::new(&p);
            let mut rng = Rng::seed(config.seed ^ (run as u64 + 1));
            let mut per_corpus = Vec::with_capacity(corpora.len());
            for corpus in corpora {
                let mut order: Vec<usize> = (0..corpus.len()).collect();
                rng.shuffle(&mut order);
                per_corpus.push(corpus_batches(
                    corpus,
                    &order,
                    config.batch_tokens,
                    flag_ids,
                    model.config.max_len,
                )?);
            }
            let counts: Vec<usize> = per_corpus.iter().map(Vec::len).collect();
            let schedule =
                epoch_schedule(corpora, &counts, config.sampling_temperature, &mut rng);

            let start = Instant::now();
            let mut step = 0u64;
            for &(c, b) in &schedule {
                let batch = &per_corpus[c][b];
                let mut tape = Tape::new();
                let loss = model.loss(
                    &mut tape,
                    &p,
                    batch,
                    config.label_smoothing,
                    true,
                    &mut rng,
                )?;
                tape.backward(loss, &mut p)?;
                step += 1;
                let lr = lr_schedule(step, config.warmup_steps, config.lr_peak);
                adam_step(&mut p, &mut opt, lr, &config.adam);
            }
            times.push(start.elapsed().as_secs_f64());
        }
        Ok(times)
    })();
    set_finite_checks(true);
    result
}
