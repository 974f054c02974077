//! Optimization loop: Adam with inverse-square-root warmup, label
//! smoothing, proportional corpus mixing, per-epoch dev perplexity,
//! best/last checkpoints and a CSV training log.
//!
//! All randomness (shuffling, corpus mixing, dropout) flows through one
//! seeded generator carried in [`TrainState`], so a fixed seed yields a
//! bit-identical trajectory and checkpoints resume it exactly.

mod adam;
mod checkpoint;
mod data;

pub use adam::{adam_step, lr_schedule, AdamConfig, OptimizerState};
pub use checkpoint::Checkpoint;
pub use data::{corpus_batches, dev_batches, epoch_schedule, ParallelCorpus};

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::decsde::TransformKind;
use crate::kernel::{KernelError, ParamSet, Rng, Tape};
use crate::nmt::{NmtError, TransformerModel};

#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    Nmt(NmtError),
    Kernel(KernelError),
    Io(String),
    Corrupt(String),
    Mismatch(String),
    NoData,
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Nmt(e) => write!(f, "{e}"),
            Self::Kernel(e) => write!(f, "{e}"),
            Self::Io(detail) => write!(f, "io error: {detail}"),
            Self::Corrupt(detail) => write!(f, "corrupt checkpoint: {detail}"),
            Self::Mismatch(detail) => write!(f, "checkpoint mismatch: {detail}"),
            Self::NoData => write!(f, "no training data"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<NmtError> for TrainError {
    fn from(e: NmtError) -> Self {
        TrainError::Nmt(e)
    }
}

impl From<KernelError> for TrainError {
    fn from(e: KernelError) -> Self {
        TrainError::Kernel(e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr_peak: f64,
    pub warmup_steps: u64,
    pub max_epochs: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub batch_tokens: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Corpus sampling temperature; 1.0 is proportional to size.
    pub sampling_temperature: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_peak: 5e-4,
            warmup_steps: 400,
            max_epochs: 50,
            dropout: 0.3,
            label_smoothing: 0.1,
            batch_tokens: 2000,
            seed: 1,
            adam: AdamConfig::default(),
            sampling_temperature: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.lr_peak <= 0.0 {
            return Err(TrainError::Mismatch("lr_peak must be > 0".into()));
        }
        if self.warmup_steps == 0 {
            return Err(TrainError::Mismatch("warmup_steps must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(TrainError::Mismatch(
                "label_smoothing must be in [0,1)".into(),
            ));
        }
        Ok(())
    }
}

/// Mutable training state, checkpointable at epoch boundaries.
pub struct TrainState {
    pub params: ParamSet,
    pub opt: OptimizerState,
    pub rng: Rng,
    pub epoch: usize,
    pub global_step: u64,
    pub best_dev_ppl: f64,
}

impl TrainState {
    pub fn fresh(params: ParamSet, seed: u64) -> Self {
        let opt = OptimizerState::new(&params);
        TrainState {
            params,
            opt,
            rng: Rng::seed(seed ^ 0x005E_ED0F_7EA1),
            epoch: 0,
            global_step: 0,
            best_dev_ppl: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: u64,
    pub mean_loss: f64,
    pub lr: f64,
    pub tokens_per_sec: f64,
    pub dev_ppl: f64,
}

impl EpochStats {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.8},{:.1},{:.4}",
            self.epoch, self.steps, self.mean_loss, self.lr, self.tokens_per_sec, self.dev_ppl
        )
    }
}

pub const LOG_HEADER: &str = "epoch,step,loss,lr,tokens_per_sec,dev_ppl";

/// Dev perplexity: `exp` of the token-mean negative log-likelihood
/// (no label smoothing, no dropout).
pub fn dev_perplexity(
    model: &TransformerModel,
    params: &ParamSet,
    corpora: &[ParallelCorpus],
    config: &TrainConfig,
    flag_ids: &[usize],
) -> Result<f64, TrainError> {
    let mut total_nll = 0.0;
    let mut total_tokens = 0usize;
    let mut rng = Rng::seed(0); // eval path draws nothing
    for corpus in corpora {
        if corpus.dev_src.is_empty() {
            continue;
        }
        for batch in dev_batches(corpus, config.batch_tokens, flag_ids, model.config.max_len)? {
            let mut tape = Tape::new();
            let loss = model.loss(&mut tape, params, &batch, 0.0, false, &mut rng)?;
            let tokens = batch.target_tokens();
            total_nll += tape.value(loss).item() * tokens as f64;
            total_tokens += tokens;
        }
    }
    if total_tokens == 0 {
        return Ok(f64::NAN);
    }
    Ok((total_nll / total_tokens as f64).exp())
}

/// Trains until `config.max_epochs`, interleaving corpora by proportional
/// sampling. Writes `last.ckpt`, `best.ckpt` (by dev perplexity) and
/// `train_log.csv` when `out_dir` is given. Resumable: pass a state
/// restored from a checkpoint and the loss curve continues exactly.
#[allow(clippy::too_many_arguments)]
pub fn train(
    model: &TransformerModel,
    state: &mut TrainState,
    corpora: &[ParallelCorpus],
    flag_ids: &[usize],
    config: &TrainConfig,
    languages: &[(String, TransformKind)],
    out_dir: Option<&Path>,
    artifacts: &[(String, String)],
) -> Result<Vec<EpochStats>, TrainError> {
    config.validate()?;
    if corpora.is_empty() || corpora.iter().all(|c| c.is_empty()) {
        return Err(TrainError::NoData);
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| TrainError::Io(format!("{}: {e}", dir.display())))?;
    }
    let log_path = out_dir.map(|d| d.join("train_log.csv"));
    if let Some(ref lp) = log_path {
        if state.epoch == 0 || !lp.exists() {
            fs::write(lp, format!("{LOG_HEADER}\n"))
                .map_err(|e| TrainError::Io(format!("{}: {e}", lp.display())))?;
        }
    }

    let mut all_stats = Vec::new();
    while state.epoch < config.max_epochs {
        let epoch_start = Instant::now();
        // deterministic per-epoch order: shuffle, pack, interleave
        let mut per_corpus: Vec<Vec<crate::nmt::Batch>> = Vec::with_capacity(corpora.len());
        for corpus in corpora {
            let mut order: Vec<usize> = (0..corpus.len()).collect();
            state.rng.shuffle(&mut order);
            per_corpus.push(corpus_batches(
                corpus,
                &order,
                config.batch_tokens,
                flag_ids,
                model.config.max_len,
            )?);
        }
        let counts: Vec<usize> = per_corpus.iter().map(Vec::len).collect();
        let schedule = epoch_schedule(
            corpora,
            &counts,
            config.sampling_temperature,
            &mut state.rng,
        );

        let mut loss_sum = 0.0;
        let mut steps_this_epoch = 0u64;
        let mut tokens_this_epoch = 0usize;
        let mut last_lr = 0.0;
        for &(c, b) in &schedule {
            let batch = &per_corpus[c][b];
            let mut tape = Tape::new();
            let loss = model.loss(
                &mut tape,
                &state.params,
                batch,
                config.label_smoothing,
                true,
                &mut state.rng,
            )?;
            let loss_value = tape.value(loss).item();
            tape.backward(loss, &mut state.params)?;
            state.global_step += 1;
            last_lr = lr_schedule(state.global_step, config.warmup_steps, config.lr_peak);
            adam_step(&mut state.params, &mut state.opt, last_lr, &config.adam);
            loss_sum += loss_value;
            steps_this_epoch += 1;
            tokens_this_epoch += batch.target_tokens();
        }

        state.epoch += 1;
        let dev_ppl = dev_perplexity(model, &state.params, corpora, config, flag_ids)?;
        let elapsed = epoch_start.elapsed().as_secs_f64().max(1e-9);
        let stats = EpochStats {
            epoch: state.epoch,
            steps: state.global_step,
            mean_loss: loss_sum / steps_this_epoch.max(1) as f64,
            lr: last_lr,
            tokens_per_sec: tokens_this_epoch as f64 / elapsed,
            dev_ppl,
        };

        if let Some(dir) = out_dir {
            let ck = Checkpoint::capture(
                &model.config,
                languages,
                &state.params,
                &state.opt,
                &state.rng,
                state.epoch,
                state.global_step,
                state.best_dev_ppl.min(dev_ppl),
                artifacts,
            );
            ck.save(&dir.join("last.ckpt"))?;
            if dev_ppl.is_nan() || dev_ppl < state.best_dev_ppl {
                ck.save(&dir.join("best.ckpt"))?;
            }
        }
        if dev_ppl.is_nan() || dev_ppl < state.best_dev_ppl {
            state.best_dev_ppl = if dev_ppl.is_nan() {
                state.best_dev_ppl
            } else {
                dev_ppl
            };
        }
        if let Some(ref lp) = log_path {
            let mut line = stats.csv_row();
            line.push('\n');
            let mut existing = fs::read_to_string(lp).unwrap_or_default();
            existing.push_str(&line);
            fs::write(lp, existing)
                .map_err(|e| TrainError::Io(format!("{}: {e}", lp.display())))?;
        }
        all_stats.push(stats);
    }
    Ok(all_stats)
}

/// Convenience wrapper: builds fresh state, trains for `config.max_epochs`.
pub fn train_fresh(
    model: &TransformerModel,
    params: ParamSet,
    corpora: &[ParallelCorpus],
    flag_ids: &[usize],
    config: &TrainConfig,
    languages: &[(String, TransformKind)],
    out_dir: Option<&Path>,
) -> Result<(TrainState, Vec<EpochStats>), TrainError> {
    let mut state = TrainState::fresh(params, config.seed);
    let stats = train(
        model, &mut state, corpora, flag_ids, config, languages, out_dir, &[],
    )?;
    Ok((state, stats))
}

/// Resolves a checkpoint path, preferring `best.ckpt` inside a directory.
pub fn find_checkpoint(path: &Path) -> PathBuf {
    if path.is_dir() {
        let best = path.join("best.ckpt");
        if best.exists() {
            return best;
        }
        return path.join("last.ckpt");
    }
    path.to_path_buf()
}
