//! The two-phase training loop.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{make_batches, EncodedPair, Vocab};
use crate::decoding::{translate, DecodeMode};
use crate::evaluation::corpus_bleu;
use crate::losses::{LossSpec, LossVariant};
use crate::sampling::{ss_training_step, StepOptions, StepRngs};
use crate::schedules::{lr_on_plateau, AlphaPolicy, ScheduleState};
use crate::transformer::{ParamStore, Transformer};
use crate::{Error, Result};

use super::adam::Adam;
use super::config::{model_config_to_text, TrainSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Plain CE with α = 0 and ε = 1; the schedule counter does not move.
    Pretrain,
    /// The configured variant with live α and ε.
    Main,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Pretrain => "pretrain",
            Phase::Main => "main",
        })
    }
}

/// Encoded training pairs plus an optional validation set.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: Vec<EncodedPair>,
    /// Validation sources as ids. Leave empty to skip per-epoch validation
    /// (and with it the plateau rule).
    pub valid_src: Vec<Vec<usize>>,
    /// Tokenized validation references, compared as strings.
    pub valid_refs: Vec<Vec<String>>,
    pub tgt_vocab: Vocab,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    /// Schedule counter at the end of the epoch.
    pub i: usize,
    pub valid_bleu: Option<f64>,
    /// Learning rate for the next epoch.
    pub lr: f64,
    pub checkpoint: Option<PathBuf>,
}

/// Where the loop writes and what it keeps in memory.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Per-epoch checkpoints, sidecars and `train.log` go here when set.
    pub out_dir: Option<PathBuf>,
    /// Keep a copy of the parameters after every epoch.
    pub keep_snapshots: bool,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Transformer,
    pub log: Vec<String>,
    pub epochs: Vec<EpochRecord>,
    pub snapshots: Vec<ParamStore>,
}

impl TrainOutcome {
    pub fn bleu_history(&self) -> Vec<f64> {
        self.epochs.iter().filter_map(|e| e.valid_bleu).collect()
    }
}

/// Mutable state of a run.
#[derive(Debug)]
pub struct TrainState {
    pub i: usize,
    pub total_iter: usize,
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub adam: Adam,
    pub bleu_history: Vec<f64>,
    pub rngs: StepRngs,
}

/// Tab-separated iteration line: phase, step, i, loss, α, ε, lr.
pub fn iteration_line(phase: Phase, step: usize, i: usize, loss: f64, alpha: f64, epsilon: f64, lr: f64) -> String {
    format!("{phase}\t{step}\t{i}\t{loss:.6}\t{alpha:.6}\t{epsilon:.6}\t{lr:e}")
}

fn epoch_line(r: &EpochRecord) -> String {
    let bleu = r.valid_bleu.map_or_else(|| "-".to_owned(), |b| format!("{b:.4}"));
    format!("epoch\t{}\t{}\t{}\tbleu\t{bleu}\tlr\t{:e}", r.epoch, r.phase, r.i, r.lr)
}

/// Greedy-decoded corpus BLEU of `model` against string references.
pub fn validation_bleu(model: &Transformer, sources: &[Vec<usize>], refs: &[Vec<String>], tgt_vocab: &Vocab) -> Result<f64> {
    let longest = sources.iter().map(Vec::len).max().unwrap_or(0);
    let max_len = (2 * longest + 10).min(model.config.max_len);
    let hyps = translate(model, sources, DecodeMode::Greedy, max_len)?;
    let hyps: Vec<Vec<String>> = hyps.iter().map(|h| tgt_vocab.decode(h[0].content())).collect();
    corpus_bleu(&hyps, refs)
}

/// Writes `vocab.src`, `vocab.tgt` and `model.conf` into `dir`.
pub fn write_sidecars(dir: &Path, model: &Transformer, src_vocab: &Vocab, tgt_vocab: &Vocab) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    src_vocab.save(&dir.join("vocab.src"))?;
    tgt_vocab.save(&dir.join("vocab.tgt"))?;
    let conf = dir.join("model.conf");
    fs::write(&conf, model_config_to_text(&model.config)).map_err(|e| Error::io(&conf, e))
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("checkpoint{epoch}.bin"))
}

fn flush_log(dir: Option<&Path>, log: &[String]) -> Result<()> {
    if let Some(dir) = dir {
        let path = dir.join("train.log");
        let mut text = log.join("\n");
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Runs CE pre-training for `pretrain_epochs` epochs, then the configured
/// variant until `total_iter` schedule steps have been taken. A non-finite
/// loss aborts with [`Error::Diverged`]; checkpoints already written stay.
pub fn train_model(settings: &TrainSettings, data: &TrainData, options: &TrainOptions) -> Result<TrainOutcome> {
    settings.validate()?;
    if data.train.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if data.valid_src.len() != data.valid_refs.len() {
        return Err(Error::LineCountMismatch { src_lines: data.valid_src.len(), tgt_lines: data.valid_refs.len() });
    }
    if settings.loss.variant == LossVariant::SelfDistill && data.train.iter().any(|p| p.distilled.is_none()) {
        return Err(Error::Config("SELF_DISTILL needs a distilled target for every pair".into()));
    }
    let out_dir = options.out_dir.as_deref();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut model = Transformer::new(settings.model.clone(), settings.seed)?;
    let mut state = TrainState {
        i: 0,
        total_iter: settings.total_iter,
        epoch: 0,
        step: 0,
        lr: settings.lr,
        adam: Adam::new(&model.params, settings.adam),
        bleu_history: Vec::new(),
        rngs: StepRngs::new(settings.loss.rng_seed),
    };
    let pretrain_spec = LossSpec {
        variant: LossVariant::Ce,
        smoothing: settings.loss.smoothing,
        alpha: AlphaPolicy::Fixed(0.0),
        rng_seed: settings.loss.rng_seed,
    };
    let pretrain_step = StepOptions { scheduled_sampling: false, word_oracle: None };

    let mut log = Vec::new();
    let mut epochs = Vec::new();
    let mut snapshots = Vec::new();
    loop {
        let phase = if state.epoch < settings.pretrain_epochs { Phase::Pretrain } else { Phase::Main };
        if phase == Phase::Main && state.i >= state.total_iter {
            break;
        }
        state.epoch += 1;
        let batches = make_batches(&data.train, settings.max_tokens, settings.data_seed.wrapping_add(state.epoch as u64))?;
        for batch in &batches {
            let (spec, step_opts, alpha, epsilon) = match phase {
                Phase::Pretrain => (&pretrain_spec, &pretrain_step, 0.0, 1.0),
                Phase::Main => {
                    state.i += 1;
                    let s = ScheduleState { i: state.i, total_iter: state.total_iter, alpha: settings.loss.alpha, d: settings.d };
                    // Plain CE ignores α; log the value actually applied.
                    let alpha = if settings.loss.variant.is_mixed() { s.alpha()? } else { 0.0 };
                    (&settings.loss, &settings.step, alpha, s.epsilon()?)
                }
            };
            state.step += 1;
            let loss = match ss_training_step(&mut model, batch, alpha, epsilon, spec, step_opts, &mut state.rngs) {
                Err(Error::NonFinite { .. }) => f64::NAN,
                other => other?,
            };
            if !loss.is_finite() {
                log.push(iteration_line(phase, state.step, state.i, loss, alpha, epsilon, state.lr));
                flush_log(out_dir, &log)?;
                return Err(Error::Diverged { iteration: state.step, loss });
            }
            state.adam.step(&mut model.params, state.lr);
            log.push(iteration_line(phase, state.step, state.i, loss, alpha, epsilon, state.lr));
            if phase == Phase::Main && state.i >= state.total_iter {
                break;
            }
        }

        let valid_bleu = if data.valid_src.is_empty() {
            None
        } else {
            let b = validation_bleu(&model, &data.valid_src, &data.valid_refs, &data.tgt_vocab)?;
            state.bleu_history.push(b);
            state.lr = lr_on_plateau(&state.bleu_history, state.lr, settings.patience, settings.factor);
            Some(b)
        };
        let checkpoint = match out_dir {
            Some(dir) => {
                let path = checkpoint_path(dir, state.epoch);
                model.params.save(&path)?;
                Some(path)
            }
            None => None,
        };
        if options.keep_snapshots {
            snapshots.push(model.params.clone());
        }
        let record = EpochRecord { epoch: state.epoch, phase, i: state.i, valid_bleu, lr: state.lr, checkpoint };
        log.push(epoch_line(&record));
        log::info!("{}", epoch_line(&record));
        epochs.push(record);
        flush_log(out_dir, &log)?;
    }
    Ok(TrainOutcome { model, log, epochs, snapshots })
}
