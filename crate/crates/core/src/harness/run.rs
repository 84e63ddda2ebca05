//! File-based training entry point.

use std::fs;
use std::path::PathBuf;

use crate::data::{build_vocab, encode_pairs, load_parallel, read_sentences, Vocab};
use crate::transformer::{ParamStore, Transformer};
use crate::{Error, Result};

use super::checkpoints::{best_average, select_single, AverageMode};
use super::config::{RunConfig, TrainSettings};
use super::train::{train_model, validation_bleu, write_sidecars, TrainData, TrainOptions};

/// Reads the corpora named in `cfg`, builds vocabularies from the training
/// side and returns settings with the vocabulary sizes filled in.
pub fn prepare_data(cfg: &RunConfig) -> Result<(TrainData, Vocab, TrainSettings)> {
    cfg.check_paths()?;
    let pairs = load_parallel(&cfg.train_src, &cfg.train_tgt)?;
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let srcs: Vec<Vec<String>> = pairs.iter().map(|p| p.src.clone()).collect();
    let tgts: Vec<Vec<String>> = pairs.iter().map(|p| p.tgt.clone()).collect();
    let src_vocab = build_vocab(&srcs, cfg.vocab_size)?;
    let tgt_vocab = build_vocab(&tgts, cfg.vocab_size)?;
    let mut train = encode_pairs(&pairs, &src_vocab, &tgt_vocab);

    if let Some(path) = &cfg.distill_tgt {
        let distilled = read_sentences(path)?;
        if distilled.len() != train.len() {
            return Err(Error::LineCountMismatch { src_lines: train.len(), tgt_lines: distilled.len() });
        }
        for (k, (p, d)) in train.iter_mut().zip(&distilled).enumerate() {
            if d.len() != p.tgt.len() {
                return Err(Error::Ragged(format!(
                    "distilled line {} has {} tokens, target has {}",
                    k + 1,
                    d.len(),
                    p.tgt.len()
                )));
            }
            p.distilled = Some(tgt_vocab.encode(d));
        }
    }

    let valid_src_words = read_sentences(&cfg.valid_src)?;
    let valid_refs = read_sentences(&cfg.valid_tgt)?;
    if valid_src_words.len() != valid_refs.len() {
        return Err(Error::LineCountMismatch { src_lines: valid_src_words.len(), tgt_lines: valid_refs.len() });
    }
    if valid_refs.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    let valid_src = valid_src_words.iter().map(|s| src_vocab.encode(s)).collect();

    let mut settings = cfg.settings.clone();
    settings.model.vocab_src = src_vocab.len();
    settings.model.vocab_tgt = tgt_vocab.len();
    Ok((TrainData { train, valid_src, valid_refs, tgt_vocab }, src_vocab, settings))
}

/// What a file-based run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub checkpoints: Vec<PathBuf>,
    pub bleu_history: Vec<f64>,
    /// 0-based index into `checkpoints` of the Single model.
    pub single: usize,
    pub average_mode: AverageMode,
    pub average_bleu: f64,
}

/// Trains from a configuration file's contents and writes into `out_dir`:
/// per-epoch checkpoints, `train.log`, sidecars, `single.bin` (best epoch on
/// validation), `average.bin` (better of LAST5/TOP5) and `summary.txt`.
pub fn train_from_config(cfg: &RunConfig) -> Result<RunSummary> {
    let (data, src_vocab, settings) = prepare_data(cfg)?;
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_sidecars(dir, &Transformer::new(settings.model.clone(), settings.seed)?, &src_vocab, &data.tgt_vocab)?;

    let outcome = train_model(&settings, &data, &TrainOptions { out_dir: Some(dir.clone()), keep_snapshots: true })?;
    let scores = outcome.bleu_history();
    let checkpoints: Vec<PathBuf> = outcome.epochs.iter().filter_map(|e| e.checkpoint.clone()).collect();
    let single = select_single(&scores)?;
    fs::copy(&checkpoints[single], dir.join("single.bin")).map_err(|e| Error::io(&checkpoints[single], e))?;

    let config = settings.model.clone();
    let eval = |p: &ParamStore| {
        let m = Transformer::from_params(config.clone(), p.clone())?;
        validation_bleu(&m, &data.valid_src, &data.valid_refs, &data.tgt_vocab)
    };
    let choice = best_average(&outcome.snapshots, &scores, eval)?;
    choice.params.save(&dir.join("average.bin"))?;

    let summary = format!(
        "epochs = {}\nsingle_epoch = {}\nsingle_bleu = {:.4}\naverage_mode = {}\naverage_bleu = {:.4}\nother_average_bleu = {:.4}\n",
        checkpoints.len(),
        single + 1,
        scores[single],
        choice.mode,
        choice.score,
        choice.other_score
    );
    let path = dir.join("summary.txt");
    fs::write(&path, summary).map_err(|e| Error::io(&path, e))?;
    Ok(RunSummary { checkpoints, bleu_history: scores, single, average_mode: choice.mode, average_bleu: choice.score })
}
