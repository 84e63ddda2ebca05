//! Checkpoint selection, averaging and self-distillation.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::data::{EncodedPair, Vocab};
use crate::decoding::forced_length_greedy;
use crate::par;
use crate::transformer::{ParamStore, Transformer};
use crate::{Error, Result};

use super::config::model_config_from_text;

/// Index of the best validation score; the earliest wins ties.
pub fn select_single(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::Checkpoint("no checkpoints to select from".into()));
    }
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = k;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AverageMode {
    Last5,
    Top5,
}

impl FromStr for AverageMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "last5" => Ok(AverageMode::Last5),
            "top5" => Ok(AverageMode::Top5),
            _ => Err(Error::Config(format!("unknown averaging mode {s:?} (expected last5 or top5)"))),
        }
    }
}

impl fmt::Display for AverageMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AverageMode::Last5 => "last5",
            AverageMode::Top5 => "top5",
        })
    }
}

const WINDOW: usize = 5;

/// Indices averaged under `mode`, in epoch order, and whether fewer than
/// five checkpoints were available (in which case all of them are used).
/// TOP5 ranks by score, earlier epochs first on ties.
pub fn averaging_indices(n: usize, scores: &[f64], mode: AverageMode) -> Result<(Vec<usize>, bool)> {
    if n == 0 {
        return Err(Error::Checkpoint("nothing to average".into()));
    }
    if n < WINDOW {
        return Ok(((0..n).collect(), true));
    }
    let mut picked: Vec<usize> = match mode {
        AverageMode::Last5 => (n - WINDOW..n).collect(),
        AverageMode::Top5 => {
            if scores.len() != n {
                return Err(Error::Ragged(format!("{} scores for {n} checkpoints", scores.len())));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            order.truncate(WINDOW);
            order
        }
    };
    picked.sort_unstable();
    Ok((picked, false))
}

/// Element-wise mean of the checkpoints chosen by `mode`. `scores` is only
/// read for TOP5.
pub fn average_checkpoints(stores: &[ParamStore], scores: &[f64], mode: AverageMode) -> Result<(ParamStore, bool)> {
    let (picked, flagged) = averaging_indices(stores.len(), scores, mode)?;
    if flagged {
        log::warn!("only {} checkpoints available, averaging all of them", stores.len());
    }
    let refs: Vec<&ParamStore> = picked.iter().map(|&k| &stores[k]).collect();
    Ok((ParamStore::average(&refs)?, flagged))
}

#[derive(Debug, Clone)]
pub struct AverageChoice {
    pub mode: AverageMode,
    pub params: ParamStore,
    pub score: f64,
    /// Validation score of the other mode.
    pub other_score: f64,
}

/// Builds both averages, scores each with `eval` and keeps the better one
/// (LAST5 on ties).
pub fn best_average<F>(stores: &[ParamStore], scores: &[f64], eval: F) -> Result<AverageChoice>
where
    F: Fn(&ParamStore) -> Result<f64>,
{
    let (last, _) = average_checkpoints(stores, scores, AverageMode::Last5)?;
    let (top, _) = average_checkpoints(stores, scores, AverageMode::Top5)?;
    let (s_last, s_top) = (eval(&last)?, eval(&top)?);
    Ok(if s_top > s_last {
        AverageChoice { mode: AverageMode::Top5, params: top, score: s_top, other_score: s_last }
    } else {
        AverageChoice { mode: AverageMode::Last5, params: last, score: s_last, other_score: s_top }
    })
}

/// Replaces each target by the model's greedy output of the same length.
/// The original target is kept; the new one goes into `distilled`.
pub fn distill_corpus(model: &Transformer, pairs: &[EncodedPair]) -> Result<Vec<EncodedPair>> {
    par::map(pairs, |p| {
        let distilled =
            if p.tgt.is_empty() { Vec::new() } else { forced_length_greedy(model, &p.src, p.tgt.len())?.content().to_vec() };
        Ok(EncodedPair { src: p.src.clone(), tgt: p.tgt.clone(), distilled: Some(distilled) })
    })
    .into_iter()
    .collect()
}

/// A checkpoint with the vocabularies and model configuration stored in its
/// directory.
#[derive(Debug)]
pub struct Bundle {
    pub model: Transformer,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
}

pub fn load_bundle(checkpoint: &Path) -> Result<Bundle> {
    let dir = checkpoint.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let conf_path = dir.join("model.conf");
    let conf = fs::read_to_string(&conf_path).map_err(|e| Error::io(&conf_path, e))?;
    let config = model_config_from_text(&conf)?;
    let params = ParamStore::load(checkpoint)?;
    Ok(Bundle {
        model: Transformer::from_params(config, params)?,
        src_vocab: Vocab::load(&dir.join("vocab.src"))?,
        tgt_vocab: Vocab::load(&dir.join("vocab.tgt"))?,
    })
}
