//! Translation metrics and model analyses.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;
use std::path::Path;

use crate::data::{Probe, TokenMatrix, Vocab, BOS, EOS};
use crate::decoding::{translate, DecodeMode, LengthNorm, StepModel};
use crate::par;
use crate::transformer::Transformer;
use crate::{Error, Result};

fn ngram_counts<T: Hash + Eq>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level clipped n-gram matches and hypothesis n-gram count.
pub fn modified_precision<T: Hash + Eq>(hyps: &[Vec<T>], refs: &[Vec<T>], n: usize) -> (usize, usize) {
    let mut matches = 0;
    let mut total = 0;
    for (h, r) in hyps.iter().zip(refs) {
        let rc = ngram_counts(r, n);
        for (gram, c) in ngram_counts(h, n) {
            matches += c.min(rc.get(gram).copied().unwrap_or(0));
            total += c;
        }
    }
    (matches, total)
}

/// Unsmoothed 4-gram corpus BLEU with brevity penalty, on a 0 to 100 scale.
pub fn corpus_bleu<T: Hash + Eq>(hyps: &[Vec<T>], refs: &[Vec<T>]) -> Result<f64> {
    if hyps.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if hyps.len() != refs.len() {
        return Err(Error::Ragged(format!("{} hypotheses for {} references", hyps.len(), refs.len())));
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let (m, t) = modified_precision(hyps, refs, n);
        if m == 0 || t == 0 {
            return Ok(0.0);
        }
        log_sum += (m as f64 / t as f64).ln();
    }
    let c: usize = hyps.iter().map(Vec::len).sum();
    let r: usize = refs.iter().map(Vec::len).sum();
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok(100.0 * bp * (log_sum / 4.0).exp())
}

/// AVG and TOP BLEU per reference set.
///
/// `hyp_sets[s]` holds the ranked hypotheses for source `s`;
/// `reference_sets[j][s]` is reference `j` of source `s`. For every `j`, the
/// k-th hypotheses of all sources form one corpus scored against reference
/// set `j`; AVG is the mean over `k` and TOP the maximum.
pub fn multi_reference_eval<T: Hash + Eq + Clone>(
    hyp_sets: &[Vec<Vec<T>>],
    reference_sets: &[Vec<Vec<T>>],
) -> Result<Vec<(f64, f64)>> {
    let k = hyp_sets.first().ok_or(Error::EmptyCorpus)?.len();
    if k == 0 || hyp_sets.iter().any(|h| h.len() != k) {
        return Err(Error::Ragged("every source needs the same number of hypotheses".into()));
    }
    let by_rank: Vec<Vec<Vec<T>>> = (0..k).map(|i| hyp_sets.iter().map(|h| h[i].clone()).collect()).collect();
    reference_sets
        .iter()
        .map(|refs| {
            let scores = by_rank.iter().map(|hyps| corpus_bleu(hyps, refs)).collect::<Result<Vec<_>>>()?;
            let avg = scores.iter().sum::<f64>() / k as f64;
            let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok((avg, top))
        })
        .collect()
}

/// Mean corpus BLEU over all ordered pairs of distinct sample indices.
pub fn pairwise_bleu<T: Hash + Eq + Clone>(sample_sets: &[Vec<Vec<T>>]) -> Result<f64> {
    let k = sample_sets.first().ok_or(Error::EmptyCorpus)?.len();
    if k < 2 {
        return Err(Error::OutOfRange { name: "k", value: k as f64, range: "[2, inf)" });
    }
    if sample_sets.iter().any(|s| s.len() != k) {
        return Err(Error::Ragged("every source needs the same number of samples".into()));
    }
    let by_index: Vec<Vec<Vec<T>>> = (0..k).map(|i| sample_sets.iter().map(|s| s[i].clone()).collect()).collect();
    let mut sum = 0.0;
    for a in 0..k {
        for b in 0..k {
            if a != b {
                sum += corpus_bleu(&by_index[a], &by_index[b])?;
            }
        }
    }
    Ok(sum / (k * (k - 1)) as f64)
}

/// Point `k` is the mean over sources of the summed probabilities of the
/// `k` best beam hypotheses (raw scores, no length normalization).
pub fn cumulative_sequence_probability<M: StepModel>(
    model: &M,
    sources: &[Vec<usize>],
    beam_size: usize,
    max_len: usize,
) -> Result<Vec<(usize, f64)>> {
    if sources.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mode = DecodeMode::Beam { size: beam_size, norm: LengthNorm::None };
    let beams = translate(model, sources, mode, max_len)?;
    let mut curve = vec![0.0f64; beam_size];
    for hyps in &beams {
        let mut acc = 0.0;
        for (k, slot) in curve.iter_mut().enumerate() {
            if let Some(h) = hyps.get(k) {
                acc += h.total_logp.exp();
            }
            *slot += acc;
        }
    }
    let n = sources.len() as f64;
    Ok(curve.into_iter().enumerate().map(|(k, v)| (k + 1, v / n)).collect())
}

/// Total probability of `ids` under one log-probability row.
pub fn probe_mass(logp_row: &[f32], ids: &[usize]) -> f64 {
    ids.iter().map(|&i| (logp_row[i] as f64).exp()).sum()
}

/// Mean probability mass placed on each probe's synonym set at its context.
pub fn synonym_mass_probe(model: &Transformer, probes: &[Probe], src_vocab: &Vocab, tgt_vocab: &Vocab) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut encoded = Vec::with_capacity(probes.len());
    for p in probes {
        let mut ids: Vec<usize> = Vec::with_capacity(p.synonyms.len());
        for w in &p.synonyms {
            let id = tgt_vocab.get(w).ok_or_else(|| Error::OutOfVocabulary { token: w.clone(), side: "target" })?;
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
        let src: Vec<usize> = src_vocab.encode(&p.src).into_iter().chain([EOS]).collect();
        let tgt_in: Vec<usize> = std::iter::once(BOS).chain(tgt_vocab.encode(&p.prefix)).collect();
        encoded.push((src, tgt_in, ids));
    }
    let chunks: Vec<&[_]> = encoded.chunks(64).collect();
    let v = model.config.vocab_tgt;
    let masses = par::map(&chunks, |chunk| -> Result<Vec<f64>> {
        let src = TokenMatrix::from_rows(&chunk.iter().map(|c| c.0.clone()).collect::<Vec<_>>());
        let tgt = TokenMatrix::from_rows(&chunk.iter().map(|c| c.1.clone()).collect::<Vec<_>>());
        let lp = model.score(&src, &tgt)?;
        Ok(chunk
            .iter()
            .enumerate()
            .map(|(r, (_, tin, ids))| {
                let at = (r * tgt.cols + tin.len() - 1) * v;
                probe_mass(&lp.data()[at..at + v], ids)
            })
            .collect())
    });
    let mut sum = 0.0;
    for m in masses {
        sum += m?.iter().sum::<f64>();
    }
    Ok(sum / probes.len() as f64)
}

/// Collected evaluation results.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub corpus_bleu: Option<f64>,
    pub per_reference: Option<Vec<(f64, f64)>>,
    pub pairwise_bleu: Option<f64>,
    pub cumprob_curve: Option<Vec<(usize, f64)>>,
    pub synonym_mass: Option<f64>,
}

impl EvalReport {
    /// Flat `key = value` lines for whatever is present.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        if let Some(b) = self.corpus_bleu {
            let _ = writeln!(out, "bleu = {b:.4}");
        }
        if let Some(refs) = &self.per_reference {
            for (j, (avg, top)) in refs.iter().enumerate() {
                let _ = writeln!(out, "ref{j}.avg = {avg:.4}");
                let _ = writeln!(out, "ref{j}.top = {top:.4}");
            }
        }
        if let Some(pb) = self.pairwise_bleu {
            let _ = writeln!(out, "pairwise_bleu = {pb:.4}");
        }
        if let Some(curve) = &self.cumprob_curve {
            if let Some(&(k, p)) = curve.last() {
                let _ = writeln!(out, "cumprob.k = {k}");
                let _ = writeln!(out, "cumprob.final = {p:.6}");
            }
        }
        if let Some(m) = self.synonym_mass {
            let _ = writeln!(out, "synonym_mass = {m:.6}");
        }
        out
    }
}

/// Writes `k<TAB>cumprob` lines.
pub fn write_curve(path: &Path, curve: &[(usize, f64)]) -> Result<()> {
    let mut s = String::new();
    for (k, p) in curve {
        let _ = writeln!(s, "{k}\t{p:.8}");
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
