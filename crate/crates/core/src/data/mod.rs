//! Corpora, vocabularies, padded batches and the synthetic one-to-many task.

mod batching;
mod synthetic;
mod vocab;

use std::fs;
use std::path::Path;

pub use batching::{make_batches, Batch, TokenMatrix};
pub use synthetic::{generate_synonym_corpus, read_probes, write_probes, Probe, SynonymTask, SyntheticCorpus};
pub use vocab::{build_vocab, Vocab};

use crate::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// A whitespace-tokenized sentence pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pair {
    pub src: Vec<String>,
    pub tgt: Vec<String>,
}

/// A sentence pair mapped to vocabulary ids, without start/end markers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
    /// Alternative target of the same length used by self-distillation.
    pub distilled: Option<Vec<usize>>,
}

impl EncodedPair {
    /// Length used for batching: the longer of the two sides.
    pub fn len(&self) -> usize {
        self.src.len().max(self.tgt.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_owned).collect()
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_owned).collect())
}

pub fn read_sentences(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(read_lines(path)?.iter().map(|l| tokenize(l)).collect())
}

pub fn write_sentences(path: &Path, sentences: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&s.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads two line-aligned files into sentence pairs. Empty lines become
/// empty token lists and are kept.
pub fn load_parallel(src_path: &Path, tgt_path: &Path) -> Result<Vec<Pair>> {
    let src = read_sentences(src_path)?;
    let tgt = read_sentences(tgt_path)?;
    if src.len() != tgt.len() {
        return Err(Error::LineCountMismatch { src_lines: src.len(), tgt_lines: tgt.len() });
    }
    Ok(src.into_iter().zip(tgt).map(|(src, tgt)| Pair { src, tgt }).collect())
}

pub fn write_parallel(src_path: &Path, tgt_path: &Path, pairs: &[Pair]) -> Result<()> {
    let (src, tgt): (Vec<_>, Vec<_>) = pairs.iter().map(|p| (p.src.clone(), p.tgt.clone())).unzip();
    write_sentences(src_path, &src)?;
    write_sentences(tgt_path, &tgt)
}

pub fn encode_pairs(pairs: &[Pair], src_vocab: &Vocab, tgt_vocab: &Vocab) -> Vec<EncodedPair> {
    pairs.iter().map(|p| EncodedPair { src: src_vocab.encode(&p.src), tgt: tgt_vocab.encode(&p.tgt), distilled: None }).collect()
}
