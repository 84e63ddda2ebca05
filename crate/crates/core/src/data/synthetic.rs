use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{read_lines, tokenize, Pair};
use crate::{Error, Result};

/// One-to-many toy translation task.
///
/// Source word `s{i}` translates, position by position, into one of the
/// target words in `synonyms[i]`, drawn by weight. Sentences have equal
/// source and target length.
#[derive(Debug, Clone, PartialEq)]
pub struct SynonymTask {
    pub synonyms: Vec<Vec<(String, f64)>>,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability of keeping the previous position's synonym slot instead
    /// of drawing a fresh one, which makes each target word depend on the
    /// target prefix.
    pub agreement: f64,
    /// Probability that a training target word is replaced by a uniformly
    /// random target word. Probes and clean samples ignore it.
    pub noise: f64,
    pub n_probes: usize,
    pub seed: u64,
}

impl SynonymTask {
    /// `src_vocab` source words, each with `weights.len()` synonyms.
    pub fn uniform_sets(src_vocab: usize, weights: &[f64], min_len: usize, max_len: usize, seed: u64) -> Self {
        let synonyms =
            (0..src_vocab).map(|i| weights.iter().enumerate().map(|(j, &w)| (format!("t{i}_{j}"), w)).collect()).collect();
        SynonymTask { synonyms, min_len, max_len, agreement: 0.0, noise: 0.0, n_probes: 0, seed }
    }

    pub fn src_vocab_size(&self) -> usize {
        self.synonyms.len()
    }

    pub fn tgt_vocab_size(&self) -> usize {
        self.synonyms.iter().map(Vec::len).sum()
    }

    pub fn src_word(i: usize) -> String {
        format!("s{i}")
    }

    pub fn src_words(&self) -> Vec<String> {
        (0..self.synonyms.len()).map(Self::src_word).collect()
    }

    pub fn tgt_words(&self) -> Vec<String> {
        self.synonyms.iter().flatten().map(|(w, _)| w.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.synonyms.is_empty() {
            return Err(Error::Config("synonym task needs at least one source word".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!("bad length range {}..={}", self.min_len, self.max_len)));
        }
        for (name, v) in [("agreement", self.agreement), ("noise", self.noise)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::OutOfRange { name, value: v, range: "[0, 1]" });
            }
        }
        let mut seen = HashSet::new();
        for (i, set) in self.synonyms.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::Config(format!("source word {i} has no synonyms")));
            }
            let total: f64 = set.iter().map(|(_, w)| w).sum();
            if (total - 1.0).abs() > 1e-9 || set.iter().any(|(_, w)| *w < 0.0) {
                return Err(Error::Config(format!("weights of source word {i} sum to {total}")));
            }
            for (w, _) in set {
                if !seen.insert(w.as_str()) {
                    return Err(Error::Config(format!("target word {w} appears in two synonym sets")));
                }
            }
        }
        Ok(())
    }

    fn draw_slot(&self, src: usize, rng: &mut ChaCha8Rng) -> usize {
        let set = &self.synonyms[src];
        let mut u: f64 = rng.gen();
        for (j, (_, w)) in set.iter().enumerate() {
            if u < *w {
                return j;
            }
            u -= w;
        }
        set.len() - 1
    }

    fn sample_pair(&self, rng: &mut ChaCha8Rng, noisy: bool, all_targets: &[String]) -> Pair {
        let len = rng.gen_range(self.min_len..=self.max_len);
        let src: Vec<usize> = (0..len).map(|_| rng.gen_range(0..self.synonyms.len())).collect();
        let mut tgt = Vec::with_capacity(len);
        let mut prev_slot: Option<usize> = None;
        for &s in &src {
            let keep = self.agreement > 0.0 && rng.gen::<f64>() < self.agreement;
            let slot = match prev_slot {
                Some(j) if keep && j < self.synonyms[s].len() => j,
                _ => self.draw_slot(s, rng),
            };
            prev_slot = Some(slot);
            let mut word = self.synonyms[s][slot].0.clone();
            if noisy && self.noise > 0.0 && rng.gen::<f64>() < self.noise {
                word = all_targets[rng.gen_range(0..all_targets.len())].clone();
            }
            tgt.push(word);
        }
        Pair { src: src.into_iter().map(Self::src_word).collect(), tgt }
    }

    /// `n` pairs from the task distribution; `noisy` applies target noise.
    pub fn sample_pairs(&self, n: usize, seed: u64, noisy: bool) -> Result<Vec<Pair>> {
        self.validate()?;
        let all = self.tgt_words();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..n).map(|_| self.sample_pair(&mut rng, noisy, &all)).collect())
    }

    pub fn synonyms_of(&self, src_word: &str) -> Option<Vec<String>> {
        let i: usize = src_word.strip_prefix('s')?.parse().ok()?;
        self.synonyms.get(i).map(|set| set.iter().map(|(w, _)| w.clone()).collect())
    }
}

/// Held-out context with the gold next target word and its synonym set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Probe {
    pub src: Vec<String>,
    pub prefix: Vec<String>,
    pub gold: String,
    pub synonyms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub pairs: Vec<Pair>,
    pub probes: Vec<Probe>,
}

/// Training pairs (with the task's target noise) plus `task.n_probes` clean
/// held-out probes drawn from an independent stream.
pub fn generate_synonym_corpus(task: &SynonymTask, n_pairs: usize) -> Result<SyntheticCorpus> {
    let pairs = task.sample_pairs(n_pairs, task.seed, true)?;
    let held_out = task.sample_pairs(task.n_probes, task.seed ^ 0x9e37_79b9_7f4a_7c15, false)?;
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed.wrapping_add(17));
    let probes = held_out
        .into_iter()
        .map(|p| {
            let t = rng.gen_range(0..p.tgt.len());
            Probe {
                synonyms: task.synonyms_of(&p.src[t]).expect("generated source word"),
                gold: p.tgt[t].clone(),
                prefix: p.tgt[..t].to_vec(),
                src: p.src,
            }
        })
        .collect();
    Ok(SyntheticCorpus { pairs, probes })
}

const CONTEXT_SEP: &str = "|||";

/// One probe per line: `src ||| prefix<TAB>gold<TAB>syn1,syn2,...`.
pub fn write_probes(path: &Path, probes: &[Probe]) -> Result<()> {
    let mut out = String::new();
    for p in probes {
        out.push_str(&p.src.join(" "));
        out.push_str(&format!(" {CONTEXT_SEP}"));
        for w in &p.prefix {
            out.push(' ');
            out.push_str(w);
        }
        out.push('\t');
        out.push_str(&p.gold);
        out.push('\t');
        out.push_str(&p.synonyms.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_probes(path: &Path) -> Result<Vec<Probe>> {
    read_lines(path)?
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let bad = || Error::Config(format!("{}:{}: malformed probe line", path.display(), n + 1));
            let mut cols = line.split('\t');
            let (ctx, gold, syns) = (cols.next().ok_or_else(bad)?, cols.next().ok_or_else(bad)?, cols.next().ok_or_else(bad)?);
            let tokens = tokenize(ctx);
            let (src, prefix) = match tokens.iter().position(|t| t == CONTEXT_SEP) {
                Some(i) => (tokens[..i].to_vec(), tokens[i + 1..].to_vec()),
                None => (tokens, Vec::new()),
            };
            Ok(Probe {
                src,
                prefix,
                gold: gold.trim().to_owned(),
                synonyms: syns.split(',').map(|s| s.trim().to_owned()).filter(|s| !s.is_empty()).collect(),
            })
        })
        .collect()
}
