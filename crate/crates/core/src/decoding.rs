//! Inference: greedy, forced-length greedy, beam search and ancestral
//! sampling.
//!
//! Decoders work against [`StepModel`], so the same search code runs on the
//! Transformer and on small hand-built models in tests. The padding and
//! start markers are never proposed as output tokens. Scores are the raw
//! model log-probabilities of the emitted tokens; excluding a token from the
//! candidate set never renormalizes anything.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{TokenMatrix, BOS, EOS, PAD};
use crate::par;
use crate::transformer::{IncrementalDecoder, Transformer};
use crate::{Error, Result};

/// A model that can be decoded one token at a time for several rows.
pub trait StepModel: Sync {
    type State<'a>: StepState
    where
        Self: 'a;

    fn vocab(&self) -> usize;

    /// Longest decoder input the model accepts.
    fn max_steps(&self) -> usize;

    /// Starts `rows` copies of the decoding of one source sentence.
    fn start<'a>(&'a self, src: &[usize], rows: usize) -> Result<Self::State<'a>>;
}

/// Per-source decoding state.
pub trait StepState {
    /// Feeds one token per row, returns `rows × vocab` log-probabilities.
    fn step(&mut self, tokens: &[usize]) -> Result<Vec<f32>>;

    /// Keeps row `order[i]` as new row `i`.
    fn select(&mut self, order: &[usize]);
}

impl StepModel for Transformer {
    type State<'a> = IncrementalDecoder<'a>;

    fn vocab(&self) -> usize {
        self.config.vocab_tgt
    }

    fn max_steps(&self) -> usize {
        self.config.max_len
    }

    fn start<'a>(&'a self, src: &[usize], rows: usize) -> Result<IncrementalDecoder<'a>> {
        let row: Vec<usize> = src.iter().copied().chain([EOS]).collect();
        let m = TokenMatrix::from_rows(&vec![row; rows]);
        IncrementalDecoder::new(self, &m)
    }
}

impl StepState for IncrementalDecoder<'_> {
    fn step(&mut self, tokens: &[usize]) -> Result<Vec<f32>> {
        IncrementalDecoder::step(self, tokens)
    }

    fn select(&mut self, order: &[usize]) {
        IncrementalDecoder::select(self, order)
    }
}

/// A decoded sequence with its per-token scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Emitted tokens, ending with the end marker unless truncated.
    pub tokens: Vec<usize>,
    pub positional_logp: Vec<f64>,
    pub total_logp: f64,
    pub avg_logp: f64,
    /// Stopped at the length limit without an end marker.
    pub truncated: bool,
}

impl Hypothesis {
    fn new(tokens: Vec<usize>, positional_logp: Vec<f64>) -> Self {
        let total_logp: f64 = positional_logp.iter().sum();
        let avg_logp = if tokens.is_empty() { 0.0 } else { total_logp / tokens.len() as f64 };
        let truncated = tokens.last() != Some(&EOS);
        Hypothesis { tokens, positional_logp, total_logp, avg_logp, truncated }
    }

    /// Tokens without the end marker.
    pub fn content(&self) -> &[usize] {
        match self.tokens.split_last() {
            Some((&EOS, rest)) => rest,
            _ => &self.tokens,
        }
    }

    pub fn score(&self, norm: LengthNorm) -> f64 {
        match norm {
            LengthNorm::None => self.total_logp,
            LengthNorm::Avg => self.avg_logp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LengthNorm {
    None,
    Avg,
}

fn never_emitted(token: usize) -> bool {
    token == PAD || token == BOS
}

fn best_token(row: &[f32], allow_eos: bool) -> usize {
    let mut best = usize::MAX;
    for (k, &v) in row.iter().enumerate() {
        if never_emitted(k) || (!allow_eos && k == EOS) {
            continue;
        }
        if best == usize::MAX || v > row[best] {
            best = k;
        }
    }
    best
}

fn step_limit<M: StepModel>(model: &M, max_len: usize) -> usize {
    max_len.min(model.max_steps())
}

/// Argmax decoding until the end marker or `max_len` tokens.
pub fn greedy_decode<M: StepModel>(model: &M, src: &[usize], max_len: usize) -> Result<Hypothesis> {
    let limit = step_limit(model, max_len);
    let mut state = model.start(src, 1)?;
    let (mut tokens, mut scores) = (Vec::new(), Vec::new());
    let mut input = BOS;
    while tokens.len() < limit {
        let row = state.step(&[input])?;
        let next = best_token(&row, true);
        tokens.push(next);
        scores.push(row[next] as f64);
        if next == EOS {
            break;
        }
        input = next;
    }
    Ok(Hypothesis::new(tokens, scores))
}

/// Greedy decoding of exactly `target_len` content tokens: the end marker
/// is withheld until then and emitted right after.
pub fn forced_length_greedy<M: StepModel>(model: &M, src: &[usize], target_len: usize) -> Result<Hypothesis> {
    if target_len == 0 {
        return Err(Error::OutOfRange { name: "target_len", value: 0.0, range: "[1, inf)" });
    }
    if target_len + 1 > model.max_steps() {
        return Err(Error::TooLong { len: target_len + 1, max_len: model.max_steps() });
    }
    let mut state = model.start(src, 1)?;
    let (mut tokens, mut scores) = (Vec::new(), Vec::new());
    let mut input = BOS;
    for t in 0..=target_len {
        let row = state.step(&[input])?;
        let next = if t == target_len { EOS } else { best_token(&row, false) };
        tokens.push(next);
        scores.push(row[next] as f64);
        input = next;
    }
    Ok(Hypothesis::new(tokens, scores))
}

struct Beam {
    tokens: Vec<usize>,
    scores: Vec<f64>,
    total: f64,
}

/// Beam search. Up to `beam_size` hypotheses are returned, best first under
/// `norm`. Hypotheses that hit `max_len` are returned as truncated when too
/// few finished ones exist.
pub fn beam_search<M: StepModel>(
    model: &M,
    src: &[usize],
    beam_size: usize,
    max_len: usize,
    norm: LengthNorm,
) -> Result<Vec<Hypothesis>> {
    if beam_size == 0 {
        return Err(Error::OutOfRange { name: "beam_size", value: 0.0, range: "[1, inf)" });
    }
    let limit = step_limit(model, max_len);
    let vocab = model.vocab();
    let mut state = model.start(src, 1)?;
    let mut active = vec![Beam { tokens: Vec::new(), scores: Vec::new(), total: 0.0 }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for t in 0..limit {
        let inputs: Vec<usize> = active.iter().map(|b| b.tokens.last().copied().unwrap_or(BOS)).collect();
        let lp = state.step(&inputs)?;
        // Rank every extension of every live beam by raw total.
        let mut cands: Vec<(f64, usize, usize)> = Vec::with_capacity(active.len() * vocab);
        for (b, beam) in active.iter().enumerate() {
            for k in 0..vocab {
                if !never_emitted(k) {
                    cands.push((beam.total + lp[b * vocab + k] as f64, b, k));
                }
            }
        }
        cands.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

        let mut next = Vec::new();
        let mut order = Vec::new();
        for &(total, b, k) in &cands {
            if next.len() == beam_size {
                break;
            }
            let mut tokens = active[b].tokens.clone();
            let mut scores = active[b].scores.clone();
            tokens.push(k);
            scores.push(lp[b * vocab + k] as f64);
            if k == EOS {
                // Ranked above the last surviving beam, so it finishes.
                finished.push(Hypothesis::new(tokens, scores));
            } else {
                next.push(Beam { tokens, scores, total });
                order.push(b);
            }
        }
        if next.is_empty() || t + 1 == limit {
            for beam in next {
                finished.push(Hypothesis::new(beam.tokens, beam.scores));
            }
            break;
        }
        if done(&finished, &next, beam_size, norm) {
            break;
        }
        state.select(&order);
        active = next;
    }
    finished.sort_by(|a, b| b.score(norm).total_cmp(&a.score(norm)));
    finished.truncate(beam_size);
    Ok(finished)
}

/// Whether live beams can no longer change the returned list. Under raw
/// totals extensions only lose probability, so that is exact. Averages can
/// still rise, so averaged search stops once enough hypotheses finished.
fn done(finished: &[Hypothesis], active: &[Beam], beam_size: usize, norm: LengthNorm) -> bool {
    if finished.len() < beam_size {
        return false;
    }
    match norm {
        LengthNorm::Avg => true,
        LengthNorm::None => {
            let mut totals: Vec<f64> = finished.iter().map(|h| h.total_logp).collect();
            totals.sort_by(|a, b| b.total_cmp(a));
            let kth = totals[beam_size - 1];
            active.iter().all(|b| b.total <= kth)
        }
    }
}

fn sample_token(row: &[f32], rng: &mut ChaCha8Rng) -> usize {
    let mass: f64 = row.iter().enumerate().filter(|(k, _)| !never_emitted(*k)).map(|(_, &v)| (v as f64).exp()).sum();
    let mut u = rng.gen::<f64>() * mass;
    let mut last = EOS;
    for (k, &v) in row.iter().enumerate() {
        if never_emitted(k) {
            continue;
        }
        let p = (v as f64).exp();
        if p > 0.0 {
            last = k;
        }
        if u < p {
            return k;
        }
        u -= p;
    }
    last
}

/// `k` independent ancestral samples at temperature 1, decoded as `k` rows.
pub fn sample_k<M: StepModel>(
    model: &M,
    src: &[usize],
    k: usize,
    max_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Hypothesis>> {
    if k == 0 {
        return Err(Error::OutOfRange { name: "k", value: 0.0, range: "[1, inf)" });
    }
    let limit = step_limit(model, max_len);
    let vocab = model.vocab();
    let mut state = model.start(src, k)?;
    let mut tokens = vec![Vec::new(); k];
    let mut scores = vec![Vec::new(); k];
    let mut inputs = vec![BOS; k];
    for _ in 0..limit {
        if tokens.iter().all(|t: &Vec<usize>| t.last() == Some(&EOS)) {
            break;
        }
        let lp = state.step(&inputs)?;
        for r in 0..k {
            if tokens[r].last() == Some(&EOS) {
                continue;
            }
            let row = &lp[r * vocab..(r + 1) * vocab];
            let next = sample_token(row, rng);
            tokens[r].push(next);
            scores[r].push(row[next] as f64);
            inputs[r] = next;
        }
    }
    Ok(tokens.into_iter().zip(scores).map(|(t, s)| Hypothesis::new(t, s)).collect())
}

/// Draws `n_samples` samples and keeps the one with the highest average
/// log-likelihood (earliest on ties).
pub fn sample_decode_best<M: StepModel>(
    model: &M,
    src: &[usize],
    n_samples: usize,
    max_len: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Hypothesis> {
    let samples = sample_k(model, src, n_samples, max_len, rng)?;
    let mut best = 0;
    for (i, h) in samples.iter().enumerate() {
        if h.avg_logp > samples[best].avg_logp {
            best = i;
        }
    }
    Ok(samples.into_iter().nth(best).expect("at least one sample"))
}

/// Log-probability of each emitted token, recomputed with one teacher-forced
/// pass.
pub fn rescore(model: &Transformer, src: &[usize], tokens: &[usize]) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Ok(Vec::new());
    }
    let src_row: Vec<usize> = src.iter().copied().chain([EOS]).collect();
    let tgt_in: Vec<usize> = std::iter::once(BOS).chain(tokens[..tokens.len() - 1].iter().copied()).collect();
    let lp = model.score(&TokenMatrix::from_rows(&[src_row]), &TokenMatrix::from_rows(&[tgt_in]))?;
    let v = model.config.vocab_tgt;
    Ok(tokens.iter().enumerate().map(|(t, &k)| lp.data()[t * v + k] as f64).collect())
}

/// How [`translate`] decodes each sentence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecodeMode {
    Greedy,
    Beam {
        size: usize,
        norm: LengthNorm,
    },
    /// Best of `n` samples; sentence `i` uses a stream seeded from `seed` and `i`.
    SampleBest {
        n: usize,
        seed: u64,
    },
    /// All `k` samples per sentence.
    Samples {
        k: usize,
        seed: u64,
    },
}

fn sentence_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn translate_one<M: StepModel>(
    model: &M,
    index: usize,
    src: &[usize],
    mode: DecodeMode,
    max_len: usize,
) -> Result<Vec<Hypothesis>> {
    match mode {
        DecodeMode::Greedy => greedy_decode(model, src, max_len).map(|h| vec![h]),
        DecodeMode::Beam { size, norm } => beam_search(model, src, size, max_len, norm),
        DecodeMode::SampleBest { n, seed } => {
            sample_decode_best(model, src, n, max_len, &mut sentence_rng(seed, index)).map(|h| vec![h])
        }
        DecodeMode::Samples { k, seed } => sample_k(model, src, k, max_len, &mut sentence_rng(seed, index)),
    }
}

/// Decodes every sentence, in parallel when the `parallel` feature is on.
/// Results do not depend on the thread count.
pub fn translate<M: StepModel>(
    model: &M,
    sources: &[Vec<usize>],
    mode: DecodeMode,
    max_len: usize,
) -> Result<Vec<Vec<Hypothesis>>> {
    let indexed: Vec<(usize, &Vec<usize>)> = sources.iter().enumerate().collect();
    par::map(&indexed, |&(i, src)| translate_one(model, i, src, mode, max_len)).into_iter().collect()
}

/// Single-threaded twin of [`translate`].
pub fn translate_sequential<M: StepModel>(
    model: &M,
    sources: &[Vec<usize>],
    mode: DecodeMode,
    max_len: usize,
) -> Result<Vec<Vec<Hypothesis>>> {
    sources.iter().enumerate().map(|(i, src)| translate_one(model, i, src, mode, max_len)).collect()
}

/// Hand-specified step models for tests and examples.
pub mod toy {
    use super::*;

    /// A first-order Markov model over the target vocabulary: the next-token
    /// distribution depends only on the previous token. The source is
    /// ignored.
    #[derive(Debug, Clone)]
    pub struct MarkovModel {
        /// `vocab × vocab` log-probabilities, row = previous token.
        pub table: Vec<f32>,
        pub vocab: usize,
        pub max_steps: usize,
    }

    impl MarkovModel {
        /// Builds from probability rows; missing rows default to uniform.
        pub fn from_probs(vocab: usize, max_steps: usize, rows: &[(usize, Vec<f64>)]) -> Self {
            let mut table = vec![-(vocab as f32).ln(); vocab * vocab];
            for (prev, probs) in rows {
                assert_eq!(probs.len(), vocab);
                for (k, &p) in probs.iter().enumerate() {
                    table[prev * vocab + k] = p.ln() as f32;
                }
            }
            MarkovModel { table, vocab, max_steps }
        }
    }

    pub struct MarkovState<'a> {
        model: &'a MarkovModel,
        rows: usize,
    }

    impl StepModel for MarkovModel {
        type State<'a> = MarkovState<'a>;

        fn vocab(&self) -> usize {
            self.vocab
        }

        fn max_steps(&self) -> usize {
            self.max_steps
        }

        fn start<'a>(&'a self, _src: &[usize], rows: usize) -> Result<MarkovState<'a>> {
            Ok(MarkovState { model: self, rows })
        }
    }

    impl StepState for MarkovState<'_> {
        fn step(&mut self, tokens: &[usize]) -> Result<Vec<f32>> {
            assert_eq!(tokens.len(), self.rows);
            let v = self.model.vocab;
            Ok(tokens.iter().flat_map(|&t| self.model.table[t * v..(t + 1) * v].iter().copied()).collect())
        }

        fn select(&mut self, order: &[usize]) {
            self.rows = order.len();
        }
    }
}
