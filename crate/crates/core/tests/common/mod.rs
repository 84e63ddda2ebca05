//! Fixtures shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

pub mod experiments;

use mixce::data::{encode_pairs, Batch, EncodedPair, SynonymTask, TokenMatrix, Vocab, BOS, EOS, PAD, UNK};
use mixce::decoding::toy::MarkovModel;
use mixce::harness::{train_model, AdamConfig, TrainData, TrainOptions, TrainSettings};
use mixce::losses::{
    apply_smoothing_to_loss, ce_loss, double_mixed_ce, mixed_ce_2nd_pass, mixed_ce_ss, mixed_ce_tf, soft_mixed_ce_ss, LossSpec,
    LossVariant, Smoothing, Target, Term, TokenLogLik,
};
use mixce::sampling::{ss_training_step, StepOptions, StepRngs};
use mixce::schedules::AlphaPolicy;
use mixce::tensor::{check_gradients, Graph, Tensor, Var};
use mixce::transformer::{ModelConfig, Transformer};
use mixce::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ALL_VARIANTS: [LossVariant; 9] = [
    LossVariant::Ce,
    LossVariant::MixedTf,
    LossVariant::MixedSs,
    LossVariant::SoftMixedSs,
    LossVariant::DoubleMixedSs,
    LossVariant::MixedSs2nd,
    LossVariant::Top2MixedSs,
    LossVariant::RandomMixedSs,
    LossVariant::SelfDistill,
];

pub fn tiny_config(vocab_src: usize, vocab_tgt: usize) -> ModelConfig {
    ModelConfig {
        vocab_src,
        vocab_tgt,
        d_model: 16,
        n_heads: 2,
        n_layers_enc: 1,
        n_layers_dec: 1,
        d_ff: 32,
        dropout: 0.0,
        max_len: 32,
        share_embeddings: false,
    }
}

/// Random content ids (never reserved) for `n` pairs of length `1..=max_len`.
pub fn random_pairs(seed: u64, n: usize, max_len: usize, vocab_src: usize, vocab_tgt: usize) -> Vec<EncodedPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let ls = rng.gen_range(1..=max_len);
            let lt = rng.gen_range(1..=max_len);
            EncodedPair {
                src: (0..ls).map(|_| rng.gen_range(4..vocab_src)).collect(),
                tgt: (0..lt).map(|_| rng.gen_range(4..vocab_tgt)).collect(),
                distilled: None,
            }
        })
        .collect()
}

/// A padded batch of random pairs, with a random same-length distilled target.
pub fn random_batch(seed: u64, rows: usize, vocab_src: usize, vocab_tgt: usize) -> Batch {
    let mut pairs = random_pairs(seed, rows, 5, vocab_src, vocab_tgt);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd15);
    for p in &mut pairs {
        p.distilled = Some(p.tgt.iter().map(|_| rng.gen_range(4..vocab_tgt)).collect());
    }
    let refs: Vec<&EncodedPair> = pairs.iter().collect();
    Batch::from_pairs(&refs, (0..rows).collect())
}

/// Inputs for checking one loss variant on a linear model
/// `logp = log_softmax(x · W)`, differentiated with respect to `W`.
pub struct LinearFixture {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub vocab: usize,
    pub features: Vec<f32>,
    pub weights: Tensor,
    pub gold: TokenMatrix,
    pub oracle: TokenMatrix,
    pub q: Vec<f32>,
}

impl LinearFixture {
    pub fn new(seed: u64) -> Self {
        let (rows, cols, dim, vocab) = (2, 3, 4, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = (0..rows * cols * dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let weights = Tensor::new(vec![dim, vocab], (0..dim * vocab).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap();
        let mut gold = TokenMatrix::filled(rows, cols, PAD);
        let mut oracle = TokenMatrix::filled(rows, cols, PAD);
        for r in 0..rows {
            // The second row ends early so padding is exercised.
            let len = if r == 0 { cols } else { cols - 1 };
            for c in 0..len {
                gold.set(r, c, rng.gen_range(1..vocab));
                oracle.set(r, c, rng.gen_range(1..vocab));
            }
        }
        let mut q = Vec::with_capacity(rows * cols * vocab);
        for _ in 0..rows * cols {
            let raw: Vec<f64> = (0..vocab).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            q.extend(raw.iter().map(|v| (v / s) as f32));
        }
        LinearFixture { rows, cols, dim, vocab, features, weights, gold, oracle, q }
    }

    fn logp(&self, g: &mut Graph, w: Var) -> Result<Var> {
        let x = g.constant(&[self.rows * self.cols, self.dim], self.features.clone());
        let logits = g.matmul(x, w, false);
        let logits = g.reshape(logits, &[self.rows, self.cols, self.vocab]);
        g.log_softmax(logits, 2)
    }

    /// The variant's loss at fixed `alpha` and smoothing.
    pub fn loss(&self, g: &mut Graph, w: Var, variant: LossVariant, alpha: f64, s: Smoothing) -> Result<Var> {
        let lp = self.logp(g, w)?;
        let one = TokenLogLik::single(lp);
        let two = TokenLogLik::second(lp);
        match variant {
            LossVariant::Ce => ce_loss(g, &one, &self.gold, s.gamma),
            LossVariant::MixedTf => mixed_ce_tf(g, &one, &self.gold, alpha, s),
            LossVariant::MixedSs | LossVariant::Top2MixedSs | LossVariant::RandomMixedSs => {
                mixed_ce_ss(g, &two, &self.gold, &self.oracle, alpha, s)
            }
            LossVariant::SoftMixedSs => soft_mixed_ce_ss(g, &two, &self.gold, &self.q, alpha, s),
            LossVariant::DoubleMixedSs => double_mixed_ce(g, &two, &self.gold, &self.oracle, alpha, s),
            LossVariant::MixedSs2nd => mixed_ce_2nd_pass(g, &two, &self.gold, alpha, s),
            LossVariant::SelfDistill => {
                let terms = [Term::gold(1.0 - alpha, &self.gold), Term::oracle(alpha, Target::Tokens(&self.oracle))];
                apply_smoothing_to_loss(g, lp, &self.gold, &terms, s)
            }
        }
    }
}

/// Worst relative gradient error of `variant` on the linear fixture.
pub fn gradcheck_variant(variant: LossVariant, seed: u64) -> Result<f64> {
    let fx = LinearFixture::new(seed);
    let alpha = 0.2 + 0.6 * (seed % 5) as f64 / 4.0;
    // Argmax targets make the loss piecewise smooth; a small step keeps the
    // central difference on one piece.
    check_gradients(|g, w| fx.loss(g, w, variant, alpha, Smoothing::new(0.1)), &fx.weights, 1e-3)
}

/// Worst relative gradient error of a mixed loss with fixed oracle tokens
/// (the batch's distilled targets) with respect to one parameter tensor of
/// a tiny Transformer.
pub fn gradcheck_transformer(seed: u64, param: &str) -> Result<f64> {
    let model = Transformer::new(tiny_config(12, 12), seed)?;
    let batch = random_batch(seed, 2, 12, 12);
    let idx = model.params.index_of(param).expect("parameter exists");
    let x = model.params.tensor(idx).clone();
    check_gradients(
        |g, leaf| {
            let mut p = model.bind(g);
            p[idx] = leaf;
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let lp = model.log_probs(g, &p, &batch.src, &batch.tgt_in, &mut rng)?;
            let distilled = batch.distilled.as_ref().expect("fixture has distilled targets");
            mixed_ce_ss(g, &TokenLogLik::second(lp), &batch.tgt_out, distilled, 0.4, Smoothing::new(0.1))
        },
        &x,
        1e-2,
    )
}

/// Vocabulary of 6: reserved 0..4 plus tokens 4 and 5.
pub fn toy_markov() -> MarkovModel {
    MarkovModel::from_probs(
        6,
        8,
        &[
            (BOS, vec![0.0, 0.0, 0.1, 0.05, 0.45, 0.4]),
            (4, vec![0.0, 0.0, 0.3, 0.05, 0.1, 0.55]),
            (5, vec![0.0, 0.0, 0.4, 0.05, 0.5, 0.05]),
        ],
    )
}

/// Markov model over `vocab` ids with random rows for BOS and every
/// emittable token; PAD and BOS get zero mass.
pub fn random_markov(seed: u64, vocab: usize) -> MarkovModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for prev in std::iter::once(BOS).chain(EOS..vocab) {
        let mut p: Vec<f64> = (0..vocab).map(|k| if k == PAD || k == BOS { 0.0 } else { rng.gen_range(0.05..1.0) }).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        rows.push((prev, p));
    }
    MarkovModel::from_probs(vocab, 8, &rows)
}

/// Every sequence of at most `max_len` emittable tokens, ending in EOS or
/// cut off at the limit, with its total log-probability.
pub fn enumerate(model: &MarkovModel, max_len: usize) -> Vec<(Vec<usize>, f64)> {
    let v = model.vocab;
    let mut out = Vec::new();
    let mut stack = vec![(vec![], 0.0f64)];
    while let Some((seq, lp)) = stack.pop() {
        let prev = seq.last().copied().unwrap_or(BOS);
        for k in std::iter::once(EOS).chain(UNK..v) {
            let p = model.table[prev * v + k] as f64;
            let mut s: Vec<usize> = seq.clone();
            s.push(k);
            if k == EOS || s.len() == max_len {
                out.push((s, lp + p));
            } else {
                stack.push((s, lp + p));
            }
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    out
}

/// Loss value and gradient with respect to the linear weights.
pub fn value_and_grad(fx: &LinearFixture, variant: LossVariant, alpha: f64, s: Smoothing) -> (f64, Vec<f32>) {
    let mut g = Graph::new();
    let mut w = fx.weights.clone();
    w.requires_grad = true;
    let leaf = g.leaf(&w);
    let loss = fx.loss(&mut g, leaf, variant, alpha, s).unwrap();
    g.backward(loss).unwrap();
    (g.scalar(loss), g.grad(leaf).unwrap().to_vec())
}

/// Makes every oracle agree with gold: oracle tokens and the soft target
/// are set to gold, and features are chosen so that gold is the argmax.
pub fn oracle_is_gold(seed: u64) -> LinearFixture {
    let mut fx = LinearFixture::new(seed);
    fx.dim = fx.vocab;
    let n = fx.rows * fx.cols;
    // One-hot features with identity-like weights put the largest logit on
    // the feature's index.
    fx.features = vec![0.0; n * fx.dim];
    let mut w = vec![0.0f32; fx.dim * fx.vocab];
    for k in 0..fx.vocab {
        w[k * fx.vocab + k] = 2.0 + 0.1 * k as f32;
    }
    fx.weights = Tensor::new(vec![fx.dim, fx.vocab], w).unwrap();
    fx.q = vec![0.0; n * fx.vocab];
    for pos in 0..n {
        let id = if fx.gold.data[pos] == PAD { 1 } else { fx.gold.data[pos] };
        fx.features[pos * fx.dim + id] = 1.0;
        fx.q[pos * fx.vocab + id] = 1.0;
    }
    fx.oracle = fx.gold.clone();
    fx
}

/// Loss and parameter gradients of one training step on a random batch.
pub fn step_grads(
    model: &Transformer,
    batch_seed: u64,
    variant: LossVariant,
    eps: f64,
    options: StepOptions,
) -> (f64, Vec<Vec<f32>>) {
    let mut m = model.clone();
    let batch = random_batch(batch_seed, 3, 12, 12);
    let spec = LossSpec { variant, smoothing: Smoothing::new(0.1), alpha: AlphaPolicy::Fixed(0.4), rng_seed: 0 };
    let loss = ss_training_step(&mut m, &batch, 0.4, eps, &spec, &options, &mut StepRngs::new(9)).unwrap();
    (loss, m.params.tensors().iter().map(|t| t.grad.clone().unwrap()).collect())
}

/// Log lines plus final parameter bytes of a short run on a small task.
pub fn tiny_run(variant: LossVariant, m: f64) -> Vec<String> {
    let task = SynonymTask::uniform_sets(8, &[0.5, 0.5], 2, 5, 1);
    let pairs = task.sample_pairs(120, 1, false).unwrap();
    let sv = Vocab::from_words(&task.src_words()).unwrap();
    let tv = Vocab::from_words(&task.tgt_words()).unwrap();
    let data = TrainData { train: encode_pairs(&pairs, &sv, &tv), valid_src: vec![], valid_refs: vec![], tgt_vocab: tv.clone() };
    let settings = TrainSettings {
        model: tiny_config(sv.len(), tv.len()),
        loss: LossSpec { variant, smoothing: Smoothing::new(0.1), alpha: AlphaPolicy::Linear { m }, rng_seed: 4 },
        step: StepOptions::for_variant(variant),
        d: 0.8,
        adam: AdamConfig::default(),
        lr: 0.003,
        patience: 4,
        factor: 0.5,
        max_tokens: 64,
        pretrain_epochs: 1,
        total_iter: 30,
        seed: 2,
        data_seed: 3,
    };
    let out = train_model(&settings, &data, &TrainOptions::default()).unwrap();
    let mut log = out.log;
    log.push(format!("{:?}", out.model.params.to_bytes()));
    log
}
