//! Two-pass scheduled sampling.
//!
//! A gradient-free first pass on the gold decoder input yields per-position
//! predictions. Some gold input tokens are then swapped for those
//! predictions and a second pass on the mixed input carries the gradient of
//! the configured loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Batch, TokenMatrix, BOS, PAD};
use crate::losses::{
    apply_smoothing_to_loss, argmax_tokens, ce_loss, double_mixed_ce, mixed_ce_2nd_pass, mixed_ce_ss, mixed_ce_tf,
    soft_mixed_ce_ss, LossSpec, LossVariant, Target, Term, TokenLogLik,
};
use crate::tensor::{argmax, top2, Graph, Tensor};
use crate::transformer::Transformer;
use crate::{Error, Result};

/// Result of the gradient-free pass on gold input.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstPassOutput {
    /// `[B, T, V]` log-probabilities.
    pub logp: Tensor,
    /// Per-position argmax, PAD at padded target positions.
    pub argmax_tokens: TokenMatrix,
    /// `exp(logp)`, kept only when requested.
    pub full_probs: Option<Vec<f32>>,
}

impl FirstPassOutput {
    pub fn vocab(&self) -> usize {
        self.logp.shape()[2]
    }

    pub fn row(&self, pos: usize) -> &[f32] {
        let v = self.vocab();
        &self.logp.data()[pos * v..(pos + 1) * v]
    }
}

/// How the loss's oracle token is picked from the first pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OraclePolicy {
    Argmax,
    /// Top-1 or top-2 with equal probability.
    Top2Random,
    /// Gold when the argmax is right, otherwise a uniformly random token.
    RandomOnMismatch,
}

impl OraclePolicy {
    pub fn for_variant(variant: LossVariant) -> Self {
        match variant {
            LossVariant::Top2MixedSs => OraclePolicy::Top2Random,
            LossVariant::RandomMixedSs => OraclePolicy::RandomOnMismatch,
            _ => OraclePolicy::Argmax,
        }
    }
}

/// Runs the model on the gold decoder input without recording gradients.
/// With `train` set, dropout is active and seeded by `dropout_seed`.
pub fn first_pass(
    model: &Transformer,
    batch: &Batch,
    train: bool,
    dropout_seed: u64,
    keep_probs: bool,
) -> Result<FirstPassOutput> {
    let mut g = Graph::no_grad();
    g.set_train(train);
    let p = model.bind(&mut g);
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let lp = model.batch_log_probs(&mut g, &p, batch, &mut rng)?;
    let logp = g.tensor(lp);
    let vocab = logp.shape()[2];
    let argmax_tokens = argmax_tokens(logp.data(), &batch.tgt_out, vocab);
    let full_probs = keep_probs.then(|| logp.data().iter().map(|v| v.exp()).collect());
    Ok(FirstPassOutput { logp, argmax_tokens, full_probs })
}

/// Gumbel(0, 1) sample from a uniform draw `u` in (0, 1).
pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}

/// Uniform draw from the open interval (0, 1).
pub fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 && u < 1.0 {
            return u;
        }
    }
}

/// `logp_row` plus i.i.d. Gumbel noise scaled by `scale`.
pub fn gumbel_perturb<R: Rng + ?Sized>(logp_row: &[f32], scale: f64, rng: &mut R) -> Vec<f32> {
    logp_row.iter().map(|&l| (l as f64 + scale * gumbel_from_uniform(open_uniform(rng))) as f32).collect()
}

/// Picks the loss oracle for every non-pad target position.
pub fn select_oracle_tokens<R: Rng + ?Sized>(
    first: &FirstPassOutput,
    gold: &TokenMatrix,
    policy: OraclePolicy,
    rng: &mut R,
) -> Result<TokenMatrix> {
    if !first.argmax_tokens.same_shape(gold) {
        return Err(Error::Shape(format!(
            "first pass {}x{} vs gold {}x{}",
            first.argmax_tokens.rows, first.argmax_tokens.cols, gold.rows, gold.cols
        )));
    }
    let vocab = first.vocab();
    let mut out = first.argmax_tokens.clone();
    if policy == OraclePolicy::Argmax {
        return Ok(out);
    }
    for pos in 0..gold.data.len() {
        if gold.data[pos] == PAD {
            continue;
        }
        out.data[pos] = match policy {
            OraclePolicy::Top2Random => {
                let (a, b) = top2(first.row(pos));
                if rng.gen::<bool>() {
                    a
                } else {
                    b
                }
            }
            OraclePolicy::RandomOnMismatch => {
                if first.argmax_tokens.data[pos] == gold.data[pos] {
                    gold.data[pos]
                } else {
                    rng.gen_range(0..vocab)
                }
            }
            OraclePolicy::Argmax => unreachable!(),
        };
    }
    Ok(out)
}

/// Turns per-position predictions into a decoder input: the start marker
/// followed by the predictions shifted right, padded like `gold_in`.
pub fn shift_predictions(predicted: &TokenMatrix, gold_in: &TokenMatrix) -> TokenMatrix {
    let mut out = gold_in.clone();
    for r in 0..gold_in.rows {
        for c in 1..gold_in.cols {
            if gold_in.get(r, c) != PAD {
                out.set(r, c, predicted.get(r, c - 1));
            }
        }
        if gold_in.cols > 0 && gold_in.get(r, 0) != PAD {
            out.set(r, 0, BOS);
        }
    }
    out
}

/// Keeps each gold input token with probability `epsilon`, otherwise takes
/// the predicted one. Column 0 and padding are never touched.
pub fn mix_sequences<R: Rng + ?Sized>(
    gold_in: &TokenMatrix,
    predicted_in: &TokenMatrix,
    epsilon: f64,
    rng: &mut R,
) -> Result<TokenMatrix> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::OutOfRange { name: "epsilon", value: epsilon, range: "[0, 1]" });
    }
    if !gold_in.same_shape(predicted_in) {
        return Err(Error::Shape("gold and predicted inputs differ in shape".into()));
    }
    let mut out = gold_in.clone();
    for r in 0..gold_in.rows {
        for c in 1..gold_in.cols {
            if gold_in.get(r, c) == PAD {
                continue;
            }
            if rng.gen::<f64>() >= epsilon {
                out.set(r, c, predicted_in.get(r, c));
            }
        }
    }
    Ok(out)
}

/// Settings of the scheduled-sampling step beyond the loss itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    /// Feed a mixed input to a second pass. Forced on for the
    /// scheduled-sampling loss variants and ignored by `MIXED_TF` and
    /// `SELF_DISTILL`, which always use the gold input.
    pub scheduled_sampling: bool,
    /// Gumbel noise scale for word-oracle mixing; `None` mixes plain argmax.
    pub word_oracle: Option<f64>,
}

impl StepOptions {
    pub fn for_variant(variant: LossVariant) -> Self {
        StepOptions { scheduled_sampling: variant.is_scheduled_sampling(), word_oracle: None }
    }

    pub fn runs_second_pass(&self, variant: LossVariant) -> bool {
        variant.is_scheduled_sampling()
            || (self.scheduled_sampling && !matches!(variant, LossVariant::MixedTf | LossVariant::SelfDistill))
    }
}

/// Independent random streams used by training steps.
#[derive(Debug, Clone)]
pub struct StepRngs {
    pub dropout: ChaCha8Rng,
    pub mixing: ChaCha8Rng,
    pub oracle: ChaCha8Rng,
    pub gumbel: ChaCha8Rng,
}

impl StepRngs {
    pub fn new(seed: u64) -> Self {
        let stream = |k: u64| ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k));
        StepRngs { dropout: stream(1), mixing: stream(2), oracle: stream(3), gumbel: stream(4) }
    }
}

/// Everything the second pass needs from the first.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondPassPlan {
    pub first: FirstPassOutput,
    /// Per-position tokens used for mixing (Gumbel-perturbed in word-oracle mode).
    pub mixing_tokens: TokenMatrix,
    /// Per-position oracle tokens for the loss.
    pub loss_oracle: TokenMatrix,
    pub y_mix: TokenMatrix,
}

/// First pass, oracle selection and mixing.
pub fn plan_second_pass(
    model: &Transformer,
    batch: &Batch,
    spec: &LossSpec,
    options: &StepOptions,
    epsilon: f64,
    train: bool,
    rngs: &mut StepRngs,
) -> Result<SecondPassPlan> {
    let first_seed = rngs.dropout.gen::<u64>();
    let keep_probs = spec.variant == LossVariant::SoftMixedSs;
    let first = first_pass(model, batch, train, first_seed, keep_probs)?;
    let gold = &batch.tgt_out;
    let mixing_tokens = match options.word_oracle {
        None => first.argmax_tokens.clone(),
        Some(scale) => {
            let mut m = first.argmax_tokens.clone();
            for pos in 0..gold.data.len() {
                if gold.data[pos] != PAD {
                    m.data[pos] = argmax(&gumbel_perturb(first.row(pos), scale, &mut rngs.gumbel));
                }
            }
            m
        }
    };
    // In word-oracle mode the loss still uses the unperturbed argmax.
    let loss_oracle = select_oracle_tokens(&first, gold, OraclePolicy::for_variant(spec.variant), &mut rngs.oracle)?;
    let predicted_in = shift_predictions(&mixing_tokens, &batch.tgt_in);
    let y_mix = mix_sequences(&batch.tgt_in, &predicted_in, epsilon, &mut rngs.mixing)?;
    Ok(SecondPassPlan { first, mixing_tokens, loss_oracle, y_mix })
}

/// One forward/backward pass of the configured loss. Gradients are added
/// to the model's parameter buffers; the loss value is returned.
pub fn ss_training_step(
    model: &mut Transformer,
    batch: &Batch,
    alpha: f64,
    epsilon: f64,
    spec: &LossSpec,
    options: &StepOptions,
    rngs: &mut StepRngs,
) -> Result<f64> {
    spec.validate()?;
    let train = model.config.dropout > 0.0;
    let plan = if options.runs_second_pass(spec.variant) {
        Some(plan_second_pass(model, batch, spec, options, epsilon, train, rngs)?)
    } else {
        None
    };

    let mut g = Graph::new();
    g.set_train(true);
    let p = model.bind(&mut g);
    let decoder_in = plan.as_ref().map_or(&batch.tgt_in, |pl| &pl.y_mix);
    let lp = model.log_probs(&mut g, &p, &batch.src, decoder_in, &mut rngs.dropout)?;
    let logp = match plan {
        Some(_) => TokenLogLik::second(lp),
        None => TokenLogLik::single(lp),
    };
    let gold = &batch.tgt_out;
    let s = spec.smoothing;

    let loss = match (spec.variant, &plan) {
        (LossVariant::Ce, _) => ce_loss(&mut g, &logp, gold, s.gamma)?,
        (LossVariant::MixedTf, _) => mixed_ce_tf(&mut g, &logp, gold, alpha, s)?,
        (LossVariant::SelfDistill, _) => {
            let distilled =
                batch.distilled.as_ref().ok_or_else(|| Error::Config("SELF_DISTILL needs distilled targets".into()))?;
            let terms = [Term::gold(1.0 - alpha, gold), Term::oracle(alpha, Target::Tokens(distilled))];
            apply_smoothing_to_loss(&mut g, logp.logp, gold, &terms, s)?
        }
        (LossVariant::MixedSs | LossVariant::Top2MixedSs | LossVariant::RandomMixedSs, Some(pl)) => {
            mixed_ce_ss(&mut g, &logp, gold, &pl.loss_oracle, alpha, s)?
        }
        (LossVariant::SoftMixedSs, Some(pl)) => {
            let q = pl.first.full_probs.as_deref().expect("probabilities kept for the soft variant");
            soft_mixed_ce_ss(&mut g, &logp, gold, q, alpha, s)?
        }
        (LossVariant::DoubleMixedSs, Some(pl)) => double_mixed_ce(&mut g, &logp, gold, &pl.loss_oracle, alpha, s)?,
        (LossVariant::MixedSs2nd, Some(_)) => mixed_ce_2nd_pass(&mut g, &logp, gold, alpha, s)?,
        (v, None) => unreachable!("{v} always runs a second pass"),
    };
    let value = g.scalar(loss);
    g.backward(loss)?;
    model.params.accumulate_grads(&g, &p);
    Ok(value)
}
