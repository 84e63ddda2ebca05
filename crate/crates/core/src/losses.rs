//! Cross-entropy loss family.
//!
//! Every variant reduces to one weighted negative log-likelihood: for each
//! non-pad position a constant target distribution is assembled from the
//! (optionally smoothed) gold token, the oracle token(s) and so on, and the
//! loss is `-Σ target · logp` divided by the number of non-pad tokens.
//! Because the targets are constants, argmax indices and first-pass
//! distributions never receive gradient.

use std::fmt;
use std::str::FromStr;

use crate::data::{TokenMatrix, PAD};
use crate::schedules::AlphaPolicy;
use crate::tensor::{argmax, Graph, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossVariant {
    Ce,
    MixedTf,
    MixedSs,
    SoftMixedSs,
    DoubleMixedSs,
    MixedSs2nd,
    Top2MixedSs,
    RandomMixedSs,
    SelfDistill,
}

impl LossVariant {
    pub const ALL: [LossVariant; 9] = [
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

    pub fn as_str(self) -> &'static str {
        match self {
            LossVariant::Ce => "CE",
            LossVariant::MixedTf => "MIXED_TF",
            LossVariant::MixedSs => "MIXED_SS",
            LossVariant::SoftMixedSs => "SOFT_MIXED_SS",
            LossVariant::DoubleMixedSs => "DOUBLE_MIXED_SS",
            LossVariant::MixedSs2nd => "MIXED_SS_2ND",
            LossVariant::Top2MixedSs => "TOP2_MIXED_SS",
            LossVariant::RandomMixedSs => "RANDOM_MIXED_SS",
            LossVariant::SelfDistill => "SELF_DISTILL",
        }
    }

    /// Variants whose loss is computed on a second, mixed-input pass.
    pub fn is_scheduled_sampling(self) -> bool {
        matches!(
            self,
            LossVariant::MixedSs
                | LossVariant::SoftMixedSs
                | LossVariant::DoubleMixedSs
                | LossVariant::MixedSs2nd
                | LossVariant::Top2MixedSs
                | LossVariant::RandomMixedSs
        )
    }

    /// Variants that mix an oracle term into the gold term.
    pub fn is_mixed(self) -> bool {
        self != LossVariant::Ce
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        LossVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == upper)
            .ok_or_else(|| Error::Config(format!("unknown loss variant {s:?}")))
    }
}

/// Label smoothing settings shared by every term of a loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Smoothing {
    pub gamma: f64,
    /// Smooth oracle terms as well as the gold term.
    pub oracle_terms: bool,
}

impl Smoothing {
    pub fn none() -> Self {
        Smoothing { gamma: 0.0, oracle_terms: true }
    }

    pub fn new(gamma: f64) -> Self {
        Smoothing { gamma, oracle_terms: true }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::OutOfRange { name: "smoothing_gamma", value: self.gamma, range: "[0, 1)" });
        }
        Ok(())
    }

    fn gamma_for(&self, gold: bool) -> f64 {
        if gold || self.oracle_terms {
            self.gamma
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub variant: LossVariant,
    pub smoothing: Smoothing,
    pub alpha: AlphaPolicy,
    pub rng_seed: u64,
}

impl LossSpec {
    pub fn ce(gamma: f64) -> Self {
        LossSpec {
            variant: LossVariant::Ce,
            smoothing: Smoothing::new(gamma),
            alpha: AlphaPolicy::Linear { m: 0.5 },
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.smoothing.validate()?;
        self.alpha.validate()
    }
}

/// Which forward pass produced a set of log-probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassKind {
    FirstPassGoldInput,
    SecondPassMixedInput,
    SinglePass,
}

/// Log-probabilities `[B, T, V]` tagged with their origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenLogLik {
    pub logp: Var,
    pub source_pass: PassKind,
}

impl TokenLogLik {
    pub fn single(logp: Var) -> Self {
        TokenLogLik { logp, source_pass: PassKind::SinglePass }
    }

    pub fn second(logp: Var) -> Self {
        TokenLogLik { logp, source_pass: PassKind::SecondPassMixedInput }
    }
}

/// What one cross-entropy term compares against.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Tokens(&'a TokenMatrix),
    /// Argmax of the log-probabilities the loss is computed on.
    Argmax,
    /// Full per-position distributions `[B, T, V]`.
    Distribution(&'a [f32]),
}

/// One weighted term of a loss. `gold` marks the term smoothed even when
/// oracle smoothing is off.
#[derive(Debug, Clone, Copy)]
pub struct Term<'a> {
    pub weight: f64,
    pub target: Target<'a>,
    pub gold: bool,
}

impl<'a> Term<'a> {
    pub fn gold(weight: f64, gold: &'a TokenMatrix) -> Self {
        Term { weight, target: Target::Tokens(gold), gold: true }
    }

    pub fn oracle(weight: f64, target: Target<'a>) -> Self {
        Term { weight, target, gold: false }
    }
}

/// `(1 − γ)·onehot(gold) + γ/|V|`.
pub fn label_smoothed_target(gold: usize, gamma: f64, vocab_size: usize) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::OutOfRange { name: "gamma", value: gamma, range: "[0, 1)" });
    }
    if gold >= vocab_size {
        return Err(Error::TokenOutOfRange { id: gold, position: 0, vocab: vocab_size });
    }
    let mut t = vec![gamma / vocab_size as f64; vocab_size];
    t[gold] += 1.0 - gamma;
    Ok(t)
}

/// Per-position argmax of `[rows, cols, vocab]` values; PAD wherever
/// `like` is padded.
pub fn argmax_tokens(values: &[f32], like: &TokenMatrix, vocab: usize) -> TokenMatrix {
    let mut out = TokenMatrix::filled(like.rows, like.cols, PAD);
    for (pos, &gold) in like.data.iter().enumerate() {
        if gold != PAD {
            out.data[pos] = argmax(&values[pos * vocab..(pos + 1) * vocab]);
        }
    }
    out
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::OutOfRange { name: "alpha", value: alpha, range: "[0, 1]" });
    }
    Ok(())
}

fn check_pass(logp: &TokenLogLik, mixed_input: bool) -> Result<()> {
    let ok = match logp.source_pass {
        PassKind::SecondPassMixedInput => mixed_input,
        PassKind::SinglePass => true,
        PassKind::FirstPassGoldInput => !mixed_input,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("log-probabilities from {:?} do not fit this loss", logp.source_pass)))
    }
}

/// Weighted sum of cross-entropy terms, averaged over non-pad positions of
/// `gold`. The general form behind every variant below.
pub fn apply_smoothing_to_loss(
    g: &mut Graph,
    logp: Var,
    gold: &TokenMatrix,
    terms: &[Term<'_>],
    smoothing: Smoothing,
) -> Result<Var> {
    smoothing.validate()?;
    let shape = g.shape(logp).to_vec();
    if shape.len() != 3 || shape[0] != gold.rows || shape[1] != gold.cols {
        return Err(Error::Shape(format!("log-probabilities {shape:?} for {}x{} targets", gold.rows, gold.cols)));
    }
    let vocab = shape[2];
    let positions = gold.rows * gold.cols;
    let tokens = gold.data.iter().filter(|&&t| t != PAD).count();
    if tokens == 0 {
        return Err(Error::AllPadding);
    }
    let values = g.value(logp);
    let mut w = vec![0.0f64; positions * vocab];

    for term in terms {
        let gamma = smoothing.gamma_for(term.gold);
        let argmax_targets;
        let indices = match term.target {
            Target::Tokens(m) => {
                if !m.same_shape(gold) {
                    return Err(Error::Shape(format!(
                        "{}x{} target tokens for {}x{} gold",
                        m.rows, m.cols, gold.rows, gold.cols
                    )));
                }
                Some(m)
            }
            Target::Argmax => {
                argmax_targets = argmax_tokens(values, gold, vocab);
                Some(&argmax_targets)
            }
            Target::Distribution(q) => {
                if q.len() != w.len() {
                    return Err(Error::Shape(format!("distribution of {} values, expected {}", q.len(), w.len())));
                }
                None
            }
        };
        for pos in 0..positions {
            if gold.data[pos] == PAD {
                continue;
            }
            let row = &mut w[pos * vocab..(pos + 1) * vocab];
            let spread = term.weight * gamma / vocab as f64;
            match (indices, term.target) {
                (Some(m), _) => {
                    let id = m.data[pos];
                    if id >= vocab {
                        return Err(Error::TokenOutOfRange { id, position: pos, vocab });
                    }
                    row[id] += term.weight * (1.0 - gamma);
                }
                (None, Target::Distribution(q)) => {
                    let q = &q[pos * vocab..(pos + 1) * vocab];
                    let sum: f64 = q.iter().map(|&v| v as f64).sum();
                    if (sum - 1.0).abs() > 1e-4 {
                        return Err(Error::NotNormalized { row: pos, sum });
                    }
                    for (r, &qk) in row.iter_mut().zip(q) {
                        *r += term.weight * (1.0 - gamma) * qk as f64;
                    }
                }
                (None, _) => unreachable!(),
            }
            if spread != 0.0 {
                row.iter_mut().for_each(|r| *r += spread);
            }
        }
    }
    let weights = w.into_iter().map(|v| v as f32).collect();
    Ok(g.weighted_nll(logp, weights, 1.0 / tokens as f64))
}

/// Mean per-token cross-entropy against `gold`, smoothed by `gamma`.
pub fn ce_loss(g: &mut Graph, logp: &TokenLogLik, gold: &TokenMatrix, gamma: f64) -> Result<Var> {
    apply_smoothing_to_loss(g, logp.logp, gold, &[Term::gold(1.0, gold)], Smoothing::new(gamma))
}

/// Teacher-forcing mixed CE: `(1 − α)·CE(gold) + α·CE(ŷ)` with `ŷ` the
/// argmax of the same log-probabilities.
pub fn mixed_ce_tf(g: &mut Graph, logp: &TokenLogLik, gold: &TokenMatrix, alpha: f64, smoothing: Smoothing) -> Result<Var> {
    check_alpha(alpha)?;
    check_pass(logp, false)?;
    let terms = [Term::gold(1.0 - alpha, gold), Term::oracle(alpha, Target::Argmax)];
    apply_smoothing_to_loss(g, logp.logp, gold, &terms, smoothing)
}

/// Scheduled-sampling mixed CE on the second pass, with oracle tokens taken
/// from the first pass.
pub fn mixed_ce_ss(
    g: &mut Graph,
    logp2: &TokenLogLik,
    gold: &TokenMatrix,
    oracle: &TokenMatrix,
    alpha: f64,
    smoothing: Smoothing,
) -> Result<Var> {
    check_alpha(alpha)?;
    check_pass(logp2, true)?;
    let terms = [Term::gold(1.0 - alpha, gold), Term::oracle(alpha, Target::Tokens(oracle))];
    apply_smoothing_to_loss(g, logp2.logp, gold, &terms, smoothing)
}

/// Mixed CE whose oracle term is the full cross-entropy against the
/// first-pass distribution `q`.
pub fn soft_mixed_ce_ss(
    g: &mut Graph,
    logp2: &TokenLogLik,
    gold: &TokenMatrix,
    q: &[f32],
    alpha: f64,
    smoothing: Smoothing,
) -> Result<Var> {
    check_alpha(alpha)?;
    check_pass(logp2, true)?;
    let terms = [Term::gold(1.0 - alpha, gold), Term::oracle(alpha, Target::Distribution(q))];
    apply_smoothing_to_loss(g, logp2.logp, gold, &terms, smoothing)
}

/// `(1 − α)·CE(gold) + α/2·[CE(first-pass oracle) + CE(second-pass argmax)]`.
pub fn double_mixed_ce(
    g: &mut Graph,
    logp2: &TokenLogLik,
    gold: &TokenMatrix,
    oracle_first: &TokenMatrix,
    alpha: f64,
    smoothing: Smoothing,
) -> Result<Var> {
    check_alpha(alpha)?;
    check_pass(logp2, true)?;
    let terms = [
        Term::gold(1.0 - alpha, gold),
        Term::oracle(alpha / 2.0, Target::Tokens(oracle_first)),
        Term::oracle(alpha / 2.0, Target::Argmax),
    ];
    apply_smoothing_to_loss(g, logp2.logp, gold, &terms, smoothing)
}

/// Mixed CE whose oracle is the argmax of the second pass itself.
pub fn mixed_ce_2nd_pass(
    g: &mut Graph,
    logp2: &TokenLogLik,
    gold: &TokenMatrix,
    alpha: f64,
    smoothing: Smoothing,
) -> Result<Var> {
    check_alpha(alpha)?;
    check_pass(logp2, true)?;
    let terms = [Term::gold(1.0 - alpha, gold), Term::oracle(alpha, Target::Argmax)];
    apply_smoothing_to_loss(g, logp2.logp, gold, &terms, smoothing)
}
