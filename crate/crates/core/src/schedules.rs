//! Scalar training schedules: the mixing weight α, the scheduled-sampling
//! gold-keep probability ε, and learning-rate halving on a BLEU plateau.
//!
//! The iteration counter `i` is 1-based and counts optimizer steps of the
//! main training phase only.

use crate::{Error, Result};

fn check_iteration(i: usize, total_iter: usize) -> Result<()> {
    if total_iter == 0 || i == 0 || i > total_iter {
        return Err(Error::OutOfRange { name: "i", value: i as f64, range: "[1, total_iter]" });
    }
    Ok(())
}

/// `m · i / total_iter`.
pub fn alpha_at(i: usize, total_iter: usize, m: f64) -> Result<f64> {
    check_iteration(i, total_iter)?;
    if !(m > 0.0 && m <= 1.0) {
        return Err(Error::OutOfRange { name: "m", value: m, range: "(0, 1]" });
    }
    Ok(m * i as f64 / total_iter as f64)
}

/// `d ^ (i / total_iter)`.
pub fn epsilon_at(i: usize, total_iter: usize, d: f64) -> Result<f64> {
    check_iteration(i, total_iter)?;
    if !(d > 0.0 && d < 1.0) {
        return Err(Error::OutOfRange { name: "d", value: d, range: "(0, 1)" });
    }
    Ok(d.powf(i as f64 / total_iter as f64))
}

/// How α evolves over training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaPolicy {
    /// Grows linearly to `m` at the last iteration.
    Linear { m: f64 },
    /// Constant throughout.
    Fixed(f64),
}

impl AlphaPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            // m = 0 is accepted here: it switches the mixed term off entirely.
            AlphaPolicy::Linear { m } if !(0.0..=1.0).contains(&m) => {
                Err(Error::OutOfRange { name: "m", value: m, range: "[0, 1]" })
            }
            AlphaPolicy::Fixed(a) if !(0.0..=1.0).contains(&a) => {
                Err(Error::OutOfRange { name: "fixed_alpha", value: a, range: "[0, 1]" })
            }
            _ => Ok(()),
        }
    }

    pub fn at(&self, i: usize, total_iter: usize) -> Result<f64> {
        match *self {
            AlphaPolicy::Linear { m: 0.0 } => check_iteration(i, total_iter).map(|_| 0.0),
            AlphaPolicy::Linear { m } => alpha_at(i, total_iter, m),
            AlphaPolicy::Fixed(a) => check_iteration(i, total_iter).map(|_| a),
        }
    }
}

/// Schedule constants plus the position in the main phase.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleState {
    pub i: usize,
    pub total_iter: usize,
    pub alpha: AlphaPolicy,
    pub d: f64,
}

impl ScheduleState {
    pub fn alpha(&self) -> Result<f64> {
        self.alpha.at(self.i, self.total_iter)
    }

    pub fn epsilon(&self) -> Result<f64> {
        epsilon_at(self.i, self.total_iter, self.d)
    }
}

/// Returns the learning rate to use after the latest epoch in
/// `bleu_history`: `current_lr · factor` when that epoch completes a run of
/// `patience` epochs without beating the best earlier score, counted since
/// the last reduction.
pub fn lr_on_plateau(bleu_history: &[f64], current_lr: f64, patience: usize, factor: f64) -> f64 {
    if patience == 0 || bleu_history.is_empty() {
        return current_lr;
    }
    let mut best = f64::NEG_INFINITY;
    let mut bad = 0usize;
    let mut reduce_now = false;
    for &score in bleu_history {
        reduce_now = false;
        if score > best {
            best = score;
            bad = 0;
        } else {
            bad += 1;
            if bad >= patience {
                reduce_now = true;
                bad = 0;
            }
        }
    }
    if reduce_now {
        current_lr * factor
    } else {
        current_lr
    }
}
