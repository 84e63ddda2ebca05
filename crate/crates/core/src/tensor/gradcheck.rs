use super::{Graph, Tensor, Var};
use crate::{Error, Result};

/// Compares the tape gradient of a scalar function against central finite
/// differences, returning the worst `|analytic - numeric| / max(1, |analytic|)`
/// over all coordinates of `x`.
///
/// `f` builds its computation on the supplied graph from the leaf holding
/// `x`. It must be deterministic: two evaluations at `x` that disagree are
/// rejected before any differencing happens.
pub fn check_gradients<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(Error::OutOfRange { name: "h", value: h, range: "(0, inf)" });
    }
    let eval = |t: &Tensor| -> Result<f64> {
        let mut g = Graph::no_grad();
        let v = g.leaf(t);
        let out = f(&mut g, v)?;
        Ok(g.scalar(out))
    };

    let first = eval(x)?;
    let second = eval(x)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let mut g = Graph::new();
    let mut leaf = x.clone();
    leaf.requires_grad = true;
    let v = g.leaf(&leaf);
    let out = f(&mut g, v)?;
    g.backward(out)?;
    let analytic = g.grad(v).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; x.numel()]);

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for (i, &orig) in x.data().iter().enumerate() {
        let plus = orig + h as f32;
        let minus = orig - h as f32;
        // Difference the values actually stored, not the nominal step.
        let step = plus as f64 - minus as f64;
        probe.data_mut()[i] = plus;
        let fp = eval(&probe)?;
        probe.data_mut()[i] = minus;
        let fm = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (fp - fm) / step;
        let a = analytic[i] as f64;
        let err = (a - numeric).abs() / a.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
