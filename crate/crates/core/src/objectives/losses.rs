use serde::{Deserialize, Serialize};

use crate::numerics::{Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

/// Probability clamp applied before the logarithms of the cross-entropy.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

fn check_pair(op: &'static str, y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::dim(op, &[y.len()], &[yhat.len()]));
    }
    if y.is_empty() {
        return Err(Error::EmptySequence(op));
    }
    Ok(())
}

fn check_labels(y: &[f64]) -> Result<()> {
    if let Some(bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::Dataset(format!("binary label {bad} is not 0 or 1")));
    }
    Ok(())
}

pub fn mse_loss(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair("mse_loss", y, yhat)?;
    Ok(y.iter()
        .zip(yhat)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / y.len() as f64)
}

/// Negated mean log-likelihood of binary labels.
pub fn bce_loss(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair("bce_loss", y, yhat)?;
    check_labels(y)?;
    let s: f64 = y
        .iter()
        .zip(yhat)
        .map(|(&t, &p)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            t * p.ln() + (1.0 - t) * (1.0 - p).ln()
        })
        .sum();
    Ok(-s / y.len() as f64)
}

/// Mean absolute error over every element of the translated sequence.
pub fn mae_translation_loss(xs: &Tensor<f64>, xs_hat: &Tensor<f64>) -> Result<f64> {
    if xs.shape() != xs_hat.shape() {
        return Err(Error::dim(
            "mae_translation_loss",
            xs.shape(),
            xs_hat.shape(),
        ));
    }
    if xs.is_empty() {
        return Err(Error::EmptySequence("mae_translation_loss"));
    }
    Ok(xs
        .data()
        .iter()
        .zip(xs_hat.data())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / xs.len() as f64)
}

/// `Lp + α·La + β·Lt`.
pub fn total_loss(lp: f64, la: f64, lt: f64, w: LossWeights) -> Result<f64> {
    for (name, v) in [
        ("prediction loss", lp),
        ("alignment loss", la),
        ("translation loss", lt),
    ] {
        if !v.is_finite() {
            return Err(Error::numerical(name, format!("value {v} is not finite")));
        }
    }
    Ok(lp + w.alpha * la + w.beta * lt)
}

fn target_const<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    target: &[T],
    op: &'static str,
) -> Result<Var> {
    let shape = tape.shape(pred).to_vec();
    if tape.value(pred).len() != target.len() {
        return Err(Error::dim(op, &shape, &[target.len()]));
    }
    if target.is_empty() {
        return Err(Error::EmptySequence(op));
    }
    Ok(tape.constant(Tensor::new(&shape, target.to_vec())?))
}

pub fn mse_on_tape<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: &[T]) -> Result<Var> {
    let t = target_const(tape, pred, target, "mse_loss")?;
    let d = tape.sub(pred, t)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean(sq))
}

pub fn bce_on_tape<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: &[T]) -> Result<Var> {
    check_labels(&target.iter().map(|v| v.as_f64()).collect::<Vec<_>>())?;
    let t = target_const(tape, pred, target, "bce_loss")?;
    let eps = T::from_f64(BCE_CLAMP);
    let p = tape.clamp(pred, eps, T::one() - eps);
    let log_p = tape.ln(p);
    let one_minus_p = tape.affine(p, -T::one(), T::one());
    let log_q = tape.ln(one_minus_p);
    let one_minus_t = tape.affine(t, -T::one(), T::one());
    let a = tape.mul(t, log_p)?;
    let b = tape.mul(one_minus_t, log_q)?;
    let s = tape.add(a, b)?;
    let m = tape.mean(s);
    Ok(tape.scale(m, -T::one()))
}

pub fn mae_on_tape<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: &Tensor<T>) -> Result<Var> {
    if tape.shape(pred) != target.shape() {
        return Err(Error::dim(
            "mae_translation_loss",
            tape.shape(pred),
            target.shape(),
        ));
    }
    let t = target_const(tape, pred, target.data(), "mae_translation_loss")?;
    let d = tape.sub(pred, t)?;
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

/// Per-element weights that drop all-zero target rows (frames where the
/// strong-modality extractor produced nothing), plus the number kept.
fn zero_row_mask<T: Scalar>(target: &Tensor<T>) -> (Vec<T>, usize) {
    let cols = target.cols();
    let mut kept = 0;
    let mut mask = Vec::with_capacity(target.len());
    for r in 0..target.rows() {
        let keep = target.row(r).iter().any(|&v| v != T::zero());
        kept += usize::from(keep) * cols;
        mask.extend(std::iter::repeat_n(if keep { T::one() } else { T::zero() }, cols));
    }
    (mask, kept)
}

/// [`mae_translation_loss`] over the rows whose target is not all zero;
/// zero when every row is masked.
pub fn masked_mae_translation_loss(xs: &Tensor<f64>, xs_hat: &Tensor<f64>) -> Result<f64> {
    mae_translation_loss(xs, xs_hat)?;
    let (mask, kept) = zero_row_mask(xs);
    if kept == 0 {
        return Ok(0.0);
    }
    let s: f64 = xs
        .data()
        .iter()
        .zip(xs_hat.data())
        .zip(&mask)
        .map(|((a, b), m)| m * (a - b).abs())
        .sum();
    Ok(s / kept as f64)
}

pub fn masked_mae_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    target: &Tensor<T>,
) -> Result<Var> {
    if tape.shape(pred) != target.shape() {
        return Err(Error::dim(
            "mae_translation_loss",
            tape.shape(pred),
            target.shape(),
        ));
    }
    let (mask, kept) = zero_row_mask(target);
    let t = target_const(tape, pred, target.data(), "mae_translation_loss")?;
    let d = tape.sub(pred, t)?;
    let a = tape.abs(d);
    let m = tape.mul_const(a, mask)?;
    let s = tape.sum(m);
    Ok(tape.scale(s, T::from_f64(1.0 / kept.max(1) as f64)))
}

/// Weighted sum on the tape; terms that are `None` are left out entirely.
pub fn total_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    lp: Var,
    la: Option<Var>,
    lt: Option<Var>,
    w: LossWeights,
) -> Result<Var> {
    let mut terms = vec![(lp, T::one())];
    if let Some(la) = la {
        terms.push((la, T::from_f64(w.alpha)));
    }
    if let Some(lt) = lt {
        terms.push((lt, T::from_f64(w.beta)));
    }
    if terms.len() == 1 {
        return Ok(lp);
    }
    tape.linear_combination(&terms)
}
