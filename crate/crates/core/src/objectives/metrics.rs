use crate::{Error, Result};

fn check(op: &'static str, y: &[f64], yhat: &[f64], min: usize) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::dim(op, &[y.len()], &[yhat.len()]));
    }
    if y.len() < min {
        return Err(Error::InsufficientSamples {
            op,
            needed: min,
            got: y.len(),
        });
    }
    Ok(())
}

/// Fraction of samples where `(ŷ ≥ threshold)` matches the binary label.
pub fn binary_accuracy(y: &[f64], yhat: &[f64], threshold: f64) -> Result<f64> {
    check("binary_accuracy", y, yhat, 1)?;
    let correct = y
        .iter()
        .zip(yhat)
        .filter(|(&t, &p)| (p >= threshold) == (t >= 0.5))
        .count();
    Ok(correct as f64 / y.len() as f64)
}

/// Class-size weighted mean of the positive- and negative-class F1 scores.
pub fn weighted_f1(y: &[f64], yhat_bin: &[f64]) -> Result<f64> {
    check("weighted_f1", y, yhat_bin, 1)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&t, &p) in y.iter().zip(yhat_bin) {
        match (t >= 0.5, p >= 0.5) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
            (true, false) => fn_ += 1,
        }
    }
    let f1 = |tp: usize, fp: usize, fn_: usize| {
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    };
    let n_p = (tp + fn_) as f64;
    let n_n = (tn + fp) as f64;
    let f1_p = f1(tp, fp, fn_);
    let f1_n = f1(tn, fn_, fp);
    Ok((f1_p * n_p + f1_n * n_n) / (n_p + n_n))
}

fn moments(y: &[f64], yhat: &[f64]) -> (f64, f64, f64, f64, f64) {
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mp = yhat.iter().sum::<f64>() / n;
    let vy = y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
    let vp = yhat.iter().map(|v| (v - mp).powi(2)).sum::<f64>() / n;
    let cov = y
        .iter()
        .zip(yhat)
        .map(|(a, b)| (a - my) * (b - mp))
        .sum::<f64>()
        / n;
    (my, mp, vy, vp, cov)
}

/// Concordance correlation coefficient with population statistics.
pub fn ccc(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check("ccc", y, yhat, 2)?;
    let (my, mp, vy, vp, cov) = moments(y, yhat);
    let denom = vy + vp + (my - mp).powi(2);
    if denom == 0.0 {
        return Err(Error::numerical(
            "ccc",
            "both sequences are constant with equal means",
        ));
    }
    Ok(2.0 * cov / denom)
}

pub fn pearson(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check("pearson", y, yhat, 2)?;
    let (_, _, vy, vp, cov) = moments(y, yhat);
    if vy == 0.0 || vp == 0.0 {
        return Err(Error::numerical("pearson", "constant sequence"));
    }
    Ok(cov / (vy * vp).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(binary_accuracy(&[1.0, 0.0], &[0.9, 0.1], 0.5).unwrap(), 1.0);
        assert_eq!(
            binary_accuracy(&[1.0, 0.0, 1.0, 0.0], &[0.9, 0.2, 0.3, 0.6], 0.5).unwrap(),
            0.5
        );
        assert!(binary_accuracy(&[], &[], 0.5).is_err());
    }

    #[test]
    fn f1_examples() {
        assert_eq!(
            weighted_f1(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0]).unwrap(),
            1.0
        );
        let f = weighted_f1(&[1.0, 1.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0]).unwrap();
        // F1p = 2/3, F1n = 0.8, both classes of size 2.
        assert!((f - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-15);
        assert_eq!(weighted_f1(&[1.0; 4], &[1.0; 4]).unwrap(), 1.0);
    }

    #[test]
    fn ccc_examples() {
        assert!((ccc(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((ccc(&[-1.0, 0.0, 1.0], &[1.0, 0.0, -1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!((ccc(&[1.0, 2.0, 3.0, 4.0], &[2.0, 2.0, 4.0, 4.0]).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(ccc(&[1.0, 2.0, 3.0], &[0.5, 0.5, 0.5]).unwrap(), 0.0);
        assert!(ccc(&[2.0, 2.0], &[2.0, 2.0]).is_err());
        assert!(ccc(&[1.0], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn ccc_joint_affine_invariance(
            pairs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..40),
            a in 0.1f64..10.0,
            b in -10.0f64..10.0,
        ) {
            let y: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let p: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            if let (Ok(c), Ok(r)) = (ccc(&y, &p), pearson(&y, &p)) {
                let ya: Vec<f64> = y.iter().map(|v| a * v + b).collect();
                let pa: Vec<f64> = p.iter().map(|v| a * v + b).collect();
                let c2 = ccc(&ya, &pa).unwrap();
                prop_assert!((c - c2).abs() < 1e-9);
                prop_assert!(c.abs() <= r.abs() + 1e-12);
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c));
            }
        }

        #[test]
        fn single_class_weighted_f1_is_positive_f1(
            preds in proptest::collection::vec(proptest::bool::ANY, 1..30)
        ) {
            let y = vec![1.0; preds.len()];
            let p: Vec<f64> = preds.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            let tp = p.iter().filter(|&&v| v == 1.0).count() as f64;
            let fn_ = p.len() as f64 - tp;
            let f1p = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fn_) };
            prop_assert!((weighted_f1(&y, &p).unwrap() - f1p).abs() < 1e-12);
        }

        #[test]
        fn complemented_predictions_flip_accuracy(
            pairs in proptest::collection::vec((proptest::bool::ANY, 0.0f64..1.0), 1..40)
        ) {
            let y: Vec<f64> = pairs.iter().map(|p| if p.0 { 1.0 } else { 0.0 }).collect();
            let p: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            prop_assume!(p.iter().all(|&v| v != 0.5));
            let q: Vec<f64> = p.iter().map(|v| 1.0 - v).collect();
            let a = binary_accuracy(&y, &p, 0.5).unwrap();
            let b = binary_accuracy(&y, &q, 0.5).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }
    }
}
