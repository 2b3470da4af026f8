//! Total canonical correlation between two latent sequences.
//!
//! With mean-centred `X̄s`, `X̄w` (`N×d`, samples in rows):
//!
//! ```text
//! Σsw = X̄sᵀX̄w/(N−1)    Σs = X̄sᵀX̄s/(N−1) + r1·I    Σw = X̄wᵀX̄w/(N−1) + r2·I
//! T   = Σs^{-1/2} Σsw Σw^{-1/2}           corr = ‖T‖_tr = Σ singular values
//! ```
//!
//! With `T = U D Vᵀ` the gradient is
//!
//! ```text
//! ∂corr/∂Xs = (2·X̄s·∇ss + X̄w·∇swᵀ)/(N−1)    ∂corr/∂Xw = (2·X̄w·∇ww + X̄s·∇sw)/(N−1)
//! ∇sw = Σs^{-1/2} U Vᵀ Σw^{-1/2}
//! ∇ss = −½ Σs^{-1/2} U D Uᵀ Σs^{-1/2}      ∇ww = −½ Σw^{-1/2} V D Vᵀ Σw^{-1/2}
//! ```
//!
//! Everything runs in `f64` regardless of the tape precision.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::numerics::{Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DccaConfig {
    pub r1: f64,
    pub r2: f64,
    #[serde(default = "default_floor")]
    pub eigen_floor: f64,
}

fn default_floor() -> f64 {
    1e-12
}

impl Default for DccaConfig {
    fn default() -> Self {
        DccaConfig {
            r1: 1e-3,
            r2: 1e-3,
            eigen_floor: default_floor(),
        }
    }
}

impl DccaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r1 >= 0.0 && self.r2 >= 0.0) {
            return Err(Error::Config(
                "DCCA regularisers must be non-negative".into(),
            ));
        }
        if self.eigen_floor.is_nan() || self.eigen_floor <= 0.0 {
            return Err(Error::Config(
                "DCCA eigenvalue floor must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Stricter check used for training runs.
    pub fn validate_for_training(&self) -> Result<()> {
        self.validate()?;
        if self.r1 <= 0.0 || self.r2 <= 0.0 {
            return Err(Error::Config(
                "DCCA regularisers r1, r2 must be > 0 for training".into(),
            ));
        }
        if self.eigen_floor > self.r1.min(self.r2) {
            return Err(Error::Config(
                "DCCA eigenvalue floor must not exceed r1 or r2".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DccaOutput {
    pub correlation: f64,
    /// Gradient of the correlation with respect to the strong latents (`N×d`, row-major).
    pub grad_s: Option<Vec<f64>>,
    /// Gradient of the correlation with respect to the weak latents.
    pub grad_w: Option<Vec<f64>>,
}

fn centred(x: &Tensor<f64>) -> DMatrix<f64> {
    let (n, d) = (x.rows(), x.cols());
    let mut m = DMatrix::from_row_slice(n, d, x.data());
    for j in 0..d {
        let mean = m.column(j).sum() / n as f64;
        m.column_mut(j).add_scalar_mut(-mean);
    }
    m
}

fn inv_sqrt(s: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(s.clone());
    let d = eig.eigenvalues.map(|l| 1.0 / l.max(floor).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

fn check_finite(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numerical(name, "matrix has non-finite entries"))
    }
}

fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Correlation and, on request, its gradients.
pub fn dcca_with_grad(
    xs: &Tensor<f64>,
    xw: &Tensor<f64>,
    cfg: &DccaConfig,
    grad_s: bool,
    grad_w: bool,
) -> Result<DccaOutput> {
    cfg.validate()?;
    if xs.shape().len() != 2 || xs.shape() != xw.shape() {
        return Err(Error::dim("dcca_correlation", xs.shape(), xw.shape()));
    }
    let (n, d) = (xs.rows(), xs.cols());
    if n < 2 {
        return Err(Error::InsufficientSamples {
            op: "dcca_correlation",
            needed: 2,
            got: n,
        });
    }
    let hs = centred(xs);
    let hw = centred(xw);
    let scale = 1.0 / (n as f64 - 1.0);
    let eye = DMatrix::<f64>::identity(d, d);
    let s_sw = hs.transpose() * &hw * scale;
    let s_ss = hs.transpose() * &hs * scale + &eye * cfg.r1;
    let s_ww = hw.transpose() * &hw * scale + &eye * cfg.r2;
    check_finite("sigma_sw", &s_sw)?;
    check_finite("sigma_s", &s_ss)?;
    check_finite("sigma_w", &s_ww)?;

    let ss_is = inv_sqrt(&s_ss, cfg.eigen_floor);
    let ww_is = inv_sqrt(&s_ww, cfg.eigen_floor);
    let t = &ss_is * &s_sw * &ww_is;
    check_finite("T", &t)?;
    let svd = t.svd(grad_s || grad_w, grad_s || grad_w);
    let correlation = svd.singular_values.sum();
    if !correlation.is_finite() {
        return Err(Error::numerical("T", "trace norm is not finite"));
    }
    let mut out = DccaOutput {
        correlation,
        grad_s: None,
        grad_w: None,
    };
    if !(grad_s || grad_w) {
        return Ok(out);
    }
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested Vᵀ");
    let dmat = DMatrix::from_diagonal(&svd.singular_values);
    let d_sw = &ss_is * u * v_t * &ww_is;
    if grad_s {
        let d_ss = &ss_is * u * &dmat * u.transpose() * &ss_is * -0.5;
        let g = (&hs * d_ss * 2.0 + &hw * d_sw.transpose()) * scale;
        out.grad_s = Some(to_row_major(&g));
    }
    if grad_w {
        let v = v_t.transpose();
        let d_ww = &ww_is * &v * &dmat * v.transpose() * &ww_is * -0.5;
        let g = (&hw * d_ww * 2.0 + &hs * &d_sw) * scale;
        out.grad_w = Some(to_row_major(&g));
    }
    Ok(out)
}

pub fn dcca_correlation(xs: &Tensor<f64>, xw: &Tensor<f64>, cfg: &DccaConfig) -> Result<f64> {
    Ok(dcca_with_grad(xs, xw, cfg, false, false)?.correlation)
}

/// Negative total correlation.
pub fn alignment_loss(xs: &Tensor<f64>, xw: &Tensor<f64>, cfg: &DccaConfig) -> Result<f64> {
    Ok(-dcca_correlation(xs, xw, cfg)?)
}

/// Alignment loss on the tape. Gradients are produced for whichever inputs
/// require them; during weak-model training `xs` is a constant.
pub fn alignment_loss_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    xs: Var,
    xw: Var,
    cfg: &DccaConfig,
) -> Result<Var> {
    let a = tape.value(xs).cast::<f64>();
    let b = tape.value(xw).cast::<f64>();
    let out = dcca_with_grad(&a, &b, cfg, tape.needs_grad(xs), tape.needs_grad(xw))?;
    let neg = |g: Vec<f64>| g.into_iter().map(|v| T::from_f64(-v)).collect::<Vec<T>>();
    let mut inputs = Vec::new();
    if let Some(g) = out.grad_s {
        inputs.push((xs, neg(g)));
    }
    if let Some(g) = out.grad_w {
        inputs.push((xw, neg(g)));
    }
    tape.scalar_with_grads(T::from_f64(-out.correlation), inputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor<f64> {
        Tensor::new(
            &[n, d],
            (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn unregularised() -> DccaConfig {
        DccaConfig {
            r1: 0.0,
            r2: 0.0,
            eigen_floor: 1e-12,
        }
    }

    #[test]
    fn self_correlation_equals_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, 50, 4);
        let c = dcca_correlation(&x, &x, &unregularised()).unwrap();
        assert!((c - 4.0).abs() < 1e-8, "{c}");
        assert!((alignment_loss(&x, &x, &unregularised()).unwrap() + 4.0).abs() < 1e-8);
    }

    #[test]
    fn perfect_linear_relation_in_one_dimension() {
        let a = Tensor::new(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let b = Tensor::new(&[3, 1], vec![2.0, 4.0, 6.0]).unwrap();
        assert!((dcca_correlation(&a, &b, &unregularised()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_samples() {
        let a = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            dcca_correlation(&a, &a, &DccaConfig::default()),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn non_finite_input_names_matrix() {
        let mut a = Tensor::<f64>::zeros(&[4, 2]);
        a.data_mut()[0] = f64::INFINITY;
        let err =
            dcca_correlation(&a, &Tensor::zeros(&[4, 2]), &DccaConfig::default()).unwrap_err();
        assert!(err.to_string().contains("sigma"), "{err}");
    }

    #[test]
    fn bounded_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let a = random(&mut rng, 40, 3);
            let b = random(&mut rng, 40, 3);
            let c = dcca_correlation(&a, &b, &unregularised()).unwrap();
            assert!((0.0..=3.0 + 1e-9).contains(&c));
            let cfg = DccaConfig {
                r1: 0.01,
                r2: 0.2,
                eigen_floor: 1e-12,
            };
            let swapped = DccaConfig {
                r1: 0.2,
                r2: 0.01,
                eigen_floor: 1e-12,
            };
            let ab = dcca_correlation(&a, &b, &cfg).unwrap();
            let ba = dcca_correlation(&b, &a, &swapped).unwrap();
            assert!((ab - ba).abs() < 1e-10);
        }
    }

    #[test]
    fn invariant_to_shared_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random(&mut rng, 60, 3);
        let b = random(&mut rng, 60, 3);
        // Rotation about the z axis followed by one about x.
        let (c1, s1) = (0.7f64.cos(), 0.7f64.sin());
        let (c2, s2) = (1.9f64.cos(), 1.9f64.sin());
        let rz = Tensor::from_rows(&[vec![c1, -s1, 0.0], vec![s1, c1, 0.0], vec![0.0, 0.0, 1.0]])
            .unwrap();
        let rx = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, c2, -s2], vec![0.0, s2, c2]])
            .unwrap();
        let r = crate::numerics::ops::matmul(&rz, &rx).unwrap();
        let b_rot = crate::numerics::ops::matmul(&b, &r).unwrap();
        let cfg = DccaConfig::default();
        let c = dcca_correlation(&a, &b, &cfg).unwrap();
        let c_rot = dcca_correlation(&a, &b_rot, &cfg).unwrap();
        assert!((c - c_rot).abs() < 1e-6);
    }
}
