//! Forward kernels shared by the tape and by value-only callers.

use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::None => x,
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
        }
    }

    /// Derivative expressed through the activation output `y`.
    /// The relu subgradient at 0 is 0.
    pub fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::None => T::one(),
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Tanh => T::one() - y * y,
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    // Split on sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn require_matrix<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(Error::dim(op, t.shape(), &[]));
    }
    Ok((t.rows(), t.cols()))
}

/// `a · b`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = require_matrix("matmul", a)?;
    let (k2, n) = require_matrix("matmul", b)?;
    if k != k2 {
        return Err(Error::dim("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![T::zero(); m * n];
    T::gemm(
        m,
        k,
        n,
        a.data(),
        k as isize,
        1,
        b.data(),
        n as isize,
        1,
        &mut out,
        false,
    );
    Tensor::new(&[m, n], out)
}

/// `a · bᵀ`.
pub fn matmul_nt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = require_matrix("matmul_nt", a)?;
    let (n, k2) = require_matrix("matmul_nt", b)?;
    if k != k2 {
        return Err(Error::dim("matmul_nt", a.shape(), b.shape()));
    }
    let mut out = vec![T::zero(); m * n];
    T::gemm(
        m,
        k,
        n,
        a.data(),
        k as isize,
        1,
        b.data(),
        1,
        k as isize,
        &mut out,
        false,
    );
    Tensor::new(&[m, n], out)
}

pub fn activation<T: Scalar>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    x.map(|v| kind.apply(v))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(m: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = require_matrix("softmax_rows", m)?;
    if c == 0 {
        return Err(Error::dim("softmax_rows", m.shape(), &[r, 1]));
    }
    let mut out = m.data().to_vec();
    for row in out.chunks_mut(c) {
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    Tensor::new(&[r, c], out)
}

/// Per-row normalisation statistics kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    pub normalized: Vec<T>,
    pub inv_std: Vec<T>,
}

pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    layer_norm_with_cache(x, gamma, beta, eps).map(|(t, _)| t)
}

pub fn layer_norm_with_cache<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let (r, c) = require_matrix("layer_norm", x)?;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::dim("layer_norm", x.shape(), gamma.shape()));
    }
    if eps <= T::zero() {
        return Err(Error::Config("layer_norm eps must be positive".into()));
    }
    let n = T::from_f64(c as f64);
    let mut out = vec![T::zero(); r * c];
    let mut normalized = vec![T::zero(); r * c];
    let mut inv_std = vec![T::zero(); r];
    for i in 0..r {
        let row = x.row(i);
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let is = T::one() / (var + eps).sqrt();
        inv_std[i] = is;
        for j in 0..c {
            let xh = (row[j] - mean) * is;
            normalized[i * c + j] = xh;
            out[i * c + j] = xh * gamma.data()[j] + beta.data()[j];
        }
    }
    Ok((
        Tensor::new(&[r, c], out)?,
        LayerNormCache {
            normalized,
            inv_std,
        },
    ))
}

/// Sinusoidal position table: `PE[t,2i] = sin(t/10000^{2i/d})`, `PE[t,2i+1] = cos(..)`.
pub fn sinusoidal_positions<T: Scalar>(steps: usize, d: usize) -> Result<Tensor<T>> {
    if !d.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "positional encoding width must be even, got {d}"
        )));
    }
    let mut out = vec![T::zero(); steps * d];
    for t in 0..steps {
        for i in 0..d / 2 {
            let angle = t as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            out[t * d + 2 * i] = T::from_f64(angle.sin());
            out[t * d + 2 * i + 1] = T::from_f64(angle.cos());
        }
    }
    Tensor::new(&[steps, d], out)
}
