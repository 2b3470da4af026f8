use rand::Rng;

use super::{DenseLayer, Layout};
use crate::numerics::{Activation, Bound, Mode, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub dropout_rate: f64,
}

/// Post-norm transformer encoder layer with bias-free attention projections.
#[derive(Debug, Clone)]
pub struct TransformerEncoderLayer {
    pub config: TransformerConfig,
    pub w_q: Vec<ParamId>,
    pub w_k: Vec<ParamId>,
    pub w_v: Vec<ParamId>,
    pub w_o: ParamId,
    pub ffn1: DenseLayer,
    pub ffn2: DenseLayer,
    pub norm1: (ParamId, ParamId),
    pub norm2: (ParamId, ParamId),
}

impl TransformerEncoderLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        config: TransformerConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let TransformerConfig {
            d_model: d, heads, ..
        } = config;
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "{heads} heads do not divide model width {d}"
            )));
        }
        if !(0.0..1.0).contains(&config.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                config.dropout_rate
            )));
        }
        let dk = d / heads;
        let bound = super::init_bound(d);
        let mut proj = |kind: &str, store: &mut ParamStore<T>| -> Result<Vec<ParamId>> {
            (0..heads)
                .map(|i| {
                    store.add_uniform(
                        format!("{name}.attn.{kind}.{i}"),
                        &[d, dk],
                        bound,
                        &mut *rng,
                    )
                })
                .collect()
        };
        let w_q = proj("q", store)?;
        let w_k = proj("k", store)?;
        let w_v = proj("v", store)?;
        let w_o = store.add_uniform(format!("{name}.attn.o"), &[d, d], bound, rng)?;
        let ffn1 = DenseLayer::new(
            store,
            &format!("{name}.ffn1"),
            d,
            config.ffn_hidden,
            Activation::Relu,
            rng,
        )?;
        let ffn2 = DenseLayer::new(
            store,
            &format!("{name}.ffn2"),
            config.ffn_hidden,
            d,
            Activation::None,
            rng,
        )?;
        let mut norm = |i: usize| -> Result<(ParamId, ParamId)> {
            Ok((
                store.add(
                    format!("{name}.norm{i}.gamma"),
                    Tensor::full(&[d], T::one()),
                )?,
                store.add(format!("{name}.norm{i}.beta"), Tensor::zeros(&[d]))?,
            ))
        };
        let norm1 = norm(1)?;
        let norm2 = norm(2)?;
        Ok(TransformerEncoderLayer {
            config,
            w_q,
            w_k,
            w_v,
            w_o,
            ffn1,
            ffn2,
            norm1,
            norm2,
        })
    }

    pub fn num_params(d: usize, ffn_hidden: usize) -> usize {
        3 * d * d
            + d * d
            + DenseLayer::num_params(d, ffn_hidden)
            + DenseLayer::num_params(ffn_hidden, d)
            + 4 * d
    }

    fn check_input<T: Scalar>(&self, tape: &Tape<T>, x: Var, layout: Layout) -> Result<()> {
        let shape = tape.shape(x);
        if shape.len() != 2 || shape[0] != layout.rows() || shape[1] != self.config.d_model {
            return Err(Error::dim(
                "mha_forward",
                shape,
                &[layout.rows(), self.config.d_model],
            ));
        }
        Ok(())
    }

    /// Multi-head scaled dot-product self-attention within each clip.
    pub fn mha_forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        x: Var,
        layout: Layout,
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        self.check_input(tape, x, layout)?;
        let heads = self.config.heads;
        let dk = self.config.d_model / heads;
        let cat = |tape: &mut Tape<T>, ids: &[ParamId]| {
            let vars: Vec<Var> = ids.iter().map(|&id| bound.var(id)).collect();
            tape.concat_cols(&vars)
        };
        let wq = cat(tape, &self.w_q)?;
        let wk = cat(tape, &self.w_k)?;
        let wv = cat(tape, &self.w_v)?;
        let q = tape.matmul(x, wq)?;
        let k = tape.matmul(x, wk)?;
        let v = tape.matmul(x, wv)?;
        let scale = T::from_f64(1.0 / (dk as f64).sqrt());

        let n = layout.steps;
        let mut clips = Vec::with_capacity(layout.clips);
        for b in 0..layout.clips {
            let qb = tape.slice_rows(q, b * n, n)?;
            let kb = tape.slice_rows(k, b * n, n)?;
            let vb = tape.slice_rows(v, b * n, n)?;
            let mut head_out = Vec::with_capacity(heads);
            for h in 0..heads {
                let qh = tape.slice_cols(qb, h * dk, dk)?;
                let kh = tape.slice_cols(kb, h * dk, dk)?;
                let vh = tape.slice_cols(vb, h * dk, dk)?;
                let scores = tape.matmul_nt(qh, kh)?;
                let scores = tape.scale(scores, scale);
                let weights = tape.softmax_rows(scores)?;
                let weights = tape.dropout(weights, self.config.dropout_rate, mode)?;
                head_out.push(tape.matmul(weights, vh)?);
            }
            clips.push(tape.concat_cols(&head_out)?);
        }
        let merged = tape.concat_rows(&clips)?;
        tape.matmul(merged, bound.var(self.w_o))
    }

    /// `y = LN(x + drop(MHA(x)))`, `out = LN(y + drop(FFN(y)))`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        x: Var,
        layout: Layout,
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let rate = self.config.dropout_rate;
        let eps = T::from_f64(LAYER_NORM_EPS);
        let attn = self.mha_forward(tape, bound, x, layout, mode)?;
        let attn = tape.dropout(attn, rate, mode)?;
        let res = tape.add(x, attn)?;
        let y = tape.layer_norm(res, bound.var(self.norm1.0), bound.var(self.norm1.1), eps)?;

        let hidden = self.ffn1.forward(tape, bound, y)?;
        let hidden = tape.dropout(hidden, rate, mode)?;
        let ff = self.ffn2.forward(tape, bound, hidden)?;
        let ff = tape.dropout(ff, rate, mode)?;
        let res = tape.add(y, ff)?;
        tape.layer_norm(res, bound.var(self.norm2.0), bound.var(self.norm2.1), eps)
    }
}
