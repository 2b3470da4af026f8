use rand::Rng;

use crate::numerics::{Activation, Bound, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

/// `activation(X·W + b)`, applied identically to every row.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub activation: Activation,
    pub d_in: usize,
    pub d_out: usize,
}

impl DenseLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = store.add_uniform(
            format!("{name}.w"),
            &[d_in, d_out],
            super::init_bound(d_in),
            rng,
        )?;
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[d_out]))?;
        Ok(DenseLayer {
            w,
            b,
            activation,
            d_in,
            d_out,
        })
    }

    pub fn num_params(d_in: usize, d_out: usize) -> usize {
        d_in * d_out + d_out
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        let shape = tape.shape(x);
        if shape.len() != 2 || shape[1] != self.d_in {
            return Err(Error::dim("dense_forward", shape, &[self.d_in, self.d_out]));
        }
        let xw = tape.matmul(x, bound.var(self.w))?;
        let z = tape.add_row(xw, bound.var(self.b))?;
        Ok(tape.activation(z, self.activation))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ops;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weights_pass_through() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = DenseLayer::new(&mut store, "d", 3, 3, Activation::None, &mut rng).unwrap();
        store.get_mut(layer.w).tensor = Tensor::eye(3);
        let x = Tensor::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.0, 9.0]]).unwrap();
        let mut tape = Tape::new();
        let bound = tape.bind(&store);
        let xv = tape.constant(x.clone());
        let y = layer.forward(&mut tape, &bound, xv).unwrap();
        assert_eq!(tape.value(y).data(), x.data());
    }

    #[test]
    fn zero_input_gives_activated_bias() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = DenseLayer::new(&mut store, "d", 4, 2, Activation::Sigmoid, &mut rng).unwrap();
        store.get_mut(layer.b).tensor = Tensor::new(&[2], vec![0.0, 2.0]).unwrap();
        let mut tape = Tape::new();
        let bound = tape.bind(&store);
        let x = tape.constant(Tensor::zeros(&[3, 4]));
        let y = layer.forward(&mut tape, &bound, x).unwrap();
        for r in 0..3 {
            assert_eq!(tape.value(y).row(r), &[0.5, Activation::Sigmoid.apply(2.0)]);
        }
    }

    #[test]
    fn matches_matmul_plus_bias_oracle() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layer = DenseLayer::new(&mut store, "d", 3, 2, Activation::Tanh, &mut rng).unwrap();
        store.get_mut(layer.b).tensor = Tensor::new(&[2], vec![0.1, -0.3]).unwrap();
        let x = Tensor::new(&[5, 3], (0..15).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let mut tape = Tape::new();
        let bound = tape.bind(&store);
        let xv = tape.constant(x.clone());
        let y = layer.forward(&mut tape, &bound, xv).unwrap();
        let w = store.tensor(layer.w);
        for r in 0..5 {
            for c in 0..2 {
                let mut acc = store.tensor(layer.b).data()[c];
                for k in 0..3 {
                    acc += x.get(r, k) * w.get(k, c);
                }
                assert!((tape.value(y).get(r, c) - acc.tanh()).abs() < 1e-12);
            }
        }
        let _ = ops::matmul(&x, w).unwrap();
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = DenseLayer::new(&mut store, "d", 3, 2, Activation::None, &mut rng).unwrap();
        let mut tape = Tape::new();
        let bound = tape.bind(&store);
        let x = tape.constant(Tensor::zeros(&[2, 4]));
        assert!(matches!(
            layer.forward(&mut tape, &bound, x),
            Err(Error::Dimension { .. })
        ));
    }
}
