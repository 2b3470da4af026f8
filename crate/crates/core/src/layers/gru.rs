use rand::Rng;

use super::Layout;
use crate::numerics::{Activation, Bound, Mode, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

/// Parameters of one GRU direction.
///
/// Gate convention (reset applied inside the candidate):
///
/// ```text
/// z = σ(W_z x + U_z h + b_z)
/// r = σ(W_r x + U_r h + b_r)
/// n = tanh(W_n x + r ⊙ (U_n h + b_un) + b_n)
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone)]
pub struct GruDirection {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_n: ParamId,
    pub u_n: ParamId,
    pub b_un: ParamId,
    pub b_n: ParamId,
}

impl GruDirection {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let bw = super::init_bound(d_in);
        let bu = super::init_bound(hidden);
        let mut m = |s: &str, shape: &[usize], bound: f64, store: &mut ParamStore<T>| {
            store.add_uniform(format!("{name}.{s}"), shape, bound, &mut *rng)
        };
        let w_z = m("w_z", &[d_in, hidden], bw, store)?;
        let u_z = m("u_z", &[hidden, hidden], bu, store)?;
        let w_r = m("w_r", &[d_in, hidden], bw, store)?;
        let u_r = m("u_r", &[hidden, hidden], bu, store)?;
        let w_n = m("w_n", &[d_in, hidden], bw, store)?;
        let u_n = m("u_n", &[hidden, hidden], bu, store)?;
        let mut zero = |s: &str| store.add(format!("{name}.{s}"), Tensor::zeros(&[hidden]));
        Ok(GruDirection {
            w_z,
            u_z,
            b_z: zero("b_z")?,
            w_r,
            u_r,
            b_r: zero("b_r")?,
            w_n,
            u_n,
            b_un: zero("b_un")?,
            b_n: zero("b_n")?,
        })
    }

    fn num_params(d_in: usize, hidden: usize) -> usize {
        3 * d_in * hidden + 3 * hidden * hidden + 4 * hidden
    }

    /// Runs the recurrence over a clip-major input and returns the hidden
    /// states as a time-major `[steps·clips × H]` matrix in forward time order.
    fn run<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        x: Var,
        layout: Layout,
        hidden: usize,
        reverse: bool,
    ) -> Result<Var> {
        let p = |id: ParamId| bound.var(id);
        let w = tape.concat_cols(&[p(self.w_z), p(self.w_r), p(self.w_n)])?;
        let u = tape.concat_cols(&[p(self.u_z), p(self.u_r), p(self.u_n)])?;
        let b = tape.concat_rows(&[p(self.b_z), p(self.b_r), p(self.b_n)])?;

        // Input projections for every step at once, then regrouped by time.
        let xw = tape.matmul(x, w)?;
        let xw = tape.add_row(xw, b)?;
        let xw = tape.gather_rows(xw, layout.to_time_major())?;

        let bsz = layout.clips;
        let mut h = tape.constant(Tensor::zeros(&[bsz, hidden]));
        let mut states = vec![h; layout.steps];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..layout.steps).rev())
        } else {
            Box::new(0..layout.steps)
        };
        for t in order {
            let xt = tape.slice_rows(xw, t * bsz, bsz)?;
            let hu = tape.matmul(h, u)?;
            let xz = tape.slice_cols(xt, 0, hidden)?;
            let xr = tape.slice_cols(xt, hidden, hidden)?;
            let xn = tape.slice_cols(xt, 2 * hidden, hidden)?;
            let hz = tape.slice_cols(hu, 0, hidden)?;
            let hr = tape.slice_cols(hu, hidden, hidden)?;
            let hn = tape.slice_cols(hu, 2 * hidden, hidden)?;

            let z = tape.add(xz, hz)?;
            let z = tape.activation(z, Activation::Sigmoid);
            let r = tape.add(xr, hr)?;
            let r = tape.activation(r, Activation::Sigmoid);
            let hn = tape.add_row(hn, p(self.b_un))?;
            let gated = tape.mul(r, hn)?;
            let n = tape.add(xn, gated)?;
            let n = tape.activation(n, Activation::Tanh);
            // (1 − z) ⊙ n + z ⊙ h  =  n + z ⊙ (h − n)
            let diff = tape.sub(h, n)?;
            let zd = tape.mul(z, diff)?;
            h = tape.add(n, zd)?;
            states[t] = h;
        }
        tape.concat_rows(&states)
    }
}

/// Stack of one or two bidirectional GRU layers; output width `2H`.
#[derive(Debug, Clone)]
pub struct BiGruStack {
    pub layers: Vec<(GruDirection, GruDirection)>,
    pub input_dim: usize,
    pub hidden: usize,
    pub dropout_rate: f64,
}

impl BiGruStack {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        input_dim: usize,
        hidden: usize,
        num_layers: usize,
        dropout_rate: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if !(1..=2).contains(&num_layers) {
            return Err(Error::Config(format!(
                "Bi-GRU supports 1 or 2 layers, got {num_layers}"
            )));
        }
        if hidden == 0 || input_dim == 0 {
            return Err(Error::Config("Bi-GRU widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {dropout_rate} outside [0, 1)"
            )));
        }
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let d_in = if l == 0 { input_dim } else { 2 * hidden };
            let fwd = GruDirection::new(store, &format!("{name}.{l}.fwd"), d_in, hidden, rng)?;
            let bwd = GruDirection::new(store, &format!("{name}.{l}.bwd"), d_in, hidden, rng)?;
            layers.push((fwd, bwd));
        }
        Ok(BiGruStack {
            layers,
            input_dim,
            hidden,
            dropout_rate,
        })
    }

    pub fn num_params(input_dim: usize, hidden: usize, num_layers: usize) -> usize {
        (0..num_layers)
            .map(|l| {
                let d_in = if l == 0 { input_dim } else { 2 * hidden };
                2 * GruDirection::num_params(d_in, hidden)
            })
            .sum()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    /// `x` is clip-major `[clips·steps × input_dim]`; returns `[clips·steps × 2H]`
    /// with the forward state in the first `H` columns.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        x: Var,
        layout: Layout,
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let shape = tape.shape(x);
        if shape.len() != 2 || shape[0] == 0 {
            return Err(Error::EmptySequence("bigru_forward"));
        }
        if shape[0] != layout.rows() || shape[1] != self.input_dim {
            return Err(Error::dim(
                "bigru_forward",
                shape,
                &[layout.rows(), self.input_dim],
            ));
        }
        let mut input = x;
        for (l, (fwd, bwd)) in self.layers.iter().enumerate() {
            if l > 0 {
                input = tape.dropout(input, self.dropout_rate, mode)?;
            }
            let f = fwd.run(tape, bound, input, layout, self.hidden, false)?;
            let b = bwd.run(tape, bound, input, layout, self.hidden, true)?;
            let both = tape.concat_cols(&[f, b])?;
            input = tape.gather_rows(both, layout.to_clip_major())?;
        }
        Ok(input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Scalar step-by-step oracle of the gate equations for one direction.
    fn oracle_direction(
        store: &ParamStore<f64>,
        d: &GruDirection,
        xs: &[Vec<f64>],
        hidden: usize,
    ) -> Vec<Vec<f64>> {
        let t = |id| store.tensor(id);
        let affine = |w: ParamId, x: &[f64], j: usize| -> f64 {
            (0..x.len()).map(|k| x[k] * t(w).get(k, j)).sum()
        };
        let mut h = vec![0.0; hidden];
        let mut out = Vec::new();
        for x in xs {
            let mut next = vec![0.0; hidden];
            for j in 0..hidden {
                let z = sigmoid(affine(d.w_z, x, j) + affine(d.u_z, &h, j) + t(d.b_z).data()[j]);
                let r = sigmoid(affine(d.w_r, x, j) + affine(d.u_r, &h, j) + t(d.b_r).data()[j]);
                let n = (affine(d.w_n, x, j)
                    + r * (affine(d.u_n, &h, j) + t(d.b_un).data()[j])
                    + t(d.b_n).data()[j])
                    .tanh();
                next[j] = (1.0 - z) * n + z * h[j];
            }
            h = next;
            out.push(h.clone());
        }
        out
    }

    fn randomise(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
        for id in store.ids().collect::<Vec<_>>() {
            for v in store.get_mut(id).tensor.data_mut() {
                *v = rng.random_range(-0.8..0.8);
            }
        }
    }

    #[test]
    fn zero_parameters_and_input_stay_at_zero() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gru = BiGruStack::new(&mut store, "g", 3, 2, 2, 0.0, &mut rng).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).tensor.data_mut().fill(0.0);
        }
        let mut tape = Tape::new();
        let bound = tape.bind(&store);
        let x = tape.constant(Tensor::zeros(&[4, 3]));
        let y = gru
            .forward(
                &mut tape,
                &bound,
                x,
                Layout::single(4).unwrap(),
                &mut Mode::Eval,
            )
            .unwrap();
        assert_eq!(tape.shape(y), &[4, 4]);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_scalar_recurrence_oracle() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gru = BiGruStack::new(&mut store, "g", 3, 2, 1, 0.0, &mut rng).unwrap();
        randomise(&mut store, &mut rng);
        let xs: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mut tape = Tape::new();
        let bound = tape.bind(&store);
        let x = tape.constant(Tensor::from_rows(&xs).unwrap());
        let y = gru
            .forward(
                &mut tape,
                &bound,
                x,
                Layout::single(2).unwrap(),
                &mut Mode::Eval,
            )
            .unwrap();
        let (fwd, bwd) = &gru.layers[0];
        let f = oracle_direction(&store, fwd, &xs, 2);
        let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
        let mut b = oracle_direction(&store, bwd, &rev, 2);
        b.reverse();
        for t in 0..2 {
            let expected: Vec<f64> = f[t].iter().chain(&b[t]).copied().collect();
            for (got, e) in tape.value(y).row(t).iter().zip(&expected) {
                assert!((got - e).abs() < 1e-6, "t={t}: {got} vs {e}");
            }
        }
    }

    #[test]
    fn batched_clips_match_individual_runs() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gru = BiGruStack::new(&mut store, "g", 2, 3, 2, 0.0, &mut rng).unwrap();
        let x = Tensor::new(
            &[10, 2],
            (0..20).map(|i| ((i * 7) as f64 * 0.1).cos()).collect(),
        )
        .unwrap();
        let mut tape = Tape::new();
        let bound = tape.bind(&store);
        let xv = tape.constant(x.clone());
        let both = gru
            .forward(
                &mut tape,
                &bound,
                xv,
                Layout::new(2, 5).unwrap(),
                &mut Mode::Eval,
            )
            .unwrap();
        for clip in 0..2 {
            let part = Tensor::new(&[5, 2], x.data()[clip * 10..(clip + 1) * 10].to_vec()).unwrap();
            let pv = tape.constant(part);
            let single = gru
                .forward(
                    &mut tape,
                    &bound,
                    pv,
                    Layout::single(5).unwrap(),
                    &mut Mode::Eval,
                )
                .unwrap();
            for t in 0..5 {
                let a = tape.value(both).row(clip * 5 + t).to_vec();
                let b = tape.value(single).row(t).to_vec();
                for (p, q) in a.iter().zip(&b) {
                    assert!((p - q).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn empty_sequence_is_an_error() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gru = BiGruStack::new(&mut store, "g", 2, 2, 1, 0.0, &mut rng).unwrap();
        let mut tape = Tape::new();
        let bound = tape.bind(&store);
        let x = tape.constant(Tensor::zeros(&[0, 2]));
        let layout = Layout { clips: 1, steps: 0 };
        assert!(matches!(
            gru.forward(&mut tape, &bound, x, layout, &mut Mode::Eval),
            Err(Error::EmptySequence(_))
        ));
        assert!(Layout::single(0).is_err());
    }
}
