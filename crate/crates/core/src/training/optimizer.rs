use crate::numerics::{ParamStore, Scalar};
use crate::{Error, Result};

/// Bias-corrected Adam with one moment pair per parameter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>, lr: f64) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, p)| vec![T::zero(); p.tensor.len()])
                .collect()
        };
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. `grads[i]` belongs to the `i`-th parameter of `store`;
    /// `None` entries and frozen parameters are left untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Vec<T>>]) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::dim("adam_step", &[store.len()], &[grads.len()]));
        }
        for ((_, p), g) in store.iter().zip(grads) {
            if let Some(g) = g {
                if g.len() != p.tensor.len() {
                    return Err(Error::dim("adam_step", p.tensor.shape(), &[g.len()]));
                }
                if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                    return Err(Error::numerical(
                        format!("gradient of {}", p.name),
                        format!("non-finite value {bad}"),
                    ));
                }
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let (c1, c2) = (T::one() - b1, T::one() - b2);
        let bc1 = T::from_f64(1.0 - self.beta1.powf(t));
        let bc2 = T::from_f64(1.0 - self.beta2.powf(t));
        let lr = T::from_f64(self.lr);
        let eps = T::from_f64(self.eps);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let p = store.get_mut(id);
            if !p.trainable {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, &gi), mi), vi) in p
                .tensor
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = b1 * *mi + c1 * gi;
                *vi = b2 * *vi + c2 * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn scalar_store(w: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(w)).unwrap();
        s
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut s = scalar_store(0.7);
        let mut opt = AdamState::new(&s, 0.1);
        opt.step(&mut s, &[Some(vec![0.0])]).unwrap();
        assert_eq!(s.tensor(s.find("w").unwrap()).data()[0], 0.7);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [-3.0, 1e-3, 250.0] {
            let mut s = scalar_store(0.0);
            let mut opt = AdamState::new(&s, 0.01);
            opt.step(&mut s, &[Some(vec![g])]).unwrap();
            let w = s.tensor(s.find("w").unwrap()).data()[0];
            assert!((w + 0.01 * g.signum()).abs() < 1e-6, "{g}: {w}");
        }
    }

    #[test]
    fn hand_stepped_quadratic() {
        // Hand simulation of three updates on f(w) = w², w0 = 1, lr = 0.1.
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8f64, 0.1f64);
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut expected = Vec::new();
        for t in 1..=3 {
            let g = 2.0 * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w -= lr * mh / (vh.sqrt() + eps);
            expected.push(w);
        }
        // Frozen reference values of the same recurrence.
        let frozen = [
            0.900_000_000_5,
            0.800_412_228_691_792_8,
            0.701_586_272_946_030_3,
        ];
        for (e, f) in expected.iter().zip(frozen) {
            assert!((e - f).abs() < 1e-8, "{e} vs {f}");
        }

        let mut s = scalar_store(1.0);
        let mut opt = AdamState::new(&s, lr);
        let id = s.find("w").unwrap();
        for e in expected {
            let g = 2.0 * s.tensor(id).data()[0];
            opt.step(&mut s, &[Some(vec![g])]).unwrap();
            assert!((s.tensor(id).data()[0] - e).abs() < 1e-8);
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = scalar_store(1.0);
        let mut opt = AdamState::new(&s, 0.1);
        let err = opt.step(&mut s, &[Some(vec![f64::NAN])]).unwrap_err();
        assert!(err.to_string().contains("w"));
        assert_eq!(s.tensor(s.find("w").unwrap()).data()[0], 1.0);
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn frozen_and_absent_are_untouched() {
        let mut s = ParamStore::<f64>::new();
        let a = s.add("a", Tensor::scalar(1.0)).unwrap();
        let b = s.add("b", Tensor::scalar(1.0)).unwrap();
        s.get_mut(b).trainable = false;
        let mut opt = AdamState::new(&s, 0.1);
        opt.step(&mut s, &[None, Some(vec![1.0])]).unwrap();
        assert_eq!(s.tensor(a).data()[0], 1.0);
        assert_eq!(s.tensor(b).data()[0], 1.0);
    }
}
