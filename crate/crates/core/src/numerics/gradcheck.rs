//! Central-difference verification of tape gradients.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Bound, ParamStore, Tape, Var};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(1, |numeric|)` over checked coordinates.
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tol
    }
}

/// Compares tape gradients of `loss_fn` against central differences.
///
/// `loss_fn` must be deterministic: it is re-run twice per checked
/// coordinate. When the store holds more than `max_coords` trainable scalars,
/// every parameter contributes at least one coordinate and the remainder is
/// drawn uniformly with `seed`.
pub fn finite_difference_check<F>(
    mut loss_fn: F,
    params: &ParamStore<f64>,
    eps: f64,
    tol: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<f64>, &Bound) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(Error::Config(format!(
            "finite-difference eps {eps} outside [1e-6, 1e-4]"
        )));
    }
    let mut eval = |store: &ParamStore<f64>| -> Result<(f64, Tape<f64>, Bound, Var)> {
        let mut tape = Tape::new();
        let bound = tape.bind(store);
        let loss = loss_fn(&mut tape, &bound)?;
        let v = tape.scalar(loss);
        Ok((v, tape, bound, loss))
    };

    let (base, tape, bound, loss) = eval(params)?;
    if !base.is_finite() {
        return Err(Error::numerical(
            "finite_difference_check",
            "loss is not finite at the base point",
        ));
    }
    let analytic = tape.backward(loss)?.for_params(&bound);
    drop(tape);

    let coords = sample_coordinates(params, max_coords, seed);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
        tol,
    };
    for (id, i) in coords {
        let name = params.get(id).name.clone();
        let orig = params.tensor(id).data()[i];
        work.get_mut(id).tensor.data_mut()[i] = orig + eps;
        let (plus, ..) = eval(&work)?;
        work.get_mut(id).tensor.data_mut()[i] = orig - eps;
        let (minus, ..) = eval(&work)?;
        work.get_mut(id).tensor.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::numerical(
                name,
                format!("non-finite loss when perturbing index {i}"),
            ));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let exact = analytic[id.index()].as_ref().map_or(0.0, |g| g[i]);
        let rel = (exact - numeric).abs() / numeric.abs().max(1.0);
        report.checked += 1;
        if report.worst_param.is_empty() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_param = name;
            report.worst_index = i;
        }
    }
    Ok(report)
}

fn sample_coordinates(
    params: &ParamStore<f64>,
    max_coords: usize,
    seed: u64,
) -> Vec<(super::ParamId, usize)> {
    let all: Vec<(super::ParamId, usize)> = params
        .iter()
        .filter(|(_, p)| p.trainable)
        .flat_map(|(id, p)| (0..p.tensor.len()).map(move |i| (id, i)))
        .collect();
    if all.len() <= max_coords {
        return all;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<(super::ParamId, usize)> = Vec::new();
    for (id, p) in params.iter().filter(|(_, p)| p.trainable) {
        if !p.tensor.is_empty() {
            let i = index::sample(&mut rng, p.tensor.len(), 1).index(0);
            picked.push((id, i));
        }
    }
    let extra = max_coords.saturating_sub(picked.len());
    for k in index::sample(&mut rng, all.len(), extra.min(all.len())) {
        if !picked.contains(&all[k]) {
            picked.push(all[k]);
        }
    }
    picked
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn linear_sum_has_unit_gradient() {
        let mut store = ParamStore::<f64>::new();
        let w = store
            .add("w", Tensor::new(&[3], vec![0.3, -1.0, 2.0]).unwrap())
            .unwrap();
        let report = finite_difference_check(
            |tape, bound| Ok(tape.sum(bound.var(w))),
            &store,
            1e-5,
            1e-8,
            100,
            0,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.checked, 3);
    }

    #[test]
    fn quadratic_gradient() {
        let mut store = ParamStore::<f64>::new();
        let w = store
            .add("w", Tensor::new(&[2], vec![1.0, 2.0]).unwrap())
            .unwrap();
        let mut tape = Tape::new();
        let bound = tape.bind(&store);
        let sq = tape.mul(bound.var(w), bound.var(w)).unwrap();
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap().for_params(&bound);
        let g = g[0].as_ref().unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
        let report = finite_difference_check(
            |tape, bound| {
                let sq = tape.mul(bound.var(w), bound.var(w))?;
                Ok(tape.sum(sq))
            },
            &store,
            1e-5,
            1e-8,
            10,
            0,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn non_finite_loss_names_parameter() {
        let mut store = ParamStore::<f64>::new();
        let w = store
            .add("weights", Tensor::new(&[1], vec![0.0]).unwrap())
            .unwrap();
        let err = finite_difference_check(
            |tape, bound| {
                let l = tape.ln(bound.var(w));
                Ok(tape.sum(l))
            },
            &store,
            1e-5,
            1e-4,
            10,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numerical { .. }));

        let mut store = ParamStore::<f64>::new();
        let w = store
            .add("weights", Tensor::new(&[1], vec![1e-5]).unwrap())
            .unwrap();
        let err = finite_difference_check(
            |tape, bound| {
                let l = tape.ln(bound.var(w));
                Ok(tape.sum(l))
            },
            &store,
            1e-5,
            1e-4,
            10,
            0,
        )
        .unwrap_err();
        assert!(err.to_string().contains("weights"), "{err}");
    }
}
