//! Invariant suites behind `cmstew verify`.
//!
//! The fast level covers gradient checks, metric and DCCA oracles,
//! preprocessing counts and model shapes; the full level adds the synthetic
//! transfer experiment.

use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{shift_labels, window_clips};
use crate::experiment::{TransferExperiment, TransferSummary};
use crate::layers::{BiGruStack, DenseLayer, Layout, TransformerConfig, TransformerEncoderLayer};
use crate::models::{ClassifierConfig, DecoderConfig, EncoderConfig, ModelConfig, Network, Task};
use crate::numerics::{
    finite_difference_check, Activation, GradCheckReport, Mode, ParamStore, Tape, Tensor, Var,
};
use crate::objectives::{
    alignment_loss_on_tape, bce_on_tape, binary_accuracy, ccc, dcca_correlation, mae_on_tape,
    total_on_tape, weighted_f1, DccaConfig, LossWeights,
};
use crate::training::{AdamState, MetricsSink};
use crate::Result;

pub const GRAD_TOL: f64 = 1e-4;
const GRAD_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Fast,
    Full,
}

impl Level {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(Level::Fast),
            "full" => Ok(Level::Full),
            other => Err(crate::Error::Config(format!(
                "unknown verify level {other}; use fast or full"
            ))),
        }
    }
}

/// Reference values the suites compare against. Overridable so that a
/// tampered value demonstrably fails its check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Oracles {
    pub ccc_example: f64,
    pub weighted_f1_example: f64,
    pub shift_indices: usize,
    pub window_count: usize,
    pub adam_steps: [f64; 3],
}

impl Default for Oracles {
    fn default() -> Self {
        Oracles {
            ccc_example: 0.8,
            weighted_f1_example: 11.0 / 15.0,
            shift_indices: 70,
            window_count: 298,
            adam_steps: [
                0.900_000_000_5,
                0.800_412_228_691_792_8,
                0.701_586_272_946_030_3,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
    pub transfer: Option<TransferSummary>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect()
    }

    pub fn render(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut s = String::new();
        for c in &self.checks {
            s += &format!(
                "{} {:<width$}  {}  ({:.1}s)\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail,
                c.seconds
            );
        }
        if let Some(t) = &self.transfer {
            s += "\n";
            s += &t.table();
        }
        s
    }

    fn run(&mut self, name: &str, f: impl FnOnce() -> Result<(bool, String)>) {
        let start = Instant::now();
        let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            detail,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
}

fn gaussian(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| StandardNormal.sample(rng)).collect()).expect("shape matches")
}

/// Weighted sum with fixed random coefficients, so that no gradient is
/// trivially symmetric.
fn probe(tape: &mut Tape<f64>, y: Var, rng_seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let n = tape.value(y).len();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let m = tape.mul_const(y, w)?;
    Ok(tape.sum(m))
}

fn check(
    store: &ParamStore<f64>,
    f: impl FnMut(&mut Tape<f64>, &crate::numerics::Bound) -> Result<Var>,
) -> Result<GradCheckReport> {
    finite_difference_check(f, store, GRAD_EPS, GRAD_TOL, 400, 7)
}

/// Finite-difference checks of every layer primitive, the alignment loss and
/// the full weak-model objective, all at `f64`.
pub fn gradient_checks() -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut out = Vec::new();

    let mut store = ParamStore::new();
    let dense = DenseLayer::new(&mut store, "dense", 3, 4, Activation::Tanh, &mut rng)?;
    let x = gaussian(&mut rng, &[5, 3]);
    out.push((
        "dense",
        check(&store, |tape, b| {
            let xv = tape.constant(x.clone());
            let y = dense.forward(tape, b, xv)?;
            probe(tape, y, 1)
        })?,
    ));

    for (name, act) in [("sigmoid", Activation::Sigmoid), ("relu", Activation::Relu)] {
        let mut store = ParamStore::new();
        let layer = DenseLayer::new(&mut store, name, 3, 2, act, &mut rng)?;
        let x = gaussian(&mut rng, &[6, 3]);
        let report = check(&store, |tape, b| {
            let xv = tape.constant(x.clone());
            let y = layer.forward(tape, b, xv)?;
            probe(tape, y, 2)
        })?;
        out.push((
            if name == "relu" {
                "dense_relu"
            } else {
                "dense_sigmoid"
            },
            report,
        ));
    }

    let mut store = ParamStore::new();
    let gru = BiGruStack::new(&mut store, "gru", 3, 3, 2, 0.0, &mut rng)?;
    let layout = Layout::new(2, 4)?;
    let x = gaussian(&mut rng, &[8, 3]);
    out.push((
        "bigru",
        check(&store, |tape, b| {
            let xv = tape.constant(x.clone());
            let y = gru.forward(tape, b, xv, layout, &mut Mode::Eval)?;
            probe(tape, y, 3)
        })?,
    ));

    let cfg = TransformerConfig {
        d_model: 4,
        heads: 2,
        ffn_hidden: 6,
        dropout_rate: 0.0,
    };
    let mut store = ParamStore::new();
    let layer = TransformerEncoderLayer::new(&mut store, "tf", cfg, &mut rng)?;
    let layout = Layout::new(2, 3)?;
    let x = gaussian(&mut rng, &[6, 4]);
    out.push((
        "attention",
        check(&store, |tape, b| {
            let xv = tape.constant(x.clone());
            let y = layer.mha_forward(tape, b, xv, layout, &mut Mode::Eval)?;
            probe(tape, y, 4)
        })?,
    ));
    // Non-trivial norm parameters so their gradients are exercised.
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if store.get(id).name.contains("norm") {
            for v in store.get_mut(id).tensor.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    }
    out.push((
        "transformer_layer",
        check(&store, |tape, b| {
            let xv = tape.constant(x.clone());
            let y = layer.forward(tape, b, xv, layout, &mut Mode::Eval)?;
            probe(tape, y, 5)
        })?,
    ));

    // Alignment loss with respect to both latent sequences.
    let mut store = ParamStore::new();
    let xs = store.add("xs", gaussian(&mut rng, &[30, 4]))?;
    let mixed = {
        let a = store.tensor(xs).clone();
        let noise = gaussian(&mut rng, &[30, 4]);
        let data = a
            .data()
            .iter()
            .zip(noise.data())
            .map(|(p, q)| 0.6 * p + q)
            .collect();
        Tensor::new(&[30, 4], data)?
    };
    let xw = store.add("xw", mixed)?;
    let dcca = DccaConfig::default();
    out.push((
        "alignment_loss",
        check(&store, |tape, b| {
            alignment_loss_on_tape(tape, b.var(xs), b.var(xw), &dcca)
        })?,
    ));

    out.push(("weak_total_loss", weak_total_check(&mut rng)?));
    Ok(out)
}

/// Full `L_p + α·L_a + β·L_t` of a small weak model on a 2-clip batch.
fn weak_total_check(rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let config = ModelConfig {
        task: Task::Classification,
        encoder: EncoderConfig {
            input_dim: 3,
            gru_layers: 2,
            gru_hidden: Some(3),
            latent_dim: 4,
            transformer_layers: 1,
            heads: 2,
            ffn_dims: [6, 4],
            dropout_rate: 0.0,
        },
        classifier: ClassifierConfig {
            hidden: 5,
            dropout_rate: 0.0,
        },
        decoder: Some(DecoderConfig {
            gru_layers: 1,
            hidden: 3,
            output_dim: 2,
        }),
    };
    let net = Network::<f64>::new(config, 9)?;
    let layout = Layout::new(2, 6)?;
    let x = gaussian(rng, &[12, 3]);
    let aligned = gaussian(rng, &[12, 4]);
    let target = gaussian(rng, &[12, 2]);
    let labels: Vec<f64> = (0..12).map(|i| f64::from(u8::from(i % 3 == 0))).collect();
    let dcca = DccaConfig::default();
    let w = LossWeights {
        alpha: 1.0,
        beta: 1.0,
    };
    check(&net.store, |tape, b| {
        let xv = tape.constant(x.clone());
        let out = net.forward(tape, b, xv, layout, &mut Mode::Eval, true)?;
        let lp = bce_on_tape(tape, out.prediction, &labels)?;
        let xs = tape.constant(aligned.clone());
        let la = alignment_loss_on_tape(tape, xs, out.latent, &dcca)?;
        let lt = mae_on_tape(tape, out.translation.expect("decoder present"), &target)?;
        total_on_tape(tape, lp, Some(la), Some(lt), w)
    })
}

/// Total canonical correlation from the generalised eigenproblem
/// `Σsw Σw⁻¹ Σws a = ρ² Σs a`, reduced through the Cholesky factor of `Σs`.
pub fn classical_cca(xs: &Tensor<f64>, xw: &Tensor<f64>, r1: f64, r2: f64) -> Option<f64> {
    let (n, d) = (xs.rows(), xs.cols());
    let centre = |x: &Tensor<f64>| {
        let mut m = DMatrix::from_row_slice(n, d, x.data());
        for mut c in m.column_iter_mut() {
            let mu = c.mean();
            c.add_scalar_mut(-mu);
        }
        m
    };
    let (a, b) = (centre(xs), centre(xw));
    let s = 1.0 / (n as f64 - 1.0);
    let eye = DMatrix::<f64>::identity(d, d);
    let s_ss = a.transpose() * &a * s + &eye * r1;
    let s_ww = b.transpose() * &b * s + &eye * r2;
    let s_sw = a.transpose() * &b * s;
    let l = s_ss.cholesky()?.l();
    let ww_inv = s_ww.cholesky()?.inverse();
    let l_inv = l.try_inverse()?;
    let m = &l_inv * &s_sw * ww_inv * s_sw.transpose() * l_inv.transpose();
    let sym = (&m + m.transpose()) * 0.5;
    Some(
        SymmetricEigen::new(sym)
            .eigenvalues
            .iter()
            .map(|&e| e.max(0.0).sqrt())
            .sum(),
    )
}

fn direct_ccc(y: &[f64], p: &[f64]) -> f64 {
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mp = p.iter().sum::<f64>() / n;
    let vy = y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
    let vp = p.iter().map(|v| (v - mp).powi(2)).sum::<f64>() / n;
    let cov = y
        .iter()
        .zip(p)
        .map(|(a, b)| (a - my) * (b - mp))
        .sum::<f64>()
        / n;
    2.0 * cov / (vy + vp + (my - mp).powi(2))
}

fn direct_weighted_f1(y: &[f64], p: &[f64]) -> f64 {
    let count = |a: f64, b: f64| {
        y.iter()
            .zip(p)
            .filter(|(u, v)| **u == a && **v == b)
            .count() as f64
    };
    let (tp, fp, fn_, tn) = (
        count(1.0, 1.0),
        count(0.0, 1.0),
        count(1.0, 0.0),
        count(0.0, 0.0),
    );
    let f1 = |tp: f64, fp: f64, fn_: f64| {
        if tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fn_)
        }
    };
    let (np, nn) = (tp + fn_, tn + fp);
    (np * f1(tp, fp, fn_) + nn * f1(tn, fn_, fp)) / (np + nn)
}

fn metric_oracles(oracles: &Oracles, report: &mut VerifyReport) {
    report.run("ccc_example", || {
        let v = ccc(&[1.0, 2.0, 3.0, 4.0], &[2.0, 2.0, 4.0, 4.0])?;
        Ok((
            (v - oracles.ccc_example).abs() < 1e-12,
            format!("{v} vs {}", oracles.ccc_example),
        ))
    });
    report.run("weighted_f1_example", || {
        let v = weighted_f1(&[1.0, 1.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0])?;
        Ok((
            (v - oracles.weighted_f1_example).abs() < 1e-12,
            format!("{v} vs {}", oracles.weighted_f1_example),
        ))
    });
    report.run("metric_random", || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let n = rng.random_range(5..60);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p: Vec<f64> = y
                .iter()
                .map(|v| 0.5 * v + rng.random_range(-0.5..0.5))
                .collect();
            worst = worst.max((ccc(&y, &p)? - direct_ccc(&y, &p)).abs());
            let yb: Vec<f64> = (0..n)
                .map(|i| f64::from(u8::from(i % 2 == 0 || rng.random_bool(0.3))))
                .collect();
            let pr: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let pb: Vec<f64> = pr
                .iter()
                .map(|&v| if v >= 0.5 { 1.0 } else { 0.0 })
                .collect();
            worst = worst.max((weighted_f1(&yb, &pb)? - direct_weighted_f1(&yb, &pb)).abs());
            let acc = yb.iter().zip(&pb).filter(|(a, b)| a == b).count() as f64 / n as f64;
            worst = worst.max((binary_accuracy(&yb, &pr, 0.5)? - acc).abs());
        }
        Ok((
            worst < 1e-9,
            format!("max deviation {worst:.2e} over 100 instances"),
        ))
    });
}

fn dcca_oracle(report: &mut VerifyReport) {
    report.run("dcca_oracle", || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = 1e-4;
        let cfg = DccaConfig {
            r1: r,
            r2: r,
            ..DccaConfig::default()
        };
        let mut worst: f64 = 0.0;
        for i in 0..21 {
            let d = [2, 3, 5][i % 3];
            let xs = gaussian(&mut rng, &[200, d]);
            let noise = gaussian(&mut rng, &[200, d]);
            let scale = rng.random_range(0.1..2.0);
            let data = xs
                .data()
                .iter()
                .zip(noise.data())
                .map(|(a, b)| scale * a + b)
                .collect();
            let xw = Tensor::new(&[200, d], data)?;
            let lib = dcca_correlation(&xs, &xw, &cfg)?;
            let oracle = classical_cca(&xs, &xw, r, r)
                .ok_or_else(|| crate::Error::numerical("oracle", "Cholesky failed"))?;
            worst = worst.max((lib - oracle).abs());
        }
        Ok((
            worst < 1e-6,
            format!("max |Δ| {worst:.2e} over 21 instances"),
        ))
    });
}

fn preprocessing(oracles: &Oracles, report: &mut VerifyReport) {
    report.run("label_shift", || {
        let labels: Vec<f32> = (0..200).map(|i| i as f32).collect();
        let shifted = shift_labels(&labels, 2.8, 0.04)?;
        let k = shifted[0] as usize;
        Ok((
            k == oracles.shift_indices,
            format!("{k} indices vs {}", oracles.shift_indices),
        ))
    });
    report.run("window_count", || {
        let features = [("x".to_string(), Tensor::zeros(&[7500, 2]))].into();
        let labels = vec![0.0f32; 7500];
        let clips = window_clips("rec", &features, &labels, 3.0, 1.0, 0.04)?;
        let n = clips.len();
        let steps = clips.first().map_or(0, |c| c.len());
        Ok((
            n == oracles.window_count && steps == 75,
            format!("{n} clips of {steps} vs {} of 75", oracles.window_count),
        ))
    });
}

fn optimizer(oracles: &Oracles, report: &mut VerifyReport) {
    report.run("adam_hand_stepped", || {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::scalar(1.0))?;
        let mut adam = AdamState::new(&store, 0.1);
        let mut worst: f64 = 0.0;
        for expected in oracles.adam_steps {
            let g = 2.0 * store.tensor(id).data()[0];
            adam.step(&mut store, &[Some(vec![g])])?;
            worst = worst.max((store.tensor(id).data()[0] - expected).abs());
        }
        Ok((worst < 1e-8, format!("max |Δ| {worst:.2e}")))
    });
}

fn shapes(report: &mut VerifyReport) {
    report.run("model_shapes", || {
        let config = ModelConfig {
            task: Task::Classification,
            encoder: EncoderConfig::new(88),
            classifier: ClassifierConfig::default(),
            decoder: Some(DecoderConfig {
                gru_layers: 2,
                hidden: 16,
                output_dim: 300,
            }),
        };
        let net = Network::<f32>::new(config.clone(), 0)?;
        let counted = net.store.numel();
        let expected = Network::<f32>::expected_num_params(&config);
        let x = Tensor::zeros(&[7, 88]);
        let latent = net.encode(&x)?;
        let xs_hat = net.decode(&latent)?;
        let preds = net.predict(&x)?;
        let ok = counted == expected
            && latent.shape() == [7, 100]
            && xs_hat.shape() == [7, 300]
            && preds.len() == 7
            && preds.iter().all(|p| (0.0..=1.0).contains(p));
        Ok((
            ok,
            format!(
                "{counted} parameters; latent {:?}, translation {:?}",
                latent.shape(),
                xs_hat.shape()
            ),
        ))
    });
}

/// Criterion-style checks of a finished transfer experiment.
pub fn transfer_checks(summary: &TransferSummary, report: &mut VerifyReport) {
    let gap = summary.mean_strong() - summary.mean_weak();
    report.run("transfer_ranking_gap", || {
        Ok((
            gap >= 0.05,
            format!("strong − weak = {:.2} points", 100.0 * gap),
        ))
    });
    let gain = summary.mean_transfer() - summary.mean_weak();
    let kept = summary.non_degraded(0.005);
    let seeds = summary.per_seed.len();
    report.run("transfer_gain", || {
        Ok((
            gain > 0.0 && kept + 1 >= seeds,
            format!(
                "transfer − weak = {:+.2} points; non-degraded in {kept}/{seeds} seeds",
                100.0 * gain
            ),
        ))
    });
    report.run("transfer_ablations", || {
        let ok = summary
            .per_seed
            .iter()
            .all(|r| r.no_lfa.is_finite() && r.no_decoder.is_finite());
        Ok((
            ok,
            format!(
                "no_lfa {:.4}, no_decoder {:.4} (mean dev accuracy)",
                summary.mean_no_lfa(),
                summary.mean_no_decoder()
            ),
        ))
    });
}

/// Runs the suites of `level`.
pub fn run_verify(
    level: Level,
    oracles: &Oracles,
    experiment: &TransferExperiment,
    sink: &mut dyn MetricsSink,
) -> VerifyReport {
    let mut report = VerifyReport::default();
    let start = Instant::now();
    match gradient_checks() {
        Ok(reports) => {
            for (name, r) in reports {
                report.checks.push(Check {
                    name: format!("grad_{name}"),
                    passed: r.passed(),
                    detail: format!(
                        "max rel error {:.2e} at {}[{}] over {} coordinates",
                        r.max_rel_error, r.worst_param, r.worst_index, r.checked
                    ),
                    seconds: 0.0,
                });
            }
        }
        Err(e) => report.checks.push(Check {
            name: "grad".into(),
            passed: false,
            detail: format!("error: {e}"),
            seconds: 0.0,
        }),
    }
    if let Some(last) = report.checks.last_mut() {
        last.seconds = start.elapsed().as_secs_f64();
    }
    dcca_oracle(&mut report);
    metric_oracles(oracles, &mut report);
    preprocessing(oracles, &mut report);
    optimizer(oracles, &mut report);
    shapes(&mut report);
    if level == Level::Full {
        let start = Instant::now();
        match experiment.run(sink) {
            Ok(summary) => {
                transfer_checks(&summary, &mut report);
                let secs = summary.seconds;
                report.run("transfer_runtime", || {
                    Ok((
                        secs <= 900.0,
                        format!("{secs:.0}s for the whole experiment"),
                    ))
                });
                report.transfer = Some(summary);
            }
            Err(e) => report.checks.push(Check {
                name: "transfer_experiment".into(),
                passed: false,
                detail: format!("error: {e}"),
                seconds: start.elapsed().as_secs_f64(),
            }),
        }
    }
    report
}
