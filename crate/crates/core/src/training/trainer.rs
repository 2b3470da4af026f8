use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{AdamState, MetricsLine, MetricsSink, TrainConfig};
use crate::data::{Dataset, LabelLevel, SegmentClip, Split};
use crate::layers::Layout;
use crate::models::{component_rng, ModelConfig, Network, SourceModel, Task, WeakModel};
use crate::numerics::{Mode, ParamStore, Tape, Tensor, Var};
use crate::objectives::{
    alignment_loss, alignment_loss_on_tape, bce_loss, bce_on_tape, binary_accuracy, ccc,
    mae_on_tape, mae_translation_loss, masked_mae_on_tape, masked_mae_translation_loss, mse_loss, mse_on_tape, total_on_tape, weighted_f1,
    LossWeights,
};
use crate::{Error, Result};

pub const STREAM_SHUFFLE: u64 = 10;
pub const STREAM_DROPOUT: u64 = 11;

/// Clips per forward pass during evaluation.
const EVAL_CHUNK: usize = 64;

/// Loss components and headline metrics of one split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub loss_p: f64,
    pub loss_a: Option<f64>,
    pub loss_t: Option<f64>,
    pub loss_total: f64,
    pub acc: Option<f64>,
    pub f1: Option<f64>,
    pub ccc: Option<f64>,
}

impl SplitReport {
    /// Accuracy for classification, CCC for regression.
    pub fn selection_metric(&self, task: Task) -> Option<f64> {
        match task {
            Task::Classification => self.acc,
            Task::Regression => self.ccc,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train: SplitReport,
    pub dev: SplitReport,
    pub seconds: f64,
}

/// Wall-clock time is not part of the comparison.
impl PartialEq for EpochReport {
    fn eq(&self, other: &Self) -> bool {
        self.epoch == other.epoch && self.train == other.train && self.dev == other.dev
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub model: M,
    pub history: Vec<EpochReport>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_metric: f64,
}

/// One clip as seen by the loop: model input, labels and optional targets
/// for the alignment and translation terms.
struct Sample {
    x: Tensor<f32>,
    labels: Vec<f32>,
    aligned: Option<Tensor<f32>>,
    target: Option<Tensor<f32>>,
}

/// Indices grouped by sequence length, groups in order of first appearance.
fn length_groups(lens: &[usize]) -> Vec<(usize, Vec<usize>)> {
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, &n) in lens.iter().enumerate() {
        match groups.iter_mut().find(|g| g.0 == n) {
            Some(g) => g.1.push(i),
            None => groups.push((n, vec![i])),
        }
    }
    groups
}

fn stack<'a>(parts: impl Iterator<Item = &'a Tensor<f32>>) -> Result<Tensor<f32>> {
    let mut rows = 0;
    let mut cols = None;
    let mut data = Vec::new();
    for t in parts {
        if *cols.get_or_insert(t.cols()) != t.cols() {
            return Err(Error::dim("stack", &[rows, cols.unwrap_or(0)], t.shape()));
        }
        rows += t.rows();
        data.extend_from_slice(t.data());
    }
    Tensor::new(&[rows, cols.unwrap_or(0)], data)
}

/// Forward of a set of clips on one tape; outputs are concatenated in the
/// order returned alongside them.
struct BatchForward {
    order: Vec<usize>,
    latent: Var,
    prediction: Var,
    translation: Option<Var>,
}

fn forward_batch(
    net: &Network<f32>,
    tape: &mut Tape<f32>,
    bound: &crate::numerics::Bound,
    samples: &[&Sample],
    mode: &mut Mode<'_>,
    translate: bool,
) -> Result<BatchForward> {
    let lens: Vec<usize> = samples.iter().map(|s| s.x.rows()).collect();
    let mut order = Vec::with_capacity(samples.len());
    let (mut latents, mut preds, mut trans) = (Vec::new(), Vec::new(), Vec::new());
    for (steps, idx) in length_groups(&lens) {
        let x = stack(idx.iter().map(|&i| &samples[i].x))?;
        let xv = tape.constant(x);
        let out = net.forward(
            tape,
            bound,
            xv,
            Layout::new(idx.len(), steps)?,
            mode,
            translate,
        )?;
        latents.push(out.latent);
        preds.push(out.prediction);
        if let Some(t) = out.translation {
            trans.push(t);
        }
        order.extend(idx);
    }
    let cat = |tape: &mut Tape<f32>, v: Vec<Var>| {
        if v.len() == 1 {
            Ok(v[0])
        } else {
            tape.concat_rows(&v)
        }
    };
    Ok(BatchForward {
        order,
        latent: cat(tape, latents)?,
        prediction: cat(tape, preds)?,
        translation: if translate {
            Some(cat(tape, trans)?)
        } else {
            None
        },
    })
}

/// Predictions plus the raw ingredients for losses and metrics of a split.
struct SplitOutputs {
    labels: Vec<f32>,
    predictions: Vec<f32>,
    lengths: Vec<usize>,
    latents: Option<Tensor<f32>>,
    translations: Option<Tensor<f32>>,
}

fn run_eval(
    net: &Network<f32>,
    samples: &[Sample],
    keep_latents: bool,
    translate: bool,
) -> Result<SplitOutputs> {
    let mut out = SplitOutputs {
        labels: Vec::new(),
        predictions: Vec::new(),
        lengths: Vec::new(),
        latents: None,
        translations: None,
    };
    let (mut lat, mut tr) = (Vec::new(), Vec::new());
    for chunk in samples.chunks(EVAL_CHUNK) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let mut tape = Tape::new();
        let bound = tape.bind_frozen(&net.store);
        let fwd = forward_batch(net, &mut tape, &bound, &refs, &mut Mode::Eval, translate)?;
        // Undo the length grouping so outputs follow sample order.
        let mut offsets = vec![0; refs.len()];
        let mut acc = 0;
        for &i in &fwd.order {
            offsets[i] = acc;
            acc += refs[i].x.rows();
        }
        let pred = tape.value(fwd.prediction).data();
        let latent = tape.value(fwd.latent);
        for (i, s) in refs.iter().enumerate() {
            let (o, n) = (offsets[i], s.x.rows());
            out.labels.extend_from_slice(&s.labels);
            out.predictions.extend_from_slice(&pred[o..o + n]);
            out.lengths.push(n);
            if keep_latents {
                let c = latent.cols();
                lat.push(Tensor::new(
                    &[n, c],
                    latent.data()[o * c..(o + n) * c].to_vec(),
                )?);
            }
            if let Some(t) = fwd.translation {
                let t = tape.value(t);
                let c = t.cols();
                tr.push(Tensor::new(&[n, c], t.data()[o * c..(o + n) * c].to_vec())?);
            }
        }
    }
    if keep_latents {
        out.latents = Some(stack(lat.iter())?);
    }
    if translate {
        out.translations = Some(stack(tr.iter())?);
    }
    Ok(out)
}

/// Per-clip eval-mode encodings.
pub fn encode_clips(net: &Network<f32>, xs: &[&Tensor<f32>]) -> Result<Vec<Tensor<f32>>> {
    let samples: Vec<Sample> = xs
        .iter()
        .map(|x| Sample {
            x: (*x).clone(),
            labels: vec![0.0; x.rows()],
            aligned: None,
            target: None,
        })
        .collect();
    let out = run_eval(net, &samples, true, false)?;
    let latent = out.latents.expect("requested");
    let c = latent.cols();
    let mut start = 0;
    out.lengths
        .iter()
        .map(|&n| {
            let t = Tensor::new(&[n, c], latent.data()[start * c..(start + n) * c].to_vec());
            start += n;
            t
        })
        .collect()
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

/// Scored targets and predictions: every segment, or the final one per clip.
fn scored(
    labels: &[f32],
    preds: &[f32],
    lengths: &[usize],
    level: LabelLevel,
) -> (Vec<f64>, Vec<f64>) {
    match level {
        LabelLevel::Segment => (to_f64(labels), to_f64(preds)),
        LabelLevel::Clip => {
            let mut end = 0;
            lengths
                .iter()
                .map(|&n| {
                    end += n;
                    (f64::from(labels[end - 1]), f64::from(preds[end - 1]))
                })
                .unzip()
        }
    }
}

fn metrics(task: Task, y: &[f64], p: &[f64], report: &mut SplitReport) -> Result<()> {
    match task {
        Task::Classification => {
            report.acc = Some(binary_accuracy(y, p, 0.5)?);
            let bin: Vec<f64> = p
                .iter()
                .map(|&v| if v >= 0.5 { 1.0 } else { 0.0 })
                .collect();
            report.f1 = Some(weighted_f1(y, &bin)?);
        }
        // Degenerate sequences (both constant, equal means) have no CCC.
        Task::Regression => report.ccc = ccc(y, p).ok(),
    }
    Ok(())
}

fn primary_loss(task: Task, y: &[f64], p: &[f64]) -> Result<f64> {
    match task {
        Task::Classification => bce_loss(y, p),
        Task::Regression => mse_loss(y, p),
    }
}

struct Setup<'a> {
    task: Task,
    level: LabelLevel,
    cfg: &'a TrainConfig,
    weights: LossWeights,
    stage: &'static str,
    run_id: &'a str,
}

fn evaluate_samples(
    net: &Network<f32>,
    samples: &[Sample],
    setup: &Setup<'_>,
) -> Result<SplitReport> {
    if samples.is_empty() {
        return Err(Error::Dataset("cannot evaluate an empty split".into()));
    }
    let w = setup.weights;
    let align = w.alpha > 0.0 && samples.iter().all(|s| s.aligned.is_some());
    let translate =
        w.beta > 0.0 && net.decoder.is_some() && samples.iter().all(|s| s.target.is_some());
    let out = run_eval(net, samples, align, translate)?;
    let mut r = SplitReport {
        loss_p: primary_loss(setup.task, &to_f64(&out.labels), &to_f64(&out.predictions))?,
        ..SplitReport::default()
    };
    if align {
        let xs = stack(samples.iter().map(|s| s.aligned.as_ref().expect("checked")))?;
        let xw = out.latents.as_ref().expect("requested");
        if xw.rows() > xw.cols() {
            r.loss_a = Some(alignment_loss(&xs.cast(), &xw.cast(), &setup.cfg.dcca)?);
        }
    }
    if translate {
        let target = stack(samples.iter().map(|s| s.target.as_ref().expect("checked")))?;
        let loss = if setup.cfg.mask_zero_frames {
            masked_mae_translation_loss
        } else {
            mae_translation_loss
        };
        r.loss_t = Some(loss(
            &target.cast(),
            &out.translations.as_ref().expect("requested").cast(),
        )?);
    }
    r.loss_total = r.loss_p + w.alpha * r.loss_a.unwrap_or(0.0) + w.beta * r.loss_t.unwrap_or(0.0);
    let (y, p) = scored(&out.labels, &out.predictions, &out.lengths, setup.level);
    metrics(setup.task, &y, &p, &mut r)?;
    Ok(r)
}

fn line(
    setup: &Setup<'_>,
    epoch: usize,
    split: Split,
    r: &SplitReport,
    seconds: f64,
) -> MetricsLine {
    MetricsLine {
        run_id: setup.run_id.to_string(),
        stage: setup.stage.to_string(),
        epoch,
        split: split.as_str().to_string(),
        loss_p: Some(r.loss_p),
        loss_a: r.loss_a,
        loss_t: r.loss_t,
        loss_total: Some(r.loss_total),
        acc: r.acc,
        f1: r.f1,
        ccc: r.ccc,
        seconds,
    }
}

/// Shared optimisation loop of both stages.
fn fit(
    net: &mut Network<f32>,
    train: &[Sample],
    dev: &[Sample],
    setup: &Setup<'_>,
    sink: &mut dyn MetricsSink,
) -> Result<(Vec<EpochReport>, usize, f64)> {
    if train.is_empty() {
        return Err(Error::Dataset("training split is empty".into()));
    }
    if dev.is_empty() {
        return Err(Error::Dataset(
            "dev split is empty; it drives model selection".into(),
        ));
    }
    let cfg = setup.cfg;
    let w = setup.weights;
    let translate = w.beta > 0.0;
    let latent_dim = net.latent_dim();
    let mut shuffle_rng = component_rng(cfg.seed, STREAM_SHUFFLE);
    let mut dropout_rng = component_rng(cfg.seed, STREAM_DROPOUT);
    let mut adam = AdamState::new(&net.store, cfg.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, ParamStore<f32>)> = None;

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let (mut sum_p, mut sum_a, mut sum_t, mut batches) = (0.0, 0.0, 0.0, 0usize);
        let mut any_a = false;
        let (mut labels, mut preds, mut lengths) = (Vec::new(), Vec::new(), Vec::new());

        for batch in order.chunks(cfg.batch_size) {
            let samples: Vec<&Sample> = batch.iter().map(|&i| &train[i]).collect();
            let mut tape = Tape::new();
            let bound = tape.bind(&net.store);
            let mut mode = Mode::Train(&mut dropout_rng);
            let fwd = forward_batch(net, &mut tape, &bound, &samples, &mut mode, translate)?;
            let ordered: Vec<&Sample> = fwd.order.iter().map(|&i| samples[i]).collect();
            let y: Vec<f32> = ordered
                .iter()
                .flat_map(|s| s.labels.iter().copied())
                .collect();

            let lp = match setup.task {
                Task::Classification => bce_on_tape(&mut tape, fwd.prediction, &y)?,
                Task::Regression => mse_on_tape(&mut tape, fwd.prediction, &y)?,
            };
            let la = if w.alpha > 0.0 {
                if y.len() > latent_dim {
                    let xs = stack(
                        ordered
                            .iter()
                            .map(|s| s.aligned.as_ref().expect("prepared")),
                    )?;
                    let xs = tape.constant(xs);
                    Some(alignment_loss_on_tape(
                        &mut tape, xs, fwd.latent, &cfg.dcca,
                    )?)
                } else {
                    log::info!(
                        "epoch {epoch}: batch of {} segments is too small for the alignment term (needs > {latent_dim}); skipped",
                        y.len()
                    );
                    None
                }
            } else {
                None
            };
            let lt = match fwd.translation {
                Some(t) => {
                    let target =
                        stack(ordered.iter().map(|s| s.target.as_ref().expect("prepared")))?;
                    Some(if setup.cfg.mask_zero_frames {
                        masked_mae_on_tape(&mut tape, t, &target)?
                    } else {
                        mae_on_tape(&mut tape, t, &target)?
                    })
                }
                None => None,
            };
            let total = total_on_tape(&mut tape, lp, la, lt, w)?;
            let value = tape.scalar(total);
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("training loss became {value}"),
                });
            }
            let grads = tape.backward(total)?.for_params(&bound);
            adam.step(&mut net.store, &grads).map_err(|e| match e {
                Error::Numerical { what, detail } => Error::Diverged {
                    epoch,
                    detail: format!("{what}: {detail}"),
                },
                other => other,
            })?;

            sum_p += f64::from(tape.scalar(lp));
            if let Some(la) = la {
                sum_a += f64::from(tape.scalar(la));
                any_a = true;
            }
            if let Some(lt) = lt {
                sum_t += f64::from(tape.scalar(lt));
            }
            batches += 1;
            labels.extend_from_slice(&y);
            preds.extend_from_slice(tape.value(fwd.prediction).data());
            lengths.extend(ordered.iter().map(|s| s.x.rows()));
        }

        let nb = batches as f64;
        let mut train_report = SplitReport {
            loss_p: sum_p / nb,
            loss_a: any_a.then_some(sum_a / nb),
            loss_t: translate.then_some(sum_t / nb),
            ..SplitReport::default()
        };
        train_report.loss_total = train_report.loss_p
            + w.alpha * train_report.loss_a.unwrap_or(0.0)
            + w.beta * train_report.loss_t.unwrap_or(0.0);
        let (y, p) = scored(&labels, &preds, &lengths, setup.level);
        metrics(setup.task, &y, &p, &mut train_report)?;

        let dev_report = evaluate_samples(net, dev, setup)?;
        let seconds = start.elapsed().as_secs_f64();
        sink.record(&line(setup, epoch, Split::Train, &train_report, seconds))?;
        sink.record(&line(setup, epoch, Split::Dev, &dev_report, seconds))?;
        let metric = dev_report
            .selection_metric(setup.task)
            .unwrap_or(f64::NEG_INFINITY);
        log::info!(
            "{} {} epoch {epoch}: train loss {:.4}, dev loss {:.4}, dev metric {metric:.4} ({seconds:.1}s)",
            setup.run_id,
            setup.stage,
            train_report.loss_total,
            dev_report.loss_total
        );
        history.push(EpochReport {
            epoch,
            train: train_report,
            dev: dev_report,
            seconds,
        });

        let improved = best.as_ref().is_none_or(|(_, m, _)| metric > *m);
        if improved {
            best = Some((epoch, metric, net.store.clone()));
        } else if epoch - best.as_ref().expect("set on first epoch").0 >= cfg.patience {
            log::info!(
                "{} {}: no improvement for {} epochs; stopping",
                setup.run_id,
                setup.stage,
                cfg.patience
            );
            break;
        }
    }

    let (best_epoch, best_metric, store) = best.expect("at least one epoch");
    net.store = store;
    Ok((history, best_epoch, best_metric))
}

fn model_for(
    model: &ModelConfig,
    cfg: &TrainConfig,
    input_dim: usize,
    task: Task,
) -> Result<ModelConfig> {
    let mut m = model.clone();
    if m.task != task {
        return Err(Error::Config(format!(
            "model is configured for {} but the dataset is {}",
            m.task.as_str(),
            task.as_str()
        )));
    }
    if m.encoder.input_dim != input_dim {
        return Err(Error::dim(
            "encoder_forward",
            &[m.encoder.input_dim],
            &[input_dim],
        ));
    }
    m.encoder.dropout_rate = cfg.dropout_rate;
    m.classifier.dropout_rate = cfg.dropout_rate;
    Ok(m)
}

fn plain_samples(clips: &[SegmentClip], modality: &str) -> Result<Vec<Sample>> {
    clips
        .iter()
        .map(|c| {
            Ok(Sample {
                x: c.modality(modality)?.clone(),
                labels: c.labels.clone(),
                aligned: None,
                target: None,
            })
        })
        .collect()
}

/// Stage one: encoder and classifier of one modality trained on the
/// prediction loss alone, returned frozen at its best dev epoch.
///
/// Also serves as the uni-modal baseline for any modality.
pub fn train_source(
    ds: &Dataset,
    modality: &str,
    model: &ModelConfig,
    cfg: &TrainConfig,
    run_id: &str,
    sink: &mut dyn MetricsSink,
) -> Result<TrainOutcome<SourceModel<f32>>> {
    cfg.validate()?;
    let mut config = model_for(model, cfg, ds.dim(modality)?, ds.task)?;
    config.decoder = None;
    let mut net = Network::<f32>::new(config, cfg.seed)?;
    let train = plain_samples(ds.split(Split::Train), modality)?;
    let dev = plain_samples(ds.split(Split::Dev), modality)?;
    let setup = Setup {
        task: ds.task,
        level: ds.label_level,
        cfg,
        weights: LossWeights {
            alpha: 0.0,
            beta: 0.0,
        },
        stage: "source",
        run_id,
    };
    let (history, best_epoch, best_metric) = fit(&mut net, &train, &dev, &setup, sink)?;
    let mut model = SourceModel::from_network(net)?;
    model.freeze();
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_metric,
    })
}

/// Stage two: the weak modality's encoder, classifier and decoder trained on
/// `L_p + α·L_a + β·L_t` against the frozen source.
#[allow(clippy::too_many_arguments)]
pub fn train_weak(
    ds: &Dataset,
    weak: &str,
    strong: &str,
    source: &SourceModel<f32>,
    model: &ModelConfig,
    cfg: &TrainConfig,
    run_id: &str,
    sink: &mut dyn MetricsSink,
) -> Result<TrainOutcome<WeakModel<f32>>> {
    cfg.validate()?;
    let w = cfg.weights();
    let mut config = model_for(model, cfg, ds.dim(weak)?, ds.task)?;
    if cfg.ablation == super::Ablation::NoDecoder {
        config.decoder = None;
    }
    let strong_dim = ds.dim(strong)?;
    if w.beta > 0.0 {
        let dec = config
            .decoder
            .as_ref()
            .ok_or_else(|| Error::Config("beta > 0 requires a decoder configuration".into()))?;
        if dec.output_dim != strong_dim {
            return Err(Error::dim(
                "decoder_forward",
                &[dec.output_dim],
                &[strong_dim],
            ));
        }
    }
    if w.alpha > 0.0 {
        if source.config().task != ds.task {
            return Err(Error::Config(
                "source checkpoint was trained for a different task".into(),
            ));
        }
        if source.config().encoder.latent_dim != config.encoder.latent_dim {
            return Err(Error::dim(
                "alignment_loss",
                &[source.config().encoder.latent_dim],
                &[config.encoder.latent_dim],
            ));
        }
        if source.config().encoder.input_dim != strong_dim {
            return Err(Error::dim(
                "encoder_forward",
                &[source.config().encoder.input_dim],
                &[strong_dim],
            ));
        }
    }

    let build = |clips: &[SegmentClip], required: bool| -> Result<Vec<Sample>> {
        let mut samples = plain_samples(clips, weak)?;
        let has_strong = clips.iter().all(|c| c.features.contains_key(strong));
        if !has_strong {
            if required {
                // Names the first offending clip.
                for c in clips {
                    c.modality(strong)?;
                }
            }
            return Ok(samples);
        }
        if w.alpha > 0.0 {
            let xs: Vec<&Tensor<f32>> = clips
                .iter()
                .map(|c| c.modality(strong))
                .collect::<Result<_>>()?;
            for (s, lat) in samples.iter_mut().zip(encode_clips(&source.net, &xs)?) {
                s.aligned = Some(lat);
            }
        }
        if w.beta > 0.0 {
            for (s, c) in samples.iter_mut().zip(clips) {
                s.target = Some(c.modality(strong)?.clone());
            }
        }
        Ok(samples)
    };
    let needs_strong = w.alpha > 0.0 || w.beta > 0.0;
    let train = build(ds.split(Split::Train), needs_strong)?;
    let dev = build(ds.split(Split::Dev), false)?;

    let mut net = Network::<f32>::new(config, cfg.seed)?;
    let setup = Setup {
        task: ds.task,
        level: ds.label_level,
        cfg,
        weights: w,
        stage: "weak",
        run_id,
    };
    let (history, best_epoch, best_metric) = fit(&mut net, &train, &dev, &setup, sink)?;
    Ok(TrainOutcome {
        model: WeakModel { net },
        history,
        best_epoch,
        best_metric,
    })
}

/// Eval-mode metrics of `net` on one split, using only `modality`.
pub fn evaluate(
    net: &Network<f32>,
    ds: &Dataset,
    split: Split,
    modality: &str,
) -> Result<SplitReport> {
    if net.task() != ds.task {
        return Err(Error::Config(format!(
            "checkpoint was trained for {} but the dataset is {}",
            net.task().as_str(),
            ds.task.as_str()
        )));
    }
    let d = ds.dim(modality)?;
    if d != net.input_dim() {
        return Err(Error::dim("encoder_forward", &[d], &[net.input_dim()]));
    }
    let samples = plain_samples(ds.split(split), modality)?;
    let cfg = TrainConfig::default();
    let setup = Setup {
        task: ds.task,
        level: ds.label_level,
        cfg: &cfg,
        weights: LossWeights {
            alpha: 0.0,
            beta: 0.0,
        },
        stage: "eval",
        run_id: "",
    };
    evaluate_samples(net, &samples, &setup)
}

/// Eval-mode predictions for every segment of a split, in clip order.
pub fn predict_split(
    net: &Network<f32>,
    ds: &Dataset,
    split: Split,
    modality: &str,
) -> Result<Vec<(String, Vec<f32>)>> {
    let clips = ds.split(split);
    let samples = plain_samples(clips, modality)?;
    let out = run_eval(net, &samples, false, false)?;
    let mut start = 0;
    Ok(clips
        .iter()
        .zip(&out.lengths)
        .map(|(c, &n)| {
            let p = out.predictions[start..start + n].to_vec();
            start += n;
            (c.clip_id.clone(), p)
        })
        .collect())
}
