use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ClassifierConfig, DecoderConfig, EncoderConfig, ModelConfig, Task};
use crate::layers::{
    sinusoidal_positions, BiGruStack, DenseLayer, Layout, TransformerConfig,
    TransformerEncoderLayer,
};
use crate::numerics::{Activation, Bound, Mode, ParamStore, Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

pub const STREAM_ENCODER: u64 = 1;
pub const STREAM_CLASSIFIER: u64 = 2;
pub const STREAM_DECODER: u64 = 3;

/// Independent generator per component so that adding or removing one
/// component never shifts the initial values of the others.
pub fn component_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub gru: BiGruStack,
    pub projection: DenseLayer,
    pub layers: Vec<TransformerEncoderLayer>,
    pub latent_dim: usize,
}

impl Encoder {
    fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = component_rng(seed, STREAM_ENCODER);
        let h = cfg.hidden();
        let gru = BiGruStack::new(
            store,
            "encoder.gru",
            cfg.input_dim,
            h,
            cfg.gru_layers,
            cfg.dropout_rate,
            &mut rng,
        )?;
        let projection = DenseLayer::new(
            store,
            "encoder.proj",
            2 * h,
            cfg.latent_dim,
            Activation::None,
            &mut rng,
        )?;
        let tcfg = TransformerConfig {
            d_model: cfg.latent_dim,
            heads: cfg.heads,
            ffn_hidden: cfg.ffn_dims[0],
            dropout_rate: cfg.dropout_rate,
        };
        let layers = (0..cfg.transformer_layers)
            .map(|i| TransformerEncoderLayer::new(store, &format!("encoder.tf{i}"), tcfg, &mut rng))
            .collect::<Result<_>>()?;
        Ok(Encoder {
            gru,
            projection,
            layers,
            latent_dim: cfg.latent_dim,
        })
    }

    pub fn num_params(cfg: &EncoderConfig) -> usize {
        let h = cfg.hidden();
        BiGruStack::num_params(cfg.input_dim, h, cfg.gru_layers)
            + DenseLayer::num_params(2 * h, cfg.latent_dim)
            + cfg.transformer_layers
                * TransformerEncoderLayer::num_params(cfg.latent_dim, cfg.ffn_dims[0])
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        x: Var,
        layout: Layout,
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let seq = self.gru.forward(tape, bound, x, layout, mode)?;
        let mut h = self.projection.forward(tape, bound, seq)?;
        let pe = sinusoidal_positions::<T>(layout.steps, self.latent_dim)?;
        let mut tiled = Vec::with_capacity(layout.rows() * self.latent_dim);
        for _ in 0..layout.clips {
            tiled.extend_from_slice(pe.data());
        }
        h = tape.add_const(h, &Tensor::new(&[layout.rows(), self.latent_dim], tiled)?)?;
        for layer in &self.layers {
            h = layer.forward(tape, bound, h, layout, mode)?;
        }
        Ok(h)
    }
}

/// Two dense layers: `hidden` units with relu, then one output unit.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub hidden: DenseLayer,
    pub output: DenseLayer,
    pub dropout_rate: f64,
}

impl Classifier {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        latent_dim: usize,
        cfg: &ClassifierConfig,
        task: Task,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = component_rng(seed, STREAM_CLASSIFIER);
        Ok(Classifier {
            hidden: DenseLayer::new(
                store,
                "classifier.hidden",
                latent_dim,
                cfg.hidden,
                Activation::Relu,
                &mut rng,
            )?,
            output: DenseLayer::new(
                store,
                "classifier.out",
                cfg.hidden,
                1,
                task.output_activation(),
                &mut rng,
            )?,
            dropout_rate: cfg.dropout_rate,
        })
    }

    pub fn num_params(latent_dim: usize, cfg: &ClassifierConfig) -> usize {
        DenseLayer::num_params(latent_dim, cfg.hidden) + DenseLayer::num_params(cfg.hidden, 1)
    }

    /// One prediction per row, shaped `[rows × 1]`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        latent: Var,
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let h = self.hidden.forward(tape, bound, latent)?;
        let h = tape.dropout(h, self.dropout_rate, mode)?;
        self.output.forward(tape, bound, h)
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub gru: BiGruStack,
    pub projection: DenseLayer,
}

impl Decoder {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        latent_dim: usize,
        cfg: &DecoderConfig,
        dropout_rate: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = component_rng(seed, STREAM_DECODER);
        let gru = BiGruStack::new(
            store,
            "decoder.gru",
            latent_dim,
            cfg.hidden,
            cfg.gru_layers,
            dropout_rate,
            &mut rng,
        )?;
        let projection = DenseLayer::new(
            store,
            "decoder.proj",
            2 * cfg.hidden,
            cfg.output_dim,
            Activation::None,
            &mut rng,
        )?;
        Ok(Decoder { gru, projection })
    }

    pub fn num_params(latent_dim: usize, cfg: &DecoderConfig) -> usize {
        BiGruStack::num_params(latent_dim, cfg.hidden, cfg.gru_layers)
            + DenseLayer::num_params(2 * cfg.hidden, cfg.output_dim)
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        latent: Var,
        layout: Layout,
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let seq = self.gru.forward(tape, bound, latent, layout, mode)?;
        self.projection.forward(tape, bound, seq)
    }
}

/// Encoder, classifier and optional decoder over one parameter store.
///
/// Parameters are registered encoder first, then classifier, then decoder.
#[derive(Debug, Clone)]
pub struct Network<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub encoder: Encoder,
    pub classifier: Classifier,
    pub decoder: Option<Decoder>,
}

pub struct WeakOutputs {
    pub latent: Var,
    /// `[rows × 1]`
    pub prediction: Var,
    pub translation: Option<Var>,
}

impl<T: Scalar> Network<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, &config.encoder, seed)?;
        let classifier = Classifier::new(
            &mut store,
            config.encoder.latent_dim,
            &config.classifier,
            config.task,
            seed,
        )?;
        let decoder = config
            .decoder
            .as_ref()
            .map(|d| {
                Decoder::new(
                    &mut store,
                    config.encoder.latent_dim,
                    d,
                    config.encoder.dropout_rate,
                    seed,
                )
            })
            .transpose()?;
        Ok(Network {
            config,
            store,
            encoder,
            classifier,
            decoder,
        })
    }

    pub fn task(&self) -> Task {
        self.config.task
    }

    pub fn input_dim(&self) -> usize {
        self.config.encoder.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.config.encoder.latent_dim
    }

    /// Closed-form parameter count for `config`.
    pub fn expected_num_params(config: &ModelConfig) -> usize {
        Encoder::num_params(&config.encoder)
            + Classifier::num_params(config.encoder.latent_dim, &config.classifier)
            + config
                .decoder
                .as_ref()
                .map_or(0, |d| Decoder::num_params(config.encoder.latent_dim, d))
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            store: self.store.cast(),
            encoder: self.encoder.clone(),
            classifier: self.classifier.clone(),
            decoder: self.decoder.clone(),
        }
    }

    fn check_width(&self, tape: &Tape<T>, x: Var) -> Result<()> {
        let shape = tape.shape(x);
        if shape.len() != 2 || shape[1] != self.input_dim() {
            return Err(Error::dim(
                "encoder_forward",
                shape,
                &[shape.first().copied().unwrap_or(0), self.input_dim()],
            ));
        }
        Ok(())
    }

    /// Shared trunk for both heads; the decoder runs only when `translate` is set.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        x: Var,
        layout: Layout,
        mode: &mut Mode<'_>,
        translate: bool,
    ) -> Result<WeakOutputs> {
        self.check_width(tape, x)?;
        let latent = self.encoder.forward(tape, bound, x, layout, mode)?;
        let prediction = self.classifier.forward(tape, bound, latent, mode)?;
        let translation = match (&self.decoder, translate) {
            (Some(dec), true) => Some(dec.forward(tape, bound, latent, layout, mode)?),
            (None, true) => {
                return Err(Error::Config(
                    "translation requested but the model has no decoder".into(),
                ))
            }
            _ => None,
        };
        Ok(WeakOutputs {
            latent,
            prediction,
            translation,
        })
    }

    /// Eval-mode encoding of one sequence `[N × d_m]` into `[N × latent_dim]`.
    pub fn encode(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = tape.bind_frozen(&self.store);
        let xv = tape.constant(x.clone());
        let layout = Layout::single(x.rows())?;
        self.check_width(&tape, xv)?;
        let latent = self
            .encoder
            .forward(&mut tape, &bound, xv, layout, &mut Mode::Eval)?;
        Ok(tape.value(latent).clone())
    }

    /// Eval-mode classifier on a latent sequence.
    pub fn classify(&self, latent: &Tensor<T>) -> Result<Vec<T>> {
        if latent.cols() != self.latent_dim() {
            return Err(Error::dim(
                "classifier_forward",
                latent.shape(),
                &[latent.rows(), self.latent_dim()],
            ));
        }
        let mut tape = Tape::new();
        let bound = tape.bind_frozen(&self.store);
        let lv = tape.constant(latent.clone());
        let y = self
            .classifier
            .forward(&mut tape, &bound, lv, &mut Mode::Eval)?;
        Ok(tape.value(y).data().to_vec())
    }

    /// Eval-mode decoder on a latent sequence.
    pub fn decode(&self, latent: &Tensor<T>) -> Result<Tensor<T>> {
        let dec = self
            .decoder
            .as_ref()
            .ok_or_else(|| Error::Config("model has no decoder".into()))?;
        if latent.cols() != self.latent_dim() {
            return Err(Error::dim(
                "decoder_forward",
                latent.shape(),
                &[latent.rows(), self.latent_dim()],
            ));
        }
        let mut tape = Tape::new();
        let bound = tape.bind_frozen(&self.store);
        let lv = tape.constant(latent.clone());
        let y = dec.forward(
            &mut tape,
            &bound,
            lv,
            Layout::single(latent.rows())?,
            &mut Mode::Eval,
        )?;
        Ok(tape.value(y).clone())
    }

    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        self.classify(&self.encode(x)?)
    }
}

/// Stronger-modality encoder and classifier; frozen after stage one.
#[derive(Debug, Clone)]
pub struct SourceModel<T> {
    pub net: Network<T>,
    frozen: bool,
}

impl<T: Scalar> SourceModel<T> {
    pub fn new(mut config: ModelConfig, seed: u64) -> Result<Self> {
        config.decoder = None;
        Ok(SourceModel {
            net: Network::new(config, seed)?,
            frozen: false,
        })
    }

    pub fn from_network(mut net: Network<T>) -> Result<Self> {
        if net.decoder.is_some() {
            return Err(Error::Config("a source model has no decoder".into()));
        }
        net.store.set_trainable(true);
        Ok(SourceModel { net, frozen: false })
    }

    pub fn freeze(&mut self) {
        self.net.store.set_trainable(false);
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    pub fn encode(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.net.encode(x)
    }

    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        self.net.predict(x)
    }

    pub fn cast<U: Scalar>(&self) -> SourceModel<U> {
        SourceModel {
            net: self.net.cast(),
            frozen: self.frozen,
        }
    }
}

/// Weaker-modality encoder, classifier and (unless ablated) decoder.
#[derive(Debug, Clone)]
pub struct WeakModel<T> {
    pub net: Network<T>,
}

impl<T: Scalar> WeakModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        Ok(WeakModel {
            net: Network::new(config, seed)?,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    /// Eval-mode forward of one sequence: latent, predictions and, when
    /// `translate` is set, the reconstructed strong features.
    #[allow(clippy::type_complexity)]
    pub fn weak_forward(
        &self,
        x: &Tensor<T>,
        translate: bool,
    ) -> Result<(Tensor<T>, Vec<T>, Option<Tensor<T>>)> {
        let mut tape = Tape::new();
        let bound = tape.bind_frozen(&self.net.store);
        let xv = tape.constant(x.clone());
        let out = self.net.forward(
            &mut tape,
            &bound,
            xv,
            Layout::single(x.rows())?,
            &mut Mode::Eval,
            translate,
        )?;
        Ok((
            tape.value(out.latent).clone(),
            tape.value(out.prediction).data().to_vec(),
            out.translation.map(|t| tape.value(t).clone()),
        ))
    }

    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<T>> {
        self.net.predict(x)
    }

    /// Inference artefact: encoder and classifier only.
    pub fn deployable(&self) -> Result<SourceModel<T>> {
        let mut config = self.net.config.clone();
        config.decoder = None;
        let mut net = Network::new(config, 0)?;
        net.store.copy_values_from(&self.net.store)?;
        SourceModel::from_network(net)
    }

    pub fn cast<U: Scalar>(&self) -> WeakModel<U> {
        WeakModel {
            net: self.net.cast(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(input_dim: usize, task: Task, decoder: Option<DecoderConfig>) -> ModelConfig {
        ModelConfig {
            task,
            encoder: EncoderConfig {
                input_dim,
                gru_layers: 2,
                gru_hidden: None,
                latent_dim: 8,
                transformer_layers: 2,
                heads: 2,
                ffn_dims: [16, 8],
                dropout_rate: 0.3,
            },
            classifier: ClassifierConfig {
                hidden: 12,
                dropout_rate: 0.3,
            },
            decoder,
        }
    }

    fn seq(n: usize, d: usize, scale: f32) -> Tensor<f32> {
        Tensor::new(
            &[n, d],
            (0..n * d)
                .map(|i| scale * ((i as f32) * 0.37).sin())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let dec = DecoderConfig {
            gru_layers: 2,
            hidden: 5,
            output_dim: 7,
        };
        let cfg = small(3, Task::Classification, Some(dec));
        let net = Network::<f32>::new(cfg.clone(), 1).unwrap();
        assert_eq!(net.store.numel(), Network::<f32>::expected_num_params(&cfg));

        let full = ModelConfig {
            task: Task::Regression,
            encoder: EncoderConfig::new(88),
            classifier: ClassifierConfig::default(),
            decoder: None,
        };
        let h = 88;
        let gru_dir = |d_in: usize| 3 * d_in * h + 3 * h * h + 4 * h;
        let gru = 2 * gru_dir(88) + 2 * gru_dir(176);
        let proj = 176 * 100 + 100;
        let tf = 4 * 100 * 100 + (100 * 400 + 400) + (400 * 100 + 100) + 4 * 100;
        let cls = (100 * 300 + 300) + (300 + 1);
        assert_eq!(
            Network::<f32>::expected_num_params(&full),
            gru + proj + 2 * tf + cls
        );
        let net = Network::<f32>::new(full, 0).unwrap();
        assert_eq!(net.store.numel(), gru + proj + 2 * tf + cls);
    }

    #[test]
    fn recola_style_shapes() {
        let cfg = ModelConfig {
            task: Task::Regression,
            encoder: EncoderConfig {
                gru_layers: 1,
                ..EncoderConfig::new(88)
            },
            classifier: ClassifierConfig::default(),
            decoder: Some(DecoderConfig {
                gru_layers: 2,
                hidden: 250,
                output_dim: 88,
            }),
        };
        let weak = WeakModel::<f32>::new(cfg, 3).unwrap();
        let (latent, y, tr) = weak.weak_forward(&seq(75, 88, 1.0), true).unwrap();
        assert_eq!(latent.shape(), &[75, 100]);
        assert_eq!(y.len(), 75);
        assert!(y.iter().all(|v| (-1.0..1.0).contains(v)));
        assert_eq!(tr.unwrap().shape(), &[75, 88]);
    }

    #[test]
    fn valence_audio_decoder_maps_to_geometric_width() {
        let cfg = DecoderConfig {
            gru_layers: 1,
            hidden: 500,
            output_dim: 632,
        };
        let mut store = ParamStore::<f32>::new();
        let dec = Decoder::new(&mut store, 100, &cfg, 0.3, 0).unwrap();
        assert_eq!(dec.gru.hidden, 500);
        assert_eq!(dec.gru.layers.len(), 1);
        assert_eq!(dec.projection.d_out, 632);
    }

    #[test]
    fn classifier_ranges_and_zero_weights() {
        let cls = Network::<f32>::new(small(4, Task::Classification, None), 2).unwrap();
        let y = cls.predict(&seq(6, 4, 3.0)).unwrap();
        assert!(y.iter().all(|&v| v > 0.0 && v < 1.0));
        let mut zeroed = cls.clone();
        for id in zeroed.store.ids().collect::<Vec<_>>() {
            if zeroed.store.get(id).name.starts_with("classifier") {
                zeroed.store.get_mut(id).tensor.data_mut().fill(0.0);
            }
        }
        assert!(zeroed
            .predict(&seq(6, 4, 3.0))
            .unwrap()
            .iter()
            .all(|&v| v == 0.5));
        let reg = Network::<f32>::new(small(4, Task::Regression, None), 2).unwrap();
        let mut zeroed = reg.clone();
        for id in zeroed.store.ids().collect::<Vec<_>>() {
            if zeroed.store.get(id).name.starts_with("classifier") {
                zeroed.store.get_mut(id).tensor.data_mut().fill(0.0);
            }
        }
        assert!(zeroed
            .predict(&seq(6, 4, 3.0))
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn encode_is_deterministic_and_finite() {
        let net = Network::<f32>::new(small(4, Task::Classification, None), 5).unwrap();
        let x = seq(9, 4, 1e3);
        let a = net.encode(&x).unwrap();
        assert_eq!(a, net.encode(&x).unwrap());
        assert!(a.is_finite());
        assert!(net.encode(&seq(9, 5, 1.0)).is_err());
    }

    #[test]
    fn both_heads_share_the_latent() {
        let dec = DecoderConfig {
            gru_layers: 1,
            hidden: 3,
            output_dim: 6,
        };
        let weak = WeakModel::<f32>::new(small(4, Task::Classification, Some(dec)), 5).unwrap();
        let x = seq(7, 4, 1.0);
        let (latent, y, tr) = weak.weak_forward(&x, true).unwrap();
        assert_eq!(weak.net.classify(&latent).unwrap(), y);
        assert_eq!(weak.net.decode(&latent).unwrap(), tr.unwrap());
        let (_, y2, none) = weak.weak_forward(&x, false).unwrap();
        assert_eq!(y, y2);
        assert!(none.is_none());
    }

    #[test]
    fn deployable_matches_weak_predictions() {
        let dec = DecoderConfig {
            gru_layers: 1,
            hidden: 3,
            output_dim: 6,
        };
        let weak = WeakModel::<f32>::new(small(4, Task::Classification, Some(dec)), 5).unwrap();
        let src = weak.deployable().unwrap();
        assert!(src.net.decoder.is_none());
        let x = seq(7, 4, 1.0);
        assert_eq!(src.predict(&x).unwrap(), weak.predict(&x).unwrap());
    }

    #[test]
    fn decoder_does_not_shift_encoder_initialisation() {
        let dec = DecoderConfig {
            gru_layers: 2,
            hidden: 3,
            output_dim: 6,
        };
        let with = Network::<f32>::new(small(4, Task::Classification, Some(dec)), 9).unwrap();
        let without = Network::<f32>::new(small(4, Task::Classification, None), 9).unwrap();
        for (id, p) in without.store.iter() {
            assert_eq!(p, with.store.get(id));
        }
    }
}
