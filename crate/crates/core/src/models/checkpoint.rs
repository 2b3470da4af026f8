//! Single-file checkpoints.
//!
//! ```text
//! cmstew-checkpoint 1
//! kind weak
//! task classification
//! encoder.input_dim 5
//! ...
//! params 42
//! param encoder.gru.0.fwd.w_z 5,5
//! ...
//! end
//! <payload: every parameter as little-endian f32, row-major, in manifest order>
//! <8 bytes: little-endian FNV-1a 64 of the payload>
//! ```
//!
//! Writing the same model twice yields identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{
    ClassifierConfig, DecoderConfig, EncoderConfig, ModelConfig, Network, SourceModel, Task,
    WeakModel,
};
use crate::numerics::{Scalar, Tensor};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "cmstew-checkpoint";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    Source,
    Weak,
}

impl CheckpointKind {
    fn as_str(self) -> &'static str {
        match self {
            CheckpointKind::Source => "source",
            CheckpointKind::Weak => "weak",
        }
    }
}

#[derive(Debug, Clone)]
pub enum Checkpoint {
    Source(SourceModel<f32>),
    Weak(WeakModel<f32>),
}

impl Checkpoint {
    pub fn kind(&self) -> CheckpointKind {
        match self {
            Checkpoint::Source(_) => CheckpointKind::Source,
            Checkpoint::Weak(_) => CheckpointKind::Weak,
        }
    }

    pub fn network(&self) -> &Network<f32> {
        match self {
            Checkpoint::Source(m) => &m.net,
            Checkpoint::Weak(m) => &m.net,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode(self.kind(), self.network())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        decode(bytes)
    }

    pub fn into_source(self) -> Result<SourceModel<f32>> {
        match self {
            Checkpoint::Source(m) => Ok(m),
            Checkpoint::Weak(_) => Err(Error::Checkpoint(
                "expected a source checkpoint, found a weak one".into(),
            )),
        }
    }

    pub fn into_weak(self) -> Result<WeakModel<f32>> {
        match self {
            Checkpoint::Weak(m) => Ok(m),
            Checkpoint::Source(_) => Err(Error::Checkpoint(
                "expected a weak checkpoint, found a source one".into(),
            )),
        }
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn encode<T: Scalar>(kind: CheckpointKind, net: &Network<T>) -> Vec<u8> {
    let c = &net.config;
    let e = &c.encoder;
    let mut m = String::new();
    let _ = writeln!(m, "{MAGIC} {FORMAT_VERSION}");
    let _ = writeln!(m, "kind {}", kind.as_str());
    let _ = writeln!(m, "task {}", c.task.as_str());
    let _ = writeln!(m, "encoder.input_dim {}", e.input_dim);
    let _ = writeln!(m, "encoder.gru_layers {}", e.gru_layers);
    let _ = writeln!(m, "encoder.gru_hidden {}", e.hidden());
    let _ = writeln!(m, "encoder.latent_dim {}", e.latent_dim);
    let _ = writeln!(m, "encoder.transformer_layers {}", e.transformer_layers);
    let _ = writeln!(m, "encoder.heads {}", e.heads);
    let _ = writeln!(m, "encoder.ffn_dims {},{}", e.ffn_dims[0], e.ffn_dims[1]);
    let _ = writeln!(m, "encoder.dropout_rate {}", e.dropout_rate);
    let _ = writeln!(m, "classifier.hidden {}", c.classifier.hidden);
    let _ = writeln!(m, "classifier.dropout_rate {}", c.classifier.dropout_rate);
    if let Some(d) = &c.decoder {
        let _ = writeln!(m, "decoder.gru_layers {}", d.gru_layers);
        let _ = writeln!(m, "decoder.hidden {}", d.hidden);
        let _ = writeln!(m, "decoder.output_dim {}", d.output_dim);
    }
    let _ = writeln!(m, "params {}", net.store.len());
    for (_, p) in net.store.iter() {
        let dims: Vec<String> = p.tensor.shape().iter().map(|d| d.to_string()).collect();
        let _ = writeln!(m, "param {} {}", p.name, dims.join(","));
    }
    m.push_str("end\n");

    let mut out = m.into_bytes();
    let start = out.len();
    for (_, p) in net.store.iter() {
        for v in p.tensor.data() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let sum = fnv1a64(&out[start..]);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Manifest<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Manifest<'a> {
    fn next(&mut self) -> Result<&'a str> {
        let line = self
            .lines
            .get(self.pos)
            .copied()
            .ok_or_else(|| Error::Checkpoint("manifest ends early".into()))?;
        self.pos += 1;
        Ok(line)
    }

    fn peek_key(&self) -> Option<&'a str> {
        self.lines.get(self.pos).and_then(|l| l.split(' ').next())
    }

    fn field(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next()?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v),
            _ => Err(Error::Checkpoint(format!(
                "expected field {key}, found {line:?}"
            ))),
        }
    }

    fn parse<V: std::str::FromStr>(&mut self, key: &str) -> Result<V> {
        let raw = self.field(key)?;
        raw.parse()
            .map_err(|_| Error::Checkpoint(format!("invalid value {raw:?} for {key}")))
    }
}

fn parse_dims(raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|d| {
            d.parse()
                .map_err(|_| Error::Checkpoint(format!("invalid shape {raw:?}")))
        })
        .collect()
}

fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let end = b"\nend\n";
    let split = bytes
        .windows(end.len())
        .position(|w| w == end)
        .ok_or_else(|| Error::Checkpoint("manifest terminator not found".into()))?
        + end.len();
    let text = std::str::from_utf8(&bytes[..split])
        .map_err(|_| Error::Checkpoint("manifest is not UTF-8".into()))?;
    let mut m = Manifest {
        lines: text.lines().collect(),
        pos: 0,
    };

    let header = m.next()?;
    match header.split_once(' ') {
        Some((MAGIC, v)) if v == FORMAT_VERSION.to_string() => {}
        Some((MAGIC, v)) => {
            return Err(Error::Checkpoint(format!("unsupported format version {v}")))
        }
        _ => return Err(Error::Checkpoint("not a checkpoint file".into())),
    }
    let kind = match m.field("kind")? {
        "source" => CheckpointKind::Source,
        "weak" => CheckpointKind::Weak,
        other => {
            return Err(Error::Checkpoint(format!(
                "unknown checkpoint kind {other}"
            )))
        }
    };
    let task = Task::parse(m.field("task")?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let input_dim = m.parse("encoder.input_dim")?;
    let gru_layers = m.parse("encoder.gru_layers")?;
    let gru_hidden = m.parse("encoder.gru_hidden")?;
    let latent_dim = m.parse("encoder.latent_dim")?;
    let transformer_layers = m.parse("encoder.transformer_layers")?;
    let heads = m.parse("encoder.heads")?;
    let ffn = parse_dims(m.field("encoder.ffn_dims")?)?;
    if ffn.len() != 2 {
        return Err(Error::Checkpoint(
            "encoder.ffn_dims needs two entries".into(),
        ));
    }
    let dropout_rate = m.parse("encoder.dropout_rate")?;
    let classifier = ClassifierConfig {
        hidden: m.parse("classifier.hidden")?,
        dropout_rate: m.parse("classifier.dropout_rate")?,
    };
    let decoder = if m.peek_key() == Some("decoder.gru_layers") {
        Some(DecoderConfig {
            gru_layers: m.parse("decoder.gru_layers")?,
            hidden: m.parse("decoder.hidden")?,
            output_dim: m.parse("decoder.output_dim")?,
        })
    } else {
        None
    };
    if kind == CheckpointKind::Source && decoder.is_some() {
        return Err(Error::Checkpoint(
            "source checkpoint lists a decoder".into(),
        ));
    }
    let config = ModelConfig {
        task,
        encoder: EncoderConfig {
            input_dim,
            gru_layers,
            gru_hidden: Some(gru_hidden),
            latent_dim,
            transformer_layers,
            heads,
            ffn_dims: [ffn[0], ffn[1]],
            dropout_rate,
        },
        classifier,
        decoder,
    };
    let mut net = Network::<f32>::new(config, 0).map_err(|e| Error::Checkpoint(e.to_string()))?;

    let count: usize = m.parse("params")?;
    if count != net.store.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {count} parameters, configuration implies {}",
            net.store.len()
        )));
    }
    let mut specs = Vec::with_capacity(count);
    for (_, p) in net.store.iter() {
        let raw = m.field("param")?;
        let (name, dims) = raw
            .rsplit_once(' ')
            .ok_or_else(|| Error::Checkpoint(format!("malformed parameter line {raw:?}")))?;
        let dims = parse_dims(dims)?;
        if name != p.name || dims != p.tensor.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {name} {dims:?} does not match expected {} {:?}",
                p.name,
                p.tensor.shape()
            )));
        }
        specs.push(dims);
    }
    if m.next()? != "end" {
        return Err(Error::Checkpoint("missing end marker".into()));
    }

    let rest = &bytes[split..];
    let numel: usize = specs.iter().map(|s| s.iter().product::<usize>()).sum();
    if rest.len() != numel * 4 + 8 {
        return Err(Error::Checkpoint(format!(
            "payload is {} bytes, expected {}",
            rest.len(),
            numel * 4 + 8
        )));
    }
    let (payload, tail) = rest.split_at(numel * 4);
    let stored = u64::from_le_bytes(tail.try_into().expect("8-byte tail"));
    if stored != fnv1a64(payload) {
        return Err(Error::Checkpoint(
            "checksum mismatch; file is corrupt".into(),
        ));
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    for id in net.store.ids().collect::<Vec<_>>() {
        let shape = net.store.tensor(id).shape().to_vec();
        let n = shape.iter().product();
        let data: Vec<f32> = values.by_ref().take(n).collect();
        net.store.get_mut(id).tensor = Tensor::new(&shape, data)?;
    }

    Ok(match kind {
        CheckpointKind::Source => {
            let mut model = SourceModel::from_network(net)?;
            model.freeze();
            Checkpoint::Source(model)
        }
        CheckpointKind::Weak => Checkpoint::Weak(WeakModel { net }),
    })
}

pub fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weak() -> WeakModel<f32> {
        let config = ModelConfig {
            task: Task::Regression,
            encoder: EncoderConfig {
                input_dim: 3,
                gru_layers: 1,
                gru_hidden: Some(4),
                latent_dim: 6,
                transformer_layers: 1,
                heads: 3,
                ffn_dims: [8, 6],
                dropout_rate: 0.1,
            },
            classifier: ClassifierConfig {
                hidden: 5,
                dropout_rate: 0.2,
            },
            decoder: Some(DecoderConfig {
                gru_layers: 1,
                hidden: 2,
                output_dim: 7,
            }),
        };
        WeakModel::new(config, 11).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = Checkpoint::Weak(weak());
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        for ((_, a), (_, b)) in ck.network().store.iter().zip(back.network().store.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.tensor, b.tensor);
        }
        assert_eq!(back.network().config, ck.network().config);
    }

    #[test]
    fn payload_layout() {
        let ck = Checkpoint::Weak(weak());
        let bytes = ck.to_bytes();
        let numel = ck.network().store.numel();
        let first = ck.network().store.iter().next().unwrap().1.tensor.data()[0];
        let start = bytes.len() - 8 - numel * 4;
        assert_eq!(&bytes[start..start + 4], &first.to_le_bytes());
        assert!(std::str::from_utf8(&bytes[..start])
            .unwrap()
            .ends_with("\nend\n"));
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = Checkpoint::Weak(weak()).to_bytes();
        let mut flipped = bytes.clone();
        let i = bytes.len() - 20;
        flipped[i] ^= 1;
        assert!(matches!(
            Checkpoint::from_bytes(&flipped),
            Err(Error::Checkpoint(_))
        ));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"hello\nend\n").is_err());
    }

    #[test]
    fn source_checkpoints_load_frozen() {
        let src = weak().deployable().unwrap();
        let back = Checkpoint::from_bytes(&Checkpoint::Source(src).to_bytes())
            .unwrap()
            .into_source()
            .unwrap();
        assert!(back.is_frozen());
        assert!(back.net.store.iter().all(|(_, p)| !p.trainable));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/model.ckpt");
        let ck = Checkpoint::Weak(weak());
        write_checkpoint(&path, &ck).unwrap();
        assert_eq!(read_checkpoint(&path).unwrap().to_bytes(), ck.to_bytes());
        assert!(matches!(
            read_checkpoint(&dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }
}
