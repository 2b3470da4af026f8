use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, LabelLevel, SegmentClip, Split};
use crate::models::Task;
use crate::numerics::Tensor;
use crate::{Error, Result};

const AR_COEFF: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// Binary: `1` when the projection is positive.
    SignOfProjection,
    /// Continuous in (−1, 1).
    TanhOfProjection,
}

/// Two-modality generator driven by a shared AR(1) latent walk.
///
/// The strong modality mixes all `latent_dim` coordinates; the weak one sees
/// only `weak_visible` of them, under `sigma_w` noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub latent_dim: usize,
    pub clip_len: usize,
    pub train_clips: usize,
    pub dev_clips: usize,
    pub test_clips: usize,
    pub strong_dim: usize,
    pub weak_dim: usize,
    pub strong_rank: usize,
    pub weak_rank: usize,
    pub weak_visible: usize,
    pub sigma_s: f64,
    pub sigma_w: f64,
    pub label_rule: LabelRule,
    pub seed: u64,
    pub strong_name: String,
    pub weak_name: String,
    /// Permits `weak_visible == latent_dim` (symmetric control experiments).
    pub allow_full_view: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            latent_dim: 8,
            clip_len: 40,
            train_clips: 200,
            dev_clips: 50,
            test_clips: 50,
            strong_dim: 16,
            weak_dim: 16,
            strong_rank: 8,
            weak_rank: 5,
            weak_visible: 5,
            sigma_s: 0.5,
            sigma_w: 2.0,
            label_rule: LabelRule::SignOfProjection,
            seed: 0,
            strong_name: "strong".into(),
            weak_name: "weak".into(),
            allow_full_view: false,
        }
    }
}

impl SyntheticSpec {
    /// Both modalities see every latent coordinate under the same noise.
    pub fn symmetric(seed: u64) -> Self {
        let base = SyntheticSpec::default();
        SyntheticSpec {
            weak_visible: base.latent_dim,
            weak_rank: base.latent_dim,
            weak_dim: base.strong_dim,
            sigma_w: base.sigma_s,
            allow_full_view: true,
            seed,
            ..base
        }
    }

    pub fn task(&self) -> Task {
        match self.label_rule {
            LabelRule::SignOfProjection => Task::Classification,
            LabelRule::TanhOfProjection => Task::Regression,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.latent_dim == 0 || self.clip_len == 0 || self.strong_dim == 0 || self.weak_dim == 0
        {
            return bad("synthetic dimensions must be positive".into());
        }
        if self.weak_visible == 0 || self.weak_visible > self.latent_dim {
            return bad(format!(
                "weak_visible {} must lie in 1..={}",
                self.weak_visible, self.latent_dim
            ));
        }
        if self.weak_visible == self.latent_dim && !self.allow_full_view {
            return bad(format!(
                "weak_visible {} must be smaller than latent_dim {}",
                self.weak_visible, self.latent_dim
            ));
        }
        if self.strong_rank == 0 || self.strong_rank > self.latent_dim.min(self.strong_dim) {
            return bad(format!("strong_rank {} out of range", self.strong_rank));
        }
        if self.weak_rank == 0 || self.weak_rank > self.weak_visible.min(self.weak_dim) {
            return bad(format!("weak_rank {} out of range", self.weak_rank));
        }
        if !(self.sigma_s >= 0.0 && self.sigma_w >= 0.0) {
            return bad("noise scales must be non-negative".into());
        }
        if self.strong_name == self.weak_name {
            return bad("modality names must differ".into());
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `rows × cols` column-orthonormal matrix from the QR factor of a Gaussian draw.
fn semi_orthogonal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(rows, cols, |_, _| normal(rng));
    g.qr().q().columns(0, cols).into_owned()
}

/// `rows × cols` mixing matrix of the given rank whose non-zero singular
/// values all equal `sqrt(rows / rank)`, so features carry unit signal
/// variance on average.
fn mixing(rng: &mut ChaCha8Rng, rows: usize, cols: usize, rank: usize) -> Vec<Vec<f64>> {
    let left = semi_orthogonal(rng, rows, rank);
    let right = semi_orthogonal(rng, cols, rank);
    let m = left * right.transpose() * (rows as f64 / rank as f64).sqrt();
    (0..rows)
        .map(|r| m.row(r).iter().copied().collect())
        .collect()
}

fn project(a: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(z).map(|(x, y)| x * y).sum())
        .collect()
}

/// Fully seed-determined two-modality dataset with per-segment labels.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let k = spec.latent_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let a_s = mixing(&mut rng, spec.strong_dim, k, spec.strong_rank);
    let a_w = mixing(&mut rng, spec.weak_dim, spec.weak_visible, spec.weak_rank);
    let mut visible = index::sample(&mut rng, k, spec.weak_visible).into_vec();
    visible.sort_unstable();
    // Uniform projection: every latent coordinate matters equally, so the
    // weak modality always sees `weak_visible / latent_dim` of the signal.
    let w = vec![1.0 / (k as f64).sqrt(); k];
    let innovation = (1.0 - AR_COEFF * AR_COEFF).sqrt();

    let modalities: BTreeMap<String, usize> = [
        (spec.strong_name.clone(), spec.strong_dim),
        (spec.weak_name.clone(), spec.weak_dim),
    ]
    .into();
    let mut ds = Dataset::new(spec.task(), LabelLevel::Segment, modalities);
    for (split, count) in [
        (Split::Train, spec.train_clips),
        (Split::Dev, spec.dev_clips),
        (Split::Test, spec.test_clips),
    ] {
        for c in 0..count {
            let n = spec.clip_len;
            let mut xs = Vec::with_capacity(n * spec.strong_dim);
            let mut xw = Vec::with_capacity(n * spec.weak_dim);
            let mut labels = Vec::with_capacity(n);
            let mut z: Vec<f64> = (0..k).map(|_| normal(&mut rng)).collect();
            for t in 0..n {
                if t > 0 {
                    for v in z.iter_mut() {
                        *v = AR_COEFF * *v + innovation * normal(&mut rng);
                    }
                }
                for v in project(&a_s, &z) {
                    xs.push((v + spec.sigma_s * normal(&mut rng)) as f32);
                }
                let zv: Vec<f64> = visible.iter().map(|&i| z[i]).collect();
                for v in project(&a_w, &zv) {
                    xw.push((v + spec.sigma_w * normal(&mut rng)) as f32);
                }
                let p: f64 = w.iter().zip(&z).map(|(a, b)| a * b).sum();
                labels.push(match spec.label_rule {
                    LabelRule::SignOfProjection => f32::from(u8::from(p > 0.0)),
                    LabelRule::TanhOfProjection => p.tanh() as f32,
                });
            }
            let features = [
                (
                    spec.strong_name.clone(),
                    Tensor::new(&[n, spec.strong_dim], xs)?,
                ),
                (
                    spec.weak_name.clone(),
                    Tensor::new(&[n, spec.weak_dim], xw)?,
                ),
            ]
            .into();
            ds.split_mut(split).push(SegmentClip::new(
                format!("{}_{c:04}", split.as_str()),
                features,
                labels,
            )?);
        }
    }
    ds.validate()?;
    Ok(ds)
}
