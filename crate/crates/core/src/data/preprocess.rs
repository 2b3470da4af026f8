use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Dataset, SegmentClip, Split};
use crate::numerics::Tensor;
use crate::{Error, Result};

const STD_FLOOR: f64 = 1e-8;

/// Whole number of frames in `seconds`.
fn frames(what: &str, seconds: f64, frame_seconds: f64) -> Result<usize> {
    // Written so NaN is rejected as well.
    if frame_seconds.is_nan() || frame_seconds <= 0.0 || seconds.is_nan() || seconds < 0.0 {
        return Err(Error::Config(format!(
            "{what}: durations must be non-negative, frame positive"
        )));
    }
    let k = seconds / frame_seconds;
    let rounded = k.round();
    if (k - rounded).abs() > 1e-9 * k.max(1.0) {
        return Err(Error::Config(format!(
            "{what}: {seconds} s is not a whole number of {frame_seconds} s frames"
        )));
    }
    Ok(rounded as usize)
}

/// Moves labels `shift_seconds` earlier; the tail repeats the last label.
pub fn shift_labels(labels: &[f32], shift_seconds: f64, frame_seconds: f64) -> Result<Vec<f32>> {
    let k = frames("shift_labels", shift_seconds, frame_seconds)?;
    if k == 0 {
        return Ok(labels.to_vec());
    }
    if k >= labels.len() {
        return Err(Error::Config(format!(
            "shift of {k} frames does not fit a recording of {} frames",
            labels.len()
        )));
    }
    let last = labels[labels.len() - 1];
    Ok(labels[k..]
        .iter()
        .copied()
        .chain(std::iter::repeat_n(last, k))
        .collect())
}

/// Cuts a recording into full windows of `win_seconds` every `hop_seconds`.
///
/// Clip ids are `{recording_id}_{index:05}`.
pub fn window_clips(
    recording_id: &str,
    features: &BTreeMap<String, Tensor<f32>>,
    labels: &[f32],
    win_seconds: f64,
    hop_seconds: f64,
    frame_seconds: f64,
) -> Result<Vec<SegmentClip>> {
    let win = frames("window_clips", win_seconds, frame_seconds)?;
    let hop = frames("window_clips", hop_seconds, frame_seconds)?;
    if win == 0 || hop == 0 {
        return Err(Error::Config(
            "window and hop must span at least one frame".into(),
        ));
    }
    let total = labels.len();
    if win > total {
        return Err(Error::Config(format!(
            "window of {win} frames exceeds recording of {total} frames"
        )));
    }
    for (name, x) in features {
        if x.rows() != total {
            return Err(Error::Dataset(format!(
                "recording {recording_id}: modality {name} has {} frames, labels have {total}",
                x.rows()
            )));
        }
    }
    let count = (total - win) / hop + 1;
    (0..count)
        .map(|i| {
            let start = i * hop;
            let feats = features
                .iter()
                .map(|(name, x)| {
                    let c = x.cols();
                    let data = x.data()[start * c..(start + win) * c].to_vec();
                    Ok((name.clone(), Tensor::new(&[win, c], data)?))
                })
                .collect::<Result<_>>()?;
            SegmentClip::new(
                format!("{recording_id}_{i:05}"),
                feats,
                labels[start..start + win].to_vec(),
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Per-modality, per-column z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub stats: BTreeMap<String, FeatureStats>,
}

impl Standardizer {
    /// Population statistics over every train-split segment.
    pub fn fit(ds: &Dataset) -> Result<Self> {
        let train = ds.split(Split::Train);
        if train.is_empty() {
            return Err(Error::Dataset(
                "standardisation needs a non-empty train split".into(),
            ));
        }
        let mut stats = BTreeMap::new();
        for (name, &d) in &ds.modalities {
            let mut sum = vec![0.0f64; d];
            let mut n = 0usize;
            for clip in train {
                if let Some(x) = clip.features.get(name) {
                    for r in 0..x.rows() {
                        for (s, &v) in sum.iter_mut().zip(x.row(r)) {
                            *s += f64::from(v);
                        }
                    }
                    n += x.rows();
                }
            }
            if n == 0 {
                continue;
            }
            let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
            let mut sq = vec![0.0f64; d];
            for clip in train {
                if let Some(x) = clip.features.get(name) {
                    for r in 0..x.rows() {
                        for ((s, &v), m) in sq.iter_mut().zip(x.row(r)).zip(&mean) {
                            *s += (f64::from(v) - m).powi(2);
                        }
                    }
                }
            }
            let std = sq
                .iter()
                .map(|s| (s / n as f64).sqrt().max(STD_FLOOR))
                .collect();
            stats.insert(name.clone(), FeatureStats { mean, std });
        }
        Ok(Standardizer { stats })
    }

    pub fn apply(&self, ds: &mut Dataset) {
        for clips in ds.splits.values_mut() {
            for clip in clips {
                for (name, x) in &mut clip.features {
                    if let Some(s) = self.stats.get(name) {
                        let d = s.mean.len();
                        for (i, v) in x.data_mut().iter_mut().enumerate() {
                            let j = i % d;
                            *v = ((f64::from(*v) - s.mean[j]) / s.std[j]) as f32;
                        }
                    }
                }
            }
        }
    }
}

/// Standardises every split with statistics from the train split only.
pub fn standardize(mut ds: Dataset) -> Result<(Dataset, Standardizer)> {
    let st = Standardizer::fit(&ds)?;
    st.apply(&mut ds);
    Ok((ds, st))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelLevel;
    use crate::models::Task;
    use proptest::prelude::*;

    #[test]
    fn shift_examples() {
        assert_eq!(
            shift_labels(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.08, 0.04).unwrap(),
            vec![3.0, 4.0, 5.0, 5.0, 5.0]
        );
        assert_eq!(
            shift_labels(&[1.0, 2.0], 0.0, 0.04).unwrap(),
            vec![1.0, 2.0]
        );
        assert_eq!(frames("t", 2.8, 0.04).unwrap(), 70);
        assert!(shift_labels(&[1.0, 2.0], 0.08, 0.04).is_err());
        assert!(shift_labels(&[1.0, 2.0, 3.0], 0.05, 0.04).is_err());
    }

    fn recording(t: usize, d: usize) -> (BTreeMap<String, Tensor<f32>>, Vec<f32>) {
        let x = Tensor::new(&[t, d], (0..t * d).map(|i| i as f32).collect()).unwrap();
        (
            [("a".to_string(), x)].into(),
            (0..t).map(|i| i as f32).collect(),
        )
    }

    #[test]
    fn five_minute_recording() {
        let (f, l) = recording(7500, 2);
        let clips = window_clips("r", &f, &l, 3.0, 1.0, 0.04).unwrap();
        assert_eq!(clips.len(), 298);
        assert!(clips.iter().all(|c| c.len() == 75));
        assert_eq!(clips[1].labels[0], 25.0);
    }

    #[test]
    fn window_edge_cases() {
        let (f, l) = recording(75, 1);
        assert_eq!(window_clips("r", &f, &l, 3.0, 1.0, 0.04).unwrap().len(), 1);
        let (f, l) = recording(74, 1);
        assert!(window_clips("r", &f, &l, 3.0, 1.0, 0.04).is_err());
    }

    proptest! {
        #[test]
        fn tiling_reconstructs_the_recording(win in 1usize..10, reps in 1usize..8, d in 1usize..4) {
            let (f, l) = recording(win * reps, d);
            let w = win as f64 * 0.04;
            let clips = window_clips("r", &f, &l, w, w, 0.04).unwrap();
            prop_assert_eq!(clips.len(), reps);
            let x: Vec<f32> = clips.iter().flat_map(|c| c.features["a"].data().to_vec()).collect();
            let y: Vec<f32> = clips.iter().flat_map(|c| c.labels.clone()).collect();
            prop_assert_eq!(&x[..], f["a"].data());
            prop_assert_eq!(y, l);
        }

        #[test]
        fn shift_preserves_length(labels in proptest::collection::vec(-1.0f32..1.0, 2..50), k in 0usize..3) {
            prop_assume!(k < labels.len());
            let out = shift_labels(&labels, k as f64 * 0.04, 0.04).unwrap();
            prop_assert_eq!(out.len(), labels.len());
        }
    }

    fn dataset() -> Dataset {
        let mut ds = Dataset::new(
            Task::Regression,
            LabelLevel::Segment,
            [("a".to_string(), 3)].into(),
        );
        for (i, split) in [Split::Train, Split::Train, Split::Dev]
            .into_iter()
            .enumerate()
        {
            let x = Tensor::new(
                &[4, 3],
                (0..12)
                    .map(|j| {
                        if j % 3 == 2 {
                            5.0
                        } else {
                            ((i * 12 + j) as f32 * 0.7).sin() * 10.0 + 3.0
                        }
                    })
                    .collect(),
            )
            .unwrap();
            ds.split_mut(split).push(
                SegmentClip::new(format!("c{i}"), [("a".to_string(), x)].into(), vec![0.0; 4])
                    .unwrap(),
            );
        }
        ds
    }

    #[test]
    fn train_statistics_are_unit() {
        let (ds, st) = standardize(dataset()).unwrap();
        let rows: Vec<&[f32]> = ds
            .split(Split::Train)
            .iter()
            .flat_map(|c| (0..4).map(move |r| c.features["a"].row(r)))
            .collect();
        for j in 0..2 {
            let n = rows.len() as f64;
            let m = rows.iter().map(|r| f64::from(r[j])).sum::<f64>() / n;
            let s = (rows
                .iter()
                .map(|r| (f64::from(r[j]) - m).powi(2))
                .sum::<f64>()
                / n)
                .sqrt();
            assert!(m.abs() < 1e-5 && (s - 1.0).abs() < 1e-3);
        }
        assert!(rows.iter().all(|r| r[2] == 0.0));
        assert_eq!(st.stats["a"].std[2], STD_FLOOR);
        let (twice, _) = standardize(ds.clone()).unwrap();
        for (a, b) in ds.split(Split::Dev)[0].features["a"]
            .data()
            .iter()
            .zip(twice.split(Split::Dev)[0].features["a"].data())
        {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
