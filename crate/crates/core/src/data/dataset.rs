use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::models::Task;
use crate::numerics::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split {other}; available: train, dev, test"
            ))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Granularity of the ground truth.
///
/// `Clip` labels (one per utterance) are repeated over every segment for the
/// loss, and evaluation scores one prediction per clip: the final segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelLevel {
    #[default]
    Segment,
    Clip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentClip {
    pub clip_id: String,
    pub features: BTreeMap<String, Tensor<f32>>,
    /// One entry per segment.
    pub labels: Vec<f32>,
}

impl SegmentClip {
    pub fn new(
        clip_id: impl Into<String>,
        features: BTreeMap<String, Tensor<f32>>,
        labels: Vec<f32>,
    ) -> Result<Self> {
        let clip = SegmentClip {
            clip_id: clip_id.into(),
            features,
            labels,
        };
        clip.validate()?;
        Ok(clip)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::Dataset(format!(
                "clip {} has no segments",
                self.clip_id
            )));
        }
        for (name, x) in &self.features {
            if x.shape().len() != 2 || x.rows() != self.labels.len() {
                return Err(Error::Dataset(format!(
                    "clip {}: modality {name} has {} rows but the clip has {} labels",
                    self.clip_id,
                    x.shape().first().copied().unwrap_or(0),
                    self.labels.len()
                )));
            }
        }
        Ok(())
    }

    pub fn modality(&self, name: &str) -> Result<&Tensor<f32>> {
        self.features.get(name).ok_or_else(|| {
            Error::Dataset(format!("clip {} is missing modality {name}", self.clip_id))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub label_level: LabelLevel,
    /// Feature width per modality.
    pub modalities: BTreeMap<String, usize>,
    pub splits: BTreeMap<Split, Vec<SegmentClip>>,
}

impl Dataset {
    pub fn new(task: Task, label_level: LabelLevel, modalities: BTreeMap<String, usize>) -> Self {
        Dataset {
            task,
            label_level,
            modalities,
            splits: Split::ALL.iter().map(|&s| (s, Vec::new())).collect(),
        }
    }

    pub fn split(&self, split: Split) -> &[SegmentClip] {
        self.splits.get(&split).map_or(&[], Vec::as_slice)
    }

    pub fn split_mut(&mut self, split: Split) -> &mut Vec<SegmentClip> {
        self.splits.entry(split).or_default()
    }

    pub fn dim(&self, modality: &str) -> Result<usize> {
        self.modalities
            .get(modality)
            .copied()
            .ok_or_else(|| Error::Dataset(format!("unknown modality {modality}")))
    }

    /// Sorts clips by id and checks widths, labels and split disjointness.
    pub fn validate(&mut self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (split, clips) in &mut self.splits {
            clips.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
            for clip in clips.iter() {
                clip.validate()?;
                if !seen.insert(clip.clip_id.clone()) {
                    return Err(Error::Dataset(format!(
                        "clip {} appears in more than one split ({split})",
                        clip.clip_id
                    )));
                }
                for (name, x) in &clip.features {
                    let want = self.modalities.get(name).ok_or_else(|| {
                        Error::Dataset(format!("clip {}: undeclared modality {name}", clip.clip_id))
                    })?;
                    if x.cols() != *want {
                        return Err(Error::Dataset(format!(
                            "clip {}: modality {name} has width {}, manifest says {want}",
                            clip.clip_id,
                            x.cols()
                        )));
                    }
                }
                if self.task == Task::Classification {
                    if let Some(v) = clip.labels.iter().find(|&&v| v != 0.0 && v != 1.0) {
                        return Err(Error::Dataset(format!(
                            "clip {}: label {v} is not binary",
                            clip.clip_id
                        )));
                    }
                }
                if self.label_level == LabelLevel::Clip
                    && clip.labels.iter().any(|&v| v != clip.labels[0])
                {
                    return Err(Error::Dataset(format!(
                        "clip {}: clip-level labels vary",
                        clip.clip_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Ground truth as scored by evaluation: every segment, or one value per clip.
    pub fn eval_targets(&self, split: Split) -> Vec<f64> {
        self.split(split)
            .iter()
            .flat_map(|c| match self.label_level {
                LabelLevel::Segment => c.labels.iter().map(|&v| f64::from(v)).collect::<Vec<_>>(),
                LabelLevel::Clip => vec![f64::from(*c.labels.last().expect("validated non-empty"))],
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(id: &str, n: usize, d: usize) -> SegmentClip {
        let mut f = BTreeMap::new();
        f.insert("a".to_string(), Tensor::zeros(&[n, d]));
        SegmentClip::new(id, f, vec![0.0; n]).unwrap()
    }

    #[test]
    fn mismatched_lengths_are_rejected_with_clip_id() {
        let mut f = BTreeMap::new();
        f.insert("a".to_string(), Tensor::<f32>::zeros(&[3, 2]));
        f.insert("b".to_string(), Tensor::<f32>::zeros(&[4, 2]));
        let err = SegmentClip::new("clip-7", f, vec![0.0; 3]).unwrap_err();
        assert!(err.to_string().contains("clip-7"));
    }

    #[test]
    fn duplicate_ids_across_splits() {
        let mut ds = Dataset::new(
            Task::Classification,
            LabelLevel::Segment,
            [("a".to_string(), 2)].into(),
        );
        ds.split_mut(Split::Train).push(clip("x", 3, 2));
        ds.split_mut(Split::Dev).push(clip("x", 3, 2));
        assert!(ds.validate().is_err());
    }

    #[test]
    fn clips_are_sorted_and_widths_checked() {
        let mut ds = Dataset::new(
            Task::Regression,
            LabelLevel::Segment,
            [("a".to_string(), 2)].into(),
        );
        ds.split_mut(Split::Train)
            .extend([clip("b", 3, 2), clip("a", 3, 2)]);
        ds.validate().unwrap();
        assert_eq!(ds.split(Split::Train)[0].clip_id, "a");
        ds.split_mut(Split::Test).push(clip("c", 3, 5));
        assert!(ds.validate().is_err());
    }

    #[test]
    fn clip_level_targets_take_the_last_segment() {
        let mut ds = Dataset::new(
            Task::Classification,
            LabelLevel::Clip,
            [("a".to_string(), 1)].into(),
        );
        let mut c = clip("a", 4, 1);
        c.labels = vec![1.0; 4];
        ds.split_mut(Split::Dev).push(c);
        ds.split_mut(Split::Dev).push(clip("b", 2, 1));
        assert_eq!(ds.eval_targets(Split::Dev), vec![1.0, 0.0]);
    }
}
