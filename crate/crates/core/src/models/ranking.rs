use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    HigherBetter,
    LowerBetter,
}

/// Uni-modal development score of one modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityRecord {
    pub name: String,
    pub feature_dim: usize,
    pub score: f64,
    pub metric_kind: MetricKind,
}

/// Orders modalities strongest first. Equal scores fall back to name order.
pub fn rank_modalities(records: &[ModalityRecord]) -> Result<Vec<ModalityRecord>> {
    if records.len() < 2 {
        return Err(Error::Config(format!(
            "ranking needs at least 2 modalities, got {}",
            records.len()
        )));
    }
    let kind = records[0].metric_kind;
    if records.iter().any(|r| r.metric_kind != kind) {
        return Err(Error::Config(
            "modalities were scored with different metric kinds".into(),
        ));
    }
    if let Some(r) = records.iter().find(|r| !r.score.is_finite()) {
        return Err(Error::numerical(
            "rank_modalities",
            format!("score of {} is {}", r.name, r.score),
        ));
    }
    let mut out = records.to_vec();
    out.sort_by(|a, b| {
        let by_score = match kind {
            MetricKind::HigherBetter => b.score.partial_cmp(&a.score),
            MetricKind::LowerBetter => a.score.partial_cmp(&b.score),
        }
        .unwrap_or(Ordering::Equal);
        by_score.then_with(|| a.name.cmp(&b.name))
    });
    for pair in out.windows(2) {
        if pair[0].score == pair[1].score {
            log::warn!(
                "modalities {} and {} tie at {}; ordering by name",
                pair[0].name,
                pair[1].name,
                pair[0].score
            );
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(name: &str, score: f64, kind: MetricKind) -> ModalityRecord {
        ModalityRecord {
            name: name.into(),
            feature_dim: 1,
            score,
            metric_kind: kind,
        }
    }

    fn names(v: &[ModalityRecord]) -> Vec<&str> {
        v.iter().map(|r| r.name.as_str()).collect()
    }

    #[test]
    fn sentiment_scores() {
        let hb = MetricKind::HigherBetter;
        let r =
            rank_modalities(&[rec("a", 61.0, hb), rec("v", 60.8, hb), rec("t", 80.3, hb)]).unwrap();
        assert_eq!(names(&r), ["t", "a", "v"]);
    }

    #[test]
    fn arousal_scores() {
        let hb = MetricKind::HigherBetter;
        let r = rank_modalities(&[
            rec("vis-geo", 0.536, hb),
            rec("acoustic", 0.786, hb),
            rec("vis-app", 0.541, hb),
        ])
        .unwrap();
        assert_eq!(r[0].name, "acoustic");
    }

    #[test]
    fn errors_rank_ascending() {
        let lb = MetricKind::LowerBetter;
        let r = rank_modalities(&[rec("x", 0.4, lb), rec("y", 0.1, lb)]).unwrap();
        assert_eq!(names(&r), ["y", "x"]);
    }

    #[test]
    fn ties_are_lexicographic() {
        let hb = MetricKind::HigherBetter;
        let r = rank_modalities(&[rec("zeta", 0.5, hb), rec("alpha", 0.5, hb)]).unwrap();
        assert_eq!(names(&r), ["alpha", "zeta"]);
    }

    #[test]
    fn rejects_bad_input() {
        let hb = MetricKind::HigherBetter;
        assert!(rank_modalities(&[rec("a", 1.0, hb)]).is_err());
        assert!(matches!(
            rank_modalities(&[rec("a", 1.0, hb), rec("b", 1.0, MetricKind::LowerBetter)]),
            Err(Error::Config(_))
        ));
    }
}
