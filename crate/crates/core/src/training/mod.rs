//! Two-stage optimisation: the stronger modality's source model first, then
//! the weaker modality's model against the frozen source.

mod config;
mod optimizer;
mod stream;
mod trainer;

pub use config::{Ablation, TrainConfig};
pub use optimizer::AdamState;
pub use stream::{read_metrics, JsonlSink, MetricsLine, MetricsSink, NullSink};
pub use trainer::{
    encode_clips, evaluate, predict_split, train_source, train_weak, EpochReport, SplitReport,
    TrainOutcome, STREAM_DROPOUT, STREAM_SHUFFLE,
};
