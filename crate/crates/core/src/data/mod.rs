//! Clip datasets: manifest and CSV I/O, label shift, sliding windows,
//! train-split standardisation and the synthetic two-modality generator.

mod dataset;
mod io;
mod preprocess;
mod synthetic;

pub use dataset::{Dataset, LabelLevel, SegmentClip, Split};
pub use io::{load_dataset, read_csv_matrix, save_dataset, write_csv_matrix, ClipEntry, Manifest};
pub use preprocess::{shift_labels, standardize, window_clips, FeatureStats, Standardizer};
pub use synthetic::{generate_synthetic, LabelRule, SyntheticSpec};
