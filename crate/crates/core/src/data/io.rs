use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, LabelLevel, SegmentClip, Split};
use crate::models::Task;
use crate::numerics::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipEntry {
    pub clip_id: String,
    pub features: BTreeMap<String, PathBuf>,
    pub labels: PathBuf,
}

/// On-disk description of a dataset. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub task: Task,
    #[serde(default)]
    pub label_level: LabelLevel,
    pub modalities: BTreeMap<String, usize>,
    #[serde(default)]
    pub splits: BTreeMap<Split, Vec<ClipEntry>>,
}

/// Reads a header-less numeric CSV into `[rows × cols]`.
pub fn read_csv_matrix(path: &Path) -> Result<Tensor<f32>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, None, e))?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| csv_error(path, Some(row), e))?;
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(Error::Data {
                    path: path.to_path_buf(),
                    row: Some(row),
                    detail: format!("expected {c} columns, found {}", record.len()),
                })
            }
            _ => {}
        }
        for cell in record.iter() {
            let v: f32 = cell.parse().map_err(|_| Error::Data {
                path: path.to_path_buf(),
                row: Some(row),
                detail: format!("non-numeric cell {cell:?}"),
            })?;
            data.push(v);
        }
        rows += 1;
    }
    Tensor::new(&[rows, cols.unwrap_or(0)], data)
}

fn csv_error(path: &Path, row: Option<usize>, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Data {
            path: path.to_path_buf(),
            row,
            detail: format!("{other:?}"),
        },
    }
}

/// Writes `[rows × cols]` as header-less CSV using shortest round-trip decimals.
pub fn write_csv_matrix(path: &Path, x: &Tensor<f32>) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_error(path, None, e))?;
    let cols = x.cols();
    for r in 0..x.rows() {
        let row = &x.data()[r * cols..(r + 1) * cols];
        writer
            .write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| csv_error(path, Some(r + 1), e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn load_clip(base: &Path, entry: &ClipEntry, level: LabelLevel) -> Result<SegmentClip> {
    let mut features = BTreeMap::new();
    for (name, rel) in &entry.features {
        features.insert(name.clone(), read_csv_matrix(&base.join(rel))?);
    }
    let label_path = base.join(&entry.labels);
    let raw = read_csv_matrix(&label_path)?;
    if raw.cols() != 1 && raw.rows() > 0 {
        return Err(Error::Data {
            path: label_path,
            row: Some(1),
            detail: format!("labels need a single column, found {}", raw.cols()),
        });
    }
    let mut labels = raw.into_data();
    if level == LabelLevel::Clip && labels.len() == 1 {
        let n = features.values().next().map_or(1, Tensor::rows);
        labels = vec![labels[0]; n];
    }
    SegmentClip::new(entry.clip_id.clone(), features, labels)
}

/// Loads every clip listed in the manifest at `path`, sorted by clip id.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut ds = Dataset::new(
        manifest.task,
        manifest.label_level,
        manifest.modalities.clone(),
    );
    for (split, entries) in &manifest.splits {
        let clips = entries
            .par_iter()
            .map(|e| load_clip(base, e, manifest.label_level))
            .collect::<Result<Vec<_>>>()?;
        *ds.split_mut(*split) = clips;
    }
    ds.validate()?;
    Ok(ds)
}

/// Writes one CSV per clip and modality plus a label CSV, then the manifest.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<PathBuf> {
    let mut manifest = Manifest {
        task: ds.task,
        label_level: ds.label_level,
        modalities: ds.modalities.clone(),
        splits: BTreeMap::new(),
    };
    for (split, clips) in &ds.splits {
        let sub = dir.join(split.as_str());
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let mut entries = Vec::with_capacity(clips.len());
        for clip in clips {
            let mut features = BTreeMap::new();
            for (name, x) in &clip.features {
                let rel =
                    PathBuf::from(split.as_str()).join(format!("{}.{name}.csv", clip.clip_id));
                write_csv_matrix(&dir.join(&rel), x)?;
                features.insert(name.clone(), rel);
            }
            let labels = match ds.label_level {
                LabelLevel::Segment => clip.labels.clone(),
                LabelLevel::Clip => vec![clip.labels[0]],
            };
            let rel = PathBuf::from(split.as_str()).join(format!("{}.labels.csv", clip.clip_id));
            write_csv_matrix(&dir.join(&rel), &Tensor::new(&[labels.len(), 1], labels)?)?;
            entries.push(ClipEntry {
                clip_id: clip.clip_id.clone(),
                features,
                labels: rel,
            });
        }
        manifest.splits.insert(*split, entries);
    }
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_errors_name_file_and_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "1,2\n3,abc\n").unwrap();
        match read_csv_matrix(&p) {
            Err(Error::Data { path, row, .. }) => {
                assert_eq!(path, p);
                assert_eq!(row, Some(2));
            }
            other => panic!("{other:?}"),
        }
        fs::write(&p, "1,2\n3\n").unwrap();
        assert!(matches!(
            read_csv_matrix(&p),
            Err(Error::Data { row: Some(2), .. })
        ));
        assert!(matches!(
            read_csv_matrix(&dir.path().join("nope.csv")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn awkward_floats_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        let vals = vec![0.1f32, -1.0e-38, 3.4028235e38, 1.0 / 3.0, -0.0, 7.0e-45];
        let x = Tensor::new(&[2, 3], vals).unwrap();
        write_csv_matrix(&p, &x).unwrap();
        let back = read_csv_matrix(&p).unwrap();
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&x));
    }

    #[test]
    fn empty_split_loads() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        fs::write(
            &p,
            r#"{"task":"regression","modalities":{"a":2},"splits":{"train":[]}}"#,
        )
        .unwrap();
        let ds = load_dataset(&p).unwrap();
        assert!(ds.split(Split::Train).is_empty());
    }
}
