//! Embedding bundles: a JSON manifest, a little-endian `f32` blob and CSV tables.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vhcbm_core::data::{Concept, ConceptSchema, DatasetParts, EmbeddingDataset, Split};

use crate::error::{io_err, AppError, Result};

pub const BUNDLE_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaEntry {
    pub name: String,
    pub cardinality: usize,
    /// Display names of the values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub n: usize,
    pub d: usize,
    pub byte_order: String,
    pub dtype: String,
    pub blob: String,
    pub checksum: String,
    pub schema: Vec<SchemaEntry>,
    pub labels: String,
    pub annotations: String,
    pub splits: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_refs: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_labels: Option<usize>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| AppError::Json { path: path.into(), source })
}

/// Rows of a headed CSV file, each split into fields.
fn read_rows(path: &Path, columns: usize) -> Result<Vec<csv::StringRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, 0, e))?;
    let mut rows = Vec::new();
    for (index, row) in reader.records().enumerate() {
        let row = row.map_err(|e| csv_error(path, index, e))?;
        if row.len() < columns {
            return Err(AppError::Record {
                path: path.into(),
                index,
                message: format!("expected {columns} fields, found {}", row.len()),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

fn csv_error(path: &Path, index: usize, e: csv::Error) -> AppError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => AppError::Io { path: path.into(), source },
        other => AppError::Record { path: path.into(), index, message: format!("{other:?}") },
    }
}

fn field<T: std::str::FromStr>(path: &Path, index: usize, row: &csv::StringRecord, col: usize, what: &str) -> Result<T> {
    row[col].parse().map_err(|_| AppError::Record {
        path: path.into(),
        index,
        message: format!("{what} {:?} is not a valid value", &row[col]),
    })
}

/// One entry per sample, each sample exactly once.
fn per_sample<T: Clone>(path: &Path, n: usize, entries: Vec<(usize, usize, T)>) -> Result<Vec<T>> {
    let mut out: Vec<Option<T>> = vec![None; n];
    for (index, sample, value) in entries {
        if sample >= n {
            return Err(AppError::Record { path: path.into(), index, message: format!("sample {sample} >= n = {n}") });
        }
        if out[sample].replace(value).is_some() {
            return Err(AppError::Record { path: path.into(), index, message: format!("sample {sample} listed twice") });
        }
    }
    match out.iter().position(Option::is_none) {
        Some(missing) => Err(AppError::Record {
            path: path.into(),
            index: missing,
            message: format!("sample {missing} is missing"),
        }),
        None => Ok(out.into_iter().map(|v| v.expect("all present")).collect()),
    }
}

/// Read and validate a bundle given its manifest path (or its directory).
pub fn load_bundle(path: impl AsRef<Path>) -> Result<EmbeddingDataset> {
    let mut manifest_path = path.as_ref().to_path_buf();
    if manifest_path.is_dir() {
        manifest_path.push(MANIFEST_FILE);
    }
    let manifest: Manifest = read_json(&manifest_path)?;
    let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let format = |message: String| AppError::Format { what: "manifest", message };
    if manifest.version != BUNDLE_VERSION {
        return Err(format(format!("unsupported version {}", manifest.version)));
    }
    if manifest.byte_order != "little" || manifest.dtype != "f32" {
        return Err(format(format!("unsupported blob encoding {}/{}", manifest.byte_order, manifest.dtype)));
    }

    let concepts = manifest
        .schema
        .iter()
        .map(|e| {
            let mut c = Concept::new(e.name.clone(), e.cardinality);
            if let Some(values) = &e.values {
                if values.len() != e.cardinality {
                    return Err(format(format!("concept {:?} lists {} value names", e.name, values.len())));
                }
                c.value_names = values.clone();
            }
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let schema = ConceptSchema::new(concepts)?;

    let blob_path = base.join(&manifest.blob);
    let blob = fs::read(&blob_path).map_err(io_err(&blob_path))?;
    let actual = sha256_hex(&blob);
    if !actual.eq_ignore_ascii_case(&manifest.checksum) {
        return Err(AppError::Checksum { path: blob_path, expected: manifest.checksum.clone(), actual });
    }
    let (n, d) = (manifest.n, manifest.d);
    if blob.len() % 4 != 0 || blob.len() / 4 != n * d {
        return Err(AppError::Dimension { path: blob_path, expected: n * d, actual: blob.len() / 4 });
    }
    let embeddings: Vec<f32> =
        blob.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();

    let labels_path = base.join(&manifest.labels);
    let entries = read_rows(&labels_path, 2)?
        .iter()
        .enumerate()
        .map(|(i, r)| {
            Ok((i, field(&labels_path, i, r, 0, "sample index")?, field::<usize>(&labels_path, i, r, 1, "label")?))
        })
        .collect::<Result<Vec<_>>>()?;
    let task_labels = per_sample(&labels_path, n, entries)?;

    let splits_path = base.join(&manifest.splits);
    let entries = read_rows(&splits_path, 2)?
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let split = Split::parse(&r[1]).ok_or_else(|| AppError::Record {
                path: splits_path.clone(),
                index: i,
                message: format!("unknown split {:?}", &r[1]),
            })?;
            Ok((i, field(&splits_path, i, r, 0, "sample index")?, split))
        })
        .collect::<Result<Vec<_>>>()?;
    let splits = per_sample(&splits_path, n, entries)?;

    let ann_path = base.join(&manifest.annotations);
    let rows = read_rows(&ann_path, 3)?;
    let mut annotations = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let sample: usize = field(&ann_path, i, r, 0, "sample index")?;
        let concept: usize = field(&ann_path, i, r, 1, "concept index")?;
        let value: usize = field(&ann_path, i, r, 2, "value")?;
        if concept < schema.len() && value >= schema.cardinality(concept) {
            return Err(AppError::Record {
                path: ann_path,
                index: i,
                message: format!(
                    "value {value} out of range for concept {concept} (cardinality {})",
                    schema.cardinality(concept)
                ),
            });
        }
        annotations.push((sample, concept, value));
    }

    let image_refs = match &manifest.image_refs {
        None => None,
        Some(rel) => {
            let p = base.join(rel);
            let entries = read_rows(&p, 2)?
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let text = r[1].to_string();
                    Ok((i, field::<usize>(&p, i, r, 0, "sample index")?, (!text.is_empty()).then_some(text)))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut refs = vec![None; n];
            for (index, sample, value) in entries {
                if sample >= n {
                    return Err(AppError::Record { path: p, index, message: format!("sample {sample} >= n = {n}") });
                }
                refs[sample] = value;
            }
            Some(refs)
        }
    };

    let dataset = EmbeddingDataset::new(
        schema,
        DatasetParts {
            n,
            d,
            embeddings,
            task_labels,
            num_labels: manifest.num_labels,
            annotations,
            splits,
            image_refs,
        },
    )
    .map_err(|e| match e {
        vhcbm_core::error::Error::InvalidRecord { index, message } => {
            AppError::Record { path: manifest_path.clone(), index, message }
        }
        other => other.into(),
    })?;
    Ok(dataset)
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, 0, e))?;
    w.write_record(header).map_err(|e| csv_error(path, 0, e))?;
    for (i, row) in rows.enumerate() {
        w.write_record(&row).map_err(|e| csv_error(path, i, e))?;
    }
    w.flush().map_err(io_err(path))
}

/// Write `dataset` into `dir` (created if needed); returns the manifest path.
pub fn write_bundle(dataset: &EmbeddingDataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let blob: Vec<u8> = dataset.embeddings().iter().flat_map(|x| x.to_le_bytes()).collect();
    let blob_path = dir.join("embeddings.f32");
    fs::write(&blob_path, &blob).map_err(io_err(&blob_path))?;

    write_csv(
        &dir.join("labels.csv"),
        &["sample_index", "label"],
        dataset.task_labels().iter().enumerate().map(|(i, y)| vec![i.to_string(), y.to_string()]),
    )?;
    write_csv(
        &dir.join("annotations.csv"),
        &["sample_index", "concept_index", "value"],
        dataset.annotations().map(|(s, c, v)| vec![s.to_string(), c.to_string(), v.to_string()]),
    )?;
    write_csv(
        &dir.join("splits.csv"),
        &["sample_index", "split"],
        dataset.splits().iter().enumerate().map(|(i, s)| vec![i.to_string(), s.as_str().to_string()]),
    )?;
    let image_refs = if dataset.has_image_refs() {
        write_csv(
            &dir.join("image_refs.csv"),
            &["sample_index", "image_ref"],
            dataset.image_refs().iter().enumerate().map(|(i, r)| vec![i.to_string(), r.clone().unwrap_or_default()]),
        )?;
        Some("image_refs.csv".to_string())
    } else {
        None
    };

    let manifest = Manifest {
        version: BUNDLE_VERSION,
        n: dataset.len(),
        d: dataset.dim(),
        byte_order: "little".into(),
        dtype: "f32".into(),
        blob: "embeddings.f32".into(),
        checksum: sha256_hex(&blob),
        schema: dataset
            .schema()
            .concepts()
            .iter()
            .map(|c| SchemaEntry { name: c.name.clone(), cardinality: c.cardinality, values: Some(c.value_names.clone()) })
            .collect(),
        labels: "labels.csv".into(),
        annotations: "annotations.csv".into(),
        splits: "splits.csv".into(),
        image_refs,
        num_labels: Some(dataset.num_labels()),
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(path)
}
