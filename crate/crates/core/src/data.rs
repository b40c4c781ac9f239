//! Feature-file ingestion, dataset manifests and the synthetic generator.
//!
//! Feature files are either the binary layout below or plain CSV (one row
//! per instance, chosen by the `.csv` extension):
//!
//! ```text
//! magic "GPLF" | version u32 LE | n u32 LE | dim u32 LE | n*dim f32 LE row-major
//! ```
//!
//! Values are f32 on disk and widened to f64 in memory. A manifest is a TOML
//! document naming the two feature files, an optional label file (one
//! integer per line) and the train/test split sizes.

use std::fs;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"GPLF";
pub const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found:?}, expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        found: [u8; 4],
        expected: [u8; 4],
    },
    #[error("{path}: unsupported format version {found}, expected {expected}")]
    BadVersion {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: truncated payload, expected {expected} bytes after header, got {actual}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: non-finite value at element {index}")]
    NotFinite { path: PathBuf, index: usize },
    #[error("{path}: row {row} has {got} values, expected {expected}")]
    RaggedCsv {
        path: PathBuf,
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("{path}: cannot parse `{token}` on line {line}")]
    Parse {
        path: PathBuf,
        line: usize,
        token: String,
    },
    #[error("instance counts disagree: image {image}, text {text}{labels}")]
    CountMismatch {
        image: usize,
        text: usize,
        labels: String,
    },
    #[error("{path}: manifest error: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("split sizes {train}+{test} do not match instance count {n}")]
    BadSplit { train: usize, test: usize, n: usize },
    #[error("invalid synthetic spec: {0}")]
    BadSyntheticSpec(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ── Feature files ────────────────────────────────────────────────────

/// Writes a feature matrix, binary or CSV depending on the extension.
pub fn write_feature_file(path: &Path, features: &Tensor) -> Result<(), DataError> {
    if path.extension().is_some_and(|e| e == "csv") {
        return write_feature_csv(path, features);
    }
    let mut bytes =
        Vec::with_capacity(16 + features.numel() * std::mem::size_of::<f32>());
    bytes.extend_from_slice(FEATURE_MAGIC);
    bytes.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(features.rows() as u32).to_le_bytes());
    bytes.extend_from_slice(&(features.cols() as u32).to_le_bytes());
    for &v in features.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn write_feature_csv(path: &Path, features: &Tensor) -> Result<(), DataError> {
    let mut out = String::new();
    for r in 0..features.rows() {
        let row: Vec<String> = features.row(r).iter().map(|v| format!("{v}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Reads a feature matrix written by [`write_feature_file`].
pub fn read_feature_file(path: &Path) -> Result<Tensor, DataError> {
    if path.extension().is_some_and(|e| e == "csv") {
        return read_feature_csv(path);
    }
    let mut file = fs::File::open(path).map_err(io_err(path))?;
    let mut header = [0u8; 16];
    file.read_exact(&mut header).map_err(io_err(path))?;
    let magic: [u8; 4] = header[0..4].try_into().expect("sized");
    if &magic != FEATURE_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            found: magic,
            expected: *FEATURE_MAGIC,
        });
    }
    let version = u32::from_le_bytes(header[4..8].try_into().expect("sized"));
    if version != FEATURE_VERSION {
        return Err(DataError::BadVersion {
            path: path.to_path_buf(),
            found: version,
            expected: FEATURE_VERSION,
        });
    }
    let n = u32::from_le_bytes(header[8..12].try_into().expect("sized")) as usize;
    let dim = u32::from_le_bytes(header[12..16].try_into().expect("sized")) as usize;
    let mut payload = Vec::new();
    file.read_to_end(&mut payload).map_err(io_err(path))?;
    let expected = n * dim * std::mem::size_of::<f32>();
    if payload.len() != expected {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: payload.len(),
        });
    }
    let mut data = Vec::with_capacity(n * dim);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("sized")) as f64;
        if !v.is_finite() {
            return Err(DataError::NotFinite {
                path: path.to_path_buf(),
                index: i,
            });
        }
        data.push(v);
    }
    Ok(Tensor::new(n, dim, data).expect("validated length"))
}

fn read_feature_csv(path: &Path) -> Result<Tensor, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for token in line.split(',') {
            let token = token.trim();
            let v: f64 = token.parse().map_err(|_| DataError::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                token: token.to_string(),
            })?;
            if !v.is_finite() {
                return Err(DataError::NotFinite {
                    path: path.to_path_buf(),
                    index: lineno,
                });
            }
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(DataError::RaggedCsv {
                    path: path.to_path_buf(),
                    row: lineno + 1,
                    got: row.len(),
                    expected: first.len(),
                });
            }
        }
        rows.push(row);
    }
    Tensor::from_rows(&rows).map_err(|_| DataError::Manifest {
        path: path.to_path_buf(),
        message: "empty feature csv".into(),
    })
}

pub fn write_labels_file(path: &Path, labels: &[u32]) -> Result<(), DataError> {
    let mut out = String::new();
    for l in labels {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_labels_file(path: &Path) -> Result<Vec<u32>, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        labels.push(line.parse().map_err(|_| DataError::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            token: line.to_string(),
        })?);
    }
    Ok(labels)
}

// ── Manifest ─────────────────────────────────────────────────────────

/// TOML document tying a dataset together. Paths are resolved relative to
/// the manifest's own directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub image_features: String,
    pub text_features: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
    pub train: usize,
    pub test: usize,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        toml::from_str(&text).map_err(|e| DataError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let text = toml::to_string(self).map_err(|e| DataError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut file = fs::File::create(path).map_err(io_err(path))?;
        file.write_all(text.as_bytes()).map_err(io_err(path))
    }
}

// ── Paired dataset ───────────────────────────────────────────────────

/// Index-paired image and text features with optional labels. The first
/// `n_train` rows are the training split, the rest the test split. Labels
/// are used only for retrieval evaluation, never by training.
pub struct PairedDataset {
    pub images: Tensor,
    pub texts: Tensor,
    pub labels: Option<Vec<u32>>,
    pub n_train: usize,
}

impl PairedDataset {
    pub fn n(&self) -> usize {
        self.images.rows()
    }

    pub fn dim_img(&self) -> usize {
        self.images.cols()
    }

    pub fn dim_txt(&self) -> usize {
        self.texts.cols()
    }

    pub fn train_range(&self) -> Range<usize> {
        0..self.n_train
    }

    pub fn test_range(&self) -> Range<usize> {
        self.n_train..self.n()
    }

    /// Rows of one modality gathered by index.
    pub fn gather(&self, indices: &[usize], modality: crate::projector::Modality) -> Tensor {
        let src = match modality {
            crate::projector::Modality::Image => &self.images,
            crate::projector::Modality::Text => &self.texts,
        };
        let mut data = Vec::with_capacity(indices.len() * src.cols());
        for &i in indices {
            data.extend_from_slice(src.row(i));
        }
        Tensor::new(indices.len(), src.cols(), data).expect("gathered shape")
    }
}

/// Loads and validates the dataset named by a manifest.
pub fn load_dataset(manifest_path: &Path) -> Result<PairedDataset, DataError> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let images = read_feature_file(&base.join(&manifest.image_features))?;
    let texts = read_feature_file(&base.join(&manifest.text_features))?;
    let labels = manifest
        .labels
        .as_ref()
        .map(|p| read_labels_file(&base.join(p)))
        .transpose()?;
    if images.rows() != texts.rows()
        || labels.as_ref().is_some_and(|l| l.len() != images.rows())
    {
        return Err(DataError::CountMismatch {
            image: images.rows(),
            text: texts.rows(),
            labels: labels
                .as_ref()
                .map(|l| format!(", labels {}", l.len()))
                .unwrap_or_default(),
        });
    }
    let n = images.rows();
    if manifest.train + manifest.test != n {
        return Err(DataError::BadSplit {
            train: manifest.train,
            test: manifest.test,
            n,
        });
    }
    Ok(PairedDataset {
        images,
        texts,
        labels,
        n_train: manifest.train,
    })
}

// ── Synthetic data ───────────────────────────────────────────────────

/// Parameters of the clustered synthetic dataset. Every cluster draws an
/// independent standard-normal prototype per modality; instances add
/// `noise_sigma`-scaled Gaussian noise to their cluster's prototypes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_clusters: usize,
    pub per_cluster: usize,
    pub dim_img: usize,
    pub dim_txt: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Generates a deterministic paired dataset with cluster labels. Instance
/// order is shuffled so a leading train split stays class-balanced; the
/// whole set is marked as training data (callers adjust `n_train`).
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<PairedDataset, DataError> {
    if spec.n_clusters == 0 || spec.per_cluster == 0 || spec.dim_img == 0 || spec.dim_txt == 0 {
        return Err(DataError::BadSyntheticSpec(
            "all counts and dimensions must be positive".into(),
        ));
    }
    if !(spec.noise_sigma.is_finite() && spec.noise_sigma >= 0.0) {
        return Err(DataError::BadSyntheticSpec(format!(
            "noise_sigma must be finite and non-negative, got {}",
            spec.noise_sigma
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = StandardNormal;
    let draw = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n).map(|_| normal.sample(rng)).collect()
    };

    let img_prototypes: Vec<Vec<f64>> = (0..spec.n_clusters)
        .map(|_| draw(spec.dim_img, &mut rng))
        .collect();
    let txt_prototypes: Vec<Vec<f64>> = (0..spec.n_clusters)
        .map(|_| draw(spec.dim_txt, &mut rng))
        .collect();

    let n = spec.n_clusters * spec.per_cluster;
    let mut images = Vec::with_capacity(n * spec.dim_img);
    let mut texts = Vec::with_capacity(n * spec.dim_txt);
    let mut labels = Vec::with_capacity(n);
    for cluster in 0..spec.n_clusters {
        for _ in 0..spec.per_cluster {
            for (d, &p) in img_prototypes[cluster].iter().enumerate() {
                let _ = d;
                let noise: f64 = normal.sample(&mut rng);
                images.push(p + spec.noise_sigma * noise);
            }
            for &p in &txt_prototypes[cluster] {
                let noise: f64 = normal.sample(&mut rng);
                texts.push(p + spec.noise_sigma * noise);
            }
            labels.push(cluster as u32);
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut img_shuffled = Vec::with_capacity(images.len());
    let mut txt_shuffled = Vec::with_capacity(texts.len());
    let mut lab_shuffled = Vec::with_capacity(n);
    for &i in &order {
        img_shuffled.extend_from_slice(&images[i * spec.dim_img..(i + 1) * spec.dim_img]);
        txt_shuffled.extend_from_slice(&texts[i * spec.dim_txt..(i + 1) * spec.dim_txt]);
        lab_shuffled.push(labels[i]);
    }

    Ok(PairedDataset {
        images: Tensor::new(n, spec.dim_img, img_shuffled).expect("sized"),
        texts: Tensor::new(n, spec.dim_txt, txt_shuffled).expect("sized"),
        labels: Some(lab_shuffled),
        n_train: n,
    })
}

/// Writes a dataset to `dir` as feature files, labels and a manifest.
/// Returns the manifest path.
pub fn save_dataset(
    dir: &Path,
    dataset: &PairedDataset,
    n_train: usize,
    n_test: usize,
) -> Result<PathBuf, DataError> {
    if n_train + n_test != dataset.n() {
        return Err(DataError::BadSplit {
            train: n_train,
            test: n_test,
            n: dataset.n(),
        });
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_feature_file(&dir.join("images.gplf"), &dataset.images)?;
    write_feature_file(&dir.join("texts.gplf"), &dataset.texts)?;
    let labels = dataset
        .labels
        .as_ref()
        .map(|l| -> Result<String, DataError> {
            write_labels_file(&dir.join("labels.txt"), l)?;
            Ok("labels.txt".to_string())
        })
        .transpose()?;
    let manifest = DatasetManifest {
        image_features: "images.gplf".into(),
        text_features: "texts.gplf".into(),
        labels,
        train: n_train,
        test: n_test,
    };
    let path = dir.join("manifest.toml");
    manifest.save(&path)?;
    Ok(path)
}
