//! Datasets, Mean-Std normalization and deterministic mini-batching.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const STD_FLOOR: f64 = 1e-8;
const BLOB_RADIUS: f64 = 3.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let (n, _) = features.dims2("dataset")?;
        if n == 0 {
            return Err(Error::config("dataset", "must contain at least one sample"));
        }
        if n != labels.len() {
            return Err(Error::config(
                "dataset",
                format!("{n} feature rows but {} labels", labels.len()),
            ));
        }
        if num_classes < 2 {
            return Err(Error::config("num_classes", "must be at least 2"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::config(
                "labels",
                format!("label {bad} out of range for {num_classes} classes"),
            ));
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
            num_classes,
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.shape()[1]
    }

    /// Widens the class count, e.g. so that train and test splits agree.
    pub fn with_num_classes(self, num_classes: usize) -> Result<Self> {
        Self::new(self.name, self.features, self.labels, num_classes)
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Parses an IDX image file and label file already in memory.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> std::result::Result<Dataset, String> {
    let magic = be_u32(images, 0).ok_or("image file truncated in header")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(format!("bad image magic 0x{magic:08x}"));
    }
    let dims: Vec<usize> = (0..3)
        .map(|i| be_u32(images, 4 + 4 * i).map(|v| v as usize))
        .collect::<Option<_>>()
        .ok_or("image file truncated in header")?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let width = rows * cols;
    let payload = &images[16..];
    if payload.len() < count * width {
        return Err(format!(
            "image payload truncated: need {} bytes, have {}",
            count * width,
            payload.len()
        ));
    }

    let lmagic = be_u32(labels, 0).ok_or("label file truncated in header")?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(format!("bad label magic 0x{lmagic:08x}"));
    }
    let lcount = be_u32(labels, 4).ok_or("label file truncated in header")? as usize;
    if lcount != count {
        return Err(format!("{count} images but {lcount} labels"));
    }
    let lpayload = &labels[8..];
    if lpayload.len() < lcount {
        return Err(format!(
            "label payload truncated: need {lcount} bytes, have {}",
            lpayload.len()
        ));
    }

    let data = payload[..count * width]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    let labels: Vec<usize> = lpayload[..lcount].iter().map(|&b| usize::from(b)).collect();
    let num_classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    let features = Tensor::new(vec![count, width], data).map_err(|e| e.to_string())?;
    Dataset::new("idx", features, labels, num_classes).map_err(|e| e.to_string())
}

/// Loads an IDX (MNIST-layout) image/label file pair. Pixels are scaled to
/// `[0, 1]` and images flattened to rows.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = read_bytes(images_path)?;
    let labels = read_bytes(labels_path)?;
    parse_idx(&images, &labels).map_err(|reason| Error::Format {
        path: images_path.to_path_buf(),
        reason,
    })
}

/// Loads a CSV file with a header row, float feature columns and an integer
/// label in the last column.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let fmt = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() < 2 {
            return Err(fmt(format!("row {}: need features and a label", line + 1)));
        }
        let fields: Vec<&str> = record.iter().collect();
        let (feat, label) = fields.split_at(fields.len() - 1);
        let parsed = feat
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| fmt(format!("row {}: {e}", line + 1)))?;
        let label: usize = label[0]
            .trim()
            .parse()
            .map_err(|e| fmt(format!("row {}: label: {e}", line + 1)))?;
        rows.push(parsed);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(fmt("no data rows".into()));
    }
    let num_classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    let features = Tensor::from_rows(&rows).map_err(|e| fmt(e.to_string()))?;
    let name = path
        .file_stem()
        .map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(name, features, labels, num_classes)
}

/// Gaussian blobs around `num_classes` points evenly spaced on a radius-3
/// circle in the first two coordinates; remaining coordinates are centered at
/// zero. Samples are ordered class by class.
pub fn synth_blobs(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::config("num_classes", "must be at least 2"));
    }
    if per_class == 0 {
        return Err(Error::config("per_class", "must be at least 1"));
    }
    if dim < 2 {
        return Err(Error::config("dim", "must be at least 2"));
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(Error::config(
            "spread",
            "must be a finite non-negative number",
        ));
    }
    let noise = Normal::new(0.0, spread)
        .map_err(|_| Error::config("spread", "must be a finite non-negative number"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(num_classes * per_class * dim);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for c in 0..num_classes {
        let angle = 2.0 * std::f64::consts::PI * c as f64 / num_classes as f64;
        let mut center = vec![0.0; dim];
        center[0] = BLOB_RADIUS * angle.cos();
        center[1] = BLOB_RADIUS * angle.sin();
        for _ in 0..per_class {
            data.extend(center.iter().map(|&x| x + noise.sample(&mut rng)));
            labels.push(c);
        }
    }
    let features = Tensor::new(vec![labels.len(), dim], data)?;
    Dataset::new("blobs", features, labels, num_classes)
}

/// Per-feature mean and (population) standard deviation, floored at 1e-8.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    pub fn fit(ds: &Dataset) -> Self {
        let n = ds.len() as f64;
        let d = ds.input_dim();
        let x = ds.features();
        let mut mean = vec![0.0; d];
        for r in 0..ds.len() {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in 0..ds.len() {
            for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Self { mean, std }
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.input_dim() != self.mean.len() {
            return Err(Error::ShapeMismatch {
                op: "normalize",
                left: vec![self.mean.len()],
                right: vec![ds.input_dim()],
            });
        }
        let d = self.mean.len();
        let data = ds
            .features()
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % d]) / self.std[i % d])
            .collect();
        let features = Tensor::new(ds.features().shape().to_vec(), data)?;
        Dataset::new(ds.name.clone(), features, ds.labels.clone(), ds.num_classes)
    }
}

/// Fits statistics on `train` and applies them to `train` and every split in
/// `others`.
pub fn mean_std_normalize(
    train: &Dataset,
    others: &[&Dataset],
) -> Result<(Dataset, Vec<Dataset>, NormalizationStats)> {
    let stats = NormalizationStats::fit(train);
    let train_n = stats.apply(train)?;
    let others_n = others
        .iter()
        .map(|d| stats.apply(d))
        .collect::<Result<_>>()?;
    Ok((train_n, others_n, stats))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub features: Tensor,
    pub one_hot_labels: Tensor,
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Builds one batch from the given sample indices.
pub fn make_batch(ds: &Dataset, indices: &[usize]) -> Result<Batch> {
    let features = ds.features().select_rows(indices)?;
    let m = ds.num_classes();
    let mut onehot = vec![0.0; indices.len() * m];
    for (i, &idx) in indices.iter().enumerate() {
        onehot[i * m + ds.labels()[idx]] = 1.0;
    }
    Ok(Batch {
        features,
        one_hot_labels: Tensor::from_parts(vec![indices.len(), m], onehot),
        indices: indices.to_vec(),
    })
}

/// Splits a seeded permutation of the dataset into consecutive batches. The
/// permutation depends only on `(shuffle_seed, epoch)`; the last batch may be
/// short.
pub fn batch_iterator(
    ds: &Dataset,
    batch_size: usize,
    shuffle_seed: u64,
    epoch: u64,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::config("batch_size", "must be at least 1"));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(shuffle_seed, epoch));
    order.shuffle(&mut rng);
    order
        .chunks(batch_size)
        .map(|c| make_batch(ds, c))
        .collect()
}
