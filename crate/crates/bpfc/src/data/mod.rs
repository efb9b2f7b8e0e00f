//! Dataset ingestion and canonical splits.
//!
//! Pixels are stored as reals in [0,1], obtained by dividing the raw
//! 8-bit value by 255; no further normalization happens before the model,
//! so attack budgets live in the same units everywhere.

mod cifar;
mod idx;

use crate::attacks::{TargetPolicy, ThreatModel};
use crate::error::{Error, Result};
use crate::float::Float;
use crate::quant::{QuantConfig, QuantMode};
use crate::rng::substream;
use ndarray::{Array1, Array4, Axis, s};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const DATA_ROOT_ENV: &str = "BPFC_DATA_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetId {
    Mnist,
    FashionMnist,
    Cifar10,
}

impl DatasetId {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "mnist" => Ok(DatasetId::Mnist),
            "f-mnist" | "fmnist" | "fashion-mnist" => Ok(DatasetId::FashionMnist),
            "cifar10" | "cifar-10" => Ok(DatasetId::Cifar10),
            other => Err(Error::UnknownDataset(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DatasetId::Mnist => "mnist",
            DatasetId::FashionMnist => "f-mnist",
            DatasetId::Cifar10 => "cifar10",
        }
    }

    /// (channels, height, width)
    pub fn input_shape(&self) -> (usize, usize, usize) {
        match self {
            DatasetId::Mnist | DatasetId::FashionMnist => (1, 28, 28),
            DatasetId::Cifar10 => (3, 32, 32),
        }
    }

    fn subdir(&self) -> &'static str {
        match self {
            DatasetId::Mnist => "mnist",
            DatasetId::FashionMnist => "fashion-mnist",
            DatasetId::Cifar10 => "cifar-10-batches-bin",
        }
    }
}

/// A batch of images with class labels.
#[derive(Debug, Clone)]
pub struct ImageBatch<F> {
    /// (batch, channels, height, width), values in [0,1].
    pub pixels: Array4<F>,
    pub labels: Array1<u8>,
}

impl<F: Float> ImageBatch<F> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels_vec(&self) -> Vec<u8> {
        self.labels.to_vec()
    }

    /// Copy out the rows at `idx`.
    pub fn gather(&self, idx: &[usize]) -> ImageBatch<F> {
        let (_, c, h, w) = self.pixels.dim();
        let mut pixels = Array4::<F>::zeros((idx.len(), c, h, w));
        let mut labels = Array1::<u8>::zeros(idx.len());
        for (row, &i) in idx.iter().enumerate() {
            pixels
                .index_axis_mut(Axis(0), row)
                .assign(&self.pixels.index_axis(Axis(0), i));
            labels[row] = self.labels[i];
        }
        ImageBatch { pixels, labels }
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> ImageBatch<F> {
        ImageBatch {
            pixels: self.pixels.slice(s![range.clone(), .., .., ..]).to_owned(),
            labels: self.labels.slice(s![range]).to_owned(),
        }
    }

    pub fn take(&self, n: usize) -> ImageBatch<F> {
        self.slice(0..n.min(self.len()))
    }

    /// Deterministic class-balanced subset: `total` samples, equally
    /// distributed across classes (stratified by a seeded shuffle).
    pub fn stratified_subset(&self, total: usize, class_count: usize, seed: u64) -> ImageBatch<F> {
        let per = total / class_count;
        let mut rng = substream(seed, "stratified");
        let mut chosen = Vec::with_capacity(total);
        for class in 0..class_count {
            let mut members: Vec<usize> = (0..self.len())
                .filter(|&i| self.labels[i] as usize == class)
                .collect();
            members.shuffle(&mut rng);
            chosen.extend(members.into_iter().take(per));
        }
        chosen.sort_unstable();
        self.gather(&chosen)
    }

    /// Iterate over minibatches in a seeded shuffled order.
    pub fn shuffled_batches(&self, batch_size: usize, seed: u64) -> Vec<ImageBatch<F>> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut substream(seed, "batch-shuffle"));
        idx.chunks(batch_size).map(|c| self.gather(c)).collect()
    }

    /// Per-class sample counts.
    pub fn class_histogram(&self, class_count: usize) -> Vec<usize> {
        let mut h = vec![0usize; class_count];
        for &l in self.labels.iter() {
            h[l as usize] += 1;
        }
        h
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub id: DatasetId,
    pub bit_depth: u8,
    pub class_count: usize,
    /// (train, val, test)
    pub split_sizes: (usize, usize, usize),
    pub default_threat: ThreatModel,
    pub default_quant: QuantConfig,
}

impl DatasetSpec {
    pub fn for_dataset(id: DatasetId) -> Self {
        let split_sizes = match id {
            DatasetId::Mnist | DatasetId::FashionMnist => (50_000, 10_000, 10_000),
            DatasetId::Cifar10 => (40_000, 10_000, 10_000),
        };
        DatasetSpec {
            id,
            bit_depth: 8,
            class_count: 10,
            split_sizes,
            default_threat: default_threat_model(id),
            default_quant: default_quant_config(id),
        }
    }
}

/// Evaluation threat model per dataset: (epsilon, step size) plus the
/// standard step-count ladder for the white-box tables.
pub fn default_threat_model(id: DatasetId) -> ThreatModel {
    let (eps, eps_step, steps) = match id {
        DatasetId::Cifar10 => (8.0 / 255.0, 2.0 / 255.0, 7),
        DatasetId::Mnist => (0.3, 0.01, 40),
        DatasetId::FashionMnist => (0.1, 0.01, 40),
    };
    ThreatModel {
        eps,
        eps_step,
        steps,
        restarts: 1,
        random_start: true,
        target_policy: TargetPolicy::Untargeted,
        seed: 0,
    }
}

/// The step-count ladder used in the white-box tables.
pub fn pgd_step_ladder(id: DatasetId) -> [usize; 3] {
    match id {
        DatasetId::Cifar10 => [7, 20, 1000],
        DatasetId::Mnist | DatasetId::FashionMnist => [40, 100, 1000],
    }
}

/// Training quantization defaults: k = 5 / 6 / 7 for CIFAR-10 /
/// F-MNIST / MNIST.
pub fn default_quant_config(id: DatasetId) -> QuantConfig {
    let k = match id {
        DatasetId::Cifar10 => 5,
        DatasetId::FashionMnist => 6,
        DatasetId::Mnist => 7,
    };
    QuantConfig { bit_depth: 8, dropped_bits: k, mode: QuantMode::Stochastic }
}

/// Loaded dataset with its canonical splits.
#[derive(Debug, Clone)]
pub struct Dataset<F> {
    pub train: ImageBatch<F>,
    pub val: ImageBatch<F>,
    pub test: ImageBatch<F>,
    pub spec: DatasetSpec,
    /// Seed that produced the train/val partition.
    pub split_seed: u64,
}

/// Resolve the dataset root directory: explicit argument, then the
/// BPFC_DATA_ROOT environment variable, then ./data.
pub fn resolve_data_root(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Ok(env) = std::env::var(DATA_ROOT_ENV) {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    PathBuf::from("data")
}

/// Load a dataset and split it deterministically.
///
/// The validation split is the last 10,000 indices of the full training
/// set after a seeded shuffle; the test split never depends on the seed.
pub fn load_dataset<F: Float>(id: DatasetId, root: &Path, seed: u64) -> Result<Dataset<F>> {
    let dir = root.join(id.subdir());
    let (full_train, test) = match id {
        DatasetId::Mnist | DatasetId::FashionMnist => {
            let tr = load_idx_pair::<F>(
                &dir.join("train-images-idx3-ubyte"),
                &dir.join("train-labels-idx1-ubyte"),
            )?;
            let te = load_idx_pair::<F>(
                &dir.join("t10k-images-idx3-ubyte"),
                &dir.join("t10k-labels-idx1-ubyte"),
            )?;
            (tr, te)
        }
        DatasetId::Cifar10 => {
            let mut labels = Vec::new();
            let mut pixels = Vec::new();
            for i in 1..=5 {
                let (l, p) = cifar::read_cifar_batch(&dir.join(format!("data_batch_{i}.bin")))?;
                labels.extend(l);
                pixels.extend(p);
            }
            let tr = cifar_to_batch::<F>(labels, pixels)?;
            let (l, p) = cifar::read_cifar_batch(&dir.join("test_batch.bin"))?;
            let te = cifar_to_batch::<F>(l, p)?;
            (tr, te)
        }
    };

    let spec = DatasetSpec::for_dataset(id);
    let total = full_train.len();
    let val_size = spec.split_sizes.1;
    if total != spec.split_sizes.0 + val_size {
        return Err(Error::DatasetFile {
            path: dir.display().to_string(),
            reason: format!(
                "training set has {total} samples, expected {}",
                spec.split_sizes.0 + val_size
            ),
        });
    }

    let mut idx: Vec<usize> = (0..total).collect();
    idx.shuffle(&mut substream(seed, "train-val-split"));
    let (train_idx, val_idx) = idx.split_at(total - val_size);
    let mut train_idx = train_idx.to_vec();
    let mut val_idx = val_idx.to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();

    Ok(Dataset {
        train: full_train.gather(&train_idx),
        val: full_train.gather(&val_idx),
        test,
        spec,
        split_seed: seed,
    })
}

fn load_idx_pair<F: Float>(images: &Path, labels: &Path) -> Result<ImageBatch<F>> {
    let (n, rows, cols, data) = idx::read_idx_images(images)?;
    let lab = idx::read_idx_labels(labels)?;
    if lab.len() != n {
        return Err(Error::DatasetFile {
            path: labels.display().to_string(),
            reason: format!("{} labels for {n} images", lab.len()),
        });
    }
    let inv = F::of(1.0 / 255.0);
    let pixels = Array4::from_shape_vec(
        (n, 1, rows, cols),
        data.iter().map(|&b| F::of(b as f64) * inv).collect(),
    )
    .expect("shape from file header");
    Ok(ImageBatch { pixels, labels: Array1::from_vec(lab) })
}

fn cifar_to_batch<F: Float>(labels: Vec<u8>, pixels: Vec<u8>) -> Result<ImageBatch<F>> {
    let n = labels.len();
    let inv = F::of(1.0 / 255.0);
    let arr = Array4::from_shape_vec(
        (n, 3, 32, 32),
        pixels.iter().map(|&b| F::of(b as f64) * inv).collect(),
    )
    .expect("record size checked by reader");
    Ok(ImageBatch { pixels: arr, labels: Array1::from_vec(labels) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_names_parse() {
        assert_eq!(DatasetId::parse("MNIST").unwrap(), DatasetId::Mnist);
        assert_eq!(DatasetId::parse("f-mnist").unwrap(), DatasetId::FashionMnist);
        assert_eq!(DatasetId::parse("cifar10").unwrap(), DatasetId::Cifar10);
        assert!(DatasetId::parse("svhn").is_err());
    }

    #[test]
    fn threat_defaults_match_protocol() {
        let t = default_threat_model(DatasetId::Cifar10);
        assert!((t.eps - 8.0 / 255.0).abs() < 1e-12);
        assert!((t.eps_step - 2.0 / 255.0).abs() < 1e-12);
        let t = default_threat_model(DatasetId::Mnist);
        assert_eq!(t.eps, 0.3);
        assert_eq!(t.eps_step, 0.01);
        let t = default_threat_model(DatasetId::FashionMnist);
        assert_eq!(t.eps, 0.1);
        assert_eq!(t.eps_step, 0.01);
    }

    #[test]
    fn quant_defaults_match_protocol() {
        assert_eq!(default_quant_config(DatasetId::Cifar10).dropped_bits, 5);
        assert_eq!(default_quant_config(DatasetId::FashionMnist).dropped_bits, 6);
        assert_eq!(default_quant_config(DatasetId::Mnist).dropped_bits, 7);
    }

    #[test]
    fn stratified_subset_is_balanced() {
        let n = 200;
        let pixels = Array4::<f32>::zeros((n, 1, 2, 2));
        let labels = Array1::from_shape_fn(n, |i| (i % 10) as u8);
        let b = ImageBatch { pixels, labels };
        let sub = b.stratified_subset(50, 10, 3);
        assert_eq!(sub.len(), 50);
        assert!(sub.class_histogram(10).iter().all(|&c| c == 5));
    }
}
