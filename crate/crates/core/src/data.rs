//! Datasets: IDX ingestion (the standard MNIST container), deterministic
//! synthetic data for desk-scale experiments, and batch gathering.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Labeled classification data. The first axis of `inputs` is the sample
/// count; labels are class indices below `num_classes`.
#[derive(Debug, Clone)]
pub struct Dataset<S> {
    inputs: Tensor<S>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl<S: Real> Dataset<S> {
    pub fn new(inputs: Tensor<S>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidDataset(format!(
                "{num_classes} classes is a degenerate classification problem"
            )));
        }
        if inputs.batch_len() != labels.len() {
            return Err(Error::InvalidDataset(format!(
                "{} inputs vs {} labels",
                inputs.batch_len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidDataset(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn inputs(&self) -> &Tensor<S> {
        &self.inputs
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

    /// Per-sample input shape (without the batch axis).
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    /// Copy out the samples at `indices`, in the given order.
    pub fn gather(&self, indices: &[usize]) -> (Tensor<S>, Vec<usize>) {
        let stride: usize = self.sample_shape().iter().product();
        let mut data = Vec::with_capacity(indices.len() * stride);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.inputs.data()[i * stride..(i + 1) * stride]);
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.sample_shape());
        (Tensor::new(shape, data).expect("gathered batch"), labels)
    }

    /// The first `n` samples, in order. Used for fixed validation subsets.
    pub fn take_prefix(&self, n: usize) -> Dataset<S> {
        let n = n.min(self.len());
        let (inputs, labels) = self.gather(&(0..n).collect::<Vec<_>>());
        Dataset {
            inputs,
            labels,
            num_classes: self.num_classes,
        }
    }
}

fn read_u32_be(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::TruncatedFile(what.to_string()))?;
    Ok(u32::from_be_bytes(buf))
}

/// Load an IDX image/label pair. Pixels are scaled to `[0, 1]`; images come
/// out as `[n, 1, rows, cols]`.
pub fn load_idx<S: Real>(images_path: &Path, labels_path: &Path) -> Result<Dataset<S>> {
    let mut img = BufReader::new(File::open(images_path)?);
    let magic = read_u32_be(&mut img, "IDX image header")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            expected: "IDX image (0x00000803)",
            context: images_path.display().to_string(),
        });
    }
    let n = read_u32_be(&mut img, "IDX image count")? as usize;
    let rows = read_u32_be(&mut img, "IDX image rows")? as usize;
    let cols = read_u32_be(&mut img, "IDX image cols")? as usize;
    let mut pixels = vec![0u8; n * rows * cols];
    img.read_exact(&mut pixels)
        .map_err(|_| Error::TruncatedFile(format!("{}: pixel data", images_path.display())))?;

    let mut lab = BufReader::new(File::open(labels_path)?);
    let magic = read_u32_be(&mut lab, "IDX label header")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            expected: "IDX label (0x00000801)",
            context: labels_path.display().to_string(),
        });
    }
    let n_labels = read_u32_be(&mut lab, "IDX label count")? as usize;
    if n_labels != n {
        return Err(Error::InvalidDataset(format!(
            "{n} images but {n_labels} labels"
        )));
    }
    let mut raw_labels = vec![0u8; n_labels];
    lab.read_exact(&mut raw_labels)
        .map_err(|_| Error::TruncatedFile(format!("{}: label data", labels_path.display())))?;

    let data: Vec<S> = pixels
        .iter()
        .map(|&p| S::from_f64_(p as f64 / 255.0))
        .collect();
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1).max(2);
    let inputs = Tensor::new(vec![n, 1, rows, cols], data)?;
    Dataset::new(inputs, labels, num_classes)
}

/// Write a `[n, 1, rows, cols]` dataset with values in `[0, 1]` as an IDX
/// image/label pair (pixels rounded to the nearest u8 step).
pub fn write_idx<S: Real>(
    dataset: &Dataset<S>,
    images_path: &Path,
    labels_path: &Path,
) -> Result<()> {
    let shape = dataset.inputs().shape();
    if shape.len() != 4 || shape[1] != 1 {
        return Err(Error::InvalidDataset(format!(
            "IDX export needs [n, 1, rows, cols] images, got {shape:?}"
        )));
    }
    if dataset.num_classes() > 256 {
        return Err(Error::InvalidDataset(
            "IDX labels are single bytes; more than 256 classes cannot be stored".into(),
        ));
    }
    let (n, rows, cols) = (shape[0], shape[2], shape[3]);

    let mut img = BufWriter::new(File::create(images_path)?);
    img.write_all(&IDX_IMAGES_MAGIC.to_be_bytes())?;
    img.write_all(&(n as u32).to_be_bytes())?;
    img.write_all(&(rows as u32).to_be_bytes())?;
    img.write_all(&(cols as u32).to_be_bytes())?;
    for &v in dataset.inputs().data() {
        let p = (v.to_f64_() * 255.0).round().clamp(0.0, 255.0) as u8;
        img.write_all(&[p])?;
    }
    img.flush()?;

    let mut lab = BufWriter::new(File::create(labels_path)?);
    lab.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    lab.write_all(&(n as u32).to_be_bytes())?;
    for &l in dataset.labels() {
        lab.write_all(&[l as u8])?;
    }
    lab.flush()?;
    Ok(())
}

/// Deterministic, linearly separable vector dataset.
///
/// Class `c` sits at offset `2c` along a seeded unit direction; noise is
/// projected out of that direction, so the margin between classes survives
/// any noise draw and a toy classifier converges quickly.
pub fn synthesize_dataset<S: Real>(
    seed: u64,
    samples: usize,
    input_dim: usize,
    num_classes: usize,
) -> Result<Dataset<S>> {
    if samples == 0 || input_dim == 0 {
        return Err(Error::InvalidDataset("extents must be positive".into()));
    }
    if num_classes < 2 {
        return Err(Error::InvalidDataset(format!(
            "{num_classes} classes is a degenerate classification problem"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    let mut direction: Vec<f64> = (0..input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
    direction.iter_mut().for_each(|v| *v /= norm);

    let mut data = Vec::with_capacity(samples * input_dim);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let class = i % num_classes;
        let raw: Vec<f64> = (0..input_dim).map(|_| rng.gen_range(-0.4..0.4)).collect();
        let along: f64 = raw.iter().zip(&direction).map(|(r, u)| r * u).sum();
        for d in 0..input_dim {
            let noise = raw[d] - along * direction[d];
            data.push(S::from_f64_(2.0 * class as f64 * direction[d] + noise));
        }
        labels.push(class);
    }
    let inputs = Tensor::new(vec![samples, input_dim], data)?;
    Dataset::new(inputs, labels, num_classes)
}

/// Deterministic image dataset: class `c` is a bright block at a
/// class-specific position plus pixel noise, quantized to the u8 grid so an
/// IDX round trip is exact.
pub fn synthesize_images<S: Real>(
    seed: u64,
    samples: usize,
    rows: usize,
    cols: usize,
    num_classes: usize,
) -> Result<Dataset<S>> {
    if samples == 0 || rows < 2 || cols < 2 {
        return Err(Error::InvalidDataset(
            "need positive samples and at least 2x2 images".into(),
        ));
    }
    if num_classes < 2 {
        return Err(Error::InvalidDataset(format!(
            "{num_classes} classes is a degenerate classification problem"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let cells_x = (cols / 2).max(1);
    let cells_y = (rows / 2).max(1);

    let mut data = Vec::with_capacity(samples * rows * cols);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let class = i % num_classes;
        let cell = class % (cells_x * cells_y);
        let (cy, cx) = (cell / cells_x, cell % cells_x);
        for y in 0..rows {
            for x in 0..cols {
                let in_block = y / 2 == cy && x / 2 == cx;
                let base = if in_block { 0.85 } else { 0.1 };
                let v: f64 = base + rng.gen_range(-0.08..0.08);
                let q = (v * 255.0).round().clamp(0.0, 255.0) / 255.0;
                data.push(S::from_f64_(q));
            }
        }
        labels.push(class);
    }
    let inputs = Tensor::new(vec![samples, 1, rows, cols], data)?;
    Dataset::new(inputs, labels, num_classes)
}
