use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::net::{Batch, Targets};

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

/// Labeled examples with row-major inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, dim: usize, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if dim == 0 || inputs.len() != labels.len() * dim {
            return Err(Error::Dimension {
                expected: labels.len() * dim,
                got: inputs.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Consistency(format!(
                "label {bad} with {classes} classes"
            )));
        }
        Ok(Self {
            inputs,
            dim,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut inputs = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            inputs.extend_from_slice(self.row(i));
        }
        Dataset {
            inputs,
            dim: self.dim,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let sub = self.subset(indices);
        Batch::new(sub.inputs, self.dim, Targets::Classes(sub.labels))
    }

    /// Standardizes every entry with the scalar mean and std of the whole set.
    /// A constant dataset is only centered.
    pub fn normalize(&mut self) {
        if self.inputs.is_empty() {
            return;
        }
        let n = self.inputs.len() as f64;
        let mean = self.inputs.iter().sum::<f64>() / n;
        let var = self
            .inputs
            .iter()
            .map(|x| (x - mean) * (x - mean))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        for x in &mut self.inputs {
            *x -= mean;
            if std > 0.0 {
                *x /= std;
            }
        }
    }

    /// Shuffled split into `(train, validation)` with `val_fraction` of the rows held out.
    pub fn split(&self, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(val_fraction > 0.0 && val_fraction < 1.0) {
            return Err(Error::config(format!(
                "validation fraction {val_fraction} outside (0, 1)"
            )));
        }
        let n_val = (self.len() as f64 * val_fraction).round() as usize;
        if n_val == 0 || n_val == self.len() {
            return Err(Error::config(format!(
                "{} examples cannot be split with fraction {val_fraction}",
                self.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (val, train) = order.split_at(n_val);
        Ok((self.subset(train), self.subset(val)))
    }

    /// The first `per_class` examples of every class, in dataset order.
    pub fn take_per_class(&self, per_class: usize) -> Dataset {
        let mut counts = vec![0usize; self.classes];
        let picked: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let c = &mut counts[self.labels[i]];
                *c += 1;
                *c <= per_class
            })
            .collect();
        self.subset(&picked)
    }

    /// Share of the most frequent label.
    pub fn majority_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let mut counts = vec![0usize; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        *counts.iter().max().expect("at least one class") as f64 / self.len() as f64
    }

    /// SHA-256 over the dimension, labels and input bits.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        h.update((self.classes as u64).to_le_bytes());
        for &y in &self.labels {
            h.update((y as u64).to_le_bytes());
        }
        for x in &self.inputs {
            h.update(x.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn read_idx(path: &Path, magic: u32) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 {
        return Err(Error::format(
            path,
            format!("expected at least 4 bytes, found {}", bytes.len()),
        ));
    }
    let found = be_u32(&bytes, 0);
    if found != magic {
        return Err(Error::format(
            path,
            format!("magic {found:#010x}, expected {magic:#010x}"),
        ));
    }
    let ndims = (magic & 0xff) as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::format(
            path,
            format!(
                "expected a {header}-byte header, found {} bytes",
                bytes.len()
            ),
        ));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|k| be_u32(&bytes, 4 + 4 * k) as usize)
        .collect();
    let expected = header + dims.iter().product::<usize>();
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    Ok((dims, bytes[header..].to_vec()))
}

/// Reads an IDX image/label pair. Pixels are scaled to `[0, 1]` and then
/// standardized; the class count is one more than the largest label.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let (img_dims, pixels) = read_idx(images, IDX_IMAGES)?;
    let (lab_dims, raw_labels) = read_idx(labels, IDX_LABELS)?;
    if img_dims[0] != lab_dims[0] {
        return Err(Error::Consistency(format!(
            "{} images but {} labels",
            img_dims[0], lab_dims[0]
        )));
    }
    let dim = img_dims[1] * img_dims[2];
    let labels: Vec<usize> = raw_labels.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    let inputs = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let mut ds = Dataset::new(inputs, dim.max(1), labels, classes)?;
    ds.normalize();
    Ok(ds)
}

pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    if rows * cols == 0 || !pixels.len().is_multiple_of(rows * cols) {
        return Err(Error::config(
            "pixel buffer is not a whole number of images",
        ));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend(IDX_IMAGES.to_be_bytes());
    out.extend(((pixels.len() / (rows * cols)) as u32).to_be_bytes());
    out.extend((rows as u32).to_be_bytes());
    out.extend((cols as u32).to_be_bytes());
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend(IDX_LABELS.to_be_bytes());
    out.extend((labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parameters of the synthetic source/target pair.
///
/// Each class has a prototype in `[0, 1]^dim`; examples are the prototype
/// plus Gaussian noise, clipped to `[0, 1]`. The target domain moves every
/// prototype by `shift` times a standard normal draw and scales the noise by
/// `target_noise_scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub classes: usize,
    pub dim: usize,
    pub source_per_class: usize,
    pub target_per_class: usize,
    pub noise: f64,
    pub shift: f64,
    #[serde(default = "one")]
    pub target_noise_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            classes: 10,
            dim: 64,
            source_per_class: 300,
            target_per_class: 200,
            noise: 0.3,
            shift: 0.5,
            target_noise_scale: 1.0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2
            || self.dim == 0
            || self.source_per_class == 0
            || self.target_per_class == 0
        {
            return Err(Error::config(
                "synthetic data needs >= 2 classes and non-empty sets",
            ));
        }
        if !(self.noise >= 0.0 && self.shift >= 0.0 && self.target_noise_scale >= 0.0) {
            return Err(Error::config("noise and shift scales must be >= 0"));
        }
        Ok(())
    }
}

/// Class prototypes for the source and the target domain.
pub fn synth_prototypes(params: &SynthParams, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.classes * params.dim;
    let source: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let target = source
        .iter()
        .map(|&x| {
            let z: f64 = rng.sample(StandardNormal);
            (x + params.shift * z).clamp(0.0, 1.0)
        })
        .collect();
    (source, target)
}

fn sample_domain(
    prototypes: &[f64],
    params: &SynthParams,
    per_class: usize,
    noise: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Dataset> {
    let d = params.dim;
    let mut inputs = Vec::with_capacity(params.classes * per_class * d);
    let mut labels = Vec::with_capacity(params.classes * per_class);
    for _ in 0..per_class {
        for c in 0..params.classes {
            for &p in &prototypes[c * d..(c + 1) * d] {
                let z: f64 = rng.sample(StandardNormal);
                inputs.push((p + noise * z).clamp(0.0, 1.0));
            }
            labels.push(c);
        }
    }
    let mut ds = Dataset::new(inputs, d, labels, params.classes)?;
    ds.normalize();
    Ok(ds)
}

/// Deterministic `(source, target)` pair sharing label semantics.
pub fn synth_digits(params: &SynthParams, seed: u64) -> Result<(Dataset, Dataset)> {
    params.validate()?;
    let (src_proto, tgt_proto) = synth_prototypes(params, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let source = sample_domain(
        &src_proto,
        params,
        params.source_per_class,
        params.noise,
        &mut rng,
    )?;
    let target = sample_domain(
        &tgt_proto,
        params,
        params.target_per_class,
        params.noise * params.target_noise_scale,
        &mut rng,
    )?;
    Ok((source, target))
}
