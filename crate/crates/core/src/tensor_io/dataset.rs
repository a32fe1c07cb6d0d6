use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Labeled samples, stored row-major as `N x prod(sample_shape)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<f32>,
    sample_shape: Vec<usize>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        inputs: Vec<f32>,
        sample_shape: Vec<usize>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let per: usize = sample_shape.iter().product();
        if sample_shape.is_empty() || per == 0 {
            return Err(Error::Dataset(format!("invalid sample shape {sample_shape:?}")));
        }
        if labels.is_empty() {
            return Err(Error::Dataset("dataset has no samples".into()));
        }
        if inputs.len() != per * labels.len() {
            return Err(Error::Dataset(format!(
                "{} input values for {} samples of shape {sample_shape:?}",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Dataset(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset {
            inputs,
            sample_shape,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self) -> &[f32] {
        &self.inputs
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.inputs[i * n..(i + 1) * n]
    }

    /// Inputs of samples `start..end`.
    pub fn input_range(&self, start: usize, end: usize) -> &[f32] {
        let n = self.sample_len();
        &self.inputs[start * n..end * n]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        let mut inputs = Vec::with_capacity(idx.len() * self.sample_len());
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= self.len() {
                return Err(Error::Dataset(format!("sample index {i} out of range")));
            }
            inputs.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(inputs, self.sample_shape.clone(), labels, self.num_classes)
    }

    /// Splits off `round(fraction * N)` samples (at least one, at most `N - 1`)
    /// chosen by a seeded shuffle; both parts keep the original sample order.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(fraction > 0.0 && fraction < 1.0) || self.len() < 2 {
            return Err(Error::Config(format!(
                "split fraction {fraction} invalid for {} samples",
                self.len()
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let take = ((fraction * self.len() as f64).round() as usize).clamp(1, self.len() - 1);
        let mut held: Vec<usize> = idx[..take].to_vec();
        let mut rest: Vec<usize> = idx[take..].to_vec();
        held.sort_unstable();
        rest.sort_unstable();
        Ok((self.subset(&rest)?, self.subset(&held)?))
    }
}

/// Gaussian-blob classification data, fully determined by its fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub n: usize,
    pub seed: u64,
    /// Standard deviation of the class centers around the origin.
    #[serde(default = "default_separation")]
    pub separation: f64,
    /// Standard deviation of samples around their class center.
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_separation() -> f64 {
    1.0
}

fn default_noise() -> f64 {
    1.0
}

impl SyntheticSpec {
    pub fn new(classes: usize, dim: usize, n: usize, seed: u64) -> Self {
        SyntheticSpec {
            classes,
            dim,
            n,
            seed,
            separation: default_separation(),
            noise: default_noise(),
        }
    }

    /// Sample `i` has label `i % classes`.
    pub fn generate(&self) -> Result<Dataset> {
        if self.classes < 2 || self.dim == 0 || self.n == 0 {
            return Err(Error::Dataset(format!(
                "synthetic spec needs classes >= 2, dim >= 1, n >= 1: {self:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let centers: Vec<f64> = (0..self.classes * self.dim)
            .map(|_| normal() * self.separation)
            .collect();
        let mut inputs = Vec::with_capacity(self.n * self.dim);
        let mut labels = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let k = i % self.classes;
            for d in 0..self.dim {
                inputs.push((centers[k * self.dim + d] + normal() * self.noise) as f32);
            }
            labels.push(k);
        }
        Dataset::new(inputs, vec![self.dim], labels, self.classes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    /// Classic ubyte IDX pair; the labels file is found next to the images
    /// file by swapping `images`/`labels` and `idx3`/`idx1` in its name.
    Idx,
    /// One sample per line: `feature, ..., feature, label`.
    Csv,
    /// JSON [`SyntheticSpec`].
    SyntheticSpec,
}

impl DatasetFormat {
    pub fn infer(path: &Path) -> DatasetFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => DatasetFormat::SyntheticSpec,
            Some("csv") => DatasetFormat::Csv,
            _ => DatasetFormat::Idx,
        }
    }
}

/// Loads a dataset; `num_classes` defaults to `max(label) + 1`
/// (synthetic specs carry their own class count).
pub fn load_dataset(
    path: impl AsRef<Path>,
    format: DatasetFormat,
    num_classes: Option<usize>,
) -> Result<Dataset> {
    let path = path.as_ref();
    match format {
        DatasetFormat::SyntheticSpec => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let spec: SyntheticSpec = serde_json::from_str(&text)
                .map_err(|e| Error::Dataset(format!("bad synthetic spec: {e}")))?;
            spec.generate()
        }
        DatasetFormat::Csv => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_csv(&text, num_classes)
        }
        DatasetFormat::Idx => {
            let labels = idx_labels_path(path)?;
            load_idx(path, &labels, num_classes)
        }
    }
}

fn parse_csv(text: &str, num_classes: Option<usize>) -> Result<Dataset> {
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if labels.is_empty() && width.is_none() => continue, // header
            Err(e) => return Err(Error::Dataset(format!("line {}: {e}", lineno + 1))),
        };
        if values.len() < 2 {
            return Err(Error::Dataset(format!("line {}: need features and a label", lineno + 1)));
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Dataset(format!(
                    "line {}: {} fields, expected {w}",
                    lineno + 1,
                    values.len()
                )))
            }
            _ => {}
        }
        let label = values[values.len() - 1];
        if label < 0.0 || label.fract() != 0.0 {
            return Err(Error::Dataset(format!("line {}: label {label} is not a class index", lineno + 1)));
        }
        labels.push(label as usize);
        inputs.extend(values[..values.len() - 1].iter().map(|&v| v as f32));
    }
    let w = width.ok_or_else(|| Error::Dataset("csv has no rows".into()))?;
    let k = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    Dataset::new(inputs, vec![w - 1], labels, k)
}

fn idx_labels_path(images: &Path) -> Result<PathBuf> {
    let name = images
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Dataset(format!("bad idx path {}", images.display())))?;
    let swapped = name.replace("images", "labels").replace("idx3", "idx1");
    if swapped == name {
        return Err(Error::Dataset(format!(
            "cannot derive a labels file name from `{name}`"
        )));
    }
    Ok(images.with_file_name(swapped))
}

fn parse_idx(bytes: &[u8], what: &str) -> Result<(Vec<usize>, Vec<u8>)> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Dataset(format!("{what}: bad idx magic")));
    }
    if bytes[2] != 0x08 {
        return Err(Error::Dataset(format!("{what}: only unsigned-byte idx data is supported")));
    }
    let ndim = bytes[3] as usize;
    let header = 4 + 4 * ndim;
    if ndim == 0 || bytes.len() < header {
        return Err(Error::Dataset(format!("{what}: truncated idx header")));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count: usize = dims.iter().product();
    if bytes.len() - header != count {
        return Err(Error::Dataset(format!(
            "{what}: {} data bytes, dims {dims:?} need {count}",
            bytes.len() - header
        )));
    }
    Ok((dims, bytes[header..].to_vec()))
}

pub fn load_idx(images: &Path, labels: &Path, num_classes: Option<usize>) -> Result<Dataset> {
    let ib = fs::read(images).map_err(|e| Error::io(images, e))?;
    let lb = fs::read(labels).map_err(|e| Error::io(labels, e))?;
    let (idims, pixels) = parse_idx(&ib, "images")?;
    let (ldims, raw_labels) = parse_idx(&lb, "labels")?;
    if ldims.len() != 1 || ldims[0] != idims[0] {
        return Err(Error::Dataset(format!(
            "{} images but labels have dims {ldims:?}",
            idims[0]
        )));
    }
    let shape = match idims.len() {
        2 => vec![idims[1]],
        3 => vec![1, idims[1], idims[2]],
        4 => vec![idims[1], idims[2], idims[3]],
        _ => return Err(Error::Dataset(format!("unsupported image dims {idims:?}"))),
    };
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let k = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    let inputs = pixels.iter().map(|&p| p as f32 / 255.0).collect();
    Dataset::new(inputs, shape, labels, k)
}

/// Writes an unsigned-byte IDX file.
pub fn write_idx(path: &Path, dims: &[usize], data: &[u8]) -> Result<()> {
    let mut out = vec![0, 0, 0x08, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
