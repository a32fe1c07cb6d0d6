use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{check_dataset, global_avgpool};
use super::{NetGraph, Op};
use crate::di::{FeatureMatrix, LabelMatrix};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::tensor_io::Dataset;

const CHUNK: usize = 256;

/// Where along `layer -> batchnorm -> activation` the feature maps are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TapStage {
    PreActivation,
    PostBatchnorm,
    #[default]
    PostActivation,
}

impl TapStage {
    pub fn as_str(self) -> &'static str {
        match self {
            TapStage::PreActivation => "pre-activation",
            TapStage::PostBatchnorm => "post-batchnorm",
            TapStage::PostActivation => "post-activation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureTap {
    pub layer: String,
    pub stage: TapStage,
}

impl FeatureTap {
    pub fn new(layer: impl Into<String>, stage: TapStage) -> Self {
        FeatureTap {
            layer: layer.into(),
            stage,
        }
    }

    /// Index of the layer whose output realizes this tap.
    pub fn resolve(&self, net: &NetGraph) -> Result<usize> {
        let start = net
            .layer_index(&self.layer)
            .ok_or_else(|| Error::Tap(format!("unknown layer `{}`", self.layer)))?;
        if !matches!(net.layer(start).op, Op::Dense(_) | Op::Conv2d(_)) {
            return Err(Error::Tap(format!(
                "`{}` is not a dense or conv2d layer",
                self.layer
            )));
        }
        let sole_consumer = |i: usize| -> Option<usize> {
            let c = net.consumers(i);
            (c.len() == 1).then(|| c[0])
        };
        match self.stage {
            TapStage::PreActivation => Ok(start),
            TapStage::PostBatchnorm => sole_consumer(start)
                .filter(|&c| matches!(net.layer(c).op, Op::BatchNorm(_)))
                .ok_or_else(|| {
                    Error::Tap(format!("`{}` is not followed by a batchnorm", self.layer))
                }),
            TapStage::PostActivation => {
                let mut cur = start;
                while let Some(next) = sole_consumer(cur) {
                    match net.layer(next).op {
                        Op::Relu => return Ok(next),
                        Op::BatchNorm(_) | Op::Add => cur = next,
                        _ => break,
                    }
                }
                Err(Error::Tap(format!(
                    "no activation follows `{}`",
                    self.layer
                )))
            }
        }
    }
}

/// Features of several taps over one shared sample selection.
#[derive(Debug, Clone)]
pub struct TapSet {
    pub features: Vec<FeatureMatrix>,
    pub labels: LabelMatrix,
    pub sample_indices: Vec<usize>,
}

/// First `min(N, max_samples)` indices of a seeded shuffle of `0..n`.
pub fn select_samples(n: usize, max_samples: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(max_samples.min(n));
    idx
}

/// Extracts a `C x N'` feature matrix per tap; conv feature maps are
/// globally average-pooled to one value per channel and sample.
pub fn extract_tap_set(
    net: &NetGraph,
    data: &Dataset,
    taps: &[FeatureTap],
    max_samples: usize,
    seed: u64,
) -> Result<TapSet> {
    if max_samples == 0 {
        return Err(Error::Config("max_samples must be at least 1".into()));
    }
    check_dataset(net, data)?;
    let resolved: Vec<usize> = taps.iter().map(|t| t.resolve(net)).collect::<Result<_>>()?;
    let chosen = select_samples(data.len(), max_samples, seed);
    let n = chosen.len();
    let dims: Vec<usize> = resolved.iter().map(|&i| net.layer(i).out_shape[0]).collect();
    let mut columns: Vec<Vec<f64>> = dims.iter().map(|d| vec![0.0; d * n]).collect();

    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let sub = data.subset(&chosen[start..end])?;
        let acts = net.forward_all(sub.inputs(), Some(&resolved))?;
        let b = end - start;
        for (t, &li) in resolved.iter().enumerate() {
            let shape = &net.layer(li).out_shape;
            let pooled = if shape.len() == 3 {
                global_avgpool(&acts[li], b, shape)
            } else {
                acts[li].clone()
            };
            let d = dims[t];
            // pooled is B x D row-major; store as D x N
            for s in 0..b {
                for j in 0..d {
                    columns[t][j * n + start + s] = pooled[s * d + j];
                }
            }
        }
    }

    let labels: Vec<usize> = chosen.iter().map(|&i| data.labels()[i]).collect();
    let features = taps
        .iter()
        .zip(columns)
        .zip(&dims)
        .map(|((tap, col), &d)| FeatureMatrix::new(Mat::from_vec(d, n, col), &tap.layer, tap.stage))
        .collect::<Result<_>>()?;
    Ok(TapSet {
        features,
        labels: LabelMatrix::from_labels(&labels, data.num_classes())?,
        sample_indices: chosen,
    })
}

pub fn extract_features(
    net: &NetGraph,
    data: &Dataset,
    tap: &FeatureTap,
    max_samples: usize,
    seed: u64,
) -> Result<(FeatureMatrix, LabelMatrix)> {
    let mut set = extract_tap_set(net, data, std::slice::from_ref(tap), max_samples, seed)?;
    Ok((set.features.remove(0), set.labels))
}
