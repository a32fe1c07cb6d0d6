//! Per-filter affine weight quantization with two bit-widths per layer,
//! and byte-exact model size accounting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::heuristics::ScoreTable;
use crate::netgraph::{NetGraph, Op};
use crate::pruner::rank_scores;
use crate::resource::count_resources;
use crate::tensor_io::PackedCodes;

/// Scale and zero-point storage per quantized filter (two 32-bit values).
pub const FILTER_OVERHEAD_BYTES: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub bits_high: u8,
    pub bits_low: u8,
    pub high_fraction: f64,
}

impl Default for QuantSpec {
    fn default() -> Self {
        QuantSpec {
            bits_high: 4,
            bits_low: 2,
            high_fraction: 0.5,
        }
    }
}

impl QuantSpec {
    pub fn uniform(bits: u8) -> Self {
        QuantSpec {
            bits_high: bits,
            bits_low: bits,
            high_fraction: 1.0,
        }
    }

    /// `bits_low == bits_high` is accepted and means uniform precision.
    pub fn validate(&self) -> Result<()> {
        if !(2..=8).contains(&self.bits_high) {
            return Err(Error::Config(format!("bits_high {} not in 2..=8", self.bits_high)));
        }
        if self.bits_low < 1 || self.bits_low > self.bits_high {
            return Err(Error::Config(format!(
                "bits_low {} must be in 1..={}",
                self.bits_low, self.bits_high
            )));
        }
        if !(0.0..=1.0).contains(&self.high_fraction) {
            return Err(Error::Config(format!("high_fraction {} not in [0, 1]", self.high_fraction)));
        }
        Ok(())
    }

    /// Number of filters (out of `c`) receiving `bits_high`.
    pub fn high_count(&self, c: usize) -> usize {
        ((self.high_fraction * c as f64 - 1e-9).ceil().max(0.0) as usize).min(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedFilter {
    pub bits: u8,
    pub scale: f64,
    pub zero_point: f64,
    #[serde(skip)]
    pub codes: Vec<u32>,
}

impl QuantizedFilter {
    pub fn dequantize(&self) -> Vec<f64> {
        self.codes
            .iter()
            .map(|&q| (q as f64 - self.zero_point) * self.scale)
            .collect()
    }
}

/// Affine quantization of one filter: `scale = (max - min) / (2^b - 1)`,
/// `zero_point = -min / scale` (kept unrounded so both range endpoints are
/// representable), `code = clamp(round(w / scale + zero_point))`.
pub fn quantize_filter(w: &[f32], bits: u8) -> QuantizedFilter {
    assert!((1..=32).contains(&bits));
    let levels = ((1u64 << bits) - 1) as f64;
    let (min, max) = w.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v as f64), hi.max(v as f64))
    });
    let (min, max) = if w.is_empty() { (0.0, 0.0) } else { (min, max) };
    let scale = if max > min { (max - min) / levels } else { 1.0 };
    let zero_point = -min / scale;
    let codes = w
        .iter()
        .map(|&v| (v as f64 / scale + zero_point).round().clamp(0.0, levels) as u32)
        .collect();
    QuantizedFilter {
        bits,
        scale,
        zero_point,
        codes,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedLayer {
    pub name: String,
    pub weights_per_filter: usize,
    pub filters: Vec<QuantizedFilter>,
}

impl QuantizedLayer {
    pub fn dequantize(&self) -> Vec<f32> {
        self.filters
            .iter()
            .flat_map(|f| f.dequantize())
            .map(|v| v as f32)
            .collect()
    }

    pub fn packed(&self) -> Result<PackedCodes> {
        PackedCodes::new(
            self.filters.iter().map(|f| f.bits).collect(),
            self.filters.iter().map(|f| f.codes.clone()).collect(),
        )
    }

    pub fn weight_bytes(&self) -> u64 {
        self.filters
            .iter()
            .map(|f| PackedCodes::row_bytes(f.bits, self.weights_per_filter) as u64 + FILTER_OVERHEAD_BYTES)
            .sum()
    }
}

/// Quantizes the filters of a flattened `C x filter_len` weight tensor. The
/// top `ceil(high_fraction * C)` filters by score get `bits_high`; without
/// scores every filter does.
pub fn quantize_layer(
    name: &str,
    weights: &[f32],
    filter_len: usize,
    scores: Option<&[f64]>,
    spec: &QuantSpec,
) -> Result<QuantizedLayer> {
    spec.validate()?;
    if filter_len == 0 || weights.len() % filter_len != 0 {
        return Err(Error::Shape(format!(
            "`{name}`: {} weights do not split into filters of {filter_len}",
            weights.len()
        )));
    }
    let c = weights.len() / filter_len;
    let mut bits = vec![spec.bits_high; c];
    if let Some(s) = scores {
        if s.len() != c {
            return Err(Error::ScoreCoverage(format!(
                "`{name}` has {c} filters but {} scores",
                s.len()
            )));
        }
        for &j in &rank_scores(&[s])[spec.high_count(c)..] {
            bits[j] = spec.bits_low;
        }
    }
    let filters = weights
        .chunks(filter_len)
        .zip(bits)
        .map(|(w, b)| quantize_filter(w, b))
        .collect();
    Ok(QuantizedLayer {
        name: name.into(),
        weights_per_filter: filter_len,
        filters,
    })
}

/// Storage precision of one layer's weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LayerPrecision {
    Float32,
    Quantized(QuantSpec),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSize {
    pub name: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeReport {
    pub layers: Vec<LayerSize>,
    pub total_bytes: u64,
}

fn weight_shape(op: &Op) -> Option<(usize, usize, bool)> {
    match op {
        Op::Dense(d) => Some((d.out_features, d.in_features, d.bias.is_some())),
        Op::Conv2d(c) => Some((c.out_channels, c.filter_len(), c.bias.is_some())),
        _ => None,
    }
}

/// Bytes needed to store `net`. Quantized layers cost
/// `ceil(bits * weights_per_filter / 8) + 8` per filter plus f32 biases;
/// everything else is stored as f32.
pub fn model_size(net: &NetGraph, precision: &BTreeMap<String, LayerPrecision>) -> Result<SizeReport> {
    let res = count_resources(net);
    let mut layers = Vec::with_capacity(net.layers().len());
    for (l, r) in net.layers().iter().zip(&res.layers) {
        let bytes = match (precision.get(&l.name), weight_shape(&l.op)) {
            (Some(LayerPrecision::Quantized(spec)), Some((c, wpf, has_bias))) => {
                spec.validate()?;
                let high = spec.high_count(c) as u64;
                let per = |b: u8| PackedCodes::row_bytes(b, wpf) as u64 + FILTER_OVERHEAD_BYTES;
                high * per(spec.bits_high) + (c as u64 - high) * per(spec.bits_low) + if has_bias { 4 * c as u64 } else { 0 }
            }
            (Some(LayerPrecision::Quantized(_)), None) => {
                return Err(Error::Config(format!("layer `{}` has no weights to quantize", l.name)))
            }
            _ => 4 * r.params,
        };
        layers.push(LayerSize {
            name: l.name.clone(),
            bytes,
        });
    }
    Ok(SizeReport {
        total_bytes: layers.iter().map(|l| l.bytes).sum(),
        layers,
    })
}

#[derive(Debug, Clone)]
pub struct QuantizedModel {
    /// The network with dequantized weights, ready for inference.
    pub net: NetGraph,
    pub layers: Vec<QuantizedLayer>,
    pub size: SizeReport,
}

impl QuantizedModel {
    /// `{"layers": {name: [{"bits", "scale", "zero_point"}]}}`
    pub fn sidecar(&self) -> Value {
        let layers: serde_json::Map<String, Value> = self
            .layers
            .iter()
            .map(|l| (l.name.clone(), json!(l.filters)))
            .collect();
        json!({ "layers": layers })
    }
}

/// Quantizes every dense and conv layer. Prunable layers use the scores for
/// the bit split and must be covered by them; the rest use `bits_high`.
pub fn quantize_model(net: &NetGraph, scores: &ScoreTable, spec: &QuantSpec) -> Result<QuantizedModel> {
    spec.validate()?;
    let prunable: Vec<&str> = net.prunable_layers();
    let mut ops = Vec::with_capacity(net.layers().len());
    let mut layers = Vec::new();
    let mut precision = BTreeMap::new();
    for l in net.layers() {
        let Some((c, wpf, _)) = weight_shape(&l.op) else {
            ops.push(l.op.clone());
            continue;
        };
        let (s, layer_spec) = if prunable.contains(&l.name.as_str()) {
            (Some(scores.dense_scores(&l.name, c)?), *spec)
        } else {
            (None, QuantSpec::uniform(spec.bits_high))
        };
        let q = match &l.op {
            Op::Dense(d) => quantize_layer(&l.name, &d.weight, wpf, s.as_deref(), &layer_spec)?,
            Op::Conv2d(cv) => quantize_layer(&l.name, &cv.weight, wpf, s.as_deref(), &layer_spec)?,
            _ => unreachable!(),
        };
        let w = q.dequantize();
        ops.push(match &l.op {
            Op::Dense(d) => Op::Dense(crate::netgraph::Dense { weight: w, ..d.clone() }),
            Op::Conv2d(cv) => Op::Conv2d(crate::netgraph::Conv2d { weight: w, ..cv.clone() }),
            _ => unreachable!(),
        });
        precision.insert(l.name.clone(), LayerPrecision::Quantized(layer_spec));
        layers.push(q);
    }
    let qnet = net.with_ops(ops)?;
    let size = model_size(net, &precision)?;
    Ok(QuantizedModel {
        net: qnet,
        layers,
        size,
    })
}
