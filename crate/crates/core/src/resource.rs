//! FLOPs and parameter accounting.
//!
//! FLOPs are multiply-accumulate counts (one MAC = one FLOP). Only conv2d
//! and dense layers contribute FLOPs; batchnorm, activations, pooling and
//! additions count as zero. Parameters include biases and all four
//! batchnorm vectors (scale, shift, running mean, running variance), i.e.
//! every stored scalar.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netgraph::{NetGraph, Op};

pub const MAC_CONVENTION: &str = "mac";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerResource {
    pub name: String,
    pub flops: u64,
    pub params: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceReport {
    pub convention: String,
    pub layers: Vec<LayerResource>,
    pub total_flops: u64,
    pub total_params: u64,
}

impl ResourceReport {
    pub fn layer(&self, name: &str) -> Option<&LayerResource> {
        self.layers.iter().find(|l| l.name == name)
    }
}

pub fn count_resources(net: &NetGraph) -> ResourceReport {
    count_with_sizes(net, net.space_sizes())
}

/// Counts resources as if every channel space had the given size.
pub(crate) fn count_with_sizes(net: &NetGraph, sizes: &[usize]) -> ResourceReport {
    let mut layers = Vec::with_capacity(net.layers().len());
    for (i, l) in net.layers().iter().enumerate() {
        let input = net.input_channels_of(i);
        let out_c = sizes[l.channels.space] as u64;
        let (flops, params) = match &l.op {
            Op::Dense(d) => {
                let din = (sizes[input.space] * input.per_channel) as u64;
                let bias = if d.bias.is_some() { out_c } else { 0 };
                (din * out_c, din * out_c + bias)
            }
            Op::Conv2d(c) => {
                let (kh, kw) = (c.kernel.0 as u64, c.kernel.1 as u64);
                let spatial = (l.out_shape[1] * l.out_shape[2]) as u64;
                let cin_per_group = if c.is_depthwise() { 1 } else { sizes[input.space] as u64 };
                let weights = kh * kw * cin_per_group * out_c;
                let bias = if c.bias.is_some() { out_c } else { 0 };
                (weights * spatial, weights + bias)
            }
            Op::BatchNorm(_) => (0, 4 * out_c),
            Op::Relu | Op::AvgPool { .. } | Op::GlobalAvgPool | Op::Add | Op::Flatten => (0, 0),
        };
        layers.push(LayerResource {
            name: l.name.clone(),
            flops,
            params,
        });
    }
    ResourceReport {
        convention: MAC_CONVENTION.into(),
        total_flops: layers.iter().map(|l| l.flops).sum(),
        total_params: layers.iter().map(|l| l.params).sum(),
        layers,
    }
}

/// Predicted report after removing `k` output channels of `layer` (and of
/// every layer coupled to it), without touching the network.
pub fn resource_after_removal(net: &NetGraph, layer: &str, k: usize) -> Result<ResourceReport> {
    let li = net
        .layer_index(layer)
        .ok_or_else(|| Error::InvalidPrune(format!("unknown layer `{layer}`")))?;
    let unit = net
        .unit_of_layer(li)
        .ok_or_else(|| Error::InvalidPrune(format!("layer `{layer}` is not prunable")))?;
    resource_after_unit_removal(net, unit, k)
}

pub fn resource_after_unit_removal(net: &NetGraph, unit: usize, k: usize) -> Result<ResourceReport> {
    let u = &net.prune_units()[unit];
    if k >= u.channels {
        return Err(Error::InvalidPrune(format!(
            "cannot remove {k} of {} channels",
            u.channels
        )));
    }
    let mut sizes = net.space_sizes().to_vec();
    sizes[u.space] -= k;
    Ok(count_with_sizes(net, &sizes))
}
