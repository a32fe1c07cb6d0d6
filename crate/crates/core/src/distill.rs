//! Stage-wise keep-ratio profiles: extracted from a pruned network and
//! applied to another (usually deeper) one.
//!
//! A stage is a maximal run of consecutive prunable layers (topological
//! order) whose outputs share one spatial resolution; dense layers count as
//! 1x1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heuristics::ScoreTable;
use crate::netgraph::NetGraph;
use crate::pruner::{apply_prune, unit_orders, PruneMask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRatio {
    pub stage: usize,
    pub keep_ratio: f64,
    pub layers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageProfile {
    pub stages: Vec<StageRatio>,
}

impl StageProfile {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Profile("profile has no stages".into()));
        }
        for s in &self.stages {
            if !(s.keep_ratio > 0.0 && s.keep_ratio <= 1.0) {
                return Err(Error::Profile(format!(
                    "stage {} keep ratio {} not in (0, 1]",
                    s.stage, s.keep_ratio
                )));
            }
        }
        Ok(())
    }

    pub fn ratios(&self) -> Vec<f64> {
        self.stages.iter().map(|s| s.keep_ratio).collect()
    }
}

fn resolution(net: &NetGraph, layer: usize) -> (usize, usize) {
    match net.layer(layer).out_shape.as_slice() {
        [_, h, w] => (*h, *w),
        _ => (1, 1),
    }
}

/// Prunable layer indices grouped into stages.
pub fn stages(net: &NetGraph) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = net
        .prune_units()
        .iter()
        .flat_map(|u| u.producers.iter().copied())
        .collect();
    idx.sort_unstable();
    let mut out: Vec<Vec<usize>> = Vec::new();
    for i in idx {
        match out.last_mut() {
            Some(stage) if resolution(net, stage[0]) == resolution(net, i) => stage.push(i),
            _ => out.push(vec![i]),
        }
    }
    out
}

fn channels(net: &NetGraph, layer: usize) -> usize {
    net.layer(layer).out_shape[0]
}

pub fn extract_profile(original: &NetGraph, pruned: &NetGraph) -> Result<StageProfile> {
    let names = |n: &NetGraph| n.layers().iter().map(|l| l.name.clone()).collect::<Vec<_>>();
    if names(original) != names(pruned) {
        return Err(Error::Profile("original and pruned networks have different layers".into()));
    }
    let stage_list = stages(original);
    if stage_list.is_empty() {
        return Err(Error::Profile("network has no prunable layers".into()));
    }
    let stages = stage_list
        .into_iter()
        .enumerate()
        .map(|(s, layers)| {
            let mut sum = 0.0;
            for &l in &layers {
                if original.layer(l).op.kind() != pruned.layer(l).op.kind() {
                    return Err(Error::Profile(format!(
                        "layer `{}` changed kind",
                        original.layer(l).name
                    )));
                }
                let (before, after) = (channels(original, l), channels(pruned, l));
                if after > before {
                    return Err(Error::Profile(format!(
                        "layer `{}` grew from {before} to {after} channels",
                        original.layer(l).name
                    )));
                }
                sum += after as f64 / before as f64;
            }
            Ok(StageRatio {
                stage: s,
                keep_ratio: sum / layers.len() as f64,
                layers: layers.iter().map(|&l| original.layer(l).name.clone()).collect(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(StageProfile { stages })
}

/// Keeps `ceil(r * C)` top-ranked channels in every layer, where `r` is the
/// ratio of the profile stage mapped to the layer's stage. Target stage `i`
/// of `S` reads profile stage `floor(i * P / S)`. Grouped layers keep the
/// largest count requested by any member.
pub fn apply_profile(target: &NetGraph, profile: &StageProfile, scores: &ScoreTable) -> Result<(PruneMask, NetGraph)> {
    profile.validate()?;
    let stage_list = stages(target);
    let (s_count, p_count) = (stage_list.len(), profile.stages.len());
    if s_count < p_count {
        return Err(Error::Profile(format!(
            "target has {s_count} stages, profile has {p_count}"
        )));
    }
    let mut ratio_of_layer = vec![None; target.layers().len()];
    for (i, stage) in stage_list.iter().enumerate() {
        let r = profile.stages[i * p_count / s_count].keep_ratio;
        for &l in stage {
            ratio_of_layer[l] = Some(r);
        }
    }
    let orders = unit_orders(target, scores)?;
    let kept: Vec<Vec<usize>> = target
        .prune_units()
        .iter()
        .zip(orders)
        .map(|(u, order)| {
            let keep = u
                .producers
                .iter()
                .map(|&p| {
                    let r = ratio_of_layer[p].expect("every producer is in a stage");
                    ((r * u.channels as f64 - 1e-9).ceil() as usize).clamp(1, u.channels)
                })
                .max()
                .unwrap_or(u.channels);
            order[..keep].to_vec()
        })
        .collect();
    let mask = PruneMask::from_kept(target, &kept);
    let net = apply_prune(target, &mask)?;
    Ok((mask, net))
}
