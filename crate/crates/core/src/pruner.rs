//! Channel masks, structural rewriting, uniform and greedy budgeted pruning.

use std::collections::BTreeMap;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, PartialPrune, Result};
use crate::heuristics::{score_network, Heuristic, ScoreOptions, ScoreTable};
use crate::netgraph::{evaluate_accuracy, BatchNorm, Conv2d, Dense, NetGraph, Op};
use crate::resource::{count_resources, count_with_sizes};
use crate::tensor_io::Dataset;

/// Keep-vectors of prunable producer layers. Layers absent from the map
/// keep all channels.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PruneMask {
    pub layers: BTreeMap<String, Vec<bool>>,
}

impl PruneMask {
    pub fn all_keep(net: &NetGraph) -> Self {
        let mut layers = BTreeMap::new();
        for u in net.prune_units() {
            for &p in &u.producers {
                layers.insert(net.layer(p).name.clone(), vec![true; u.channels]);
            }
        }
        PruneMask { layers }
    }

    /// Mask keeping, for every unit, exactly the listed channels.
    pub fn from_kept(net: &NetGraph, kept: &[Vec<usize>]) -> Self {
        let mut layers = BTreeMap::new();
        for (u, keep) in net.prune_units().iter().zip(kept) {
            let mut m = vec![false; u.channels];
            for &c in keep {
                m[c] = true;
            }
            for &p in &u.producers {
                layers.insert(net.layer(p).name.clone(), m.clone());
            }
        }
        PruneMask { layers }
    }

    pub fn removed(&self, layer: &str) -> Vec<usize> {
        self.layers
            .get(layer)
            .map(|m| (0..m.len()).filter(|&j| !m[j]).collect())
            .unwrap_or_default()
    }
}

/// One accepted greedy step. `removed_channels` are indices in the
/// original (unpruned) network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneStep {
    pub layer: String,
    pub channels_removed: usize,
    pub removed_channels: Vec<usize>,
    pub resource: u64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PruneTrace {
    pub flops_original: u64,
    pub flops_goal: u64,
    pub steps: Vec<PruneStep>,
}

impl PruneTrace {
    /// Re-applies every step to the original network.
    pub fn replay(&self, base: &NetGraph) -> Result<(PruneMask, NetGraph)> {
        let mut kept: Vec<Vec<usize>> = base.prune_units().iter().map(|u| (0..u.channels).collect()).collect();
        for s in &self.steps {
            let li = base
                .layer_index(&s.layer)
                .ok_or_else(|| Error::InvalidPrune(format!("trace names unknown layer `{}`", s.layer)))?;
            let u = base
                .unit_of_layer(li)
                .ok_or_else(|| Error::InvalidPrune(format!("trace names non-prunable layer `{}`", s.layer)))?;
            for c in &s.removed_channels {
                let pos = kept[u]
                    .iter()
                    .position(|k| k == c)
                    .ok_or_else(|| Error::InvalidPrune(format!("channel {c} of `{}` removed twice", s.layer)))?;
                kept[u].remove(pos);
            }
        }
        let mask = PruneMask::from_kept(base, &kept);
        let net = apply_prune(base, &mask)?;
        Ok((mask, net))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpec {
    /// Fraction of the original FLOPs to retain.
    pub flops_goal: f64,
    /// Per-step FLOPs reduction as a fraction of the original FLOPs.
    pub delta: f64,
    pub val_fraction: f64,
    pub recompute_scores: bool,
    pub seed: u64,
    pub threads: usize,
}

impl BudgetSpec {
    pub fn new(flops_goal: f64, delta: f64) -> Self {
        BudgetSpec {
            flops_goal,
            delta,
            val_fraction: 0.1,
            recompute_scores: false,
            seed: 0,
            threads: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.flops_goal > 0.0 && self.flops_goal < 1.0) {
            return Err(Error::Config(format!("flops goal {} not in (0, 1)", self.flops_goal)));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0 - self.flops_goal + 1e-12) {
            return Err(Error::Config(format!(
                "delta {} must be in (0, 1 - goal]",
                self.delta
            )));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!("validation fraction {} not in (0, 1)", self.val_fraction)));
        }
        Ok(())
    }
}

/// Descending order of `scores` summed over group members; ties go to the
/// lower channel index.
pub fn rank_scores(members: &[&[f64]]) -> Vec<usize> {
    let n = members.first().map_or(0, |m| m.len());
    let total: Vec<f64> = (0..n).map(|j| members.iter().map(|m| m[j]).sum()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| total[b].total_cmp(&total[a]).then(a.cmp(&b)));
    order
}

/// Per-unit channel order (most important first).
pub(crate) fn unit_orders(net: &NetGraph, scores: &ScoreTable) -> Result<Vec<Vec<usize>>> {
    net.prune_units()
        .iter()
        .map(|u| {
            let member_scores: Vec<Vec<f64>> = u
                .producers
                .iter()
                .map(|&p| scores.dense_scores(&net.layer(p).name, u.channels))
                .collect::<Result<_>>()?;
            let refs: Vec<&[f64]> = member_scores.iter().map(|v| v.as_slice()).collect();
            Ok(rank_scores(&refs))
        })
        .collect()
}

/// Channel order for every prunable layer; grouped layers share one order.
pub fn rank_channels(net: &NetGraph, scores: &ScoreTable) -> Result<BTreeMap<String, Vec<usize>>> {
    let orders = unit_orders(net, scores)?;
    let mut out = BTreeMap::new();
    for (u, order) in net.prune_units().iter().zip(orders) {
        for &p in &u.producers {
            out.insert(net.layer(p).name.clone(), order.clone());
        }
    }
    Ok(out)
}

/// Removes `floor(ratio * C)` lowest-ranked channels from every prunable unit.
pub fn uniform_prune(net: &NetGraph, scores: &ScoreTable, ratio: f64) -> Result<(PruneMask, NetGraph)> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Config(format!("pruning ratio {ratio} not in [0, 1)")));
    }
    let orders = unit_orders(net, scores)?;
    let kept: Vec<Vec<usize>> = net
        .prune_units()
        .iter()
        .zip(&orders)
        .map(|(u, order)| {
            let mut remove = (ratio * u.channels as f64).floor() as usize;
            if remove >= u.channels {
                warn!(
                    "ratio {ratio} would empty `{}`; keeping one channel",
                    net.layer(u.producers[0]).name
                );
                remove = u.channels - 1;
            }
            order[..u.channels - remove].to_vec()
        })
        .collect();
    let mask = PruneMask::from_kept(net, &kept);
    let pruned = apply_prune(net, &mask)?;
    Ok((mask, pruned))
}

/// Kept channel indices per unit, validated against group and size rules.
fn kept_per_unit(net: &NetGraph, mask: &PruneMask) -> Result<Vec<Vec<usize>>> {
    for (name, m) in &mask.layers {
        let li = net
            .layer_index(name)
            .ok_or_else(|| Error::InvalidPrune(format!("mask names unknown layer `{name}`")))?;
        let prunable = net
            .unit_of_layer(li)
            .is_some_and(|u| net.prune_units()[u].producers.contains(&li));
        if !prunable && m.iter().any(|&k| !k) {
            return Err(Error::InvalidPrune(format!("layer `{name}` cannot be pruned")));
        }
    }
    net.prune_units()
        .iter()
        .map(|u| {
            let mut chosen: Option<(&str, &Vec<bool>)> = None;
            for &p in &u.producers {
                let name = net.layer(p).name.as_str();
                let Some(m) = mask.layers.get(name) else { continue };
                if m.len() != u.channels {
                    return Err(Error::InvalidPrune(format!(
                        "mask for `{name}` has {} entries, layer has {} channels",
                        m.len(),
                        u.channels
                    )));
                }
                match chosen {
                    Some((other, prev)) if prev != m => {
                        return Err(Error::GroupConstraint(format!(
                            "`{name}` and `{other}` share channels but have different masks"
                        )))
                    }
                    _ => chosen = Some((name, m)),
                }
            }
            let keep: Vec<usize> = match chosen {
                Some((_, m)) => (0..u.channels).filter(|&j| m[j]).collect(),
                None => (0..u.channels).collect(),
            };
            if keep.is_empty() {
                return Err(Error::InvalidPrune(format!(
                    "mask removes every channel of `{}`",
                    net.layer(u.producers[0]).name
                )));
            }
            Ok(keep)
        })
        .collect()
}

fn pick<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i]).collect()
}

/// Expands channel indices into flat feature indices of width `per_channel`.
fn expand(idx: &[usize], per_channel: usize) -> Vec<usize> {
    idx.iter().flat_map(|&c| c * per_channel..(c + 1) * per_channel).collect()
}

/// Rewrites the network with pruned channels physically removed.
pub fn apply_prune(net: &NetGraph, mask: &PruneMask) -> Result<NetGraph> {
    let kept = kept_per_unit(net, mask)?;
    let mut space_keep: Vec<Option<Vec<usize>>> = vec![None; net.space_sizes().len()];
    for (u, keep) in net.prune_units().iter().zip(kept) {
        if keep.len() < u.channels {
            space_keep[u.space] = Some(keep);
        }
    }
    let ops = net
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let out_keep = space_keep[l.channels.space].as_deref();
            let input = net.input_channels_of(i);
            let in_keep = space_keep[input.space].as_deref();
            match &l.op {
                Op::Dense(d) => {
                    let rows: Vec<usize> = out_keep.map_or_else(|| (0..d.out_features).collect(), |k| k.to_vec());
                    let cols: Vec<usize> = in_keep
                        .map_or_else(|| (0..d.in_features).collect(), |k| expand(k, input.per_channel));
                    let mut weight = Vec::with_capacity(rows.len() * cols.len());
                    for &r in &rows {
                        let row = &d.weight[r * d.in_features..(r + 1) * d.in_features];
                        weight.extend(cols.iter().map(|&c| row[c]));
                    }
                    Op::Dense(Dense {
                        weight,
                        bias: d.bias.as_ref().map(|b| pick(b, &rows)),
                        in_features: cols.len(),
                        out_features: rows.len(),
                    })
                }
                Op::Conv2d(c) if c.is_depthwise() => {
                    let Some(keep) = out_keep else { return l.op.clone() };
                    let taps = c.kernel.0 * c.kernel.1;
                    Op::Conv2d(Conv2d {
                        weight: pick(&c.weight, &expand(keep, taps)),
                        bias: c.bias.as_ref().map(|b| pick(b, keep)),
                        in_channels: keep.len(),
                        out_channels: keep.len(),
                        groups: keep.len(),
                        ..c.clone()
                    })
                }
                Op::Conv2d(c) => {
                    let outs: Vec<usize> = out_keep.map_or_else(|| (0..c.out_channels).collect(), |k| k.to_vec());
                    let ins: Vec<usize> = in_keep.map_or_else(|| (0..c.in_channels).collect(), |k| k.to_vec());
                    let taps = c.kernel.0 * c.kernel.1;
                    let flen = c.filter_len();
                    let mut weight = Vec::with_capacity(outs.len() * ins.len() * taps);
                    for &o in &outs {
                        for &ic in &ins {
                            let s = o * flen + ic * taps;
                            weight.extend_from_slice(&c.weight[s..s + taps]);
                        }
                    }
                    Op::Conv2d(Conv2d {
                        weight,
                        bias: c.bias.as_ref().map(|b| pick(b, &outs)),
                        in_channels: ins.len(),
                        out_channels: outs.len(),
                        ..c.clone()
                    })
                }
                Op::BatchNorm(bn) => match out_keep {
                    Some(k) => Op::BatchNorm(BatchNorm {
                        gamma: pick(&bn.gamma, k),
                        beta: pick(&bn.beta, k),
                        mean: pick(&bn.mean, k),
                        var: pick(&bn.var, k),
                        eps: bn.eps,
                    }),
                    None => l.op.clone(),
                },
                other => other.clone(),
            }
        })
        .collect();
    net.with_ops(ops)
}

/// Source of channel scores for the greedy search.
pub trait Scorer: Sync {
    fn score(&self, net: &NetGraph, train: &Dataset) -> Result<ScoreTable>;
}

/// A precomputed table; only valid for the network it was computed on.
impl Scorer for ScoreTable {
    fn score(&self, _net: &NetGraph, _train: &Dataset) -> Result<ScoreTable> {
        Ok(self.clone())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HeuristicScorer {
    pub heuristic: Heuristic,
    pub opts: ScoreOptions,
}

impl Scorer for HeuristicScorer {
    fn score(&self, net: &NetGraph, train: &Dataset) -> Result<ScoreTable> {
        score_network(net, Some(train), self.heuristic, &self.opts)
    }
}

/// Train/validation split used by [`greedy_prune`].
pub fn validation_split(data: &Dataset, budget: &BudgetSpec) -> Result<(Dataset, Dataset)> {
    data.split(budget.val_fraction, budget.seed)
}

struct Candidate {
    unit: usize,
    removed: Vec<usize>,
    flops: u64,
    accuracy: f64,
    net: NetGraph,
}

/// Repeatedly removes the bottom-ranked channels of whichever layer keeps
/// validation accuracy highest, each step cutting at least `delta` of the
/// original FLOPs, until the FLOPs goal is met.
pub fn greedy_prune(
    net: &NetGraph,
    data: &Dataset,
    scorer: &dyn Scorer,
    budget: &BudgetSpec,
) -> Result<(NetGraph, PruneTrace)> {
    budget.validate()?;
    let (train, val) = validation_split(data, budget)?;
    let f0 = count_resources(net).total_flops;
    let goal = budget.flops_goal * f0 as f64;
    let step_min = budget.delta * f0 as f64;
    let units = net.prune_units();
    let mut kept: Vec<Vec<usize>> = units.iter().map(|u| (0..u.channels).collect()).collect();
    let base_orders = if budget.recompute_scores {
        None
    } else {
        Some(unit_orders(net, &scorer.score(net, &train)?)?)
    };
    let mut trace = PruneTrace {
        flops_original: f0,
        flops_goal: goal.floor() as u64,
        steps: Vec::new(),
    };
    let mut current = net.clone();
    let mut res = f0;

    while res as f64 > goal * (1.0 + 1e-12) {
        // kept channels of each unit, least important first, as base indices
        let ascending: Vec<Vec<usize>> = match &base_orders {
            Some(orders) => orders
                .iter()
                .zip(&kept)
                .map(|(o, k)| o.iter().rev().copied().filter(|c| k.contains(c)).collect())
                .collect(),
            None => unit_orders(&current, &scorer.score(&current, &train)?)?
                .into_iter()
                .zip(&kept)
                .map(|(o, k)| o.into_iter().rev().map(|c| k[c]).collect())
                .collect(),
        };

        let mut sizes = net.space_sizes().to_vec();
        for (u, k) in units.iter().zip(&kept) {
            sizes[u.space] = k.len();
        }
        let mut plans: Vec<(usize, Vec<usize>, u64)> = Vec::new();
        for (ui, u) in units.iter().enumerate() {
            let have = kept[ui].len();
            for k in 1..have {
                let mut s = sizes.clone();
                s[u.space] = have - k;
                let flops = count_with_sizes(net, &s).total_flops;
                if (res - flops) as f64 >= step_min * (1.0 - 1e-12) {
                    plans.push((ui, ascending[ui][..k].to_vec(), flops));
                    break;
                }
            }
        }
        if plans.is_empty() {
            return Err(Error::BudgetUnreachable {
                reached: res,
                goal: trace.flops_goal,
                partial: Box::new(PartialPrune { net: current, trace }),
            });
        }

        let evaluate = |(ui, removed, flops): &(usize, Vec<usize>, u64)| -> Result<Candidate> {
            let mut next = kept.clone();
            next[*ui].retain(|c| !removed.contains(c));
            let cand = apply_prune(net, &PruneMask::from_kept(net, &next))?;
            Ok(Candidate {
                unit: *ui,
                removed: removed.clone(),
                flops: *flops,
                accuracy: evaluate_accuracy(&cand, &val)?,
                net: cand,
            })
        };
        let threads = budget.threads.max(1).min(plans.len());
        let candidates: Vec<Candidate> = if threads == 1 {
            plans.iter().map(evaluate).collect::<Result<_>>()?
        } else {
            let chunk = plans.len().div_ceil(threads);
            std::thread::scope(|s| {
                let handles: Vec<_> = plans
                    .chunks(chunk)
                    .map(|c| s.spawn(|| c.iter().map(evaluate).collect::<Result<Vec<_>>>()))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("candidate evaluation panicked"))
                    .collect::<Result<Vec<_>>>()
            })?
            .into_iter()
            .flatten()
            .collect()
        };

        let best = candidates
            .into_iter()
            .min_by(|a, b| {
                b.accuracy
                    .total_cmp(&a.accuracy)
                    .then(a.flops.cmp(&b.flops))
                    .then(a.unit.cmp(&b.unit))
            })
            .expect("at least one candidate");
        let layer = net.layer(units[best.unit].producers[0]).name.clone();
        debug!(
            "step {}: `{layer}` -{} channels, flops {}, val acc {:.4}",
            trace.steps.len() + 1,
            best.removed.len(),
            best.flops,
            best.accuracy
        );
        kept[best.unit].retain(|c| !best.removed.contains(c));
        trace.steps.push(PruneStep {
            layer,
            channels_removed: best.removed.len(),
            removed_channels: best.removed,
            resource: best.flops,
            val_accuracy: best.accuracy,
        });
        res = best.flops;
        current = best.net;
    }
    info!("greedy pruning reached {res} of {f0} FLOPs in {} steps", trace.steps.len());
    Ok((current, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::fixtures::*;
    use crate::netgraph::Source;

    fn table(entries: &[(&str, Vec<f64>)]) -> ScoreTable {
        let mut t = ScoreTable::new("test");
        for (l, s) in entries {
            t.insert(*l, s).unwrap();
        }
        t
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_scores(&[&[0.1, 0.5, 0.3]]), vec![1, 2, 0]);
        assert_eq!(rank_scores(&[&[0.2, 0.2]]), vec![0, 1]);
        assert_eq!(rank_scores(&[&[1.0, 0.0], &[0.0, 1.0]]), vec![0, 1]);
    }

    fn mlp4() -> NetGraph {
        let w1: Vec<f32> = (0..8).map(|i| i as f32 * 0.1 - 0.3).collect();
        seq(
            vec![2],
            vec![
                ("h", dense(w1, Some(vec![0.1, 0.2, 0.3, 0.4]), 2, 4)),
                ("r", Op::Relu),
                ("o", dense((0..12).map(|i| i as f32 * 0.05).collect(), Some(vec![0.0; 3]), 4, 3)),
            ],
        )
    }

    #[test]
    fn uniform_half_removes_bottom_two() {
        let net = mlp4();
        let (mask, pruned) = uniform_prune(&net, &table(&[("h", vec![4.0, 3.0, 2.0, 1.0])]), 0.5).unwrap();
        assert_eq!(mask.removed("h"), vec![2, 3]);
        assert_eq!(pruned.layer(0).out_shape, vec![2]);
        match &pruned.layer(2).op {
            Op::Dense(d) => {
                assert_eq!(d.in_features, 2);
                let w = |i: usize| i as f32 * 0.05;
                assert_eq!(d.weight, vec![w(0), w(1), w(4), w(5), w(8), w(9)]);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn ratio_zero_is_identity() {
        let net = residual();
        let t = score_network(&net, None, Heuristic::L1, &ScoreOptions::default()).unwrap();
        let (_, pruned) = uniform_prune(&net, &t, 0.0).unwrap();
        let x: Vec<f32> = (0..2 * 108).map(|i| (i % 17) as f32 * 0.1).collect();
        assert_eq!(net.forward(&x).unwrap(), pruned.forward(&x).unwrap());
        assert!(uniform_prune(&net, &t, 1.0).is_err());
    }

    #[test]
    fn missing_scores_are_rejected() {
        let net = residual();
        assert!(matches!(
            uniform_prune(&net, &table(&[("stem", vec![0.0; 8])]), 0.5),
            Err(Error::ScoreCoverage(_))
        ));
    }

    #[test]
    fn zero_outgoing_channel_is_structural_noop() {
        let mut w2: Vec<f32> = (0..12).map(|i| i as f32 * 0.05).collect();
        for r in 0..3 {
            w2[r * 4 + 1] = 0.0;
        }
        let net = seq(
            vec![2],
            vec![
                ("h", dense((0..8).map(|i| i as f32 * 0.1 - 0.3).collect(), Some(vec![0.1; 4]), 2, 4)),
                ("r", Op::Relu),
                ("o", dense(w2, Some(vec![0.0; 3]), 4, 3)),
            ],
        );
        let mut mask = PruneMask::all_keep(&net);
        mask.layers.get_mut("h").unwrap()[1] = false;
        let pruned = apply_prune(&net, &mask).unwrap();
        let x = [0.3, -0.7, 1.2, 0.4];
        assert_eq!(net.forward(&x).unwrap(), pruned.forward(&x).unwrap());
    }

    #[test]
    fn group_mismatch_and_bad_masks() {
        let net = residual();
        let mut mask = PruneMask::all_keep(&net);
        mask.layers.get_mut("stem").unwrap()[0] = false;
        assert!(matches!(apply_prune(&net, &mask), Err(Error::GroupConstraint(_))));
        mask.layers.get_mut("block_conv2").unwrap()[0] = false;
        assert!(apply_prune(&net, &mask).is_ok());

        let mut empty = PruneMask::all_keep(&net);
        empty.layers.insert("down".into(), vec![false; 16]);
        assert!(matches!(apply_prune(&net, &empty), Err(Error::InvalidPrune(_))));
        let mut fixed = PruneMask::default();
        fixed.layers.insert("fc".into(), vec![true, false, true, true]);
        assert!(matches!(apply_prune(&net, &fixed), Err(Error::InvalidPrune(_))));
    }

    #[test]
    fn residual_rewrite_matches_prediction() {
        let net = residual();
        let mut mask = PruneMask::all_keep(&net);
        for l in ["stem", "block_conv2"] {
            mask.layers.insert(l.into(), vec![true, false, true, true, false, true, true, true]);
        }
        let pruned = apply_prune(&net, &mask).unwrap();
        let predicted = crate::resource::resource_after_removal(&net, "stem", 2).unwrap();
        assert_eq!(count_resources(&pruned).total_flops, predicted.total_flops);
        assert_eq!(count_resources(&pruned).total_params, predicted.total_params);
        assert_eq!(pruned.layer(8).out_shape, vec![6, 6, 6]);
    }

    #[test]
    fn flatten_consumer_columns_are_expanded() {
        let net = seq(
            vec![1, 2, 2],
            vec![
                ("c", conv(1, 3, 1, 1, 0, 5)),
                ("r", Op::Relu),
                ("f", Op::Flatten),
                ("o", dense((0..24).map(|i| i as f32).collect(), None, 12, 2)),
            ],
        );
        let mut mask = PruneMask::all_keep(&net);
        mask.layers.insert("c".into(), vec![true, false, true]);
        let pruned = apply_prune(&net, &mask).unwrap();
        match &pruned.layer(3).op {
            Op::Dense(d) => assert_eq!(
                d.weight,
                vec![0.0, 1.0, 2.0, 3.0, 8.0, 9.0, 10.0, 11.0, 12.0, 13.0, 14.0, 15.0, 20.0, 21.0, 22.0, 23.0]
            ),
            _ => unreachable!(),
        }
    }

    #[test]
    fn depthwise_slices_with_producer() {
        let dw = Op::Conv2d(Conv2d {
            weight: (0..4).map(|i| i as f32).collect(),
            bias: None,
            in_channels: 4,
            out_channels: 4,
            kernel: (1, 1),
            stride: 1,
            padding: 0,
            groups: 4,
        });
        let defs = vec![
            def("expand", conv(2, 4, 1, 1, 0, 1), vec![Source::Input]),
            def("dw", dw, vec![Source::Layer(0)]),
            def("gap", Op::GlobalAvgPool, vec![Source::Layer(1)]),
            def("fc", dense(vec![0.1; 8], None, 4, 2), vec![Source::Layer(2)]),
        ];
        let net = NetGraph::build(defs, vec![2, 3, 3], vec![], BTreeMap::new()).unwrap();
        let mut mask = PruneMask::all_keep(&net);
        mask.layers.insert("expand".into(), vec![false, true, false, true]);
        let pruned = apply_prune(&net, &mask).unwrap();
        match &pruned.layer(1).op {
            Op::Conv2d(c) => assert_eq!((c.groups, c.weight.clone()), (2, vec![1.0, 3.0])),
            _ => unreachable!(),
        }
    }

    fn blob_data() -> Dataset {
        crate::tensor_io::SyntheticSpec::new(3, 2, 120, 4).generate().unwrap()
    }

    #[test]
    fn single_step_when_goal_is_one_minus_delta() {
        let net = mlp4();
        let data = Dataset::new(blob_data().inputs().to_vec(), vec![2], blob_data().labels().to_vec(), 3).unwrap();
        let t = table(&[("h", vec![4.0, 3.0, 2.0, 1.0])]);
        let (_, trace) = greedy_prune(&net, &data, &t, &BudgetSpec::new(0.9, 0.1)).unwrap();
        assert_eq!(trace.steps.len(), 1);
        assert_eq!(trace.steps[0].removed_channels, vec![3]);
    }

    #[test]
    fn single_layer_greedy_matches_uniform() {
        let net = mlp4();
        let data = blob_data();
        let t = table(&[("h", vec![0.4, 0.9, 0.1, 0.7])]);
        let (g, trace) = greedy_prune(&net, &data, &t, &BudgetSpec::new(0.5, 0.05)).unwrap();
        let (_, u) = uniform_prune(&net, &t, 0.5).unwrap();
        assert_eq!(g.to_defs().iter().map(|d| d.op.clone()).collect::<Vec<_>>(), u.to_defs().iter().map(|d| d.op.clone()).collect::<Vec<_>>());
        let (_, replayed) = trace.replay(&net).unwrap();
        assert_eq!(count_resources(&replayed), count_resources(&g));
        for w in trace.steps.windows(2) {
            assert!(w[1].resource < w[0].resource);
        }
    }

    #[test]
    fn unreachable_goal_returns_partial() {
        let net = mlp4();
        let t = table(&[("h", vec![0.4, 0.9, 0.1, 0.7])]);
        match greedy_prune(&net, &blob_data(), &t, &BudgetSpec::new(0.01, 0.1)) {
            Err(Error::BudgetUnreachable { partial, reached, .. }) => {
                assert_eq!(partial.net.layer(0).out_shape, vec![1]);
                assert_eq!(count_resources(&partial.net).total_flops, reached);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn threaded_search_matches_serial() {
        let net = residual();
        let n = 40;
        let x: Vec<f32> = (0..n * 108).map(|i| ((i * 7919 % 101) as f32) / 101.0 - 0.5).collect();
        let data = Dataset::new(x, vec![3, 6, 6], (0..n).map(|i| i % 4).collect(), 4).unwrap();
        let t = score_network(&net, None, Heuristic::L1, &ScoreOptions::default()).unwrap();
        let mut b = BudgetSpec::new(0.7, 0.05);
        b.val_fraction = 0.5;
        let (_, serial) = greedy_prune(&net, &data, &t, &b).unwrap();
        b.threads = 3;
        let (_, threaded) = greedy_prune(&net, &data, &t, &b).unwrap();
        assert_eq!(serial, threaded);
        assert!(serial.steps.last().unwrap().resource as f64 <= 0.7 * serial.flops_original as f64);
    }

    #[test]
    fn budget_validation() {
        assert!(BudgetSpec::new(0.5, 0.005).validate().is_ok());
        assert!(BudgetSpec::new(0.5, 0.6).validate().is_err());
        assert!(BudgetSpec::new(1.0, 0.1).validate().is_err());
        assert!(BudgetSpec::new(0.5, 0.0).validate().is_err());
    }
}
