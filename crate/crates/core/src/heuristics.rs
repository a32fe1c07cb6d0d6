//! Channel scoring: DI influence plus the baseline criteria it is compared
//! against (filter norm, FPGM, BN scaling, random, two-class statistics).

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::di::{compute_grams, influence, FeatureMatrix, InfluenceMethod, LabelMatrix};
use crate::error::{Error, Result};
use crate::netgraph::{extract_tap_set, FeatureTap, NetGraph, Op, TapStage};
use crate::tensor_io::Dataset;

const SIGMA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelScore {
    pub channel: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub heuristic: String,
    pub layers: BTreeMap<String, Vec<ChannelScore>>,
    #[serde(default)]
    pub metadata: BTreeMap<String, Value>,
}

impl ScoreTable {
    pub fn new(heuristic: impl Into<String>) -> Self {
        ScoreTable {
            heuristic: heuristic.into(),
            layers: BTreeMap::new(),
            metadata: BTreeMap::new(),
        }
    }

    /// Adds one score per channel, channel `j` getting `scores[j]`.
    pub fn insert(&mut self, layer: impl Into<String>, scores: &[f64]) -> Result<()> {
        let layer = layer.into();
        if let Some(j) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::Numerical(format!("non-finite score for `{layer}` channel {j}")));
        }
        let row = scores
            .iter()
            .enumerate()
            .map(|(channel, &score)| ChannelScore { channel, score })
            .collect();
        self.layers.insert(layer, row);
        Ok(())
    }

    /// Scores of `layer` indexed by channel; fails unless exactly
    /// channels `0..channels` are covered once each.
    pub fn dense_scores(&self, layer: &str, channels: usize) -> Result<Vec<f64>> {
        let row = self
            .layers
            .get(layer)
            .ok_or_else(|| Error::ScoreCoverage(format!("no scores for layer `{layer}`")))?;
        let mut out = vec![None; channels];
        for cs in row {
            match out.get_mut(cs.channel) {
                Some(slot @ None) => *slot = Some(cs.score),
                Some(Some(_)) => {
                    return Err(Error::ScoreCoverage(format!(
                        "duplicate score for `{layer}` channel {}",
                        cs.channel
                    )))
                }
                None => {
                    return Err(Error::ScoreCoverage(format!(
                        "`{layer}` channel {} out of range ({channels} channels)",
                        cs.channel
                    )))
                }
            }
        }
        out.into_iter()
            .enumerate()
            .map(|(j, s)| {
                s.ok_or_else(|| Error::ScoreCoverage(format!("missing score for `{layer}` channel {j}")))
            })
            .collect()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TwoClassMetric {
    SignedSnr,
    FisherRatio,
    SymmetricDivergence,
    TTest,
}

impl TwoClassMetric {
    pub fn name(self) -> &'static str {
        match self {
            TwoClassMetric::SignedSnr => "snr",
            TwoClassMetric::FisherRatio => "fisher",
            TwoClassMetric::SymmetricDivergence => "symdiv",
            TwoClassMetric::TTest => "ttest",
        }
    }

    fn eval(self, a: GroupStats, b: GroupStats) -> f64 {
        let d = a.mean - b.mean;
        let (va, vb) = (a.std * a.std, b.std * b.std);
        match self {
            TwoClassMetric::SignedSnr => d / (a.std + b.std),
            TwoClassMetric::FisherRatio => d * d / (va + vb),
            TwoClassMetric::SymmetricDivergence => {
                0.5 * (va / vb + vb / va) + 0.5 * d * d * (1.0 / va + 1.0 / vb) - 1.0
            }
            TwoClassMetric::TTest => d / (va / a.n as f64 + vb / b.n as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Heuristic {
    Di,
    L1,
    Fpgm,
    Slimming,
    Random,
    Snr,
    Fisher,
    Symdiv,
    Ttest,
}

impl Heuristic {
    pub const ALL: [Heuristic; 9] = [
        Heuristic::Di,
        Heuristic::L1,
        Heuristic::Fpgm,
        Heuristic::Slimming,
        Heuristic::Random,
        Heuristic::Snr,
        Heuristic::Fisher,
        Heuristic::Symdiv,
        Heuristic::Ttest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Heuristic::Di => "di",
            Heuristic::L1 => "l1",
            Heuristic::Fpgm => "fpgm",
            Heuristic::Slimming => "slimming",
            Heuristic::Random => "random",
            Heuristic::Snr => "snr",
            Heuristic::Fisher => "fisher",
            Heuristic::Symdiv => "symdiv",
            Heuristic::Ttest => "ttest",
        }
    }

    pub fn needs_data(self) -> bool {
        matches!(
            self,
            Heuristic::Di | Heuristic::Snr | Heuristic::Fisher | Heuristic::Symdiv | Heuristic::Ttest
        )
    }

    fn two_class(self) -> Option<TwoClassMetric> {
        match self {
            Heuristic::Snr => Some(TwoClassMetric::SignedSnr),
            Heuristic::Fisher => Some(TwoClassMetric::FisherRatio),
            Heuristic::Symdiv => Some(TwoClassMetric::SymmetricDivergence),
            Heuristic::Ttest => Some(TwoClassMetric::TTest),
            _ => None,
        }
    }
}

impl FromStr for Heuristic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Heuristic::ALL
            .into_iter()
            .find(|h| h.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown heuristic `{s}`")))
    }
}

/// Settings for the data-driven heuristics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreOptions {
    pub tap: TapStage,
    pub samples: usize,
    pub rho: f64,
    pub seed: u64,
    pub method: InfluenceMethod,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            tap: TapStage::PostActivation,
            samples: 512,
            rho: crate::di::DEFAULT_RHO,
            seed: 0,
            method: InfluenceMethod::Derivative,
        }
    }
}

fn weighted_layer<'a>(net: &'a NetGraph, layer: &str) -> Result<&'a Op> {
    let i = net
        .layer_index(layer)
        .ok_or_else(|| Error::Config(format!("unknown layer `{layer}`")))?;
    let op = &net.layer(i).op;
    if op.filter_count().is_none() {
        return Err(Error::Config(format!("layer `{layer}` has no weights")));
    }
    Ok(op)
}

fn filters(op: &Op) -> Vec<&[f32]> {
    (0..op.filter_count().unwrap_or(0)).filter_map(|j| op.filter(j)).collect()
}

fn l1_scores(op: &Op) -> Vec<f64> {
    filters(op)
        .iter()
        .map(|f| f.iter().map(|&w| (w as f64).abs()).sum())
        .collect()
}

fn fpgm_scores(op: &Op) -> Vec<f64> {
    let fs = filters(op);
    let mut scores = vec![0.0; fs.len()];
    for a in 0..fs.len() {
        for b in a + 1..fs.len() {
            let d = fs[a]
                .iter()
                .zip(fs[b])
                .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            scores[a] += d;
            scores[b] += d;
        }
    }
    scores
}

fn slimming_scores(net: &NetGraph, layer: &str) -> Result<Vec<f64>> {
    let i = net
        .layer_index(layer)
        .ok_or_else(|| Error::Config(format!("unknown layer `{layer}`")))?;
    let consumers = net.consumers(i);
    match consumers.as_slice() {
        [c] => match &net.layer(*c).op {
            Op::BatchNorm(bn) => Ok(bn.gamma.iter().map(|&g| (g as f64).abs()).collect()),
            _ => Err(not_applicable("slimming", layer)),
        },
        _ => Err(not_applicable("slimming", layer)),
    }
}

fn not_applicable(h: &str, layer: &str) -> Error {
    Error::HeuristicNotApplicable {
        heuristic: h.into(),
        layer: layer.into(),
    }
}

fn random_scores(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>()).collect()
}

fn single(heuristic: &str, layer: &str, scores: Vec<f64>) -> Result<ScoreTable> {
    let mut t = ScoreTable::new(heuristic);
    t.insert(layer, &scores)?;
    Ok(t)
}

/// Sum of absolute filter weights.
pub fn score_l1_norm(net: &NetGraph, layer: &str) -> Result<ScoreTable> {
    single("l1", layer, l1_scores(weighted_layer(net, layer)?))
}

/// Sum of Euclidean distances from each filter to all other filters.
pub fn score_geometric_median(net: &NetGraph, layer: &str) -> Result<ScoreTable> {
    single("fpgm", layer, fpgm_scores(weighted_layer(net, layer)?))
}

/// `|gamma|` of the batchnorm directly consuming the layer.
pub fn score_bn_scaling(net: &NetGraph, layer: &str) -> Result<ScoreTable> {
    weighted_layer(net, layer)?;
    single("slimming", layer, slimming_scores(net, layer)?)
}

pub fn score_random(net: &NetGraph, layer: &str, seed: u64) -> Result<ScoreTable> {
    let n = weighted_layer(net, layer)?.filter_count().unwrap_or(0);
    let mut t = single("random", layer, random_scores(&mut ChaCha8Rng::seed_from_u64(seed), n))?;
    t.metadata.insert("seed".into(), json!(seed));
    Ok(t)
}

#[derive(Debug, Clone, Copy)]
struct GroupStats {
    mean: f64,
    std: f64,
    n: usize,
}

fn group_stats(values: impl Iterator<Item = f64> + Clone) -> GroupStats {
    let n = values.clone().count();
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    GroupStats {
        mean,
        std: var.sqrt().max(SIGMA_FLOOR),
        n,
    }
}

/// One-vs-rest two-class statistic per channel, averaged in absolute value
/// over the classes. Standard deviations use the `n - 1` denominator.
pub fn score_two_class_ovr(x: &FeatureMatrix, y: &LabelMatrix, metric: TwoClassMetric) -> Result<ScoreTable> {
    let labels = y.labels();
    if labels.len() != x.samples() {
        return Err(Error::Shape(format!(
            "{} feature samples but {} labels",
            x.samples(),
            labels.len()
        )));
    }
    let k = y.classes();
    for c in 0..k {
        let n1 = labels.iter().filter(|&&l| l == c).count();
        if n1 < 2 || labels.len() - n1 < 2 {
            return Err(Error::DegenerateInput(format!(
                "class {c} has {n1} samples and its complement {}; need at least 2 each",
                labels.len() - n1
            )));
        }
    }
    let scores: Vec<f64> = (0..x.channels())
        .map(|j| {
            let row = x.values().row(j);
            let total: f64 = (0..k)
                .map(|c| {
                    let inside = row.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(&v, _)| v);
                    let outside = row.iter().zip(&labels).filter(|(_, &l)| l != c).map(|(&v, _)| v);
                    metric.eval(group_stats(inside), group_stats(outside)).abs()
                })
                .sum();
            total / k as f64
        })
        .collect();
    let mut t = single(metric.name(), x.layer(), scores)?;
    t.metadata.insert("samples".into(), json!(x.samples()));
    t.metadata.insert("tap".into(), json!(x.stage().as_str()));
    Ok(t)
}

/// DI influence of every channel of every prunable layer, from one shared
/// sample selection.
pub fn score_di(net: &NetGraph, data: &Dataset, opts: &ScoreOptions) -> Result<ScoreTable> {
    let set = tap_set(net, data, opts)?;
    let mut t = ScoreTable::new("di");
    for x in &set.features {
        let g = compute_grams(x, &set.labels, opts.rho)?;
        t.insert(x.layer(), &influence(&g, opts.method)?.scores)?;
    }
    t.metadata.insert("rho".into(), json!(opts.rho));
    t.metadata.insert("method".into(), serde_json::to_value(opts.method)?);
    add_sample_metadata(&mut t, &set.labels, opts);
    Ok(t)
}

fn tap_set(net: &NetGraph, data: &Dataset, opts: &ScoreOptions) -> Result<crate::netgraph::TapSet> {
    let taps: Vec<FeatureTap> = net
        .prunable_layers()
        .into_iter()
        .map(|l| FeatureTap::new(l, opts.tap))
        .collect();
    extract_tap_set(net, data, &taps, opts.samples, opts.seed)
}

fn add_sample_metadata(t: &mut ScoreTable, y: &LabelMatrix, opts: &ScoreOptions) {
    t.metadata.insert("samples".into(), json!(y.samples()));
    t.metadata.insert("tap".into(), json!(opts.tap.as_str()));
    t.metadata.insert("seed".into(), json!(opts.seed));
}

/// Scores every prunable layer with `heuristic`. Data-free heuristics
/// ignore `data`; the others require it.
pub fn score_network(
    net: &NetGraph,
    data: Option<&Dataset>,
    heuristic: Heuristic,
    opts: &ScoreOptions,
) -> Result<ScoreTable> {
    if heuristic.needs_data() {
        let data = data.ok_or_else(|| Error::Config(format!("heuristic `{}` needs a dataset", heuristic.name())))?;
        if heuristic == Heuristic::Di {
            return score_di(net, data, opts);
        }
        let metric = heuristic.two_class().expect("two-class heuristic");
        let set = tap_set(net, data, opts)?;
        let mut t = ScoreTable::new(heuristic.name());
        for x in &set.features {
            let part = score_two_class_ovr(x, &set.labels, metric)?;
            t.layers.extend(part.layers);
        }
        add_sample_metadata(&mut t, &set.labels, opts);
        return Ok(t);
    }
    let mut t = ScoreTable::new(heuristic.name());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for layer in net.prunable_layers() {
        let op = weighted_layer(net, layer)?;
        let scores = match heuristic {
            Heuristic::L1 => l1_scores(op),
            Heuristic::Fpgm => fpgm_scores(op),
            Heuristic::Slimming => slimming_scores(net, layer)?,
            Heuristic::Random => random_scores(&mut rng, op.filter_count().unwrap_or(0)),
            _ => unreachable!("data-driven heuristics handled above"),
        };
        t.insert(layer, &scores)?;
    }
    if heuristic == Heuristic::Random {
        t.metadata.insert("seed".into(), json!(opts.seed));
    }
    Ok(t)
}
