//! Layer graph, shape inference and channel coupling.
//!
//! Every tensor in the graph carries a *channel space*: the set of channels
//! that must be removed together. Dense and (non-depthwise) conv layers open
//! a new space at their output; batchnorm, relu, pooling, depthwise conv and
//! flatten pass their input space through; `add` merges the spaces of its
//! inputs. Spaces reached by the graph input or the final output are fixed.

mod features;
mod forward;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use features::{extract_features, extract_tap_set, select_samples, FeatureTap, TapSet, TapStage};
pub use forward::{argmax, evaluate_accuracy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Dense,
    Conv2d,
    Batchnorm,
    Relu,
    Avgpool,
    Globalavgpool,
    Add,
    Flatten,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Input,
    Layer(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// Row-major `out_features x in_features`.
    pub weight: Vec<f32>,
    pub bias: Option<Vec<f32>>,
    pub in_features: usize,
    pub out_features: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// Row-major `out_channels x (in_channels / groups) x kh x kw`.
    pub weight: Vec<f32>,
    pub bias: Option<Vec<f32>>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv2d {
    pub fn is_depthwise(&self) -> bool {
        self.groups > 1
    }

    pub fn filter_len(&self) -> usize {
        self.in_channels / self.groups * self.kernel.0 * self.kernel.1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub eps: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Dense(Dense),
    Conv2d(Conv2d),
    BatchNorm(BatchNorm),
    Relu,
    AvgPool { kernel: usize, stride: usize },
    GlobalAvgPool,
    Add,
    Flatten,
}

impl Op {
    pub fn kind(&self) -> LayerKind {
        match self {
            Op::Dense(_) => LayerKind::Dense,
            Op::Conv2d(_) => LayerKind::Conv2d,
            Op::BatchNorm(_) => LayerKind::Batchnorm,
            Op::Relu => LayerKind::Relu,
            Op::AvgPool { .. } => LayerKind::Avgpool,
            Op::GlobalAvgPool => LayerKind::Globalavgpool,
            Op::Add => LayerKind::Add,
            Op::Flatten => LayerKind::Flatten,
        }
    }

    /// Dense layers and full (non-depthwise) convolutions own their output channels.
    pub fn is_producer(&self) -> bool {
        match self {
            Op::Dense(_) => true,
            Op::Conv2d(c) => !c.is_depthwise(),
            _ => false,
        }
    }

    /// Weights of output filter `j`, flattened.
    pub fn filter(&self, j: usize) -> Option<&[f32]> {
        match self {
            Op::Dense(d) => Some(&d.weight[j * d.in_features..(j + 1) * d.in_features]),
            Op::Conv2d(c) => {
                let n = c.filter_len();
                Some(&c.weight[j * n..(j + 1) * n])
            }
            _ => None,
        }
    }

    pub fn filter_count(&self) -> Option<usize> {
        match self {
            Op::Dense(d) => Some(d.out_features),
            Op::Conv2d(c) => Some(c.out_channels),
            _ => None,
        }
    }
}

/// Channel space of a tensor: `features = channels(space) * per_channel`
/// for 1-D tensors, or `channels(space)` on axis 0 of a `[C, H, W]` tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorChannels {
    pub space: usize,
    pub per_channel: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<Source>,
    /// Per-sample output shape: `[F]` or `[C, H, W]`.
    pub out_shape: Vec<usize>,
    pub channels: TensorChannels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupKind {
    ShortcutSum,
    DepthwiseCouple,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelGroup {
    pub members: Vec<String>,
    pub kind: GroupKind,
    pub channels: usize,
}

/// A set of output channels that is pruned as one unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneUnit {
    pub space: usize,
    /// Producer layers whose output filters are sliced (topological order).
    pub producers: Vec<usize>,
    /// Depthwise convolutions riding on this space.
    pub coupled: Vec<usize>,
    pub channels: usize,
}

#[derive(Debug, Clone)]
pub struct NetGraph {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    space_sizes: Vec<usize>,
    space_fixed: Vec<bool>,
    input_space: usize,
    units: Vec<PruneUnit>,
    groups: Vec<ChannelGroup>,
    declared_groups: Vec<Vec<String>>,
    metadata: BTreeMap<String, serde_json::Value>,
}

/// Raw layer description used to (re)build a graph; inputs refer to earlier layers.
#[derive(Debug, Clone)]
pub struct LayerDef {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<Source>,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn add(&mut self) -> usize {
        self.0.push(self.0.len());
        self.0.len() - 1
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        if a != b {
            let (lo, hi) = (a.min(b), a.max(b));
            self.0[hi] = lo;
        }
    }
}

impl NetGraph {
    /// Builds and validates a graph from topologically ordered layers.
    ///
    /// `declared_groups` lists layer names whose output channels must be
    /// pruned together in addition to the couplings discovered from `add`
    /// and depthwise layers.
    pub fn build(
        defs: Vec<LayerDef>,
        input_shape: Vec<usize>,
        declared_groups: Vec<Vec<String>>,
        metadata: BTreeMap<String, serde_json::Value>,
    ) -> Result<Self> {
        if defs.is_empty() {
            return Err(Error::model("<graph>", "model has no layers"));
        }
        if !(input_shape.len() == 1 || input_shape.len() == 3) || input_shape.contains(&0) {
            return Err(Error::model(
                "<input>",
                format!("input shape must be [F] or [C,H,W], got {input_shape:?}"),
            ));
        }
        let mut names = BTreeMap::new();
        for (i, d) in defs.iter().enumerate() {
            if names.insert(d.name.clone(), i).is_some() {
                return Err(Error::model(&d.name, "duplicate layer name"));
            }
        }

        let mut uf = UnionFind(Vec::new());
        let input_space = uf.add();
        let mut raw_spaces: Vec<usize> = Vec::new();
        let mut space_sizes_raw: Vec<usize> = vec![input_shape[0]];
        let mut layers: Vec<Layer> = Vec::with_capacity(defs.len());
        let mut consumed = vec![false; defs.len()];

        for (idx, def) in defs.into_iter().enumerate() {
            let mut in_shapes = Vec::new();
            let mut in_chans = Vec::new();
            if def.inputs.is_empty() {
                return Err(Error::model(&def.name, "layer has no inputs"));
            }
            for src in &def.inputs {
                match *src {
                    Source::Input => {
                        in_shapes.push(input_shape.clone());
                        in_chans.push(TensorChannels {
                            space: input_space,
                            per_channel: 1,
                        });
                    }
                    Source::Layer(j) if j < idx => {
                        consumed[j] = true;
                        in_shapes.push(layers[j].out_shape.clone());
                        in_chans.push(layers[j].channels);
                    }
                    Source::Layer(_) => {
                        return Err(Error::model(&def.name, "input refers to a later layer"));
                    }
                }
            }
            let single = |what: &str| -> Result<()> {
                if def.inputs.len() != 1 {
                    Err(Error::model(&def.name, format!("{what} takes exactly one input")))
                } else {
                    Ok(())
                }
            };
            let err = |msg: String| Error::model(&def.name, msg);
            let (out_shape, channels) = match &def.op {
                Op::Dense(d) => {
                    single("dense")?;
                    let s = &in_shapes[0];
                    if s.len() != 1 || s[0] != d.in_features {
                        return Err(err(format!(
                            "dense expects [{}] input, got {s:?}",
                            d.in_features
                        )));
                    }
                    check_len(&def.name, "weight", d.weight.len(), d.in_features * d.out_features)?;
                    if let Some(b) = &d.bias {
                        check_len(&def.name, "bias", b.len(), d.out_features)?;
                    }
                    let space = uf.add();
                    space_sizes_raw.push(d.out_features);
                    (
                        vec![d.out_features],
                        TensorChannels {
                            space,
                            per_channel: 1,
                        },
                    )
                }
                Op::Conv2d(c) => {
                    single("conv2d")?;
                    let s = &in_shapes[0];
                    if s.len() != 3 || s[0] != c.in_channels {
                        return Err(err(format!(
                            "conv2d expects [{}, H, W] input, got {s:?}",
                            c.in_channels
                        )));
                    }
                    if c.stride == 0 || c.kernel.0 == 0 || c.kernel.1 == 0 {
                        return Err(err("zero stride or kernel".into()));
                    }
                    let depthwise = c.groups > 1;
                    if c.groups == 0
                        || (depthwise
                            && !(c.groups == c.in_channels && c.groups == c.out_channels))
                    {
                        return Err(err(format!(
                            "groups must be 1 or equal to channels (depthwise), got {}",
                            c.groups
                        )));
                    }
                    check_len(
                        &def.name,
                        "weight",
                        c.weight.len(),
                        c.out_channels * c.filter_len(),
                    )?;
                    if let Some(b) = &c.bias {
                        check_len(&def.name, "bias", b.len(), c.out_channels)?;
                    }
                    let (h, w) = (s[1] + 2 * c.padding, s[2] + 2 * c.padding);
                    if h < c.kernel.0 || w < c.kernel.1 {
                        return Err(err(format!("kernel {:?} larger than padded input", c.kernel)));
                    }
                    let ho = (h - c.kernel.0) / c.stride + 1;
                    let wo = (w - c.kernel.1) / c.stride + 1;
                    let ch = if depthwise {
                        in_chans[0]
                    } else {
                        let space = uf.add();
                        space_sizes_raw.push(c.out_channels);
                        TensorChannels {
                            space,
                            per_channel: 1,
                        }
                    };
                    (vec![c.out_channels, ho, wo], ch)
                }
                Op::BatchNorm(bn) => {
                    single("batchnorm")?;
                    let s = &in_shapes[0];
                    let c = s[0];
                    if s.len() == 1 && in_chans[0].per_channel != 1 {
                        return Err(err("batchnorm over flattened spatial features".into()));
                    }
                    for (role, v) in [
                        ("gamma", &bn.gamma),
                        ("beta", &bn.beta),
                        ("mean", &bn.mean),
                        ("var", &bn.var),
                    ] {
                        check_len(&def.name, role, v.len(), c)?;
                    }
                    if bn.var.iter().any(|&v| v + bn.eps <= 0.0) {
                        return Err(err("non-positive variance".into()));
                    }
                    (s.clone(), in_chans[0])
                }
                Op::Relu => {
                    single("relu")?;
                    (in_shapes[0].clone(), in_chans[0])
                }
                Op::AvgPool { kernel, stride } => {
                    single("avgpool")?;
                    let s = &in_shapes[0];
                    if s.len() != 3 || *kernel == 0 || *stride == 0 || s[1] < *kernel || s[2] < *kernel {
                        return Err(err(format!("avgpool {kernel}/{stride} invalid for {s:?}")));
                    }
                    (
                        vec![s[0], (s[1] - kernel) / stride + 1, (s[2] - kernel) / stride + 1],
                        in_chans[0],
                    )
                }
                Op::GlobalAvgPool => {
                    single("globalavgpool")?;
                    let s = &in_shapes[0];
                    if s.len() != 3 {
                        return Err(err(format!("globalavgpool needs [C,H,W], got {s:?}")));
                    }
                    (vec![s[0]], in_chans[0])
                }
                Op::Flatten => {
                    single("flatten")?;
                    let s = &in_shapes[0];
                    if s.len() == 3 {
                        (
                            vec![s.iter().product()],
                            TensorChannels {
                                space: in_chans[0].space,
                                per_channel: s[1] * s[2],
                            },
                        )
                    } else {
                        (s.clone(), in_chans[0])
                    }
                }
                Op::Add => {
                    if def.inputs.len() < 2 {
                        return Err(err("add needs at least two inputs".into()));
                    }
                    if in_shapes.iter().any(|s| s != &in_shapes[0])
                        || in_chans.iter().any(|c| c.per_channel != in_chans[0].per_channel)
                    {
                        return Err(err(format!("add inputs disagree in shape: {in_shapes:?}")));
                    }
                    for c in &in_chans[1..] {
                        uf.union(in_chans[0].space, c.space);
                    }
                    (in_shapes[0].clone(), in_chans[0])
                }
            };
            raw_spaces.push(channels.space);
            layers.push(Layer {
                name: def.name,
                op: def.op,
                inputs: def.inputs,
                out_shape,
                channels,
            });
        }

        let sinks: Vec<usize> = (0..layers.len()).filter(|&i| !consumed[i]).collect();
        if sinks.len() != 1 || sinks[0] != layers.len() - 1 {
            let names: Vec<&str> = sinks.iter().map(|&i| layers[i].name.as_str()).collect();
            return Err(Error::model(
                names.first().copied().unwrap_or("<graph>"),
                format!("graph must have exactly one output (the last layer); dangling: {names:?}"),
            ));
        }
        if layers[layers.len() - 1].out_shape.len() != 1 {
            return Err(Error::model(
                &layers[layers.len() - 1].name,
                "output layer must produce a flat logit vector",
            ));
        }

        for group in &declared_groups {
            let mut first: Option<usize> = None;
            for name in group {
                let &i = names
                    .get(name)
                    .ok_or_else(|| Error::model(name, "group refers to unknown layer"))?;
                if !layers[i].op.is_producer() && !matches!(layers[i].op, Op::Conv2d(_)) {
                    return Err(Error::model(name, "group members must be dense or conv2d"));
                }
                let s = layers[i].channels.space;
                match first {
                    None => first = Some(s),
                    Some(f) => uf.union(f, s),
                }
            }
        }

        // Canonicalize spaces.
        let raw_count = uf.0.len();
        let mut canon = vec![usize::MAX; raw_count];
        let mut space_sizes = Vec::new();
        for raw in 0..raw_count {
            let root = uf.find(raw);
            if canon[root] == usize::MAX {
                canon[root] = space_sizes.len();
                space_sizes.push(space_sizes_raw[root]);
            }
            canon[raw] = canon[root];
            if space_sizes[canon[raw]] != space_sizes_raw[raw] {
                return Err(Error::model(
                    "<groups>",
                    format!(
                        "coupled channel sets disagree in size ({} vs {})",
                        space_sizes[canon[raw]], space_sizes_raw[raw]
                    ),
                ));
            }
        }
        for l in &mut layers {
            l.channels.space = canon[l.channels.space];
        }
        let input_space = canon[input_space];
        let mut space_fixed = vec![false; space_sizes.len()];
        space_fixed[input_space] = true;
        space_fixed[layers[layers.len() - 1].channels.space] = true;

        let mut units: Vec<PruneUnit> = Vec::new();
        let mut unit_of_space: BTreeMap<usize, usize> = BTreeMap::new();
        for (i, l) in layers.iter().enumerate() {
            let s = l.channels.space;
            if space_fixed[s] {
                continue;
            }
            let is_dw = matches!(&l.op, Op::Conv2d(c) if c.is_depthwise());
            if !l.op.is_producer() && !is_dw {
                continue;
            }
            let u = *unit_of_space.entry(s).or_insert_with(|| {
                units.push(PruneUnit {
                    space: s,
                    producers: Vec::new(),
                    coupled: Vec::new(),
                    channels: space_sizes[s],
                });
                units.len() - 1
            });
            if is_dw {
                units[u].coupled.push(i);
            } else {
                units[u].producers.push(i);
            }
        }
        let groups = units
            .iter()
            .filter(|u| u.producers.len() + u.coupled.len() > 1)
            .map(|u| {
                let mut members: Vec<usize> = u.producers.iter().chain(&u.coupled).copied().collect();
                members.sort_unstable();
                ChannelGroup {
                    members: members.iter().map(|&i| layers[i].name.clone()).collect(),
                    kind: if u.coupled.is_empty() {
                        GroupKind::ShortcutSum
                    } else {
                        GroupKind::DepthwiseCouple
                    },
                    channels: u.channels,
                }
            })
            .collect();

        Ok(NetGraph {
            layers,
            input_shape,
            space_sizes,
            space_fixed,
            input_space,
            units,
            groups,
            declared_groups,
            metadata,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &Layer {
        &self.layers[i]
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.layers[self.layers.len() - 1].out_shape[0]
    }

    pub fn output_layer(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn groups(&self) -> &[ChannelGroup] {
        &self.groups
    }

    pub fn declared_groups(&self) -> &[Vec<String>] {
        &self.declared_groups
    }

    pub fn metadata(&self) -> &BTreeMap<String, serde_json::Value> {
        &self.metadata
    }

    pub fn space_sizes(&self) -> &[usize] {
        &self.space_sizes
    }

    pub fn input_space(&self) -> usize {
        self.input_space
    }

    pub fn is_space_fixed(&self, space: usize) -> bool {
        self.space_fixed[space]
    }

    /// Prunable channel sets in topological order of their first producer.
    pub fn prune_units(&self) -> &[PruneUnit] {
        &self.units
    }

    pub fn unit_of_layer(&self, layer: usize) -> Option<usize> {
        self.units
            .iter()
            .position(|u| u.producers.contains(&layer) || u.coupled.contains(&layer))
    }

    /// Names of all prunable producer layers (conv/dense whose outputs may be sliced).
    pub fn prunable_layers(&self) -> Vec<&str> {
        let mut idx: Vec<usize> = self.units.iter().flat_map(|u| u.producers.iter().copied()).collect();
        idx.sort_unstable();
        idx.into_iter().map(|i| self.layers[i].name.as_str()).collect()
    }

    /// Indices of layers consuming the output of `layer`.
    pub fn consumers(&self, layer: usize) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.inputs.contains(&Source::Layer(layer)))
            .map(|(i, _)| i)
            .collect()
    }

    /// Shape of the tensor feeding `layer` through its first input.
    pub fn input_shape_of(&self, layer: usize) -> &[usize] {
        match self.layers[layer].inputs[0] {
            Source::Input => &self.input_shape,
            Source::Layer(j) => &self.layers[j].out_shape,
        }
    }

    pub fn input_channels_of(&self, layer: usize) -> TensorChannels {
        match self.layers[layer].inputs[0] {
            Source::Input => TensorChannels {
                space: self.input_space,
                per_channel: 1,
            },
            Source::Layer(j) => self.layers[j].channels,
        }
    }

    /// Layer definitions, suitable for feeding back into [`NetGraph::build`].
    pub fn to_defs(&self) -> Vec<LayerDef> {
        self.layers
            .iter()
            .map(|l| LayerDef {
                name: l.name.clone(),
                op: l.op.clone(),
                inputs: l.inputs.clone(),
            })
            .collect()
    }

    /// Rebuilds the graph with replaced layer ops (same topology).
    pub fn with_ops(&self, ops: Vec<Op>) -> Result<NetGraph> {
        assert_eq!(ops.len(), self.layers.len());
        let defs = self
            .layers
            .iter()
            .zip(ops)
            .map(|(l, op)| LayerDef {
                name: l.name.clone(),
                op,
                inputs: l.inputs.clone(),
            })
            .collect();
        NetGraph::build(
            defs,
            self.input_shape.clone(),
            self.declared_groups.clone(),
            self.metadata.clone(),
        )
    }
}

fn check_len(layer: &str, role: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        Err(Error::model(
            layer,
            format!("{role} has {got} elements, expected {want}"),
        ))
    } else {
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    //! Small hand-built graphs shared by unit tests.
    use super::*;

    pub fn dense(w: Vec<f32>, b: Option<Vec<f32>>, inp: usize, out: usize) -> Op {
        Op::Dense(Dense {
            weight: w,
            bias: b,
            in_features: inp,
            out_features: out,
        })
    }

    pub fn def(name: &str, op: Op, inputs: Vec<Source>) -> LayerDef {
        LayerDef {
            name: name.into(),
            op,
            inputs,
        }
    }

    pub fn seq(input_shape: Vec<usize>, ops: Vec<(&str, Op)>) -> NetGraph {
        let defs = ops
            .into_iter()
            .enumerate()
            .map(|(i, (n, op))| {
                def(
                    n,
                    op,
                    vec![if i == 0 { Source::Input } else { Source::Layer(i - 1) }],
                )
            })
            .collect();
        NetGraph::build(defs, input_shape, vec![], BTreeMap::new()).unwrap()
    }

    pub fn conv(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, seed: u32) -> Op {
        let n = cout * cin * k * k;
        Op::Conv2d(Conv2d {
            weight: (0..n)
                .map(|i| (((i as u32).wrapping_mul(2654435761).wrapping_add(seed) % 1000) as f32) / 1000.0 - 0.5)
                .collect(),
            bias: Some(vec![0.01; cout]),
            in_channels: cin,
            out_channels: cout,
            kernel: (k, k),
            stride,
            padding: pad,
            groups: 1,
        })
    }

    pub fn bn(c: usize) -> Op {
        Op::BatchNorm(BatchNorm {
            gamma: (0..c).map(|i| 1.0 + 0.1 * i as f32).collect(),
            beta: vec![0.05; c],
            mean: vec![0.1; c],
            var: vec![1.5; c],
            eps: 1e-5,
        })
    }

    /// conv(3->8) -> bn -> relu -> [conv(8->8) -> bn] + shortcut -> relu -> gap -> dense(8->4)
    pub fn residual() -> NetGraph {
        use Source::*;
        let defs = vec![
            def("stem", conv(3, 8, 3, 1, 1, 1), vec![Input]),
            def("stem_bn", bn(8), vec![Layer(0)]),
            def("stem_relu", Op::Relu, vec![Layer(1)]),
            def("block_conv1", conv(8, 8, 3, 1, 1, 2), vec![Layer(2)]),
            def("block_bn1", bn(8), vec![Layer(3)]),
            def("block_relu1", Op::Relu, vec![Layer(4)]),
            def("block_conv2", conv(8, 8, 3, 1, 1, 3), vec![Layer(5)]),
            def("block_bn2", bn(8), vec![Layer(6)]),
            def("block_add", Op::Add, vec![Layer(7), Layer(2)]),
            def("block_relu2", Op::Relu, vec![Layer(8)]),
            def("down", conv(8, 16, 3, 2, 1, 4), vec![Layer(9)]),
            def("down_relu", Op::Relu, vec![Layer(10)]),
            def("gap", Op::GlobalAvgPool, vec![Layer(11)]),
            def(
                "fc",
                dense((0..64).map(|i| (i % 7) as f32 * 0.1 - 0.3).collect(), Some(vec![0.0; 4]), 16, 4),
                vec![Layer(12)],
            ),
        ];
        NetGraph::build(defs, vec![3, 6, 6], vec![], BTreeMap::new()).unwrap()
    }
}
