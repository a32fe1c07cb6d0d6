//! Mini-batch SGD for chains of dense / relu / flatten / frozen batchnorm
//! layers. Arithmetic is f64; weights are written back as f32.

use std::collections::BTreeMap;

use log::debug;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netgraph::{Dense, LayerDef, NetGraph, Op, Source};
use crate::tensor_io::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            lr: 0.05,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// 10 epochs at learning rate 1e-3.
    pub fn finetune() -> Self {
        TrainConfig {
            epochs: 10,
            lr: 1e-3,
            ..TrainConfig::default()
        }
    }

    /// A zero learning rate is allowed (weights stay unchanged).
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} not in [0, 1)", self.momentum)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Step {
    Dense {
        layer: usize,
        w: Vec<f64>,
        b: Option<Vec<f64>>,
        inp: usize,
        out: usize,
    },
    Relu,
    /// Frozen batchnorm folded to `x * scale + shift` per channel.
    Affine {
        scale: Vec<f64>,
        shift: Vec<f64>,
        spatial: usize,
    },
    Identity,
}

/// Trainable f64 copy of a dense network.
#[derive(Debug, Clone)]
pub struct Mlp {
    steps: Vec<Step>,
    input_len: usize,
    classes: usize,
}

impl Mlp {
    pub fn from_net(net: &NetGraph) -> Result<Self> {
        let mut steps = Vec::with_capacity(net.layers().len());
        for (i, l) in net.layers().iter().enumerate() {
            let expected = if i == 0 { Source::Input } else { Source::Layer(i - 1) };
            if l.inputs != [expected] {
                return Err(Error::TrainerUnsupported(format!(
                    "{} (only sequential networks are trainable)",
                    l.name
                )));
            }
            steps.push(match &l.op {
                Op::Dense(d) => Step::Dense {
                    layer: i,
                    w: d.weight.iter().map(|&v| v as f64).collect(),
                    b: d.bias.as_ref().map(|b| b.iter().map(|&v| v as f64).collect()),
                    inp: d.in_features,
                    out: d.out_features,
                },
                Op::Relu => Step::Relu,
                Op::Flatten => Step::Identity,
                Op::BatchNorm(bn) => {
                    let shape = net.input_shape_of(i);
                    let scale: Vec<f64> = bn
                        .gamma
                        .iter()
                        .zip(&bn.var)
                        .map(|(&g, &v)| g as f64 / (v as f64 + bn.eps as f64).sqrt())
                        .collect();
                    let shift = bn
                        .beta
                        .iter()
                        .zip(&bn.mean)
                        .zip(&scale)
                        .map(|((&b, &m), &s)| b as f64 - m as f64 * s)
                        .collect();
                    Step::Affine {
                        scale,
                        shift,
                        spatial: shape[1..].iter().product(),
                    }
                }
                _ => return Err(Error::TrainerUnsupported(format!("{} ({:?})", l.name, l.op.kind()))),
            });
        }
        Ok(Mlp {
            steps,
            input_len: net.input_len(),
            classes: net.output_len(),
        })
    }

    /// All dense weights and biases, layer by layer (weights then bias).
    pub fn parameters(&self) -> Vec<f64> {
        let mut p = Vec::new();
        for s in &self.steps {
            if let Step::Dense { w, b, .. } = s {
                p.extend_from_slice(w);
                if let Some(b) = b {
                    p.extend_from_slice(b);
                }
            }
        }
        p
    }

    pub fn set_parameters(&mut self, p: &[f64]) {
        let mut at = 0;
        for s in &mut self.steps {
            if let Step::Dense { w, b, .. } = s {
                let n = w.len();
                w.copy_from_slice(&p[at..at + n]);
                at += n;
                if let Some(b) = b {
                    let n = b.len();
                    b.copy_from_slice(&p[at..at + n]);
                    at += n;
                }
            }
        }
        assert_eq!(at, p.len(), "parameter vector length mismatch");
    }

    fn forward(&self, x: &[f64], batch: usize) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        for s in &self.steps {
            let a = acts.last().unwrap();
            let next = match s {
                Step::Dense { w, b, inp, out, .. } => {
                    let mut y = vec![0.0; batch * out];
                    for r in 0..batch {
                        let xr = &a[r * inp..(r + 1) * inp];
                        for o in 0..*out {
                            let wr = &w[o * inp..(o + 1) * inp];
                            let mut acc = b.as_ref().map_or(0.0, |b| b[o]);
                            for k in 0..*inp {
                                acc += wr[k] * xr[k];
                            }
                            y[r * out + o] = acc;
                        }
                    }
                    y
                }
                Step::Relu => a.iter().map(|&v| v.max(0.0)).collect(),
                Step::Affine { scale, shift, spatial } => {
                    let per = scale.len() * spatial;
                    a.iter()
                        .enumerate()
                        .map(|(i, &v)| {
                            let c = (i % per) / spatial;
                            v * scale[c] + shift[c]
                        })
                        .collect()
                }
                Step::Identity => a.clone(),
            };
            acts.push(next);
        }
        acts
    }

    /// Mean softmax cross-entropy and its gradient w.r.t. the logits.
    fn softmax_ce(&self, logits: &[f64], labels: &[usize]) -> (f64, Vec<f64>) {
        let k = self.classes;
        let n = labels.len();
        let mut loss = 0.0;
        let mut grad = vec![0.0; logits.len()];
        for (r, &y) in labels.iter().enumerate() {
            let z = &logits[r * k..(r + 1) * k];
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|&v| (v - m).exp()).sum();
            let lse = m + sum.ln();
            loss += lse - z[y];
            for j in 0..k {
                let p = (z[j] - lse).exp();
                grad[r * k + j] = (p - if j == y { 1.0 } else { 0.0 }) / n as f64;
            }
        }
        (loss / n as f64, grad)
    }

    fn check_batch(&self, x: &[f64], labels: &[usize]) -> Result<()> {
        if labels.is_empty() || x.len() != labels.len() * self.input_len {
            return Err(Error::Shape(format!(
                "batch of {} values for {} labels of width {}",
                x.len(),
                labels.len(),
                self.input_len
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= self.classes) {
            return Err(Error::Dataset(format!("label {y} out of range for {} classes", self.classes)));
        }
        Ok(())
    }

    pub fn loss(&self, x: &[f64], labels: &[usize]) -> Result<f64> {
        self.check_batch(x, labels)?;
        let acts = self.forward(x, labels.len());
        Ok(self.softmax_ce(acts.last().unwrap(), labels).0)
    }

    /// Loss and its gradient, ordered like [`Mlp::parameters`].
    pub fn loss_and_gradient(&self, x: &[f64], labels: &[usize]) -> Result<(f64, Vec<f64>)> {
        self.check_batch(x, labels)?;
        let batch = labels.len();
        let acts = self.forward(x, batch);
        let (loss, mut dy) = self.softmax_ce(acts.last().unwrap(), labels);
        let mut grads: Vec<Vec<f64>> = Vec::new();
        for (i, s) in self.steps.iter().enumerate().rev() {
            let a_in = &acts[i];
            dy = match s {
                Step::Dense { w, b, inp, out, .. } => {
                    let mut gw = vec![0.0; w.len()];
                    let mut gb = vec![0.0; *out];
                    let mut dx = vec![0.0; batch * inp];
                    for r in 0..batch {
                        let xr = &a_in[r * inp..(r + 1) * inp];
                        for o in 0..*out {
                            let g = dy[r * out + o];
                            if g == 0.0 {
                                continue;
                            }
                            gb[o] += g;
                            let wr = &w[o * inp..(o + 1) * inp];
                            for k in 0..*inp {
                                gw[o * inp + k] += g * xr[k];
                                dx[r * inp + k] += g * wr[k];
                            }
                        }
                    }
                    if b.is_some() {
                        gw.extend(gb);
                    }
                    grads.push(gw);
                    dx
                }
                Step::Relu => dy.iter().zip(a_in).map(|(&g, &v)| if v > 0.0 { g } else { 0.0 }).collect(),
                Step::Affine { scale, spatial, .. } => {
                    let per = scale.len() * spatial;
                    dy.iter()
                        .enumerate()
                        .map(|(i, &g)| g * scale[(i % per) / spatial])
                        .collect()
                }
                Step::Identity => dy,
            };
        }
        grads.reverse();
        Ok((loss, grads.concat()))
    }

    /// Writes the trained weights into a copy of `template`.
    pub fn to_net(&self, template: &NetGraph) -> Result<NetGraph> {
        let mut ops: Vec<Op> = template.layers().iter().map(|l| l.op.clone()).collect();
        for s in &self.steps {
            if let Step::Dense { layer, w, b, inp, out } = s {
                ops[*layer] = Op::Dense(Dense {
                    weight: w.iter().map(|&v| v as f32).collect(),
                    bias: b.as_ref().map(|b| b.iter().map(|&v| v as f32).collect()),
                    in_features: *inp,
                    out_features: *out,
                });
            }
        }
        template.with_ops(ops)
    }
}

fn to_f64(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

/// Trains and returns the mean training loss of every epoch.
pub fn train_with_history(net: &NetGraph, data: &Dataset, cfg: &TrainConfig) -> Result<(NetGraph, Vec<f64>)> {
    cfg.validate()?;
    let mut mlp = Mlp::from_net(net)?;
    if data.sample_len() != mlp.input_len {
        return Err(Error::Shape(format!(
            "dataset samples have {} values, network expects {}",
            data.sample_len(),
            mlp.input_len
        )));
    }
    if data.is_empty() {
        return Err(Error::Dataset("empty training set".into()));
    }
    let mut params = mlp.parameters();
    let mut velocity = vec![0.0; params.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.subset(chunk)?;
            let (loss, grad) = mlp.loss_and_gradient(&to_f64(batch.inputs()), batch.labels())?;
            total += loss * chunk.len() as f64;
            for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v + g;
                *p -= cfg.lr * *v;
            }
            mlp.set_parameters(&params);
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Numerical(format!("training loss diverged in epoch {epoch}")));
        }
        debug!("epoch {epoch}: loss {mean:.6}");
        history.push(mean);
    }
    Ok((mlp.to_net(net)?, history))
}

pub fn train(net: &NetGraph, data: &Dataset, cfg: &TrainConfig) -> Result<NetGraph> {
    Ok(train_with_history(net, data, cfg)?.0)
}

/// Same as [`train`]; pair with [`TrainConfig::finetune`] for the short
/// recovery schedule.
pub fn finetune(net: &NetGraph, data: &Dataset, cfg: &TrainConfig) -> Result<NetGraph> {
    train(net, data, cfg)
}

/// Fully connected network `input -> hidden... -> classes` with relu
/// between layers, uniform(+-sqrt(6 / (fan_in + fan_out))) weights and
/// zero biases. Layers are named `fc1`, `relu1`, ..., `out`.
pub fn init_mlp(input_dim: usize, hidden: &[usize], classes: usize, seed: u64) -> Result<NetGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut defs = Vec::new();
    let mut prev = input_dim;
    let widths: Vec<usize> = hidden.iter().copied().chain([classes]).collect();
    for (i, &w) in widths.iter().enumerate() {
        let a = (6.0 / (prev + w) as f64).sqrt();
        let weight = (0..prev * w).map(|_| rng.random_range(-a..a) as f32).collect();
        let last = i + 1 == widths.len();
        let input = if defs.is_empty() { Source::Input } else { Source::Layer(defs.len() - 1) };
        defs.push(LayerDef {
            name: if last { "out".into() } else { format!("fc{}", i + 1) },
            op: Op::Dense(Dense {
                weight,
                bias: Some(vec![0.0; w]),
                in_features: prev,
                out_features: w,
            }),
            inputs: vec![input],
        });
        if !last {
            defs.push(LayerDef {
                name: format!("relu{}", i + 1),
                op: Op::Relu,
                inputs: vec![Source::Layer(defs.len() - 1)],
            });
        }
        prev = w;
    }
    NetGraph::build(defs, vec![input_dim], vec![], BTreeMap::new())
}
