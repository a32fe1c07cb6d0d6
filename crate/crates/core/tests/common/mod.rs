//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::sync::OnceLock;

use diprune::di::{FeatureMatrix, LabelMatrix};
use diprune::linalg::Mat;
use diprune::netgraph::{Conv2d, Dense, NetGraph, Op};
use diprune::pruner::PruneMask;
use diprune::tensor_io::{Dataset, SyntheticSpec};
use diprune::trainer::{init_mlp, train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Gauss-Jordan inverse with partial pivoting.
pub fn gj_inverse(a: &Mat) -> Mat {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut r = a.row(i).to_vec();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
        m.swap(c, p);
        let piv = m[c][c];
        for v in m[c].iter_mut() {
            *v /= piv;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                if f != 0.0 {
                    let pivot_row = m[c].clone();
                    for (v, pv) in m[r].iter_mut().zip(pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
    }
    Mat::from_fn(n, n, |i, j| m[i][n + j])
}

/// `I - 11^T / N`, formed explicitly.
pub fn centering(n: usize) -> Mat {
    Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - 1.0 / n as f64)
}

/// Noise and signal matrices built literally from `X C X^T` and
/// `X C Y^T Y C^T X^T`.
pub fn grams_literal(x: &Mat, y: &Mat) -> (Mat, Mat) {
    let c = centering(x.cols());
    let xc = x.matmul(&c);
    let kbar = xc.matmul(&x.transpose());
    let xcy = xc.matmul(&y.transpose());
    (kbar.clone(), xcy.matmul(&xcy.transpose()))
}

/// `trace((diag(m) Kbar diag(m) + rho I)^-1 diag(m) K_B diag(m))` with an
/// explicit inverse; `m` may be fractional.
pub fn masked_di(kbar: &Mat, kb: &Mat, rho: f64, m: &[f64]) -> f64 {
    let n = kbar.rows();
    let a = Mat::from_fn(n, n, |i, j| m[i] * kbar[(i, j)] * m[j] + if i == j { rho } else { 0.0 });
    let b = Mat::from_fn(n, n, |i, j| m[i] * kb[(i, j)] * m[j]);
    gj_inverse(&a).matmul(&b).trace()
}

pub fn subset_di(kbar: &Mat, kb: &Mat, rho: f64, idx: &[usize]) -> f64 {
    let mut m = vec![0.0; kbar.rows()];
    for &i in idx {
        m[i] = 1.0;
    }
    // rows outside the subset contribute 1/rho * 0 to the trace
    masked_di(kbar, kb, rho, &m)
}

/// Random DI instance: `D x N` features with class-dependent means and a
/// random mixing matrix, labels cycling through all `K` classes.
pub struct Instance {
    pub x: FeatureMatrix,
    pub y: LabelMatrix,
}

pub fn random_instance(rng: &mut ChaCha8Rng, d: usize, n: usize, k: usize) -> Instance {
    let mut normal = || -> f64 { StandardNormal.sample(rng) };
    let means: Vec<f64> = (0..d * k).map(|_| normal()).collect();
    let mix: Vec<f64> = (0..d * d).map(|_| normal() * 0.5).collect();
    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    // shuffle labels so class blocks are not contiguous
    for i in (1..n).rev() {
        let j = (normal().abs() * 1e6) as usize % (i + 1);
        labels.swap(i, j);
    }
    let z: Vec<f64> = (0..d * n).map(|_| normal()).collect();
    let x = Mat::from_fn(d, n, |i, s| {
        let noise: f64 = (0..d).map(|t| mix[i * d + t] * z[t * n + s]).sum();
        means[i * k + labels[s]] + noise + 0.3 * z[i * n + s]
    });
    Instance {
        x: FeatureMatrix::from_mat(x).unwrap(),
        y: LabelMatrix::from_labels(&labels, k).unwrap(),
    }
}

/// Independent unit-variance features whose class means are uniform in
/// `[-1, 1]`; the noise Gram is close to `N I`.
pub fn well_conditioned_instance(rng: &mut ChaCha8Rng, d: usize, n: usize, k: usize) -> Instance {
    let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let means: Vec<f64> = (0..d * k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = Mat::from_fn(d, n, |i, s| {
        let z: f64 = StandardNormal.sample(&mut *rng);
        means[i * k + labels[s]] + z
    });
    Instance {
        x: FeatureMatrix::from_mat(x).unwrap(),
        y: LabelMatrix::from_labels(&labels, k).unwrap(),
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn choose(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for t in i..=j {
            r[idx[t]] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Kendall tau-a.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += ((a[i] - a[j]) * (b[i] - b[j])).signum();
        }
    }
    s / (n * (n - 1) / 2) as f64
}

/// The original network with the input slices of every consumer of a
/// pruned channel zeroed, i.e. the pruned activations masked out.
pub fn masked_network(net: &NetGraph, mask: &PruneMask) -> NetGraph {
    let mut dropped: Vec<Vec<usize>> = vec![Vec::new(); net.space_sizes().len()];
    for (name, m) in &mask.layers {
        let li = net.layer_index(name).unwrap();
        let space = net.layer(li).channels.space;
        dropped[space] = (0..m.len()).filter(|&j| !m[j]).collect();
    }
    let ops = net
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let input = net.input_channels_of(i);
            let gone = &dropped[input.space];
            match &l.op {
                Op::Dense(d) if !gone.is_empty() => {
                    let mut w = d.weight.clone();
                    for r in 0..d.out_features {
                        for &c in gone {
                            for p in 0..input.per_channel {
                                w[r * d.in_features + c * input.per_channel + p] = 0.0;
                            }
                        }
                    }
                    Op::Dense(Dense { weight: w, ..d.clone() })
                }
                Op::Conv2d(c) if !gone.is_empty() && !c.is_depthwise() => {
                    let mut w = c.weight.clone();
                    let taps = c.kernel.0 * c.kernel.1;
                    for o in 0..c.out_channels {
                        for &ic in gone {
                            let s = o * c.filter_len() + ic * taps;
                            w[s..s + taps].iter_mut().for_each(|v| *v = 0.0);
                        }
                    }
                    Op::Conv2d(Conv2d { weight: w, ..c.clone() })
                }
                other => other.clone(),
            }
        })
        .collect();
    net.with_ops(ops).unwrap()
}

/// Four-class Gaussian blobs in 16 dimensions, 2000 samples, split 75/25.
pub fn blobs() -> &'static (Dataset, Dataset) {
    static DATA: OnceLock<(Dataset, Dataset)> = OnceLock::new();
    DATA.get_or_init(|| {
        let all = SyntheticSpec::new(4, 16, 2000, 2024).generate().unwrap();
        all.split(0.25, 1).unwrap()
    })
}

pub fn fixture_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 30,
        batch_size: 32,
        lr: 0.01,
        momentum: 0.9,
        seed: 3,
    }
}

/// `16 -> 64 -> 64 -> 4` relu network trained on [`blobs`].
pub fn trained_mlp() -> &'static NetGraph {
    static NET: OnceLock<NetGraph> = OnceLock::new();
    NET.get_or_init(|| {
        let net = init_mlp(16, &[64, 64], 4, 7).unwrap();
        train(&net, &blobs().0, &fixture_train_config()).unwrap()
    })
}

pub fn dense_op(weight: Vec<f32>, bias: Option<Vec<f32>>, inp: usize, out: usize) -> Op {
    Op::Dense(Dense {
        weight,
        bias,
        in_features: inp,
        out_features: out,
    })
}

fn dense_parts(net: &NetGraph, name: &str) -> Dense {
    match &net.layer(net.layer_index(name).unwrap()).op {
        Op::Dense(d) => d.clone(),
        other => panic!("`{name}` is {:?}", other.kind()),
    }
}

/// Two parallel hidden layers summed into the logits. `signal` is a trained
/// layer reading the first 16 input dims; `noise` reads only 16 appended
/// dims of label-independent gaussian noise and adds random logit offsets.
pub struct NoiseFixture {
    pub net: NetGraph,
    pub train: Dataset,
    pub test: Dataset,
}

fn with_noise_dims(data: &Dataset, extra: usize, rng: &mut ChaCha8Rng) -> Dataset {
    let d = data.sample_len();
    let mut inputs = Vec::with_capacity(data.len() * (d + extra));
    for i in 0..data.len() {
        inputs.extend_from_slice(data.sample(i));
        inputs.extend((0..extra).map(|_| { let v: f64 = StandardNormal.sample(&mut *rng); v as f32 }));
    }
    Dataset::new(inputs, vec![d + extra], data.labels().to_vec(), data.num_classes()).unwrap()
}

pub fn noise_fixture(noise_gain: f32) -> NoiseFixture {
    use diprune::netgraph::{LayerDef, Source};
    const SIG: usize = 16;
    const HID: usize = 24;
    let all = SyntheticSpec::new(4, SIG, 1600, 11).generate().unwrap();
    let (train_sig, test_sig) = all.split(0.25, 5).unwrap();
    let small = init_mlp(SIG, &[HID], 4, 13).unwrap();
    let small = train(&small, &train_sig, &fixture_train_config()).unwrap();
    let (fc1, out) = (dense_parts(&small, "fc1"), dense_parts(&small, "out"));

    let mut r = rng(17);
    let train_set = with_noise_dims(&train_sig, SIG, &mut r);
    let test_set = with_noise_dims(&test_sig, SIG, &mut r);

    let din = 2 * SIG;
    let sig_w = (0..HID * din)
        .map(|i| {
            let (o, c) = (i / din, i % din);
            if c < SIG { fc1.weight[o * SIG + c] } else { 0.0 }
        })
        .collect();
    let noise_w = (0..HID * din)
        .map(|i| {
            let v: f64 = StandardNormal.sample(&mut r);
            if i % din < SIG { 0.0 } else { v as f32 * 0.5 }
        })
        .collect();
    let noise_out: Vec<f32> = (0..4 * HID)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut r);
            v as f32 * noise_gain
        })
        .collect();
    let def = |name: &str, op: Op, inputs: Vec<Source>| LayerDef {
        name: name.into(),
        op,
        inputs,
    };
    use Source::*;
    let defs = vec![
        def("signal", dense_op(sig_w, fc1.bias.clone(), din, HID), vec![Input]),
        def("signal_relu", Op::Relu, vec![Layer(0)]),
        def("noise", dense_op(noise_w, None, din, HID), vec![Input]),
        def("noise_relu", Op::Relu, vec![Layer(2)]),
        def("signal_out", Op::Dense(out), vec![Layer(1)]),
        def("noise_out", dense_op(noise_out, None, HID, 4), vec![Layer(3)]),
        def("logits", Op::Add, vec![Layer(4), Layer(5)]),
    ];
    let net = NetGraph::build(defs, vec![din], vec![], Default::default()).unwrap();
    NoiseFixture {
        net,
        train: train_set,
        test: test_set,
    }
}

fn uniform_weights(n: usize, seed: u64) -> Vec<f32> {
    let mut r = rng(seed);
    (0..n).map(|_| r.random_range(-0.5f32..0.5)).collect()
}

pub fn conv_op(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, groups: usize, seed: u64) -> Op {
    Op::Conv2d(Conv2d {
        weight: uniform_weights(cout * cin / groups * k * k, seed),
        bias: Some(vec![0.01; cout]),
        in_channels: cin,
        out_channels: cout,
        kernel: (k, k),
        stride,
        padding: pad,
        groups,
    })
}

pub fn bn_op(c: usize) -> Op {
    Op::BatchNorm(diprune::netgraph::BatchNorm {
        gamma: (0..c).map(|i| 1.0 + 0.1 * i as f32).collect(),
        beta: vec![0.05; c],
        mean: vec![0.1; c],
        var: vec![1.5; c],
        eps: 1e-5,
    })
}

pub fn sequential(input_shape: Vec<usize>, ops: Vec<(&str, Op)>) -> NetGraph {
    use diprune::netgraph::{LayerDef, Source};
    let defs = ops
        .into_iter()
        .enumerate()
        .map(|(i, (name, op))| LayerDef {
            name: name.into(),
            op,
            inputs: vec![if i == 0 { Source::Input } else { Source::Layer(i - 1) }],
        })
        .collect();
    NetGraph::build(defs, input_shape, vec![], Default::default()).unwrap()
}

/// conv(3->8) -> bn -> relu -> [conv(8->8) -> bn -> relu -> conv(8->8) -> bn]
/// + shortcut -> relu -> conv(8->16, stride 2) -> relu -> gap -> dense(16->4),
/// on a 3x6x6 input.
pub fn residual_net() -> NetGraph {
    use diprune::netgraph::{LayerDef, Source::*};
    let def = |name: &str, op: Op, inputs| LayerDef {
        name: name.into(),
        op,
        inputs,
    };
    let defs = vec![
        def("stem", conv_op(3, 8, 3, 1, 1, 1, 1), vec![Input]),
        def("stem_bn", bn_op(8), vec![Layer(0)]),
        def("stem_relu", Op::Relu, vec![Layer(1)]),
        def("block_conv1", conv_op(8, 8, 3, 1, 1, 1, 2), vec![Layer(2)]),
        def("block_bn1", bn_op(8), vec![Layer(3)]),
        def("block_relu1", Op::Relu, vec![Layer(4)]),
        def("block_conv2", conv_op(8, 8, 3, 1, 1, 1, 3), vec![Layer(5)]),
        def("block_bn2", bn_op(8), vec![Layer(6)]),
        def("block_add", Op::Add, vec![Layer(7), Layer(2)]),
        def("block_relu2", Op::Relu, vec![Layer(8)]),
        def("down", conv_op(8, 16, 3, 2, 1, 1, 4), vec![Layer(9)]),
        def("down_relu", Op::Relu, vec![Layer(10)]),
        def("gap", Op::GlobalAvgPool, vec![Layer(11)]),
        def("fc", dense_op(uniform_weights(64, 5), Some(vec![0.0; 4]), 16, 4), vec![Layer(12)]),
    ];
    NetGraph::build(defs, vec![3, 6, 6], vec![], Default::default()).unwrap()
}

/// Plain conv chain with a depthwise block: 2x8x8 input, three resolutions
/// and a dense stage.
pub fn conv_net() -> NetGraph {
    sequential(
        vec![2, 8, 8],
        vec![
            ("c0", conv_op(2, 6, 3, 1, 1, 1, 21)),
            ("r0", Op::Relu),
            ("dw", conv_op(6, 6, 3, 1, 1, 6, 22)),
            ("c1", conv_op(6, 10, 3, 2, 1, 1, 23)),
            ("bn1", bn_op(10)),
            ("r1", Op::Relu),
            ("c2", conv_op(10, 12, 3, 2, 1, 1, 24)),
            ("r2", Op::Relu),
            ("pool", Op::AvgPool { kernel: 2, stride: 2 }),
            ("flat", Op::Flatten),
            ("d", dense_op(uniform_weights(12 * 9, 25), Some(vec![0.0; 9]), 12, 9)),
            ("rd", Op::Relu),
            ("o", dense_op(uniform_weights(9 * 3, 26), None, 9, 3)),
        ],
    )
}

/// Smallest power of two turning every entry into an integer.
fn common_scale(entries: &[num_rational::BigRational]) -> num_bigint::BigInt {
    entries.iter().map(|v| v.denom().clone()).max().unwrap()
}

/// [`masked_di`] evaluated exactly on the f64 inputs: fraction-free
/// Gauss-Jordan on the integer-scaled system `[A | B]` ends with
/// `det(A) I | det(A) A^-1 B`; every division is exact (asserted).
fn masked_di_exact(kbar: &Mat, kb: &Mat, rho: f64, m: &[f64]) -> num_rational::BigRational {
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use num_traits::{One, Zero};
    let n = kbar.rows();
    let q = |v: f64| BigRational::from_float(v).unwrap();
    let mq: Vec<BigRational> = m.iter().map(|&v| q(v)).collect();
    let mut a_entries = Vec::with_capacity(n * n);
    let mut b_entries = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let v = &mq[i] * q(kbar[(i, j)]) * &mq[j];
            a_entries.push(if i == j { v + q(rho) } else { v });
            b_entries.push(&mq[i] * q(kb[(i, j)]) * &mq[j]);
        }
    }
    let (sa, sb) = (common_scale(&a_entries), common_scale(&b_entries));
    let int = |v: &BigRational, s: &BigInt| -> BigInt { (v * BigRational::from_integer(s.clone())).to_integer() };
    let mut a: Vec<Vec<BigInt>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| int(&a_entries[i * n + j], &sa))
                .chain((0..n).map(|j| int(&b_entries[i * n + j], &sb)))
                .collect()
        })
        .collect();
    let mut prev = BigInt::one();
    for k in 0..n {
        // A is SPD, so leading minors never vanish and no pivoting is needed
        let pivot_row = a[k].clone();
        let p = pivot_row[k].clone();
        assert!(!p.is_zero());
        for (i, row) in a.iter_mut().enumerate() {
            if i == k {
                continue;
            }
            let f = row[k].clone();
            for (v, pv) in row.iter_mut().zip(&pivot_row) {
                let num = &p * &*v - &f * pv;
                debug_assert!((&num % &prev).is_zero());
                *v = num / &prev;
            }
        }
        prev = p;
    }
    let det = prev;
    let trace = (0..n).fold(BigInt::zero(), |s, i| s + &a[i][n + i]);
    // A' = sa A, B' = sb B, so trace(A^-1 B) = trace(A'^-1 B') sa / sb
    BigRational::new(trace * sa, det * sb)
}

/// Central difference of the masked DI in coordinate `j` around `m = 1`,
/// evaluated exactly so only the O(h^2) truncation error remains.
pub fn masked_di_central_difference(kbar: &Mat, kb: &Mat, rho: f64, j: usize, h: f64) -> f64 {
    use num_traits::ToPrimitive;
    let d = kbar.rows();
    let mut m = vec![1.0; d];
    m[j] = 1.0 + h;
    let up = masked_di_exact(kbar, kb, rho, &m);
    m[j] = 1.0 - h;
    let down = masked_di_exact(kbar, kb, rho, &m);
    // the perturbed masks are the f64 values 1 +- h, so divide by their actual gap
    let width = num_rational::BigRational::from_float(1.0 + h).unwrap() - num_rational::BigRational::from_float(1.0 - h).unwrap();
    ((up - down) / width).to_f64().unwrap()
}
