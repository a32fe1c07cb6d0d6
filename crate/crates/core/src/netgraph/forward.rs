use super::{BatchNorm, Conv2d, Dense, NetGraph, Op, Source};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::tensor_io::Dataset;

const EVAL_CHUNK: usize = 256;

impl NetGraph {
    /// Runs inference on `batch` (row-major, `B x input_len`) and returns `B x K` logits.
    pub fn forward(&self, batch: &[f32]) -> Result<Mat> {
        let b = self.batch_len(batch)?;
        let acts = self.run(batch, b, None)?;
        let out = acts.into_iter().last().expect("graph has layers");
        Ok(Mat::from_vec(b, self.output_len(), out))
    }

    /// Runs inference and returns every layer's output (each `B x layer size`).
    ///
    /// Outputs of layers not listed in `keep` are dropped as soon as their
    /// last consumer has run; `None` keeps everything.
    pub fn forward_all(&self, batch: &[f32], keep: Option<&[usize]>) -> Result<Vec<Vec<f64>>> {
        let b = self.batch_len(batch)?;
        self.run(batch, b, keep)
    }

    fn batch_len(&self, batch: &[f32]) -> Result<usize> {
        let n = self.input_len();
        if batch.is_empty() || batch.len() % n != 0 {
            return Err(Error::Shape(format!(
                "batch of {} values is not a multiple of input size {n} ({:?})",
                batch.len(),
                self.input_shape()
            )));
        }
        Ok(batch.len() / n)
    }

    fn run(&self, batch: &[f32], b: usize, keep: Option<&[usize]>) -> Result<Vec<Vec<f64>>> {
        let input: Vec<f64> = batch.iter().map(|&v| v as f64).collect();
        let n = self.layers().len();
        let mut last_use = vec![0usize; n];
        for (i, l) in self.layers().iter().enumerate() {
            for s in &l.inputs {
                if let Source::Layer(j) = *s {
                    last_use[j] = i;
                }
            }
        }
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n);
        for (i, layer) in self.layers().iter().enumerate() {
            let src = |s: &Source| -> &[f64] {
                match *s {
                    Source::Input => &input,
                    Source::Layer(j) => &acts[j],
                }
            };
            let in_shape = self.input_shape_of(i);
            let x = src(&layer.inputs[0]);
            let out = match &layer.op {
                Op::Dense(d) => dense(d, x, b),
                Op::Conv2d(c) => conv2d(c, x, b, in_shape, &layer.out_shape),
                Op::BatchNorm(bn) => batchnorm(bn, x, b, in_shape),
                Op::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
                Op::AvgPool { kernel, stride } => avgpool(*kernel, *stride, x, b, in_shape, &layer.out_shape),
                Op::GlobalAvgPool => global_avgpool(x, b, in_shape),
                Op::Flatten => x.to_vec(),
                Op::Add => {
                    let mut out = x.to_vec();
                    for s in &layer.inputs[1..] {
                        for (o, v) in out.iter_mut().zip(src(s)) {
                            *o += v;
                        }
                    }
                    out
                }
            };
            acts.push(out);
            if let Some(keep) = keep {
                for s in &layer.inputs {
                    if let Source::Layer(j) = *s {
                        if last_use[j] == i && !keep.contains(&j) {
                            acts[j] = Vec::new();
                        }
                    }
                }
            }
        }
        Ok(acts)
    }
}

fn dense(d: &Dense, x: &[f64], b: usize) -> Vec<f64> {
    let w: Vec<f64> = d.weight.iter().map(|&v| v as f64).collect();
    let mut out = vec![0.0; b * d.out_features];
    for s in 0..b {
        let xs = &x[s * d.in_features..(s + 1) * d.in_features];
        for o in 0..d.out_features {
            let row = &w[o * d.in_features..(o + 1) * d.in_features];
            let mut acc = d.bias.as_ref().map_or(0.0, |bias| bias[o] as f64);
            for (wi, xi) in row.iter().zip(xs) {
                acc += wi * xi;
            }
            out[s * d.out_features + o] = acc;
        }
    }
    out
}

fn conv2d(c: &Conv2d, x: &[f64], b: usize, in_shape: &[usize], out_shape: &[usize]) -> Vec<f64> {
    let (cin, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (ho, wo) = (out_shape[1], out_shape[2]);
    let (kh, kw) = c.kernel;
    let cin_g = cin / c.groups;
    let cout_g = c.out_channels / c.groups;
    let weight: Vec<f64> = c.weight.iter().map(|&v| v as f64).collect();
    let in_size = cin * h * w;
    let out_size = c.out_channels * ho * wo;
    let mut out = vec![0.0; b * out_size];
    for s in 0..b {
        let xs = &x[s * in_size..(s + 1) * in_size];
        let os = &mut out[s * out_size..(s + 1) * out_size];
        for oc in 0..c.out_channels {
            let g = oc / cout_g;
            let bias = c.bias.as_ref().map_or(0.0, |bv| bv[oc] as f64);
            let filt = &weight[oc * cin_g * kh * kw..(oc + 1) * cin_g * kh * kw];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias;
                    for ic in 0..cin_g {
                        let plane = &xs[(g * cin_g + ic) * h * w..(g * cin_g + ic + 1) * h * w];
                        for ky in 0..kh {
                            let iy = (oy * c.stride + ky) as isize - c.padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * c.stride + kx) as isize - c.padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += filt[(ic * kh + ky) * kw + kx]
                                    * plane[iy as usize * w + ix as usize];
                            }
                        }
                    }
                    os[(oc * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

fn batchnorm(bn: &BatchNorm, x: &[f64], b: usize, shape: &[usize]) -> Vec<f64> {
    let c = shape[0];
    let per: usize = shape[1..].iter().product();
    let (scale, shift): (Vec<f64>, Vec<f64>) = (0..c)
        .map(|j| {
            let s = bn.gamma[j] as f64 / (bn.var[j] as f64 + bn.eps as f64).sqrt();
            (s, bn.beta[j] as f64 - bn.mean[j] as f64 * s)
        })
        .unzip();
    let mut out = x.to_vec();
    for s in 0..b {
        for j in 0..c {
            let base = (s * c + j) * per;
            for v in &mut out[base..base + per] {
                *v = *v * scale[j] + shift[j];
            }
        }
    }
    out
}

fn avgpool(k: usize, stride: usize, x: &[f64], b: usize, in_shape: &[usize], out_shape: &[usize]) -> Vec<f64> {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (ho, wo) = (out_shape[1], out_shape[2]);
    let norm = (k * k) as f64;
    let mut out = vec![0.0; b * c * ho * wo];
    for s in 0..b {
        for ch in 0..c {
            let plane = &x[(s * c + ch) * h * w..(s * c + ch + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ky in 0..k {
                        for kx in 0..k {
                            acc += plane[(oy * stride + ky) * w + ox * stride + kx];
                        }
                    }
                    out[((s * c + ch) * ho + oy) * wo + ox] = acc / norm;
                }
            }
        }
    }
    out
}

pub(crate) fn global_avgpool(x: &[f64], b: usize, shape: &[usize]) -> Vec<f64> {
    let c = shape[0];
    let per: usize = shape[1..].iter().product();
    let mut out = Vec::with_capacity(b * c);
    for s in 0..b {
        for j in 0..c {
            let base = (s * c + j) * per;
            out.push(x[base..base + per].iter().sum::<f64>() / per as f64);
        }
    }
    out
}

/// Top-1 accuracy; argmax ties go to the lowest class index.
pub fn evaluate_accuracy(net: &NetGraph, data: &Dataset) -> Result<f64> {
    check_dataset(net, data)?;
    let n = data.len();
    let mut correct = 0usize;
    for start in (0..n).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(n);
        let logits = net.forward(data.input_range(start, end))?;
        for (r, &label) in (0..end - start).zip(&data.labels()[start..end]) {
            if argmax(logits.row(r)) == label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / n as f64)
}

pub(crate) fn check_dataset(net: &NetGraph, data: &Dataset) -> Result<()> {
    if data.sample_len() != net.input_len() {
        return Err(Error::Shape(format!(
            "dataset samples have shape {:?}, model expects {:?}",
            data.sample_shape(),
            net.input_shape()
        )));
    }
    Ok(())
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
