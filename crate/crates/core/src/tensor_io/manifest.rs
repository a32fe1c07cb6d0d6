use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::blob::{read_blob, write_blob, TensorBlob};
use crate::error::{Error, Result};
use crate::netgraph::{BatchNorm, Conv2d, Dense, LayerDef, LayerKind, NetGraph, Op, Source};

pub const INPUT_NAME: &str = "input";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<String>,
    #[serde(default)]
    pub params: Map<String, Value>,
    /// Role (`weight`, `bias`, `gamma`, ...) to blob path, relative to the manifest.
    #[serde(default)]
    pub weights: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub groups: Vec<Vec<String>>,
    #[serde(default)]
    pub metadata: BTreeMap<String, Value>,
}

impl ModelManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::model("<manifest>", e.to_string()))
    }

    pub fn input_shape(&self) -> Result<Vec<usize>> {
        let v = self
            .metadata
            .get("input_shape")
            .ok_or_else(|| Error::model(INPUT_NAME, "metadata.input_shape missing"))?;
        serde_json::from_value(v.clone())
            .map_err(|e| Error::model(INPUT_NAME, format!("bad input_shape: {e}")))
    }
}

/// Orders layers so every input precedes its consumer, keeping the manifest
/// order where it already is valid.
fn topo_order(m: &ModelManifest) -> Result<Vec<usize>> {
    let index: BTreeMap<&str, usize> = m
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| (l.name.as_str(), i))
        .collect();
    if index.len() != m.layers.len() {
        let mut seen = BTreeMap::new();
        for l in &m.layers {
            if seen.insert(l.name.as_str(), ()).is_some() {
                return Err(Error::model(&l.name, "duplicate layer name"));
            }
        }
    }
    if index.contains_key(INPUT_NAME) {
        return Err(Error::model(INPUT_NAME, "`input` is reserved for the graph input"));
    }
    let n = m.layers.len();
    let mut indeg = vec![0usize; n];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, l) in m.layers.iter().enumerate() {
        for inp in &l.inputs {
            if inp == INPUT_NAME {
                continue;
            }
            let &j = index
                .get(inp.as_str())
                .ok_or_else(|| Error::model(&l.name, format!("unknown input `{inp}`")))?;
            indeg[i] += 1;
            out[j].push(i);
        }
    }
    let mut ready: VecDeque<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_front() {
        order.push(i);
        let mut next = Vec::new();
        for &c in &out[i] {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                next.push(c);
            }
        }
        next.sort_unstable();
        ready.extend(next);
        ready.make_contiguous().sort_unstable();
    }
    if order.len() != n {
        let stuck = (0..n).find(|&i| indeg[i] > 0).expect("cycle member");
        return Err(Error::model(&m.layers[stuck].name, "layer is part of a cycle"));
    }
    Ok(order)
}

fn param_usize(spec: &LayerSpec, key: &str, default: usize) -> Result<usize> {
    match spec.params.get(key) {
        None => Ok(default),
        Some(v) => v
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| Error::model(&spec.name, format!("param `{key}` must be a non-negative integer"))),
    }
}

fn kernel_param(spec: &LayerSpec, key: &str) -> Result<Option<(usize, usize)>> {
    match spec.params.get(key) {
        None => Ok(None),
        Some(Value::Number(n)) => {
            let k = n.as_u64().ok_or_else(|| Error::model(&spec.name, "bad kernel"))? as usize;
            Ok(Some((k, k)))
        }
        Some(Value::Array(a)) if a.len() == 2 => {
            let get = |v: &Value| v.as_u64().map(|x| x as usize);
            match (get(&a[0]), get(&a[1])) {
                (Some(h), Some(w)) => Ok(Some((h, w))),
                _ => Err(Error::model(&spec.name, "bad kernel")),
            }
        }
        Some(_) => Err(Error::model(&spec.name, "bad kernel")),
    }
}

struct BlobLoader<'a> {
    base: &'a Path,
    spec: &'a LayerSpec,
}

impl BlobLoader<'_> {
    fn path(&self, role: &str) -> Option<PathBuf> {
        self.spec.weights.get(role).map(|p| self.base.join(p))
    }

    fn optional(&self, role: &str) -> Result<Option<TensorBlob>> {
        match self.path(role) {
            None => Ok(None),
            Some(p) => {
                if !p.exists() {
                    return Err(Error::model(
                        &self.spec.name,
                        format!("tensor `{role}` refers to missing file {}", p.display()),
                    ));
                }
                read_blob(&p)
                    .map(Some)
                    .map_err(|e| Error::model(&self.spec.name, format!("tensor `{role}`: {e}")))
            }
        }
    }

    fn required(&self, role: &str) -> Result<TensorBlob> {
        self.optional(role)?
            .ok_or_else(|| Error::model(&self.spec.name, format!("missing `{role}` tensor")))
    }

    fn vector(&self, role: &str, len: usize) -> Result<Vec<f32>> {
        let b = self.required(role)?;
        if b.data().len() != len {
            return Err(Error::model(
                &self.spec.name,
                format!("`{role}` has {} elements, expected {len}", b.data().len()),
            ));
        }
        Ok(b.into_data())
    }
}

fn build_op(spec: &LayerSpec, base: &Path) -> Result<Op> {
    let blobs = BlobLoader { base, spec };
    let name = &spec.name;
    Ok(match spec.kind {
        LayerKind::Dense => {
            let w = blobs.required("weight")?;
            if w.dims().len() != 2 {
                return Err(Error::model(name, "dense weight must be 2-d [out, in]"));
            }
            let (out, inp) = (w.dims()[0], w.dims()[1]);
            if param_usize(spec, "in_features", inp)? != inp || param_usize(spec, "out_features", out)? != out {
                return Err(Error::model(name, "params disagree with weight shape"));
            }
            let bias = match blobs.optional("bias")? {
                Some(b) if b.data().len() != out => {
                    return Err(Error::model(name, "bias length mismatch"));
                }
                b => b.map(TensorBlob::into_data),
            };
            Op::Dense(Dense {
                weight: w.into_data(),
                bias,
                in_features: inp,
                out_features: out,
            })
        }
        LayerKind::Conv2d => {
            let w = blobs.required("weight")?;
            if w.dims().len() != 4 {
                return Err(Error::model(name, "conv2d weight must be 4-d [out, in/groups, kh, kw]"));
            }
            let d = w.dims().to_vec();
            let groups = param_usize(spec, "groups", 1)?;
            if let Some(k) = kernel_param(spec, "kernel")? {
                if k != (d[2], d[3]) {
                    return Err(Error::model(name, "kernel param disagrees with weight shape"));
                }
            }
            let bias = match blobs.optional("bias")? {
                Some(b) if b.data().len() != d[0] => {
                    return Err(Error::model(name, "bias length mismatch"));
                }
                b => b.map(TensorBlob::into_data),
            };
            Op::Conv2d(Conv2d {
                weight: w.into_data(),
                bias,
                in_channels: d[1] * groups.max(1),
                out_channels: d[0],
                kernel: (d[2], d[3]),
                stride: param_usize(spec, "stride", 1)?,
                padding: param_usize(spec, "padding", 0)?,
                groups,
            })
        }
        LayerKind::Batchnorm => {
            let gamma = blobs.required("gamma")?;
            let c = gamma.data().len();
            let eps = spec.params.get("eps").and_then(Value::as_f64).unwrap_or(1e-5) as f32;
            Op::BatchNorm(BatchNorm {
                gamma: gamma.into_data(),
                beta: blobs.vector("beta", c)?,
                mean: blobs.vector("mean", c)?,
                var: blobs.vector("var", c)?,
                eps,
            })
        }
        LayerKind::Avgpool => {
            let kernel = kernel_param(spec, "kernel")?
                .ok_or_else(|| Error::model(name, "avgpool needs `kernel`"))?;
            if kernel.0 != kernel.1 {
                return Err(Error::model(name, "avgpool kernel must be square"));
            }
            Op::AvgPool {
                kernel: kernel.0,
                stride: param_usize(spec, "stride", kernel.0)?,
            }
        }
        LayerKind::Relu => Op::Relu,
        LayerKind::Globalavgpool => Op::GlobalAvgPool,
        LayerKind::Add => Op::Add,
        LayerKind::Flatten => Op::Flatten,
    })
}

/// Loads a model manifest and every tensor it references.
pub fn load_model(manifest_path: impl AsRef<Path>) -> Result<NetGraph> {
    let manifest_path = manifest_path.as_ref();
    let manifest = ModelManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    model_from_manifest(&manifest, base)
}

pub fn model_from_manifest(manifest: &ModelManifest, base: &Path) -> Result<NetGraph> {
    let order = topo_order(manifest)?;
    let mut position = BTreeMap::new();
    for (pos, &i) in order.iter().enumerate() {
        position.insert(manifest.layers[i].name.as_str(), pos);
    }
    let mut defs = Vec::with_capacity(order.len());
    for &i in &order {
        let spec = &manifest.layers[i];
        let inputs = spec
            .inputs
            .iter()
            .map(|n| {
                if n == INPUT_NAME {
                    Source::Input
                } else {
                    Source::Layer(position[n.as_str()])
                }
            })
            .collect();
        defs.push(LayerDef {
            name: spec.name.clone(),
            op: build_op(spec, base)?,
            inputs,
        });
    }
    NetGraph::build(
        defs,
        manifest.input_shape()?,
        manifest.groups.clone(),
        manifest.metadata.clone(),
    )
}

/// Describes `net` as a manifest, with blob paths under `blobs/`.
pub fn manifest_of(net: &NetGraph) -> (ModelManifest, Vec<(String, TensorBlob)>) {
    let mut blobs = Vec::new();
    let mut layers = Vec::new();
    for l in net.layers() {
        let mut weights = BTreeMap::new();
        let mut params = Map::new();
        let mut put = |role: &str, dims: Vec<usize>, data: &[f32]| {
            let rel = format!("blobs/{}.{role}.dipt", l.name);
            let blob = TensorBlob::new(dims, data.to_vec()).expect("consistent layer tensors");
            weights.insert(role.to_string(), rel.clone());
            blobs.push((rel, blob));
        };
        match &l.op {
            Op::Dense(d) => {
                put("weight", vec![d.out_features, d.in_features], &d.weight);
                if let Some(b) = &d.bias {
                    put("bias", vec![d.out_features], b);
                }
                params.insert("in_features".into(), json!(d.in_features));
                params.insert("out_features".into(), json!(d.out_features));
            }
            Op::Conv2d(c) => {
                put(
                    "weight",
                    vec![c.out_channels, c.in_channels / c.groups, c.kernel.0, c.kernel.1],
                    &c.weight,
                );
                if let Some(b) = &c.bias {
                    put("bias", vec![c.out_channels], b);
                }
                params.insert("kernel".into(), json!([c.kernel.0, c.kernel.1]));
                params.insert("stride".into(), json!(c.stride));
                params.insert("padding".into(), json!(c.padding));
                params.insert("groups".into(), json!(c.groups));
            }
            Op::BatchNorm(bn) => {
                let c = bn.gamma.len();
                put("gamma", vec![c], &bn.gamma);
                put("beta", vec![c], &bn.beta);
                put("mean", vec![c], &bn.mean);
                put("var", vec![c], &bn.var);
                params.insert("eps".into(), json!(bn.eps));
            }
            Op::AvgPool { kernel, stride } => {
                params.insert("kernel".into(), json!(kernel));
                params.insert("stride".into(), json!(stride));
            }
            Op::Relu | Op::GlobalAvgPool | Op::Add | Op::Flatten => {}
        }
        let inputs = l
            .inputs
            .iter()
            .map(|s| match *s {
                Source::Input => INPUT_NAME.to_string(),
                Source::Layer(j) => net.layer(j).name.clone(),
            })
            .collect();
        layers.push(LayerSpec {
            name: l.name.clone(),
            kind: l.op.kind(),
            inputs,
            params,
            weights,
        });
    }
    let mut metadata = net.metadata().clone();
    metadata.insert("input_shape".into(), json!(net.input_shape()));
    (
        ModelManifest {
            layers,
            groups: net.declared_groups().to_vec(),
            metadata,
        },
        blobs,
    )
}

/// Writes `dir/manifest.json` plus one blob per tensor; returns every written path.
pub fn save_model(net: &NetGraph, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let blob_dir = dir.join("blobs");
    fs::create_dir_all(&blob_dir).map_err(|e| Error::io(&blob_dir, e))?;
    let (manifest, blobs) = manifest_of(net);
    let mut written = Vec::with_capacity(blobs.len() + 1);
    for (rel, blob) in &blobs {
        let p = dir.join(rel);
        write_blob(blob, &p)?;
        written.push(p);
    }
    let mpath = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
    written.push(mpath);
    Ok(written)
}
