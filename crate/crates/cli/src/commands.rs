use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use diprune::di::InfluenceMethod;
use diprune::distill::{apply_profile, extract_profile, StageProfile};
use diprune::error::{Error, Result};
use diprune::heuristics::{score_network, Heuristic, ScoreOptions, ScoreTable};
use diprune::netgraph::{evaluate_accuracy, NetGraph, TapStage};
use diprune::pruner::{greedy_prune, uniform_prune, BudgetSpec, HeuristicScorer, PruneMask, Scorer};
use diprune::quantizer::{model_size, quantize_model, QuantSpec};
use diprune::resource::count_resources;
use diprune::tensor_io::{load_dataset, load_model, save_model, write_packed, Dataset, DatasetFormat, MANIFEST_FILE};
use diprune::trainer::{init_mlp, train_with_history, TrainConfig};
use serde::Serialize;
use serde_json::json;

use crate::report::Recorder;
use crate::{DataArgs, DataFormat, Influence, Mode, Part, ScoreArgs, Tap};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn model_dir(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

fn read_model(rec: &mut Recorder, path: &Path) -> Result<NetGraph> {
    rec.input(&model_dir(path));
    let manifest = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    load_model(manifest)
}

fn read_data(rec: &mut Recorder, args: &DataArgs) -> Result<Dataset> {
    let path = args
        .data
        .as_deref()
        .ok_or_else(|| Error::Config("--data is required".into()))?;
    rec.input(path);
    let format = match args.data_format {
        Some(DataFormat::Idx) => DatasetFormat::Idx,
        Some(DataFormat::Csv) => DatasetFormat::Csv,
        Some(DataFormat::Synthetic) => DatasetFormat::SyntheticSpec,
        None => DatasetFormat::infer(path),
    };
    let data = load_dataset(path, format, args.classes)?;
    match args.holdout {
        None => Ok(data),
        Some(f) => {
            let (train, test) = data.split(f, args.holdout_seed)?;
            Ok(if args.part == Part::Train { train } else { test })
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(rec: &mut Recorder, path: &Path) -> Result<T> {
    rec.input(path);
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json(rec: &mut Recorder, path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(io_err(path))?;
    rec.output(path);
    Ok(())
}

fn write_model(rec: &mut Recorder, net: &NetGraph, dir: &Path) -> Result<()> {
    rec.outputs(save_model(net, dir)?);
    Ok(())
}

fn score_options(args: &ScoreArgs, seed: u64) -> ScoreOptions {
    ScoreOptions {
        tap: match args.tap {
            Tap::Act => TapStage::PostActivation,
            Tap::Preact => TapStage::PreActivation,
            Tap::Bn => TapStage::PostBatchnorm,
        },
        samples: args.samples,
        rho: args.rho,
        seed,
        method: match args.influence {
            Influence::Derivative => InfluenceMethod::Derivative,
            Influence::Exact => InfluenceMethod::ExactDifference,
        },
    }
}

pub fn score_cmd(
    rec: &mut Recorder,
    model: &Path,
    data: &DataArgs,
    args: &ScoreArgs,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let net = read_model(rec, model)?;
    let heuristic: Heuristic = args.heuristic.parse()?;
    let data = data.data.is_some().then(|| read_data(rec, data)).transpose()?;
    let t = Instant::now();
    let table = score_network(&net, data.as_ref(), heuristic, &score_options(args, seed))?;
    rec.metric("scoring_s", t.elapsed().as_secs_f64());
    rec.metric("heuristic", heuristic.name());
    rec.metric("layers", table.layers.len());
    rec.metric("channels", table.layers.values().map(Vec::len).sum::<usize>());
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(out, table.to_json()? + "\n").map_err(io_err(out))?;
    rec.output(out);
    Ok(())
}

pub struct PruneArgs {
    pub model: PathBuf,
    pub mode: Mode,
    pub scores: Option<PathBuf>,
    pub ratio: Option<f64>,
    pub flops_goal: Option<f64>,
    pub delta: Option<f64>,
    pub val_fraction: f64,
    pub recompute_scores: bool,
    pub profile: Option<PathBuf>,
    pub data: DataArgs,
    pub score: ScoreArgs,
    pub seed: u64,
    pub threads: usize,
    pub out: PathBuf,
}

fn need<T>(v: Option<T>, flag: &str, mode: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("--{flag} is required for --mode {mode}")))
}

fn read_scores(rec: &mut Recorder, path: &Path) -> Result<ScoreTable> {
    rec.input(path);
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    ScoreTable::from_json(&text)
}

pub fn prune_cmd(rec: &mut Recorder, a: PruneArgs) -> Result<()> {
    let net = read_model(rec, &a.model)?;
    let before = count_resources(&net);
    let model_out = a.out.join("model");
    let (mask, pruned, trace) = match a.mode {
        Mode::Uniform => {
            let ratio = need(a.ratio, "ratio", "uniform")?;
            let scores = read_scores(rec, &need(a.scores.as_deref(), "scores", "uniform")?)?;
            let (mask, pruned) = uniform_prune(&net, &scores, ratio)?;
            (mask, pruned, None)
        }
        Mode::Profile => {
            let profile: StageProfile = read_json(rec, need(a.profile.as_deref(), "profile", "profile")?)?;
            let scores = read_scores(rec, need(a.scores.as_deref(), "scores", "profile")?)?;
            let (mask, pruned) = apply_profile(&net, &profile, &scores)?;
            (mask, pruned, None)
        }
        Mode::Greedy => {
            let budget = BudgetSpec {
                val_fraction: a.val_fraction,
                recompute_scores: a.recompute_scores,
                seed: a.seed,
                threads: a.threads.max(1),
                ..BudgetSpec::new(need(a.flops_goal, "flops-goal", "greedy")?, need(a.delta, "delta", "greedy")?)
            };
            need(a.data.data.as_ref(), "data", "greedy")?;
            let data = read_data(rec, &a.data)?;
            let fixed;
            let on_the_fly;
            let scorer: &dyn Scorer = match &a.scores {
                Some(p) => {
                    fixed = read_scores(rec, p)?;
                    &fixed
                }
                None => {
                    on_the_fly = HeuristicScorer {
                        heuristic: a.score.heuristic.parse()?,
                        opts: score_options(&a.score, a.seed),
                    };
                    &on_the_fly
                }
            };
            match greedy_prune(&net, &data, scorer, &budget) {
                Ok((pruned, trace)) => {
                    let (mask, _) = trace.replay(&net)?;
                    (mask, pruned, Some(trace))
                }
                Err(Error::BudgetUnreachable { reached, goal, partial }) => {
                    // keep what was reached so the caller can inspect or resume
                    let (mask, _) = partial.trace.replay(&net)?;
                    write_prune_outputs(rec, &a.out, &model_out, &partial.net, &mask, Some(&partial.trace), &before)?;
                    rec.metric("partial", true);
                    return Err(Error::BudgetUnreachable { reached, goal, partial });
                }
                Err(e) => return Err(e),
            }
        }
    };
    write_prune_outputs(rec, &a.out, &model_out, &pruned, &mask, trace.as_ref(), &before)
}

fn write_prune_outputs(
    rec: &mut Recorder,
    out: &Path,
    model_out: &Path,
    pruned: &NetGraph,
    mask: &PruneMask,
    trace: Option<&diprune::pruner::PruneTrace>,
    before: &diprune::resource::ResourceReport,
) -> Result<()> {
    write_model(rec, pruned, model_out)?;
    write_json(rec, &out.join("mask.json"), mask)?;
    if let Some(t) = trace {
        write_json(rec, &out.join("trace.json"), t)?;
        rec.metric("steps", t.steps.len());
    }
    let after = count_resources(pruned);
    write_json(rec, &out.join("resources.json"), &json!({ "before": before, "after": &after }))?;
    rec.metric("flops_before", before.total_flops);
    rec.metric("flops_after", after.total_flops);
    rec.metric("params_before", before.total_params);
    rec.metric("params_after", after.total_params);
    rec.metric("flops_ratio", after.total_flops as f64 / before.total_flops.max(1) as f64);
    Ok(())
}

pub fn distill_cmd(rec: &mut Recorder, original: &Path, pruned: &Path, out: &Path) -> Result<()> {
    let a = read_model(rec, original)?;
    let b = read_model(rec, pruned)?;
    let profile = extract_profile(&a, &b)?;
    rec.metric("keep_ratios", profile.ratios());
    write_json(rec, out, &profile)
}

pub fn quantize_cmd(
    rec: &mut Recorder,
    model: &Path,
    scores: &Path,
    bits_high: u8,
    bits_low: u8,
    split: f64,
    out: &Path,
) -> Result<()> {
    let spec = QuantSpec {
        bits_high,
        bits_low,
        high_fraction: split,
    };
    spec.validate()?;
    let net = read_model(rec, model)?;
    let table = read_scores(rec, scores)?;
    let q = quantize_model(&net, &table, &spec)?;
    write_model(rec, &q.net, &out.join("model"))?;
    let codes = out.join("codes");
    fs::create_dir_all(&codes).map_err(io_err(&codes))?;
    for layer in &q.layers {
        let p = codes.join(format!("{}.bin", layer.name));
        write_packed(&layer.packed()?, &p)?;
        rec.output(p);
    }
    write_json(rec, &out.join("quant.json"), &q.sidecar())?;
    let float = model_size(&net, &BTreeMap::new())?;
    write_json(rec, &out.join("size.json"), &json!({ "quantized": &q.size, "float32": &float }))?;
    rec.metric("bytes", q.size.total_bytes);
    rec.metric("float32_bytes", float.total_bytes);
    rec.metric("compression", float.total_bytes as f64 / q.size.total_bytes.max(1) as f64);
    Ok(())
}

pub fn eval_cmd(rec: &mut Recorder, model: &Path, data: &DataArgs) -> Result<()> {
    let net = read_model(rec, model)?;
    let data = read_data(rec, data)?;
    rec.metric("accuracy", evaluate_accuracy(&net, &data)?);
    rec.metric("samples", data.len());
    Ok(())
}

pub fn flops_cmd(rec: &mut Recorder, model: &Path) -> Result<()> {
    let net = read_model(rec, model)?;
    let r = count_resources(&net);
    rec.metric("convention", &r.convention);
    rec.metric("total_flops", r.total_flops);
    rec.metric("total_params", r.total_params);
    rec.metric("layers", &r.layers);
    Ok(())
}

pub fn train_cmd(rec: &mut Recorder, model: &Path, data: &DataArgs, cfg: &TrainConfig, out: &Path) -> Result<()> {
    let net = read_model(rec, model)?;
    let data = read_data(rec, data)?;
    let (trained, losses) = train_with_history(&net, &data, cfg)?;
    write_model(rec, &trained, out)?;
    rec.metric("epoch_loss", &losses);
    rec.metric("train_accuracy", evaluate_accuracy(&trained, &data)?);
    Ok(())
}

pub fn init_cmd(rec: &mut Recorder, inputs: usize, hidden: &[usize], classes: usize, seed: u64, out: &Path) -> Result<()> {
    let net = init_mlp(inputs, hidden, classes, seed)?;
    write_model(rec, &net, out)?;
    rec.metric("params", count_resources(&net).total_params);
    Ok(())
}
