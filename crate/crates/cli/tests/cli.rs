use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

struct Run {
    code: i32,
    report: Value,
}

fn diprune(dir: &Path, args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_diprune"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn diprune");
    let stdout = String::from_utf8(out.stdout).unwrap();
    let report = serde_json::from_str(stdout.trim()).unwrap_or(Value::Null);
    Run {
        code: out.status.code().unwrap_or(-1),
        report,
    }
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let r = diprune(dir, args);
    assert_eq!(r.code, 0, "{args:?}: {}", r.report);
    r.report
}

/// A small trained MLP plus its dataset, shared layout for every test.
fn workspace() -> (tempfile::TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().to_path_buf();
    fs::write(d.join("data.json"), r#"{"classes":3,"dim":8,"n":300,"seed":4}"#).unwrap();
    ok(&d, &["init", "--inputs", "8", "--hidden", "16,12", "--classes", "3", "--seed", "2", "--out", "m0"]);
    ok(
        &d,
        &["train", "--model", "m0", "--data", "data.json", "--epochs", "8", "--lr", "0.02", "--out", "m1"],
    );
    (tmp, d)
}

#[test]
fn report_has_the_documented_fields() {
    let (_t, d) = workspace();
    let r = ok(&d, &["flops", "--model", "m1"]);
    for key in ["command", "inputs_digest", "outputs", "metrics", "wall_clock_s"] {
        assert!(r.get(key).is_some(), "missing {key}");
    }
    assert_eq!(r["command"], "flops");
    assert_eq!(r["metrics"]["total_flops"], 8 * 16 + 16 * 12 + 12 * 3);
    assert_eq!(r["inputs_digest"].as_str().unwrap().len(), 64);
}

#[test]
fn train_then_eval_reports_accuracy() {
    let (_t, d) = workspace();
    let r = ok(&d, &["eval", "--model", "m1", "--data", "data.json", "--holdout", "0.3", "--part", "test"]);
    assert_eq!(r["metrics"]["samples"], 90);
    assert!(r["metrics"]["accuracy"].as_f64().unwrap() > 0.6);
}

#[test]
fn random_scores_are_byte_identical_for_one_seed() {
    let (_t, d) = workspace();
    let args = |out: &'static str| ["score", "--model", "m1", "--heuristic", "random", "--seed", "7", "--out", out];
    ok(&d, &args("a.json"));
    ok(&d, &args("b.json"));
    assert_eq!(fs::read(d.join("a.json")).unwrap(), fs::read(d.join("b.json")).unwrap());
    ok(&d, &["score", "--model", "m1", "--heuristic", "random", "--seed", "8", "--out", "c.json"]);
    assert_ne!(fs::read(d.join("a.json")).unwrap(), fs::read(d.join("c.json")).unwrap());
}

#[test]
fn same_inputs_give_same_digest() {
    let (_t, d) = workspace();
    let a = ok(&d, &["score", "--model", "m1", "--data", "data.json", "--out", "s1.json"]);
    let b = ok(&d, &["score", "--model", "m1/manifest.json", "--data", "data.json", "--out", "s2.json"]);
    assert_eq!(a["inputs_digest"], b["inputs_digest"]);
    assert_eq!(fs::read(d.join("s1.json")).unwrap(), fs::read(d.join("s2.json")).unwrap());
}

#[test]
fn uniform_prune_writes_model_mask_and_resources() {
    let (_t, d) = workspace();
    ok(&d, &["score", "--model", "m1", "--data", "data.json", "--out", "s.json"]);
    let r = ok(&d, &["prune", "--model", "m1", "--mode", "uniform", "--scores", "s.json", "--ratio", "0.5", "--out", "p"]);
    for f in ["p/model/manifest.json", "p/mask.json", "p/resources.json"] {
        assert!(d.join(f).exists(), "{f}");
    }
    let res: Value = serde_json::from_str(&fs::read_to_string(d.join("p/resources.json")).unwrap()).unwrap();
    assert_eq!(res["after"]["total_flops"], r["metrics"]["flops_after"]);
    assert_eq!(r["metrics"]["flops_after"], 8 * 8 + 8 * 6 + 6 * 3);
    let after = ok(&d, &["flops", "--model", "p/model"]);
    assert_eq!(after["metrics"]["total_flops"], r["metrics"]["flops_after"]);
}

#[test]
fn greedy_prune_meets_the_goal_and_records_a_trace() {
    let (_t, d) = workspace();
    let r = ok(
        &d,
        &[
            "prune", "--model", "m1", "--mode", "greedy", "--flops-goal", "0.5", "--delta", "0.1", "--data", "data.json",
            "--out", "g",
        ],
    );
    assert!(r["metrics"]["flops_ratio"].as_f64().unwrap() <= 0.5);
    assert!(d.join("g/trace.json").exists());
}

#[test]
fn unreachable_budget_exits_3_with_partial_outputs() {
    let (_t, d) = workspace();
    let r = diprune(
        &d,
        &[
            "prune", "--model", "m1", "--mode", "greedy", "--flops-goal", "0.0001", "--delta", "0.3", "--data",
            "data.json", "--out", "g",
        ],
    );
    assert_eq!(r.code, 3, "{}", r.report);
    assert_eq!(r.report["metrics"]["partial"], true);
    assert!(d.join("g/model/manifest.json").exists());
    assert!(d.join("g/trace.json").exists());
}

#[test]
fn distilled_profile_reproduces_the_pruned_widths() {
    let (_t, d) = workspace();
    ok(&d, &["score", "--model", "m1", "--data", "data.json", "--out", "s.json"]);
    let u = ok(&d, &["prune", "--model", "m1", "--mode", "uniform", "--scores", "s.json", "--ratio", "0.25", "--out", "u"]);
    ok(&d, &["distill", "--original", "m1", "--pruned", "u/model", "--out", "prof.json"]);
    let p = ok(
        &d,
        &["prune", "--model", "m1", "--mode", "profile", "--profile", "prof.json", "--scores", "s.json", "--out", "p"],
    );
    assert_eq!(u["metrics"]["flops_after"], p["metrics"]["flops_after"]);
}

#[test]
fn distill_with_renamed_layer_exits_2() {
    let (_t, d) = workspace();
    fs::create_dir_all(d.join("m2")).unwrap();
    let manifest = fs::read_to_string(d.join("m1/manifest.json")).unwrap();
    fs::write(d.join("m2/manifest.json"), manifest.replace("\"fc2\"", "\"fcX\"")).unwrap();
    let blobs = d.join("m1/blobs");
    fs::create_dir_all(d.join("m2/blobs")).unwrap();
    for e in fs::read_dir(&blobs).unwrap() {
        let e = e.unwrap();
        fs::copy(e.path(), d.join("m2/blobs").join(e.file_name())).unwrap();
    }
    let r = diprune(&d, &["distill", "--original", "m1", "--pruned", "m2", "--out", "x.json"]);
    assert_eq!(r.code, 2, "{}", r.report);
    assert!(!d.join("x.json").exists());
}

#[test]
fn quantize_writes_codes_and_shrinks_the_model() {
    let (_t, d) = workspace();
    ok(&d, &["score", "--model", "m1", "--data", "data.json", "--out", "s.json"]);
    let r = ok(&d, &["quantize", "--model", "m1", "--scores", "s.json", "--out", "q"]);
    assert!(r["metrics"]["bytes"].as_u64().unwrap() < r["metrics"]["float32_bytes"].as_u64().unwrap());
    for f in ["q/model/manifest.json", "q/quant.json", "q/size.json", "q/codes/fc1.bin", "q/codes/fc2.bin"] {
        assert!(d.join(f).exists(), "{f}");
    }
    let acc = ok(&d, &["eval", "--model", "q/model", "--data", "data.json"]);
    assert!(acc["metrics"]["accuracy"].as_f64().unwrap() > 0.5);
}

#[test]
fn low_bits_above_high_bits_exits_2() {
    let (_t, d) = workspace();
    ok(&d, &["score", "--model", "m1", "--data", "data.json", "--out", "s.json"]);
    let r = diprune(&d, &["quantize", "--model", "m1", "--scores", "s.json", "--bits-high", "2", "--bits-low", "4", "--out", "q"]);
    assert_eq!(r.code, 2);
    assert_eq!(r.report["metrics"]["exit_code"], 2);
}

#[test]
fn slimming_on_a_network_without_batchnorm_exits_2() {
    let (_t, d) = workspace();
    let r = diprune(&d, &["score", "--model", "m1", "--heuristic", "slimming", "--out", "s.json"]);
    assert_eq!(r.code, 2);
}

#[test]
fn bad_inputs_exit_2() {
    let (_t, d) = workspace();
    assert_eq!(diprune(&d, &["flops", "--model", "missing"]).code, 2);
    assert_eq!(diprune(&d, &["score", "--model", "m1", "--heuristic", "bogus", "--out", "s.json"]).code, 2);
    assert_eq!(diprune(&d, &["score", "--model", "m1", "--out", "s.json"]).code, 2, "di without data");
    assert_eq!(diprune(&d, &["eval", "--model", "m1"]).code, 2);
    assert_eq!(diprune(&d, &["prune", "--model", "m1", "--mode", "uniform", "--out", "p"]).code, 2);
}

#[test]
fn identity_profile_round_trip_is_a_no_op() {
    let (_t, d) = workspace();
    let r = ok(&d, &["distill", "--original", "m1", "--pruned", "m1", "--out", "id.json"]);
    assert!(r["metrics"]["keep_ratios"].as_array().unwrap().iter().all(|v| v == 1.0));
    ok(&d, &["score", "--model", "m1", "--heuristic", "l1", "--out", "s.json"]);
    let p = ok(&d, &["prune", "--model", "m1", "--mode", "profile", "--profile", "id.json", "--scores", "s.json", "--out", "p"]);
    assert_eq!(p["metrics"]["flops_after"], p["metrics"]["flops_before"]);
    let a = ok(&d, &["eval", "--model", "m1", "--data", "data.json"]);
    let b = ok(&d, &["eval", "--model", "p/model", "--data", "data.json"]);
    assert_eq!(a["metrics"]["accuracy"], b["metrics"]["accuracy"]);
}

#[test]
fn equal_bit_widths_quantize_uniformly() {
    let (_t, d) = workspace();
    ok(&d, &["score", "--model", "m1", "--heuristic", "l1", "--out", "s.json"]);
    let args = |split: &'static str, out: &'static str| {
        ["quantize", "--model", "m1", "--scores", "s.json", "--bits-high", "8", "--bits-low", "8", "--split", split, "--out", out]
    };
    let a = ok(&d, &args("0.1", "qa"));
    let b = ok(&d, &args("0.9", "qb"));
    assert_eq!(a["metrics"]["bytes"], b["metrics"]["bytes"]);
    assert_eq!(fs::read(d.join("qa/codes/fc1.bin")).unwrap(), fs::read(d.join("qb/codes/fc1.bin")).unwrap());
}

#[test]
fn thread_count_does_not_change_greedy_result() {
    let (_t, d) = workspace();
    let run = |threads: &'static str, out: &'static str| {
        ok(
            &d,
            &[
                "--threads", threads, "prune", "--model", "m1", "--mode", "greedy", "--flops-goal", "0.5", "--delta",
                "0.005", "--data", "data.json", "--out", out,
            ],
        );
        fs::read(d.join(out).join("trace.json")).unwrap()
    };
    assert_eq!(run("1", "g1"), run("3", "g3"));
}
