use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use histyle_core::annotation::{synthetic_values, write_values_csv};
use serde_json::Value;

fn histyle(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_histyle"))
        .current_dir(dir)
        .env_remove("HISTYLE_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = histyle(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    histyle(dir, args).status.code().expect("exited")
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

const SMALL: &[&str] = &["--n-speakers", "2", "--items-per-cell", "3"];

fn synth(dir: &Path, out: &str, seed: &str) {
    let mut args = vec!["synth-gen", "--out", out, "--seed", seed];
    args.extend_from_slice(SMALL);
    ok(dir, &args);
}

#[test]
fn synth_gen_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "a", "7");
    synth(dir.path(), "b", "7");
    synth(dir.path(), "c", "8");
    for f in ["corpus.jsonl", "train.jsonl", "test.jsonl"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        assert_eq!(a, std::fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
        assert_ne!(a, std::fs::read(dir.path().join("c").join(f)).unwrap(), "{f}");
    }
    let m = json(dir.path().join("a/run-synth-gen.json"));
    assert_eq!(m["command"], "synth-gen");
    assert_eq!(m["seeds"]["run"], 7);
    assert_eq!(m["seeds"]["corpus"], 7);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 3);
    assert_eq!(m["details"]["items"], 2 * 81 * 3);
}

#[test]
fn env_seed_sits_between_config_and_flag() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "seed = 1\n").unwrap();
    let run = |args: &[&str], env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_histyle"));
        cmd.current_dir(dir.path()).env_remove("HISTYLE_SEED").args(args).args(SMALL);
        if let Some(s) = env {
            cmd.env("HISTYLE_SEED", s);
        }
        assert!(cmd.output().unwrap().status.success());
        json(dir.path().join("o/run-synth-gen.json"))["config"]["seed"].as_u64().unwrap()
    };
    let base = ["synth-gen", "--out", "o", "--config", "c.toml"];
    assert_eq!(run(&base, None), 1);
    assert_eq!(run(&base, Some("5")), 5);
    let mut flagged = base.to_vec();
    flagged.extend(["--seed", "9"]);
    assert_eq!(run(&flagged, Some("5")), 9);
}

#[test]
fn train_eval_predict_tsne_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // two speakers would make gender the same partition as speaker identity
    ok(d, &["synth-gen", "--out", "o", "--seed", "3", "--n-speakers", "4", "--items-per-cell", "2"]);
    let before = std::fs::read(d.join("o/train.jsonl")).unwrap();
    let stdout = ok(
        d,
        &[
            "train", "--out", "o", "--steps", "3", "--batch-size", "8", "--model", "hierarchical", "--model",
            "single-stage", "--model", "direct-regression",
        ],
    );
    assert!(stdout.contains("hierarchical stage 2"));
    assert_eq!(std::fs::read(d.join("o/train.jsonl")).unwrap(), before, "train must not touch its input");
    for kind in ["hierarchical", "single_stage", "direct_regression"] {
        assert!(d.join("o/models").join(kind).join("manifest.json").is_file(), "{kind}");
    }
    for f in ["hierarchical-stage1.csv", "hierarchical-stage2.csv", "single_stage-stage1.csv", "direct_regression-stage1.csv"] {
        let text = std::fs::read_to_string(d.join("o/traces").join(f)).unwrap();
        assert_eq!(text.lines().count(), 4, "{f}: header plus three steps");
    }

    ok(d, &["eval", "--out", "o"]);
    let csv = std::fs::read_to_string(d.join("o/accuracy.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "model,n,gender,speed,volume,pitch,fluctuation,style_average");
    let models: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(models, ["ground_truth", "direct_regression", "hierarchical", "single_stage"]);
    let m = json(d.join("o/run-eval.json"));
    let truth = &m["details"]["accuracy"][0];
    assert_eq!(truth["model"], "ground_truth");
    assert!(truth["style_average"].as_f64().unwrap() > 0.95);
    let inputs: Vec<&str> = m["inputs"].as_array().unwrap().iter().map(|i| i["path"].as_str().unwrap()).collect();
    assert!(inputs.iter().any(|p| p.ends_with("train.jsonl")), "centroids come from the training split");

    let first: Value = serde_json::from_str(std::fs::read_to_string(d.join("o/test.jsonl")).unwrap().lines().next().unwrap()).unwrap();
    let prompt = first["prompt_text"].as_str().unwrap();
    ok(d, &["predict", "--out", "o", "--prompt", prompt]);
    let pred: Value = serde_json::from_str(std::fs::read_to_string(d.join("o/predictions.jsonl")).unwrap().trim()).unwrap();
    assert_eq!(pred["labels"], first["labels"]);
    assert_eq!(pred["style_emb"].as_array().unwrap().len(), 64);
    assert!(pred["speaker_emb"].is_array(), "the hierarchical bundle is preferred");
    assert_eq!(code(d, &["predict", "--out", "o", "--prompt", "hello there"]), 3);

    ok(d, &["tsne", "--out", "o", "--max-points", "60", "--iters", "300", "--perplexity", "10"]);
    let coords = std::fs::read_to_string(d.join("o/tsne_coords.csv")).unwrap();
    assert_eq!(coords.lines().count(), 61);
    assert_eq!(std::fs::read_to_string(d.join("o/tsne_kl.csv")).unwrap().lines().count(), 301);
    for f in ["tsne_speaker.svg", "tsne_pitch.svg", "hierarchy.csv", "hierarchy.json"] {
        assert!(d.join("o").join(f).is_file(), "{f}");
    }
    let h = json(d.join("o/hierarchy.json"));
    assert_eq!(h["speaker_dominates"], true);
}

#[test]
fn train_rerun_from_manifest_reproduces_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "o", "4");
    ok(d, &["train", "--out", "o", "--steps", "2", "--batch-size", "8"]);
    let first = json(d.join("o/run-train.json"));
    std::fs::rename(d.join("o/run-train.json"), d.join("first.json")).unwrap();
    ok(d, &["train", "--config", "first.json"]);
    let second = json(d.join("o/run-train.json"));
    assert_eq!(first["config_hash"], second["config_hash"]);
    assert_eq!(first["outputs"], second["outputs"]);
    assert_eq!(first["inputs"], second["inputs"]);
}

#[test]
fn annotate_loop_sim_offset_converges() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let stdout = ok(d, &["annotate-loop", "--out", "o", "--annotator", "sim", "--sim-offset", "0.3", "--attributes", "pitch"]);
    assert!(stdout.contains("target_reached"), "{stdout}");
    let log = json(d.join("o/round_log.json"));
    let rounds = log["rounds"].as_array().unwrap();
    assert!((1..=3).contains(&rounds.len()));
    assert!(rounds.last().unwrap()["report"]["agreement"].as_f64().unwrap() >= 0.85);
    assert!(rounds[0]["adjustments"].as_array().unwrap().len() >= 3);
    for e in json(d.join("o/boundary_errors.json")).as_array().unwrap() {
        assert!(e["error_sigma"].as_f64().unwrap() <= 0.15, "{e}");
    }
    let initial = json(d.join("o/thresholds_initial.json"));
    let fin = json(d.join("o/thresholds_final.json"));
    assert_ne!(initial["entries"], fin["entries"]);
    assert_eq!(fin["history"].as_array().unwrap().len(), rounds.iter().map(|r| r["adjustments"].as_array().unwrap().len()).sum::<usize>());
}

#[test]
fn audio_compute_then_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth-gen", "--out", "o", "--n-speakers", "2", "--items-per-cell", "2", "--audio", "12"]);
    assert!(d.join("o/audio/utt0011.wav").is_file());
    assert_eq!(code(d, &["annotate-thresholds", "--out", "o"]), 3, "no values yet");
    ok(d, &["annotate-compute", "--out", "o"]);
    let values = std::fs::read_to_string(d.join("o/values.csv")).unwrap();
    assert_eq!(values.lines().count(), 13);
    ok(d, &["annotate-thresholds", "--out", "o"]);
    let table = json(d.join("o/thresholds.json"));
    let entries = table["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 7, "speed by 2 languages, volume global, pitch and fluctuation by 2 genders");
    for e in entries {
        assert!(e["low"].as_f64().unwrap() < e["high"].as_f64().unwrap());
    }
    let labels = std::fs::read_to_string(d.join("o/labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 13);
}

#[test]
fn exit_codes_are_categorized() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(d, &["train", "--bogus"]), 2);
    assert_eq!(code(d, &["frobnicate"]), 2);
    assert_eq!(code(d, &["annotate-loop", "--out", "o", "--max-rounds", "0"]), 2);
    std::fs::write(d.join("bad.toml"), "sede = 3\n").unwrap();
    assert_eq!(code(d, &["synth-gen", "--config", "bad.toml"]), 2);
    assert_eq!(code(d, &["synth-gen", "--config", "missing.toml"]), 3);
    assert_eq!(code(d, &["train", "--out", "o", "--corpus", "nope.jsonl"]), 3);
    std::fs::write(d.join("broken.jsonl"), "{not json}\n").unwrap();
    assert_eq!(code(d, &["train", "--out", "o", "--corpus", "broken.jsonl"]), 3);
    assert_eq!(code(d, &["eval", "--out", "o"]), 3);
    assert_eq!(code(d, &["serve", "--out", "o"]), 2);
    assert_eq!(code(d, &["--help"]), 0);
}

#[test]
fn serve_answers_over_http_and_logs_events() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_values_csv(&d.join("values.csv"), &synthetic_values(400, 3)).unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_histyle"))
        .current_dir(d)
        .args([
            "serve", "--out", "o", "--values", "values.csv", "--bind", "127.0.0.1:0", "--state-dir", "state", "--roster",
            "ann-a,ann-b", "--attributes", "pitch",
        ])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("serving http://").and_then(|s| s.strip_suffix("/api/v1"));
    let Some(addr) = addr.map(str::to_owned) else {
        child.kill().ok();
        let mut err = String::new();
        child.stderr.take().unwrap().read_to_string(&mut err).ok();
        panic!("unexpected banner {line:?}: {err}");
    };

    let get = |path: &str| {
        let mut s = TcpStream::connect(&addr).unwrap();
        write!(s, "GET {path} HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").unwrap();
        let mut resp = String::new();
        s.read_to_string(&mut resp).unwrap();
        resp
    };
    let round = get("/api/v1/round?annotator=ann-a");
    let state = get("/api/v1/state");
    child.kill().unwrap();
    child.wait().unwrap();

    assert!(round.starts_with("HTTP/1.1 200"), "{round}");
    let body: Value = serde_json::from_str(round.split("\r\n\r\n").nth(1).unwrap()).unwrap();
    assert_eq!(body["roster"], serde_json::json!(["ann-a", "ann-b"]));
    let items = body["items"].as_array().unwrap();
    assert!(!items.is_empty());
    assert!(items.iter().all(|i| i["attribute"] == "pitch" && i.get("value").is_none()));
    assert!(state.starts_with("HTTP/1.1 200"), "{state}");
    assert!(d.join("state/session.json").is_file());
    let events = std::fs::read_to_string(d.join("state/events.jsonl")).unwrap();
    assert_eq!(events.lines().count(), 1, "the start event");
    assert!(json(d.join("o/run-serve.json"))["inputs"][0]["path"].as_str().unwrap().ends_with("values.csv"));
}
