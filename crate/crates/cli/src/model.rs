//! Corpus, training, prediction, evaluation and projection commands.

use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use histyle_core::analysis::{
    emit_scatter, eval_accuracy, hierarchy_report, tsne as run_tsne, write_accuracy_csv, write_hierarchy_csv,
    EmbeddingSet, LevelCentroids,
};
use histyle_core::annotation::write_demo_audio;
use histyle_core::corpus::{generate_corpus, read_jsonl, split_holdout, write_jsonl, CorpusItem};
use histyle_core::diffusion::train::{trace_ends, write_trace_csv};
use histyle_core::hierarchy::{
    train_baseline_direct, train_single_stage, train_two_stage, Predictor, PredictorKind,
};
use histyle_core::numerics::Rng;
use histyle_core::prompt::{KeywordTable, PromptEncoder};
use histyle_core::{Attribute, AttributeLabels};
use serde::Serialize;

use crate::config::RunConfig;
use crate::manifest::Run;
use crate::{existing, CliError};

fn core<T>(r: histyle_core::Result<T>) -> Result<T, CliError> {
    r.map_err(CliError::from)
}

/// Open `path`, or `<out>/<default>` when no path was configured.
fn corpus_path(cfg: &RunConfig, path: &Option<PathBuf>, default: &str) -> Result<PathBuf, CliError> {
    existing(path.clone().unwrap_or_else(|| cfg.out(default)))
}

fn load_corpus(path: &Path, run: &mut Run) -> Result<Vec<CorpusItem>, CliError> {
    run.input(path);
    let items = read_jsonl(path).map_err(|e| match e {
        histyle_core::Error::Io(io) => CliError::io(path, io),
        other => other.into(),
    })?;
    if items.is_empty() {
        return Err(histyle_core::Error::InvalidInput(format!("{} holds no items", path.display())).into());
    }
    Ok(items)
}

/// Every bundle named by `paths.models` (default `<out>/models`). A path is
/// a bundle if it holds `manifest.json`; otherwise its sorted subdirectories
/// that are bundles are used.
pub fn bundle_dirs(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let roots = if cfg.paths.models.is_empty() {
        vec![cfg.out("models")]
    } else {
        cfg.paths.models.clone()
    };
    let mut out = Vec::new();
    for root in roots {
        let root = existing(root)?;
        if root.join("manifest.json").is_file() {
            out.push(root);
            continue;
        }
        let mut subs: Vec<PathBuf> = std::fs::read_dir(&root)
            .map_err(|e| CliError::io(&root, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("manifest.json").is_file())
            .collect();
        if subs.is_empty() {
            return Err(histyle_core::Error::InvalidInput(format!("no model bundle in {}", root.display())).into());
        }
        subs.sort();
        out.extend(subs);
    }
    Ok(out)
}

/// The hierarchical bundle if one is configured, else the first bundle.
fn preferred_bundle(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dirs = bundle_dirs(cfg)?;
    let hierarchical = dirs.iter().find(|d| {
        Predictor::load(d).is_ok_and(|(_, m)| m.kind == PredictorKind::Hierarchical)
    });
    Ok(hierarchical.unwrap_or(&dirs[0]).clone())
}

fn load_bundle(dir: &Path, run: &mut Run) -> Result<Predictor, CliError> {
    run.input(dir);
    Ok(core(Predictor::load(dir))?.0)
}

fn encode_prompts(model: &Predictor, labels: &[AttributeLabels]) -> Result<Vec<Vec<f64>>, CliError> {
    let enc = core(PromptEncoder::new(model.prompt_config()))?;
    Ok(labels.iter().map(|l| enc.encode(l).vector).collect())
}

pub fn synth_gen(cfg: &RunConfig, run: &mut Run) -> Result<(), CliError> {
    let items = core(generate_corpus(&cfg.corpus))?;
    let (train, test) = core(split_holdout(&items, cfg.holdout_per_cell, cfg.seed))?;
    for (name, set) in [("corpus.jsonl", &items), ("train.jsonl", &train), ("test.jsonl", &test)] {
        let path = cfg.out(name);
        core(write_jsonl(&path, set))?;
        run.output(&path);
    }
    if cfg.annotation.demo_audio > 0 {
        let dir = cfg.out("audio");
        core(write_demo_audio(&dir, cfg.annotation.demo_audio, cfg.seed))?;
        run.output(&dir);
    }
    run.detail("items", items.len());
    run.detail("train_items", train.len());
    run.detail("test_items", test.len());
    println!(
        "corpus: {} items ({} train, {} test) from {} speakers",
        items.len(),
        train.len(),
        test.len(),
        cfg.corpus.n_speakers
    );
    Ok(())
}

#[derive(Serialize)]
struct TraceSummary {
    model: PredictorKind,
    stage: usize,
    steps: usize,
    first_loss: f64,
    last_loss: f64,
}

pub fn train(cfg: &RunConfig, run: &mut Run) -> Result<(), CliError> {
    let path = corpus_path(cfg, &cfg.paths.corpus, "train.jsonl")?;
    let items = load_corpus(&path, run)?;
    let model_cfg = cfg.train.model_config(cfg.profile);
    run.detail("model_config", &model_cfg);
    let trace_dir = cfg.out("traces");
    std::fs::create_dir_all(&trace_dir).map_err(|e| CliError::io(&trace_dir, e))?;
    let mut summaries = Vec::new();
    for &kind in &cfg.train.models {
        let (model, traces) = match kind {
            PredictorKind::Hierarchical => {
                let t = core(train_two_stage(&items, &model_cfg, cfg.seed))?;
                (Predictor::Hierarchical(t.model), t.traces)
            }
            PredictorKind::SingleStage => {
                let t = core(train_single_stage(&items, &model_cfg, cfg.seed))?;
                (Predictor::SingleStage(t.model), t.traces)
            }
            PredictorKind::DirectRegression => {
                let t = core(train_baseline_direct(&items, &model_cfg, cfg.seed))?;
                (Predictor::DirectRegression(t.model), t.traces)
            }
        };
        let dir = cfg.out("models").join(kind.to_string());
        core(model.save(&dir, cfg.seed))?;
        run.output(&dir);
        for (i, trace) in traces.iter().enumerate() {
            let path = trace_dir.join(format!("{kind}-stage{}.csv", i + 1));
            core(write_trace_csv(&path, trace))?;
            run.output(&path);
            let (first, last) = trace_ends(trace, 0.1);
            println!("{kind} stage {}: loss {first:.4} -> {last:.4} over {} steps", i + 1, trace.len());
            summaries.push(TraceSummary {
                model: kind,
                stage: i + 1,
                steps: trace.len(),
                first_loss: first,
                last_loss: last,
            });
        }
    }
    run.detail("traces", summaries);
    Ok(())
}

#[derive(Serialize)]
struct Prediction<'a> {
    prompt: &'a str,
    labels: AttributeLabels,
    #[serde(skip_serializing_if = "Option::is_none")]
    speaker_emb: Option<&'a [f64]>,
    style_emb: &'a [f64],
}

pub fn predict(cfg: &RunConfig, run: &mut Run) -> Result<(), CliError> {
    let mut prompts = cfg.predict.prompts.clone();
    if let Some(path) = &cfg.paths.prompts {
        let path = existing(path.clone())?;
        run.input(&path);
        let file = std::fs::File::open(&path).map_err(|e| CliError::io(&path, e))?;
        for line in std::io::BufReader::new(file).lines() {
            let line = line.map_err(|e| CliError::io(&path, e))?;
            if !line.trim().is_empty() {
                prompts.push(line.trim().to_string());
            }
        }
    }
    if prompts.is_empty() {
        return Err(CliError::Usage("predict needs --prompt or --prompts-file".into()));
    }
    let model = load_bundle(&preferred_bundle(cfg)?, run)?;
    let keywords = KeywordTable::default();
    let labels = prompts.iter().map(|p| keywords.parse(p)).collect::<histyle_core::Result<Vec<_>>>()?;
    let conds = encode_prompts(&model, &labels)?;
    let (speakers, styles) = match &model {
        Predictor::Hierarchical(m) => {
            let (sp, st) = core(m.predict_batch(&conds, cfg.seed))?;
            (Some(sp), st)
        }
        other => (None, core(other.predict_styles(&conds, cfg.seed))?),
    };
    let path = cfg.out("predictions.jsonl");
    let file = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    let mut w = BufWriter::new(file);
    for (i, prompt) in prompts.iter().enumerate() {
        let row = Prediction {
            prompt,
            labels: labels[i],
            speaker_emb: speakers.as_ref().map(|s| s[i].as_slice()),
            style_emb: &styles[i],
        };
        serde_json::to_writer(&mut w, &row).map_err(histyle_core::Error::from)?;
        w.write_all(b"\n").map_err(|e| CliError::io(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    run.output(&path);
    run.detail("model", model.kind());
    run.detail("prompts", prompts.len());
    println!("{} predictions from {} -> {}", prompts.len(), model.kind(), path.display());
    Ok(())
}

pub fn eval(cfg: &RunConfig, run: &mut Run) -> Result<(), CliError> {
    let path = corpus_path(cfg, &cfg.paths.corpus, "test.jsonl")?;
    let items = load_corpus(&path, run)?;
    let default_reference = cfg.out("train.jsonl");
    let reference = match &cfg.paths.reference {
        Some(r) => Some(existing(r.clone())?),
        None if default_reference.is_file() && default_reference != path => Some(default_reference),
        None => None,
    };
    let centroids = match &reference {
        Some(r) => core(LevelCentroids::from_corpus(&load_corpus(r, run)?))?,
        None => core(LevelCentroids::from_corpus(&items))?,
    };
    let labels: Vec<AttributeLabels> = items.iter().map(|it| it.labels).collect();
    let truth: Vec<Vec<f64>> = items.iter().map(|it| it.style_emb.clone()).collect();
    let mut reports = vec![core(eval_accuracy("ground_truth", &truth, &labels, &centroids))?];
    for dir in bundle_dirs(cfg)? {
        let model = load_bundle(&dir, run)?;
        let mut name = model.kind().to_string();
        if reports.iter().any(|r| r.model == name) {
            name = format!("{name}:{}", dir.display());
        }
        let conds = encode_prompts(&model, &labels)?;
        let preds = core(model.predict_styles(&conds, cfg.seed))?;
        reports.push(core(eval_accuracy(&name, &preds, &labels, &centroids))?);
    }
    let csv_path = cfg.out("accuracy.csv");
    core(write_accuracy_csv(&csv_path, &reports))?;
    let json_path = cfg.out("accuracy.json");
    let json = serde_json::to_string_pretty(&reports).map_err(histyle_core::Error::from)?;
    std::fs::write(&json_path, json + "\n").map_err(|e| CliError::io(&json_path, e))?;
    run.output(&csv_path);
    run.output(&json_path);
    print!("{:<20}", "model");
    for a in Attribute::REPORTED {
        print!(" {:>11}", a.as_str());
    }
    println!(" {:>13}", "style_average");
    for r in &reports {
        print!("{:<20}", r.model);
        for a in Attribute::REPORTED {
            print!(" {:>10.2}%", 100.0 * r.get(a));
        }
        println!(" {:>12.2}%", 100.0 * r.style_average);
    }
    run.detail("accuracy", &reports);
    Ok(())
}

/// Sorted indices of a seeded subsample of at most `max` items.
pub fn subsample(n: usize, max: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if max == 0 || n <= max {
        return idx;
    }
    Rng::stream(seed, "tsne-subsample").shuffle(&mut idx);
    idx.truncate(max);
    idx.sort_unstable();
    idx
}

pub fn tsne(cfg: &RunConfig, run: &mut Run) -> Result<(), CliError> {
    let path = corpus_path(cfg, &cfg.paths.corpus, "test.jsonl")?;
    let all = load_corpus(&path, run)?;
    let items: Vec<&CorpusItem> = subsample(all.len(), cfg.tsne.max_points, cfg.seed).into_iter().map(|i| &all[i]).collect();
    let labels: Vec<AttributeLabels> = items.iter().map(|it| it.labels).collect();
    let speakers: Vec<usize> = items.iter().map(|it| it.speaker_id).collect();
    let vectors = if cfg.tsne.predicted {
        let model = load_bundle(&preferred_bundle(cfg)?, run)?;
        run.detail("embeddings", format!("predicted:{}", model.kind()));
        core(model.predict_styles(&encode_prompts(&model, &labels)?, cfg.seed))?
    } else {
        run.detail("embeddings", "ground_truth");
        items.iter().map(|it| it.style_emb.clone()).collect()
    };

    let report = core(hierarchy_report(&core(EmbeddingSet::new(vectors.clone(), speakers.clone(), labels.clone()))?))?;
    let result = core(run_tsne(&vectors, &cfg.tsne.config(cfg.seed)))?;

    let coords_path = cfg.out("tsne_coords.csv");
    let mut w = csv::Writer::from_path(&coords_path).map_err(histyle_core::Error::from)?;
    let mut header = vec!["id".to_string(), "speaker".to_string()];
    header.extend(Attribute::ALL.iter().map(|a| a.to_string()));
    header.extend(["x".to_string(), "y".to_string()]);
    w.write_record(&header).map_err(histyle_core::Error::from)?;
    for (it, c) in items.iter().zip(&result.coords) {
        let mut row = vec![it.id.clone(), it.speaker_id.to_string()];
        row.extend(Attribute::ALL.iter().map(|a| it.labels.level_name(*a).to_string()));
        row.extend([format!("{:.6}", c[0]), format!("{:.6}", c[1])]);
        w.write_record(&row).map_err(histyle_core::Error::from)?;
    }
    w.flush().map_err(|e| CliError::io(&coords_path, e))?;
    run.output(&coords_path);

    let kl_path = cfg.out("tsne_kl.csv");
    let mut kl = String::from("iter,kl\n");
    for (i, v) in result.kl.iter().enumerate() {
        kl.push_str(&format!("{},{v:.8}\n", i + 1));
    }
    std::fs::write(&kl_path, kl).map_err(|e| CliError::io(&kl_path, e))?;
    run.output(&kl_path);

    let h_csv = cfg.out("hierarchy.csv");
    core(write_hierarchy_csv(&h_csv, &report))?;
    let h_json = cfg.out("hierarchy.json");
    let text = serde_json::to_string_pretty(&report).map_err(histyle_core::Error::from)?;
    std::fs::write(&h_json, text + "\n").map_err(|e| CliError::io(&h_json, e))?;
    run.output(&h_csv);
    run.output(&h_json);

    let speaker_labels: Vec<String> = speakers.iter().map(|s| format!("speaker {s}")).collect();
    let svg = cfg.out("tsne_speaker.svg");
    core(emit_scatter(&result.coords, &speaker_labels, &svg, "t-SNE by speaker"))?;
    run.output(&svg);
    for attr in Attribute::REPORTED {
        let names: Vec<String> = labels.iter().map(|l| l.level_name(attr).to_string()).collect();
        let svg = cfg.out(&format!("tsne_{attr}.svg"));
        core(emit_scatter(&result.coords, &names, &svg, &format!("t-SNE by {attr}")))?;
        run.output(&svg);
    }

    let final_kl = result.kl.last().copied().unwrap_or(f64::NAN);
    run.detail("points", items.len());
    run.detail("final_kl", final_kl);
    run.detail("hierarchy_verdict", &report.verdict);
    println!("t-SNE on {} points, final KL {final_kl:.4}", items.len());
    println!("{}", report.verdict);
    Ok(())
}
