//! Attribute computation, thresholds, the simulated adjustment loop and the
//! annotation server.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use histyle_core::annotation::{
    compute_all, read_manifest, read_values_csv, run_adjustment_loop, synthetic_values, write_labels_csv,
    write_values_csv, AnnotationSession, AutocorrelationPitch, ComputeOptions, LoopOutcome, Side, SimAnnotator,
    SimAnnotatorConfig, ThresholdTable, UtteranceRecord,
};
use histyle_core::numerics::rng::{fnv1a, mix};
use histyle_core::Attribute;
use histyle_service::store::{EventStore, SessionInit};
use histyle_service::{serve_on, AppState, ServiceConfig};
use serde::Serialize;

use crate::config::{AnnotatorKind, RunConfig};
use crate::manifest::Run;
use crate::{existing, CliError};

fn compute_options(cfg: &RunConfig) -> ComputeOptions {
    let a = &cfg.annotation;
    ComputeOptions {
        trim_db: a.trim_db,
        pitch: Box::new(AutocorrelationPitch { config: a.f0 }),
        gender: Box::new(a.gender),
        estimate_phonemes: a.estimate_phonemes,
    }
}

fn computed_records(manifest: &Path, cfg: &RunConfig, run: &mut Run) -> Result<Vec<UtteranceRecord>, CliError> {
    let manifest = existing(manifest.to_path_buf())?;
    run.input(&manifest);
    let mut records = read_manifest(&manifest)?;
    for r in &records {
        if let Some(p) = &r.audio_path {
            run.input(p);
        }
    }
    compute_all(&mut records, &compute_options(cfg))?;
    Ok(records)
}

fn load_values(path: &Path, run: &mut Run) -> Result<Vec<UtteranceRecord>, CliError> {
    let path = existing(path.to_path_buf())?;
    run.input(&path);
    Ok(read_values_csv(&path)?)
}

fn load_or_init_table(
    cfg: &RunConfig,
    records: &[UtteranceRecord],
    attrs: &[Attribute],
    run: &mut Run,
) -> Result<ThresholdTable, CliError> {
    match &cfg.paths.thresholds {
        Some(p) => {
            let p = existing(p.clone())?;
            run.input(&p);
            Ok(ThresholdTable::load(&p)?)
        }
        None => Ok(ThresholdTable::from_records(records, attrs)?),
    }
}

fn write_json(path: &Path, value: &impl Serialize, run: &mut Run) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(histyle_core::Error::from)?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))?;
    run.output(path);
    Ok(())
}

fn print_table(table: &ThresholdTable) {
    println!("{:<12} {:<8} {:>10} {:>10} {:>10} {:>10} {:>6}", "attribute", "group", "mean", "std", "low", "high", "n");
    for e in &table.entries {
        println!(
            "{:<12} {:<8} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>6}",
            e.attribute.as_str(),
            e.group,
            e.mean,
            e.std,
            e.low,
            e.high,
            e.n
        );
    }
}

pub fn compute(cfg: &RunConfig, run: &mut Run) -> Result<(), CliError> {
    let manifest = cfg.paths.manifest.clone().unwrap_or_else(|| cfg.out("audio").join("manifest.jsonl"));
    let records = computed_records(&manifest, cfg, run)?;
    let path = cfg.out("values.csv");
    write_values_csv(&path, &records)?;
    run.output(&path);
    run.detail("records", records.len());
    println!("attribute values for {} utterances -> {}", records.len(), path.display());
    Ok(())
}

pub fn thresholds(cfg: &RunConfig, run: &mut Run) -> Result<(), CliError> {
    let values = cfg.paths.values.clone().unwrap_or_else(|| cfg.out("values.csv"));
    let records = load_values(&values, run)?;
    let table = ThresholdTable::from_records(&records, &Attribute::GRADED)?;
    let t_path = cfg.out("thresholds.json");
    table.save(&t_path)?;
    run.output(&t_path);
    let l_path = cfg.out("labels.csv");
    write_labels_csv(&l_path, &records, &table)?;
    run.output(&l_path);
    run.detail("records", records.len());
    print_table(&table);
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct BoundaryError {
    pub attribute: Attribute,
    pub group: String,
    pub side: Side,
    pub table: f64,
    pub listener: f64,
    /// |table − listener| / σ.
    pub error_sigma: f64,
}

/// Distance of every adjusted boundary from the simulated listeners' own.
pub fn boundary_errors(table: &ThresholdTable, sim: &SimAnnotatorConfig) -> Result<Vec<BoundaryError>, CliError> {
    let mut out = Vec::new();
    for e in &table.entries {
        let Ok(pb) = sim.boundary(e.attribute, &e.group) else {
            continue;
        };
        for (side, listener) in [(Side::Low, pb.low), (Side::High, pb.high)] {
            let value = e.boundary(side);
            out.push(BoundaryError {
                attribute: e.attribute,
                group: e.group.clone(),
                side,
                table: value,
                listener,
                error_sigma: (value - listener).abs() / e.std,
            });
        }
    }
    Ok(out)
}

pub fn adjust_loop(cfg: &RunConfig, run: &mut Run) -> Result<(), CliError> {
    let ann = &cfg.annotation;
    let records = match &cfg.paths.values {
        Some(p) => load_values(p, run)?,
        None => {
            run.detail("synthetic_items", ann.synthetic_items);
            synthetic_values(ann.synthetic_items, cfg.seed)
        }
    };
    let attrs = &ann.loop_config.sampling.attributes;
    let table = load_or_init_table(cfg, &records, attrs, run)?;
    let outcome: LoopOutcome = match ann.annotator {
        AnnotatorKind::Sim => {
            let sim_cfg = SimAnnotatorConfig::offset_from(&table, ann.sim_offset, ann.sim_noise, mix(cfg.seed, &[fnv1a("sim")]));
            let mut sim = SimAnnotator::new(sim_cfg.clone(), ann.annotators);
            let outcome = run_adjustment_loop(&records, &table, &mut sim, &ann.loop_config)?;
            let errors = boundary_errors(&outcome.table, &sim_cfg)?;
            let max_err = errors.iter().map(|e| e.error_sigma).fold(0.0, f64::max);
            println!("max boundary error vs simulated listeners: {max_err:.3} sigma");
            run.detail("max_boundary_error_sigma", max_err);
            write_json(&cfg.out("boundary_errors.json"), &errors, run)?;
            outcome
        }
    };
    for r in &outcome.rounds {
        println!(
            "round {}: agreement {:.3} over {} votes, {} boundaries moved",
            r.round.index,
            r.report.agreement,
            r.report.n_votes,
            r.adjustments.len()
        );
    }
    if let Some(reason) = &outcome.aborted {
        eprintln!("annotator aborted: {reason}");
    }
    println!("status: {}", serde_json::to_string(&outcome.status).map_err(histyle_core::Error::from)?);

    let init_path = cfg.out("thresholds_initial.json");
    table.save(&init_path)?;
    run.output(&init_path);
    let final_path = cfg.out("thresholds_final.json");
    outcome.table.save(&final_path)?;
    run.output(&final_path);
    write_json(&cfg.out("round_log.json"), &outcome, run)?;
    run.detail("rounds", outcome.rounds.len());
    run.detail("converged", outcome.converged());
    run.detail("final_agreement", outcome.rounds.last().map(|r| r.report.agreement));
    Ok(())
}

fn bind_addr(s: &str) -> Result<SocketAddr, CliError> {
    s.parse().map_err(|e| CliError::Usage(format!("bad bind address {s:?}: {e}")))
}

fn new_session(cfg: &RunConfig, run: &mut Run) -> Result<SessionInit, CliError> {
    let records = match (&cfg.paths.values, &cfg.paths.manifest) {
        (Some(v), _) => load_values(v, run)?,
        (None, Some(m)) => computed_records(m, cfg, run)?,
        (None, None) => return Err(CliError::Usage("serve needs --values or --manifest".into())),
    };
    let table = load_or_init_table(cfg, &records, &cfg.annotation.loop_config.sampling.attributes, run)?;
    Ok(SessionInit {
        records,
        table,
        config: cfg.annotation.loop_config.clone(),
        roster: cfg.serve.roster.clone(),
    })
}

pub fn serve(cfg: &RunConfig, mut run: Run) -> Result<(), CliError> {
    let addr = bind_addr(&cfg.serve.bind)?;
    let state = match &cfg.paths.state_dir {
        Some(dir) if dir.join("session.json").is_file() => {
            let (store, session) = EventStore::open(dir)?;
            println!("resumed session from {} ({} events)", dir.display(), session.events().len());
            AppState::persistent(session, store)
        }
        Some(dir) => {
            let init = new_session(cfg, &mut run)?;
            let store = EventStore::create(dir, &init)?;
            let session = AnnotationSession::new(init.records, init.table, init.config, init.roster)?;
            AppState::persistent(session, store)
        }
        None => {
            let init = new_session(cfg, &mut run)?;
            AppState::in_memory(AnnotationSession::new(init.records, init.table, init.config, init.roster)?)
        }
    };
    state.start().map_err(|e| CliError::Usage(format!("cannot start session: {e:?}")))?;
    run.finish(cfg)?;

    let service_cfg = ServiceConfig {
        cors_origin: cfg.serve.cors_origin.clone(),
    };
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::io(Path::new("tokio runtime"), e))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| CliError::io(&PathBuf::from(&cfg.serve.bind), e))?;
        let local = listener.local_addr().map_err(|e| CliError::io(Path::new("listener"), e))?;
        println!("serving http://{local}/api/v1");
        serve_on(listener, state, &service_cfg)
            .await
            .map_err(|e| CliError::io(Path::new("server"), e))
    })
}
