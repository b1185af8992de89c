//! `histyle` command line: argument parsing, config resolution and exit codes.
//! Each subcommand lives in [`model`] or [`annotate`].

pub mod annotate;
pub mod config;
pub mod manifest;
pub mod model;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use histyle_core::hierarchy::{PredictorKind, Profile};
use histyle_core::Attribute;

use config::{AnnotatorKind, RunConfig};
use manifest::Run;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_INTERNAL: u8 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Clap(#[from] clap::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] histyle_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        use histyle_core::Error as E;
        let io_code = |e: &std::io::Error| match e.kind() {
            std::io::ErrorKind::NotFound | std::io::ErrorKind::InvalidData => EXIT_DATA,
            _ => EXIT_INTERNAL,
        };
        match self {
            CliError::Clap(e) => e.exit_code() as u8,
            CliError::Usage(_) | CliError::Core(E::InvalidConfig(_)) => EXIT_USAGE,
            CliError::Io { source, .. } | CliError::Core(E::Io(source)) => io_code(source),
            CliError::Core(e) if e.is_data_error() => EXIT_DATA,
            CliError::Core(_) => EXIT_INTERNAL,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "histyle", version, about = "Hierarchical prompt-to-style embedding prediction and style annotation")]
pub struct Cli {
    /// TOML or JSON run config; a run manifest from a previous run also works.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, env = "HISTYLE_SEED")]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub profile: Option<ProfileArg>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ProfileArg {
    Test,
    Paper,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Test => Profile::Test,
            ProfileArg::Paper => Profile::Paper,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModelArg {
    Hierarchical,
    SingleStage,
    DirectRegression,
}

impl From<ModelArg> for PredictorKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Hierarchical => PredictorKind::Hierarchical,
            ModelArg::SingleStage => PredictorKind::SingleStage,
            ModelArg::DirectRegression => PredictorKind::DirectRegression,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic embedding corpus and its train/test split.
    SynthGen(SynthGenArgs),
    /// Train predictors and write model bundles plus loss traces.
    Train(TrainArgs),
    /// Predict style embeddings for prompt texts.
    Predict(PredictArgs),
    /// Nearest-centroid accuracy of trained predictors on a corpus.
    Eval(EvalArgs),
    /// t-SNE projection, hierarchy report and scatter plots.
    Tsne(TsneArgs),
    /// Compute attribute values from utterance audio.
    AnnotateCompute(ComputeArgs),
    /// Initial per-group thresholds and the labels they give.
    AnnotateThresholds(ThresholdArgs),
    /// Run the listener adjustment loop with simulated annotators.
    AnnotateLoop(LoopArgs),
    /// Serve the annotation API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthGenArgs {
    #[arg(long)]
    pub n_speakers: Option<usize>,
    #[arg(long)]
    pub items_per_cell: Option<usize>,
    #[arg(long)]
    pub holdout: Option<usize>,
    /// Also write this many demo WAV utterances with a manifest.
    #[arg(long)]
    pub audio: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training corpus (default: <out>/train.jsonl).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long = "model", value_enum)]
    pub models: Vec<ModelArg>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Model bundle directory (default: the hierarchical bundle under <out>/models).
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long = "prompt")]
    pub prompts: Vec<String>,
    /// File with one prompt per line.
    #[arg(long)]
    pub prompts_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Evaluation corpus (default: <out>/test.jsonl).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Corpus defining the level centroids (default: <out>/train.jsonl if present,
    /// else the evaluation corpus).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Bundle directories or directories of bundles (default: <out>/models).
    #[arg(long = "model")]
    pub models: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TsneArgs {
    /// Corpus to project (default: <out>/test.jsonl).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Project predictions from this bundle instead of the ground truth.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub max_points: Option<usize>,
    #[arg(long)]
    pub perplexity: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ComputeArgs {
    /// Utterance manifest JSONL (default: <out>/audio/manifest.jsonl).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Estimate phoneme counts from transcripts when the manifest has none.
    #[arg(long)]
    pub estimate_phonemes: bool,
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    /// Values CSV (default: <out>/values.csv).
    #[arg(long)]
    pub values: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LoopArgs {
    /// Values CSV; synthetic values are generated when absent.
    #[arg(long)]
    pub values: Option<PathBuf>,
    /// Starting thresholds; derived from the values when absent.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub annotator: Option<AnnotatorKind>,
    #[arg(long)]
    pub annotators: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub sim_offset: Option<f64>,
    #[arg(long)]
    pub sim_noise: Option<f64>,
    #[arg(long)]
    pub synthetic_items: Option<usize>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    #[arg(long)]
    pub target: Option<f64>,
    /// Comma-separated graded attributes to annotate.
    #[arg(long, value_delimiter = ',')]
    pub attributes: Vec<Attribute>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub values: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub cors_origin: Option<String>,
    /// Directory for the event log; an existing session there is resumed.
    #[arg(long)]
    pub state_dir: Option<PathBuf>,
    /// Comma-separated annotator ids.
    #[arg(long, value_delimiter = ',')]
    pub roster: Vec<String>,
    /// Comma-separated graded attributes to annotate.
    #[arg(long, value_delimiter = ',')]
    pub attributes: Vec<Attribute>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SynthGen(_) => "synth-gen",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Eval(_) => "eval",
            Command::Tsne(_) => "tsne",
            Command::AnnotateCompute(_) => "annotate-compute",
            Command::AnnotateThresholds(_) => "annotate-thresholds",
            Command::AnnotateLoop(_) => "annotate-loop",
            Command::Serve(_) => "serve",
        }
    }

    /// Fold subcommand flags into the config.
    fn apply(&self, cfg: &mut RunConfig) {
        let p = &mut cfg.paths;
        match self {
            Command::SynthGen(a) => {
                set(&mut cfg.corpus.n_speakers, a.n_speakers);
                set(&mut cfg.corpus.n_items_per_cell, a.items_per_cell);
                set(&mut cfg.holdout_per_cell, a.holdout);
                set(&mut cfg.annotation.demo_audio, a.audio);
            }
            Command::Train(a) => {
                set_opt(&mut p.corpus, a.corpus.clone());
                if !a.models.is_empty() {
                    cfg.train.models = a.models.iter().map(|m| (*m).into()).collect();
                }
                set_opt(&mut cfg.train.steps, a.steps);
                set_opt(&mut cfg.train.batch_size, a.batch_size);
                set_opt(&mut cfg.train.lambda, a.lambda);
            }
            Command::Predict(a) => {
                if let Some(m) = &a.model {
                    p.models = vec![m.clone()];
                }
                set_opt(&mut p.prompts, a.prompts_file.clone());
                if !a.prompts.is_empty() {
                    cfg.predict.prompts = a.prompts.clone();
                }
            }
            Command::Eval(a) => {
                set_opt(&mut p.corpus, a.corpus.clone());
                set_opt(&mut p.reference, a.reference.clone());
                if !a.models.is_empty() {
                    p.models = a.models.clone();
                }
            }
            Command::Tsne(a) => {
                set_opt(&mut p.corpus, a.corpus.clone());
                if let Some(m) = &a.model {
                    p.models = vec![m.clone()];
                    cfg.tsne.predicted = true;
                }
                set(&mut cfg.tsne.max_points, a.max_points);
                set(&mut cfg.tsne.perplexity, a.perplexity);
                set(&mut cfg.tsne.n_iter, a.iters);
            }
            Command::AnnotateCompute(a) => {
                set_opt(&mut p.manifest, a.manifest.clone());
                cfg.annotation.estimate_phonemes |= a.estimate_phonemes;
            }
            Command::AnnotateThresholds(a) => set_opt(&mut p.values, a.values.clone()),
            Command::AnnotateLoop(a) => {
                set_opt(&mut p.values, a.values.clone());
                set_opt(&mut p.thresholds, a.thresholds.clone());
                let ann = &mut cfg.annotation;
                set(&mut ann.annotator, a.annotator);
                set(&mut ann.annotators, a.annotators);
                set(&mut ann.sim_offset, a.sim_offset);
                set(&mut ann.sim_noise, a.sim_noise);
                set(&mut ann.synthetic_items, a.synthetic_items);
                set(&mut ann.loop_config.max_rounds, a.max_rounds);
                set(&mut ann.loop_config.target_agreement, a.target);
                if !a.attributes.is_empty() {
                    ann.loop_config.sampling.attributes = a.attributes.clone();
                }
            }
            Command::Serve(a) => {
                set_opt(&mut p.values, a.values.clone());
                set_opt(&mut p.manifest, a.manifest.clone());
                set_opt(&mut p.thresholds, a.thresholds.clone());
                set_opt(&mut p.state_dir, a.state_dir.clone());
                set(&mut cfg.serve.bind, a.bind.clone());
                set_opt(&mut cfg.serve.cors_origin, a.cors_origin.clone());
                if !a.roster.is_empty() {
                    cfg.serve.roster = a.roster.clone();
                }
                if !a.attributes.is_empty() {
                    cfg.annotation.loop_config.sampling.attributes = a.attributes.clone();
                }
            }
        }
    }
}

/// Config file, then environment and global flags, then subcommand flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    set(&mut cfg.profile, cli.profile.map(Into::into));
    set(&mut cfg.paths.out_dir, cli.out.clone());
    cli.command.apply(&mut cfg);
    cfg.resolve_seeds();
    cfg.validate()?;
    Ok(cfg)
}

pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    let cfg = resolve_config(&cli)?;
    std::fs::create_dir_all(&cfg.paths.out_dir).map_err(|e| CliError::io(&cfg.paths.out_dir, e))?;
    let mut run = Run::new(cli.command.name());
    match &cli.command {
        Command::SynthGen(_) => model::synth_gen(&cfg, &mut run)?,
        Command::Train(_) => model::train(&cfg, &mut run)?,
        Command::Predict(_) => model::predict(&cfg, &mut run)?,
        Command::Eval(_) => model::eval(&cfg, &mut run)?,
        Command::Tsne(_) => model::tsne(&cfg, &mut run)?,
        Command::AnnotateCompute(_) => annotate::compute(&cfg, &mut run)?,
        Command::AnnotateThresholds(_) => annotate::thresholds(&cfg, &mut run)?,
        Command::AnnotateLoop(_) => annotate::adjust_loop(&cfg, &mut run)?,
        // serve writes its manifest before blocking
        Command::Serve(_) => return annotate::serve(&cfg, run),
    }
    run.finish(&cfg)?;
    Ok(())
}

/// An input path that must exist.
pub(crate) fn existing(path: PathBuf) -> Result<PathBuf, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::io(&path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("histyle").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 3\n[annotation]\nsim_offset = 0.1\n").unwrap();
        let p = path.to_str().unwrap();
        let cfg = resolve_config(&parse(&["--config", p, "annotate-loop"])).unwrap();
        assert_eq!((cfg.seed, cfg.annotation.sim_offset), (3, 0.1));
        assert_eq!(cfg.corpus.seed, 3);
        let cfg = resolve_config(&parse(&["annotate-loop", "--config", p, "--seed", "8", "--sim-offset", "-0.3"])).unwrap();
        assert_eq!((cfg.seed, cfg.annotation.sim_offset), (8, -0.3));
        assert_eq!(cfg.annotation.loop_config.seed, 8);
    }

    #[test]
    fn exit_codes_by_category() {
        let usage = Cli::try_parse_from(["histyle", "train", "--bogus"]).unwrap_err();
        assert_eq!(CliError::from(usage).exit_code(), EXIT_USAGE);
        assert_eq!(CliError::Usage("x".into()).exit_code(), EXIT_USAGE);
        let missing = std::io::Error::new(std::io::ErrorKind::NotFound, "x");
        assert_eq!(CliError::Core(missing.into()).exit_code(), EXIT_DATA);
        assert_eq!(CliError::Core(histyle_core::Error::NoSpeech).exit_code(), EXIT_DATA);
        assert_eq!(CliError::Core(histyle_core::Error::NonFinite("x".into())).exit_code(), EXIT_INTERNAL);
        let denied = std::io::Error::new(std::io::ErrorKind::PermissionDenied, "x");
        assert_eq!(CliError::io(Path::new("a"), denied).exit_code(), EXIT_INTERNAL);
    }

    #[test]
    fn invalid_config_values_are_usage_errors() {
        let err = resolve_config(&parse(&["annotate-loop", "--max-rounds", "0"])).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_USAGE);
        let err = resolve_config(&parse(&["annotate-loop", "--attributes", "gender"])).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_USAGE);
        let cfg = resolve_config(&parse(&["annotate-loop", "--attributes", "pitch,speed"])).unwrap();
        assert_eq!(cfg.annotation.loop_config.sampling.attributes, vec![Attribute::Pitch, Attribute::Speed]);
    }
}
