//! Run configuration: file, then `HISTYLE_SEED`, then command-line flags.

use std::path::{Path, PathBuf};

use histyle_core::analysis::TsneConfig;
use histyle_core::annotation::dsp::DEFAULT_TRIM_DB;
use histyle_core::annotation::{F0Config, LoopConfig, PitchHeuristic};
use histyle_core::corpus::SyntheticSpec;
use histyle_core::diffusion::ContrastiveMode;
use histyle_core::hierarchy::{ModelConfig, PredictorKind, Profile};
use histyle_core::Attribute;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    /// Master seed. Copied into every seeded section when resolved.
    pub seed: u64,
    pub paths: Paths,
    pub corpus: SyntheticSpec,
    /// Items per (speaker, label) cell held out for evaluation.
    pub holdout_per_cell: usize,
    pub train: TrainSection,
    pub predict: PredictSection,
    pub tsne: TsneSection,
    pub annotation: AnnotationSection,
    pub serve: ServeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            profile: Profile::Test,
            seed: 0,
            paths: Paths::default(),
            corpus: SyntheticSpec::default(),
            holdout_per_cell: 1,
            train: TrainSection::default(),
            predict: PredictSection::default(),
            tsne: TsneSection::default(),
            annotation: AnnotationSection::default(),
            serve: ServeSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub out_dir: PathBuf,
    /// Corpus JSONL read by train, eval, tsne and predict.
    pub corpus: Option<PathBuf>,
    /// Corpus whose ground truth defines the decoding centroids in eval.
    pub reference: Option<PathBuf>,
    /// Model bundle directories, or directories holding bundles.
    pub models: Vec<PathBuf>,
    /// Utterance manifest JSONL for annotate-compute and serve.
    pub manifest: Option<PathBuf>,
    pub values: Option<PathBuf>,
    pub thresholds: Option<PathBuf>,
    /// Prompt text file, one prompt per line.
    pub prompts: Option<PathBuf>,
    pub state_dir: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            corpus: None,
            reference: None,
            models: Vec::new(),
            manifest: None,
            values: None,
            thresholds: None,
            prompts: None,
            state_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub models: Vec<PredictorKind>,
    pub steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub lambda: Option<f64>,
    pub contrastive_mode: Option<ContrastiveMode>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            models: vec![PredictorKind::Hierarchical],
            steps: None,
            batch_size: None,
            lambda: None,
            contrastive_mode: None,
        }
    }
}

impl TrainSection {
    pub fn model_config(&self, profile: Profile) -> ModelConfig {
        let mut cfg = ModelConfig::for_profile(profile);
        for stage in [&mut cfg.stage1, &mut cfg.stage2] {
            if let Some(s) = self.steps {
                stage.steps = s;
            }
            if let Some(b) = self.batch_size {
                stage.batch_size = b;
            }
            if let Some(l) = self.lambda {
                stage.contrastive.lambda = l;
            }
            if let Some(m) = self.contrastive_mode {
                stage.contrastive.mode = m;
            }
        }
        if let Some(s) = self.steps {
            cfg.direct.steps = s;
        }
        if let Some(b) = self.batch_size {
            cfg.direct.batch_size = b;
        }
        cfg
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSection {
    pub prompts: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneSection {
    /// Embed model predictions for the corpus prompts instead of the
    /// ground-truth style embeddings.
    pub predicted: bool,
    pub perplexity: f64,
    pub n_iter: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub learning_rate: Option<f64>,
    /// Deterministic subsample size; 0 keeps every point.
    pub max_points: usize,
}

impl Default for TsneSection {
    fn default() -> Self {
        let d = TsneConfig::default();
        Self {
            predicted: false,
            perplexity: d.perplexity,
            n_iter: d.n_iter,
            exaggeration: d.exaggeration,
            exaggeration_iters: d.exaggeration_iters,
            learning_rate: d.learning_rate,
            max_points: 1000,
        }
    }
}

impl TsneSection {
    pub fn config(&self, seed: u64) -> TsneConfig {
        TsneConfig {
            perplexity: self.perplexity,
            n_iter: self.n_iter,
            exaggeration: self.exaggeration,
            exaggeration_iters: self.exaggeration_iters,
            learning_rate: self.learning_rate,
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AnnotatorKind {
    Sim,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotationSection {
    #[serde(rename = "loop")]
    pub loop_config: LoopConfig,
    pub annotator: AnnotatorKind,
    pub annotators: usize,
    /// Simulated listener boundary offset in units of the group std.
    pub sim_offset: f64,
    pub sim_noise: f64,
    /// Synthetic value records used when no values file is given.
    pub synthetic_items: usize,
    /// Demo WAV files written by synth-gen.
    pub demo_audio: usize,
    pub trim_db: f64,
    pub f0: F0Config,
    pub gender: PitchHeuristic,
    pub estimate_phonemes: bool,
}

impl Default for AnnotationSection {
    fn default() -> Self {
        Self {
            loop_config: LoopConfig::default(),
            annotator: AnnotatorKind::Sim,
            annotators: 3,
            sim_offset: 0.0,
            sim_noise: 0.05,
            synthetic_items: 1600,
            demo_audio: 0,
            trim_db: DEFAULT_TRIM_DB,
            f0: F0Config::default(),
            gender: PitchHeuristic::default(),
            estimate_phonemes: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub bind: String,
    pub cors_origin: Option<String>,
    pub roster: Vec<String>,
}

impl Default for ServeSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            cors_origin: None,
            roster: vec!["annotator-1".into(), "annotator-2".into(), "annotator-3".into()],
        }
    }
}

impl RunConfig {
    /// Read TOML or JSON by extension. A run manifest is accepted too: its
    /// `config` member is used after checking the recorded hash.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if !is_json {
            return toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())));
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let (inner, recorded) = match value {
            serde_json::Value::Object(mut m) if m.contains_key("config") && m.contains_key("config_hash") => {
                let hash = m.remove("config_hash").and_then(|h| h.as_str().map(str::to_owned));
                (m.remove("config").unwrap_or_default(), hash)
            }
            other => (other, None),
        };
        let cfg: RunConfig =
            serde_json::from_value(inner).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        if let Some(h) = recorded {
            if h != cfg.hash() {
                return Err(CliError::Usage(format!("{}: config does not match its recorded hash", path.display())));
            }
        }
        Ok(cfg)
    }

    /// Propagate the master seed into every seeded section.
    pub fn resolve_seeds(&mut self) {
        self.corpus.seed = self.seed;
        self.annotation.loop_config.seed = self.seed;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.corpus.validate()?;
        self.annotation.loop_config.validate()?;
        if let Some(a) = self.annotation.loop_config.sampling.attributes.iter().find(|a| !Attribute::GRADED.contains(a)) {
            return Err(CliError::Usage(format!("{a} is not a graded attribute")));
        }
        if self.annotation.annotators == 0 {
            return Err(CliError::Usage("annotation.annotators must be at least 1".into()));
        }
        if self.serve.roster.is_empty() {
            return Err(CliError::Usage("serve.roster must name at least one annotator".into()));
        }
        if self.train.models.is_empty() {
            return Err(CliError::Usage("train.models is empty".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(bytes))
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.paths.out_dir.join(name)
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_sections_override_defaults() {
        let cfg: RunConfig = toml::from_str(
            r#"
            seed = 9
            [train]
            steps = 5
            models = ["direct_regression"]
            [annotation.loop]
            max_rounds = 2
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train.models, vec![PredictorKind::DirectRegression]);
        assert_eq!(cfg.annotation.loop_config.max_rounds, 2);
        assert_eq!(cfg.annotation.annotators, 3);
        let m = cfg.train.model_config(Profile::Test);
        assert_eq!((m.stage1.steps, m.stage2.steps, m.direct.steps), (5, 5, 5));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sede = 1").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn manifest_hash_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { seed: 4, ..RunConfig::default() };
        let path = dir.path().join("run.json");
        let good = serde_json::json!({"command": "x", "config": cfg, "config_hash": cfg.hash()});
        std::fs::write(&path, good.to_string()).unwrap();
        assert_eq!(RunConfig::load(&path).unwrap(), cfg);
        let bad = serde_json::json!({"command": "x", "config": cfg, "config_hash": "00"});
        std::fs::write(&path, bad.to_string()).unwrap();
        assert!(matches!(RunConfig::load(&path), Err(CliError::Usage(_))));
    }
}
