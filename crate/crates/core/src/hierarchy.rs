//! Two-stage prompt → speaker → style prediction, plus the single-stage and
//! direct-regression baselines used for comparison.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusItem;
use crate::diffusion::train::{FUSION_PARAM, StageData};
use crate::diffusion::{
    sample_batch, train_stage, Conditioning, Denoiser, DenoiserConfig, LossRecord, NoiseSchedule, OptimConfig,
    ScheduleConfig, TrainConfig,
};
use crate::error::{Error, Result};
use crate::numerics::rng::mix;
use crate::numerics::{adam_step, checkpoint, AdamState, ParamStore, Rng, Tape, Tensor};
use crate::prompt::{KeywordTable, PromptEncoder, PromptEncoderConfig};

pub const BUNDLE_FORMAT: &str = "histyle-model";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Hierarchical,
    SingleStage,
    DirectRegression,
}

impl std::fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PredictorKind::Hierarchical => "hierarchical",
            PredictorKind::SingleStage => "single_stage",
            PredictorKind::DirectRegression => "direct_regression",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Test,
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test" => Ok(Profile::Test),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::config(format!("unknown profile {other:?} (expected test or paper)"))),
        }
    }
}

/// Denoiser shape without the data-dependent input/output widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
}

impl Architecture {
    pub fn denoiser(&self, d_cond: usize, d_emb: usize) -> DenoiserConfig {
        DenoiserConfig {
            n_layers: self.n_layers,
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            d_cond,
            d_emb,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DirectConfig {
    pub hidden: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
}

impl Default for DirectConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            steps: 2000,
            batch_size: 64,
            optim: OptimConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub profile: Profile,
    pub architecture: Architecture,
    pub schedule: ScheduleConfig,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    /// Probability of conditioning stage 2 on a stage-1 sample instead of
    /// the true speaker embedding during training.
    pub stage1_mix: f64,
    pub direct: DirectConfig,
    pub prompt: PromptEncoderConfig,
}

impl ModelConfig {
    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Test => {
                let train = TrainConfig {
                    steps: 400,
                    batch_size: 64,
                    ..TrainConfig::default()
                };
                Self {
                    profile,
                    architecture: Architecture {
                        n_layers: 4,
                        d_model: 128,
                        n_heads: 4,
                        d_ff: 256,
                    },
                    schedule: ScheduleConfig::scaled(50),
                    stage1: train,
                    stage2: train,
                    stage1_mix: 0.0,
                    direct: DirectConfig {
                        steps: 400,
                        ..DirectConfig::default()
                    },
                    prompt: PromptEncoderConfig::default(),
                }
            }
            Profile::Paper => {
                let train = TrainConfig {
                    steps: 20_000,
                    batch_size: 128,
                    optim: OptimConfig {
                        lr: 2e-4,
                        warmup_steps: 1000,
                        ..OptimConfig::default()
                    },
                    ..TrainConfig::default()
                };
                Self {
                    profile,
                    architecture: Architecture {
                        n_layers: 12,
                        d_model: 512,
                        n_heads: 8,
                        d_ff: 2048,
                    },
                    schedule: ScheduleConfig::default(),
                    stage1: train,
                    stage2: train,
                    stage1_mix: 0.0,
                    direct: DirectConfig {
                        steps: 20_000,
                        ..DirectConfig::default()
                    },
                    prompt: PromptEncoderConfig::default(),
                }
            }
        }
    }
}

/// Seed for stage `stage` (1 or 2) derived from the run seed.
pub fn stage_seed(seed: u64, stage: u64) -> u64 {
    mix(seed, &[0x7374_6167_65, stage])
}

/// Residual fusion in prompt space: `prompt + proj · speaker`.
pub fn fuse(proj: &Tensor, speaker: &[f64], prompt: &[f64]) -> Result<Vec<f64>> {
    let (rows, cols) = (proj.rows(), proj.cols());
    if cols != speaker.len() || rows != prompt.len() {
        return Err(Error::shape("fuse", proj.shape(), &[prompt.len(), speaker.len()]));
    }
    Ok(prompt
        .iter()
        .enumerate()
        .map(|(i, p)| p + proj.row(i).iter().zip(speaker).map(|(a, b)| a * b).sum::<f64>())
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct HiStyleModel {
    pub stage1: Denoiser,
    pub stage2: Denoiser,
    /// `[d_text, d_emb]`.
    pub fusion: Tensor,
    pub schedule: ScheduleConfig,
    pub prompt: PromptEncoderConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SingleStageModel {
    pub denoiser: Denoiser,
    pub schedule: ScheduleConfig,
    pub prompt: PromptEncoderConfig,
}

/// Two-layer feed-forward map from prompt embedding to style embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectRegressor {
    pub params: ParamStore,
    pub prompt: PromptEncoderConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Predictor {
    Hierarchical(HiStyleModel),
    SingleStage(SingleStageModel),
    DirectRegression(DirectRegressor),
}

#[derive(Clone, Debug)]
pub struct Trained<M> {
    pub model: M,
    /// One trace per trained stage, in order.
    pub traces: Vec<Vec<LossRecord>>,
}

fn encode_all(items: &[CorpusItem], enc: &PromptEncoder) -> Vec<Vec<f64>> {
    items.iter().map(|it| enc.encode(&it.labels).vector).collect()
}

fn check_corpus(items: &[CorpusItem]) -> Result<usize> {
    let d = items.first().ok_or_else(|| Error::invalid("empty training corpus"))?.style_emb.len();
    if items.iter().any(|it| it.style_emb.len() != d || it.speaker_emb.len() != d) {
        return Err(Error::invalid("corpus embeddings differ in dimension"));
    }
    Ok(d)
}

pub fn train_two_stage(items: &[CorpusItem], cfg: &ModelConfig, seed: u64) -> Result<Trained<HiStyleModel>> {
    let d_emb = check_corpus(items)?;
    let enc = PromptEncoder::new(cfg.prompt)?;
    let schedule = cfg.schedule.build()?;
    let prompts = encode_all(items, &enc);
    let speakers: Vec<Vec<f64>> = items.iter().map(|it| it.speaker_emb.clone()).collect();
    let styles: Vec<Vec<f64>> = items.iter().map(|it| it.style_emb.clone()).collect();
    let den_cfg = cfg.architecture.denoiser(enc.dim(), d_emb);

    let s1 = train_stage(
        &StageData {
            targets: &speakers,
            conditioning: Conditioning::Fixed(&prompts),
            prompts: Some(&prompts),
        },
        den_cfg,
        &schedule,
        &cfg.stage1,
        stage_seed(seed, 1),
    )?;

    let alternates = if cfg.stage1_mix > 0.0 {
        let seeds: Vec<u64> = (0..items.len() as u64).map(|i| mix(seed, &[i, 0x6d6978])).collect();
        let conds = Tensor::from_rows(&prompts)?;
        Some(sample_batch(&s1.denoiser, &conds, &schedule, &seeds, None)?.row_vecs())
    } else {
        None
    };
    let s2 = train_stage(
        &StageData {
            targets: &styles,
            conditioning: Conditioning::Fused {
                prompt: &prompts,
                speaker: &speakers,
                alternate: alternates.as_deref().map(|a| (a, cfg.stage1_mix)),
            },
            prompts: Some(&prompts),
        },
        den_cfg,
        &schedule,
        &cfg.stage2,
        stage_seed(seed, 2),
    )?;
    let mut stage2 = s2.denoiser;
    let fusion = stage2.params.remove(FUSION_PARAM)?;
    Ok(Trained {
        model: HiStyleModel {
            stage1: s1.denoiser,
            stage2,
            fusion,
            schedule: cfg.schedule,
            prompt: cfg.prompt,
        },
        traces: vec![s1.trace, s2.trace],
    })
}

/// Stage-2 training alone, conditioned on the prompt embedding.
pub fn train_single_stage(items: &[CorpusItem], cfg: &ModelConfig, seed: u64) -> Result<Trained<SingleStageModel>> {
    let d_emb = check_corpus(items)?;
    let enc = PromptEncoder::new(cfg.prompt)?;
    let schedule = cfg.schedule.build()?;
    let prompts = encode_all(items, &enc);
    let styles: Vec<Vec<f64>> = items.iter().map(|it| it.style_emb.clone()).collect();
    let out = train_stage(
        &StageData {
            targets: &styles,
            conditioning: Conditioning::Fixed(&prompts),
            prompts: Some(&prompts),
        },
        cfg.architecture.denoiser(enc.dim(), d_emb),
        &schedule,
        &cfg.stage2,
        stage_seed(seed, 2),
    )?;
    Ok(Trained {
        model: SingleStageModel {
            denoiser: out.denoiser,
            schedule: cfg.schedule,
            prompt: cfg.prompt,
        },
        traces: vec![out.trace],
    })
}

impl DirectRegressor {
    fn graph(&self, tape: &mut Tape, x: crate::numerics::Var) -> Result<(crate::numerics::BoundParams, crate::numerics::Var)> {
        let p = self.params.bind(tape);
        let h = tape.matmul(x, p.var("l1.w")?)?;
        let h = tape.add_row(h, p.var("l1.b")?)?;
        let h = tape.gelu(h);
        let y = tape.matmul(h, p.var("l2.w")?)?;
        let y = tape.add_row(y, p.var("l2.b")?)?;
        Ok((p, y))
    }

    pub fn predict_batch(&self, prompts: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.leaf(prompts.clone());
        let (_, y) = self.graph(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }
}

/// MSE-only regression baseline. Batches follow the same draw order as
/// diffusion training, without timestep or noise draws.
pub fn train_baseline_direct(items: &[CorpusItem], cfg: &ModelConfig, seed: u64) -> Result<Trained<DirectRegressor>> {
    let d_emb = check_corpus(items)?;
    let dc = cfg.direct;
    let enc = PromptEncoder::new(cfg.prompt)?;
    let prompts = encode_all(items, &enc);
    let n = items.len();
    if dc.batch_size == 0 || dc.batch_size > n || dc.hidden == 0 {
        return Err(Error::config(format!("direct batch size must be in 1..={n} and hidden positive")));
    }
    let mut init = Rng::stream(seed, "init");
    let mut params = ParamStore::new();
    let d_text = enc.dim();
    params.insert("l1.w", Tensor::randn(&[d_text, dc.hidden], 1.0 / (d_text as f64).sqrt(), &mut init))?;
    params.insert("l1.b", Tensor::zeros(&[dc.hidden]))?;
    params.insert("l2.w", Tensor::randn(&[dc.hidden, d_emb], 1.0 / (dc.hidden as f64).sqrt(), &mut init))?;
    params.insert("l2.b", Tensor::zeros(&[d_emb]))?;
    let mut model = DirectRegressor { params, prompt: cfg.prompt };
    let mut adam = AdamState::new(&model.params, dc.optim.adam());
    let mut rng = Rng::stream(seed, "batches");
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut trace = Vec::with_capacity(dc.steps);
    let b = dc.batch_size;
    for step in 0..dc.steps {
        if cursor + b > n {
            order = (0..n).collect();
            rng.shuffle(&mut order);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + b];
        cursor += b;
        let x = Tensor::from_rows(&idx.iter().map(|&i| prompts[i].clone()).collect::<Vec<_>>())?;
        let y = Tensor::from_rows(&idx.iter().map(|&i| items[i].style_emb.clone()).collect::<Vec<_>>())?;
        let mut tape = Tape::new();
        let xv = tape.leaf(x);
        let yv = tape.leaf(y);
        let (bound, pred) = model.graph(&mut tape, xv)?;
        let diff = tape.sub(pred, yv)?;
        let sq = tape.square(diff);
        let s = tape.sum(sq);
        let loss = tape.scale(s, 1.0 / b as f64);
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("regression loss at step {}", step + 1)));
        }
        trace.push(LossRecord {
            step: step + 1,
            l_mse: value,
            l_cl: 0.0,
            l_neg: 0.0,
            total: value,
        });
        let g = tape.backward(loss)?;
        let grads = bound.grads(&tape, &g);
        adam_step(&mut model.params, &grads, &mut adam, dc.optim.lr_at(step, dc.steps))?;
    }
    Ok(Trained { model, traces: vec![trace] })
}

/// Per-item sampling seeds for stage `stage` of a batch prediction.
fn item_seeds(seed: u64, n: usize, stage: u64) -> Vec<u64> {
    (0..n as u64).map(|i| mix(seed, &[i, stage])).collect()
}

impl HiStyleModel {
    pub fn d_emb(&self) -> usize {
        self.stage2.config.d_emb
    }

    pub fn fuse(&self, speaker: &[f64], prompt: &[f64]) -> Result<Vec<f64>> {
        fuse(&self.fusion, speaker, prompt)
    }

    /// `(speaker, style)` predictions for each prompt embedding; item `i`
    /// draws from seeds derived from `(seed, i)`.
    pub fn predict_batch(&self, prompts: &[Vec<f64>], seed: u64) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let schedule = self.schedule.build()?;
        let conds = Tensor::from_rows(prompts)?;
        let speakers = sample_batch(&self.stage1, &conds, &schedule, &item_seeds(seed, prompts.len(), 1), None)?.row_vecs();
        let fused = speakers
            .iter()
            .zip(prompts)
            .map(|(s, p)| self.fuse(s, p))
            .collect::<Result<Vec<_>>>()?;
        let fused = Tensor::from_rows(&fused)?;
        let styles = sample_batch(&self.stage2, &fused, &schedule, &item_seeds(seed, prompts.len(), 2), None)?.row_vecs();
        Ok((speakers, styles))
    }
}

/// Parse `prompt_text`, then sample speaker and style embeddings.
pub fn predict(model: &HiStyleModel, prompt_text: &str, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let labels = KeywordTable::default().parse(prompt_text)?;
    let enc = PromptEncoder::new(model.prompt)?;
    let (mut sp, mut st) = model.predict_batch(&[enc.encode(&labels).vector], seed)?;
    Ok((sp.remove(0), st.remove(0)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format: String,
    pub version: u32,
    pub kind: PredictorKind,
    pub seed: u64,
    pub d_emb: usize,
    pub d_text: usize,
    pub schedule: Option<ScheduleConfig>,
    pub prompt: PromptEncoderConfig,
    pub crate_version: String,
}

impl Predictor {
    pub fn kind(&self) -> PredictorKind {
        match self {
            Predictor::Hierarchical(_) => PredictorKind::Hierarchical,
            Predictor::SingleStage(_) => PredictorKind::SingleStage,
            Predictor::DirectRegression(_) => PredictorKind::DirectRegression,
        }
    }

    pub fn prompt_config(&self) -> PromptEncoderConfig {
        match self {
            Predictor::Hierarchical(m) => m.prompt,
            Predictor::SingleStage(m) => m.prompt,
            Predictor::DirectRegression(m) => m.prompt,
        }
    }

    /// Predicted style embedding per prompt embedding.
    pub fn predict_styles(&self, prompts: &[Vec<f64>], seed: u64) -> Result<Vec<Vec<f64>>> {
        if prompts.is_empty() {
            return Ok(Vec::new());
        }
        match self {
            Predictor::Hierarchical(m) => Ok(m.predict_batch(prompts, seed)?.1),
            Predictor::SingleStage(m) => {
                let schedule: NoiseSchedule = m.schedule.build()?;
                let conds = Tensor::from_rows(prompts)?;
                Ok(sample_batch(&m.denoiser, &conds, &schedule, &item_seeds(seed, prompts.len(), 2), None)?.row_vecs())
            }
            Predictor::DirectRegression(m) => Ok(m.predict_batch(&Tensor::from_rows(prompts)?)?.row_vecs()),
        }
    }

    fn dims(&self) -> (usize, usize) {
        match self {
            Predictor::Hierarchical(m) => (m.d_emb(), m.fusion.rows()),
            Predictor::SingleStage(m) => (m.denoiser.config.d_emb, m.denoiser.config.d_cond),
            Predictor::DirectRegression(m) => {
                let w = m.params.require("l2.w").expect("regressor has l2.w");
                let w1 = m.params.require("l1.w").expect("regressor has l1.w");
                (w.cols(), w1.rows())
            }
        }
    }

    /// Write a bundle directory: `manifest.json` plus per-kind checkpoints.
    pub fn save(&self, dir: &Path, seed: u64) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let (d_emb, d_text) = self.dims();
        let schedule = match self {
            Predictor::Hierarchical(m) => {
                m.stage1.save(&dir.join("stage1"))?;
                m.stage2.save(&dir.join("stage2"))?;
                let mut f = ParamStore::new();
                f.insert(FUSION_PARAM, m.fusion.clone())?;
                checkpoint::save(&dir.join("fusion.ckpt"), &f)?;
                Some(m.schedule)
            }
            Predictor::SingleStage(m) => {
                m.denoiser.save(&dir.join("stage2"))?;
                Some(m.schedule)
            }
            Predictor::DirectRegression(m) => {
                checkpoint::save(&dir.join("regressor.ckpt"), &m.params)?;
                None
            }
        };
        let manifest = BundleManifest {
            format: BUNDLE_FORMAT.into(),
            version: BUNDLE_VERSION,
            kind: self.kind(),
            seed,
            d_emb,
            d_text,
            schedule,
            prompt: self.prompt_config(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<(Self, BundleManifest)> {
        let manifest: BundleManifest = serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
        if manifest.format != BUNDLE_FORMAT || manifest.version != BUNDLE_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported bundle {} v{}",
                manifest.format, manifest.version
            )));
        }
        let schedule = || {
            manifest
                .schedule
                .ok_or_else(|| Error::Checkpoint("bundle manifest lacks a schedule".into()))
        };
        let model = match manifest.kind {
            PredictorKind::Hierarchical => {
                let fusion = checkpoint::load(&dir.join("fusion.ckpt"))?.require(FUSION_PARAM)?.clone();
                Predictor::Hierarchical(HiStyleModel {
                    stage1: Denoiser::load(&dir.join("stage1"))?,
                    stage2: Denoiser::load(&dir.join("stage2"))?,
                    fusion,
                    schedule: schedule()?,
                    prompt: manifest.prompt,
                })
            }
            PredictorKind::SingleStage => Predictor::SingleStage(SingleStageModel {
                denoiser: Denoiser::load(&dir.join("stage2"))?,
                schedule: schedule()?,
                prompt: manifest.prompt,
            }),
            PredictorKind::DirectRegression => Predictor::DirectRegression(DirectRegressor {
                params: checkpoint::load(&dir.join("regressor.ckpt"))?,
                prompt: manifest.prompt,
            }),
        };
        if model.dims() != (manifest.d_emb, manifest.d_text) {
            return Err(Error::Checkpoint("bundle dimensions disagree with its manifest".into()));
        }
        Ok((model, manifest))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, SyntheticSpec};

    fn quick() -> ModelConfig {
        let mut cfg = ModelConfig::for_profile(Profile::Test);
        cfg.architecture = Architecture { n_layers: 1, d_model: 16, n_heads: 2, d_ff: 16 };
        cfg.schedule = ScheduleConfig::scaled(20);
        cfg.stage1.steps = 3;
        cfg.stage2.steps = 3;
        cfg.stage1.batch_size = 8;
        cfg.stage2.batch_size = 8;
        cfg.direct.steps = 3;
        cfg.direct.batch_size = 8;
        cfg
    }

    fn corpus() -> Vec<CorpusItem> {
        generate_corpus(&SyntheticSpec { n_speakers: 2, n_items_per_cell: 1, ..SyntheticSpec::default() }).unwrap()
    }

    #[test]
    fn fuse_residual_identities() {
        let proj = Tensor::matrix(2, 3, vec![1.0, 0.0, 2.0, 0.0, -1.0, 1.0]).unwrap();
        assert_eq!(fuse(&proj, &[0.0; 3], &[0.5, 0.25]).unwrap(), vec![0.5, 0.25]);
        assert_eq!(fuse(&Tensor::zeros(&[2, 3]), &[4.0, 5.0, 6.0], &[0.5, 0.25]).unwrap(), vec![0.5, 0.25]);
        let a = [1.0, 2.0, 3.0];
        let b = [0.5, -1.0, 2.0];
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let lhs: Vec<f64> = fuse(&proj, &ab, &[0.0, 0.0])
            .unwrap()
            .iter()
            .zip(fuse(&proj, &a, &[0.0, 0.0]).unwrap())
            .map(|(x, y)| x - y)
            .collect();
        assert_eq!(lhs, fuse(&proj, &b, &[0.0, 0.0]).unwrap());
        assert!(fuse(&proj, &[1.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn two_stage_shapes_and_determinism() {
        let items = corpus();
        let a = train_two_stage(&items, &quick(), 1).unwrap();
        let b = train_two_stage(&items, &quick(), 1).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.model.fusion.shape(), &[64, 64]);
        let (sp, st) = predict(&a.model, &items[0].prompt_text, 5).unwrap();
        assert_eq!((sp.len(), st.len()), (64, 64));
        assert_eq!(predict(&a.model, &items[0].prompt_text, 5).unwrap(), (sp, st));
    }

    #[test]
    fn bundles_round_trip() {
        let items = corpus();
        let dir = tempfile::tempdir().unwrap();
        let cfg = quick();
        let models = [
            Predictor::Hierarchical(train_two_stage(&items, &cfg, 2).unwrap().model),
            Predictor::SingleStage(train_single_stage(&items, &cfg, 2).unwrap().model),
            Predictor::DirectRegression(train_baseline_direct(&items, &cfg, 2).unwrap().model),
        ];
        for (i, m) in models.iter().enumerate() {
            let path = dir.path().join(format!("m{i}"));
            m.save(&path, 2).unwrap();
            let (back, manifest) = Predictor::load(&path).unwrap();
            assert_eq!(&back, m);
            assert_eq!(manifest.kind, m.kind());
            let prompts = vec![PromptEncoder::new(cfg.prompt).unwrap().encode(&items[0].labels).vector];
            assert_eq!(back.predict_styles(&prompts, 3).unwrap()[0].len(), 64);
        }
    }

    #[test]
    fn profile_names() {
        assert_eq!("paper".parse::<Profile>().unwrap(), Profile::Paper);
        assert!("huge".parse::<Profile>().is_err());
    }
}
