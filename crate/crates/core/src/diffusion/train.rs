//! Minibatch training of one diffusion stage.
//!
//! Random draws, in order, per step (stream `"batches"` of the seed):
//! 1. when fewer than `batch_size` unused indices remain (and before the
//!    first step) the index order `0..N` is reshuffled with `Rng::shuffle`;
//! 2. one `below(T)` per batch item, giving `t = 1 + draw`;
//! 3. `d_emb` standard normals per batch item, row by row, for the noise.
//!
//! Parameters are initialized from stream `"init"`: the denoiser first, then
//! the contrastive projection (prompt mode with λ > 0), then the fusion
//! projection (fused conditioning).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::denoiser::{forward, Denoiser, DenoiserConfig};
use crate::diffusion::loss::{batch_loss, contrastive_parts, ContrastiveConfig, ContrastiveMode};
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::numerics::{adam_step, AdamConfig, AdamState, Rng, Tape, Tensor};

pub const FUSION_PARAM: &str = "fusion.proj";
pub const CONTRAST_PARAM: &str = "contrast.proj";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr: f64,
    pub warmup_steps: usize,
    /// Cosine decay to `min_lr_ratio · lr` over the run.
    pub cosine_decay: bool,
    pub min_lr_ratio: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            lr: 1e-3,
            warmup_steps: 100,
            cosine_decay: true,
            min_lr_ratio: 0.05,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
        }
    }
}

impl OptimConfig {
    /// Plain Adam at a constant rate.
    pub fn constant(lr: f64) -> Self {
        Self {
            lr,
            warmup_steps: 0,
            cosine_decay: false,
            ..Self::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// Learning rate for 0-based `step` of `total`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        let mut lr = self.lr;
        if self.warmup_steps > 0 && step < self.warmup_steps {
            lr *= (step + 1) as f64 / self.warmup_steps as f64;
        }
        if self.cosine_decay && total > 1 {
            let progress = step as f64 / (total - 1) as f64;
            let c = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
            lr *= self.min_lr_ratio + (1.0 - self.min_lr_ratio) * c;
        }
        lr
    }

    fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(0.0..=1.0).contains(&self.min_lr_ratio) {
            return Err(Error::config("lr must be positive and min_lr_ratio in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
    pub contrastive: ContrastiveConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 64,
            optim: OptimConfig::default(),
            contrastive: ContrastiveConfig::default(),
        }
    }
}

/// Per-item conditioning vectors for a stage.
#[derive(Clone, Copy, Debug)]
pub enum Conditioning<'a> {
    Fixed(&'a [Vec<f64>]),
    /// `prompt + F · speaker` with a trainable `F: [d_text, d_emb]`.
    Fused {
        prompt: &'a [Vec<f64>],
        speaker: &'a [Vec<f64>],
        /// Replacement speaker vectors and the per-item probability of using them.
        alternate: Option<(&'a [Vec<f64>], f64)>,
    },
}

impl Conditioning<'_> {
    fn len(&self) -> usize {
        match self {
            Conditioning::Fixed(c) => c.len(),
            Conditioning::Fused { prompt, .. } => prompt.len(),
        }
    }

    fn dim(&self) -> usize {
        match self {
            Conditioning::Fixed(c) => c.first().map_or(0, Vec::len),
            Conditioning::Fused { prompt, .. } => prompt.first().map_or(0, Vec::len),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StageData<'a> {
    pub targets: &'a [Vec<f64>],
    pub conditioning: Conditioning<'a>,
    /// Positives for prompt-mode contrastive training.
    pub prompts: Option<&'a [Vec<f64>]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    #[serde(rename = "L_MSE")]
    pub l_mse: f64,
    #[serde(rename = "L_CL")]
    pub l_cl: f64,
    #[serde(rename = "L_neg")]
    pub l_neg: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub denoiser: Denoiser,
    pub trace: Vec<LossRecord>,
}

fn check_rows(what: &str, rows: &[Vec<f64>], n: usize, d: usize) -> Result<()> {
    if rows.len() != n {
        return Err(Error::invalid(format!("{what} has {} rows, expected {n}", rows.len())));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != d) {
        return Err(Error::invalid(format!("{what} row {i} has dimension {}, expected {d}", rows[i].len())));
    }
    Ok(())
}

fn gather(rows: &[Vec<f64>], idx: &[usize]) -> Result<Tensor> {
    let d = rows[0].len();
    let mut data = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        data.extend_from_slice(&rows[i]);
    }
    Tensor::matrix(idx.len(), d, data)
}

/// Train one denoiser stage. `config.d_cond` and `config.d_emb` must match
/// the conditioning and target dimensions.
pub fn train_stage(
    data: &StageData<'_>,
    config: DenoiserConfig,
    schedule: &NoiseSchedule,
    train: &TrainConfig,
    seed: u64,
) -> Result<TrainOutput> {
    config.validate()?;
    train.optim.validate()?;
    let cc = train.contrastive;
    cc.validate()?;
    let n = data.targets.len();
    let b = train.batch_size;
    if n == 0 || data.conditioning.len() != n {
        return Err(Error::invalid("targets and conditions must be non-empty and equally long"));
    }
    if b == 0 || b > n {
        return Err(Error::config(format!("batch size {b} must be in 1..={n}")));
    }
    if cc.uses_negatives() && b < 2 {
        return Err(Error::config("in-batch negatives need a batch of at least 2"));
    }
    check_rows("targets", data.targets, n, config.d_emb)?;
    let d_text = data.conditioning.dim();
    match data.conditioning {
        Conditioning::Fixed(c) => check_rows("conditions", c, n, config.d_cond)?,
        Conditioning::Fused { prompt, speaker, alternate } => {
            check_rows("prompts", prompt, n, config.d_cond)?;
            check_rows("speaker embeddings", speaker, n, config.d_emb)?;
            if let Some((alt, p)) = alternate {
                check_rows("alternate speaker embeddings", alt, n, config.d_emb)?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::config("mixing probability must be in [0, 1]"));
                }
            }
        }
    }
    let prompt_mode = cc.lambda > 0.0 && cc.mode == ContrastiveMode::PromptEmbedding;
    let prompts = if prompt_mode {
        let p = data
            .prompts
            .ok_or_else(|| Error::config("prompt-embedding contrastive mode needs prompt embeddings"))?;
        check_rows("contrastive prompts", p, n, p.first().map_or(0, Vec::len))?;
        Some(p)
    } else {
        None
    };

    let mut init = Rng::stream(seed, "init");
    let mut den = Denoiser::init(config, &mut init)?;
    if let Some(p) = prompts {
        let d_p = p[0].len();
        let std = 1.0 / (config.d_emb as f64).sqrt();
        den.params.insert(CONTRAST_PARAM, Tensor::randn(&[config.d_emb, d_p], std, &mut init))?;
    }
    if matches!(data.conditioning, Conditioning::Fused { .. }) {
        let std = 0.1 / (config.d_emb as f64).sqrt();
        den.params.insert(FUSION_PARAM, Tensor::randn(&[d_text, config.d_emb], std, &mut init))?;
    }

    let mut adam = AdamState::new(&den.params, train.optim.adam());
    let mut rng = Rng::stream(seed, "batches");
    let mut mix_rng = Rng::stream(seed, "stage-mix");
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut trace = Vec::with_capacity(train.steps);

    for step in 0..train.steps {
        if cursor + b > n {
            order = (0..n).collect();
            rng.shuffle(&mut order);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + b];
        cursor += b;
        let ts: Vec<usize> = (0..b).map(|_| 1 + rng.below(schedule.steps())).collect();
        let mut xt = Vec::with_capacity(b * config.d_emb);
        for (k, &i) in idx.iter().enumerate() {
            let ab = schedule.alpha_bar(ts[k]);
            let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
            for &x in &data.targets[i] {
                xt.push(sa * x + sb * rng.normal());
            }
        }

        let mut tape = Tape::new();
        let bound = den.params.bind(&mut tape);
        let x0 = tape.leaf(gather(data.targets, idx)?);
        let xt = tape.leaf(Tensor::matrix(b, config.d_emb, xt)?);
        let cond = match data.conditioning {
            Conditioning::Fixed(c) => tape.leaf(gather(c, idx)?),
            Conditioning::Fused { prompt, speaker, alternate } => {
                let mut rows = Vec::with_capacity(b * config.d_emb);
                for &i in idx {
                    let src = match alternate {
                        Some((alt, p)) if mix_rng.uniform() < p => &alt[i],
                        _ => &speaker[i],
                    };
                    rows.extend_from_slice(src);
                }
                let s = tape.leaf(Tensor::matrix(b, config.d_emb, rows)?);
                let pr = tape.leaf(gather(prompt, idx)?);
                let f = bound.var(FUSION_PARAM)?;
                let proj = tape.matmul_t(s, f)?;
                tape.add(pr, proj)?
            }
        };
        let pred = forward(&mut tape, &bound, &config, xt, &ts, cond)?;
        let (contrast_pred, refs) = match prompts {
            Some(p) => {
                let proj = tape.matmul(pred, bound.var(CONTRAST_PARAM)?)?;
                (proj, tape.leaf(gather(p, idx)?))
            }
            None => (pred, x0),
        };
        let loss = batch_loss(&mut tape, pred, x0, contrast_pred, refs, &cc)?;

        let (l_cl, l_neg) = match (loss.l_cl, loss.l_neg) {
            (Some(c), Some(g)) => (tape.value(c).item(), tape.value(g).item()),
            (Some(c), None) => {
                let diag = batch_diagnostics(tape.value(contrast_pred), tape.value(refs), cc.margin);
                (tape.value(c).item(), diag.1)
            }
            _ => batch_diagnostics(tape.value(contrast_pred), tape.value(refs), cc.margin),
        };
        let record = LossRecord {
            step: step + 1,
            l_mse: tape.value(loss.mse).item(),
            l_cl,
            l_neg,
            total: tape.value(loss.total).item(),
        };
        if !record.total.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {}", step + 1)));
        }
        trace.push(record);

        let grads = tape.backward(loss.total)?;
        let grads = bound.grads(&tape, &grads);
        adam_step(&mut den.params, &grads, &mut adam, train.optim.lr_at(step, train.steps))?;
    }
    Ok(TrainOutput { denoiser: den, trace })
}

/// Batch-mean `(L_CL, L_neg)` from values; degenerate zero rows count as 0.
fn batch_diagnostics(pred: &Tensor, refs: &Tensor, margin: f64) -> (f64, f64) {
    let b = pred.rows();
    let rows: Vec<&[f64]> = (0..b).map(|i| refs.row(i)).collect();
    let (mut cl, mut neg) = (0.0, 0.0);
    for i in 0..b {
        let negatives: Vec<&[f64]> = rows.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, r)| *r).collect();
        if let Ok(p) = contrastive_parts(pred.row(i), rows[i], &negatives, margin) {
            cl += p.l_cl;
            neg += p.l_neg;
        }
    }
    (cl / b as f64, neg / b as f64)
}

pub fn write_trace_csv(path: &Path, trace: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in trace {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Mean of the first and last `frac` of the totals.
pub fn trace_ends(trace: &[LossRecord], frac: f64) -> (f64, f64) {
    let k = ((trace.len() as f64 * frac).ceil() as usize).clamp(1, trace.len().max(1));
    let mean = |rs: &[LossRecord]| rs.iter().map(|r| r.total).sum::<f64>() / rs.len() as f64;
    (mean(&trace[..k]), mean(&trace[trace.len() - k..]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::schedule::ScheduleConfig;

    fn toy(n: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut rng = Rng::new(4);
        let conds: Vec<Vec<f64>> = (0..n).map(|_| rng.normal_vec(4)).collect();
        let targets = conds.iter().map(|c| vec![c[0] + 2.0, c[1] - c[2], 1.0]).collect();
        (targets, conds)
    }

    fn tiny() -> DenoiserConfig {
        DenoiserConfig {
            n_layers: 1,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            d_cond: 4,
            d_emb: 3,
        }
    }

    #[test]
    fn lr_schedule_shape() {
        let o = OptimConfig { lr: 1.0, warmup_steps: 10, cosine_decay: true, min_lr_ratio: 0.1, ..OptimConfig::default() };
        assert!((o.lr_at(0, 100) - 0.1).abs() < 0.01);
        assert!((o.lr_at(99, 100) - 0.1).abs() < 1e-12);
        assert_eq!(OptimConfig::constant(0.5).lr_at(40, 100), 0.5);
    }

    #[test]
    fn batch_of_one_with_negatives_rejected() {
        let (t, c) = toy(8);
        let data = StageData { targets: &t, conditioning: Conditioning::Fixed(&c), prompts: None };
        let cfg = TrainConfig { steps: 1, batch_size: 1, ..TrainConfig::default() };
        let sched = ScheduleConfig::scaled(10).build().unwrap();
        assert!(train_stage(&data, tiny(), &sched, &cfg, 0).is_err());
        let no_neg = TrainConfig {
            contrastive: ContrastiveConfig { lambda: 0.0, ..ContrastiveConfig::default() },
            ..cfg
        };
        assert!(train_stage(&data, tiny(), &sched, &no_neg, 0).is_ok());
    }

    #[test]
    fn deterministic_and_traced() {
        let (t, c) = toy(16);
        let data = StageData { targets: &t, conditioning: Conditioning::Fixed(&c), prompts: None };
        let cfg = TrainConfig { steps: 5, batch_size: 4, ..TrainConfig::default() };
        let sched = ScheduleConfig::scaled(10).build().unwrap();
        let a = train_stage(&data, tiny(), &sched, &cfg, 3).unwrap();
        let b = train_stage(&data, tiny(), &sched, &cfg, 3).unwrap();
        assert_eq!(a.denoiser, b.denoiser);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.trace.len(), 5);
        for r in &a.trace {
            let expect = r.l_mse + 0.1 * (r.l_cl + r.l_neg);
            assert!((r.total - expect).abs() < 1e-9 * expect.max(1.0));
        }
    }

    #[test]
    fn prompt_mode_needs_prompts() {
        let (t, c) = toy(8);
        let cfg = TrainConfig {
            steps: 2,
            batch_size: 4,
            contrastive: ContrastiveConfig { mode: ContrastiveMode::PromptEmbedding, ..ContrastiveConfig::default() },
            ..TrainConfig::default()
        };
        let sched = ScheduleConfig::scaled(10).build().unwrap();
        let missing = StageData { targets: &t, conditioning: Conditioning::Fixed(&c), prompts: None };
        assert!(train_stage(&missing, tiny(), &sched, &cfg, 0).is_err());
        let given = StageData { prompts: Some(&c), ..missing };
        let out = train_stage(&given, tiny(), &sched, &cfg, 0).unwrap();
        assert_eq!(out.denoiser.params.require(CONTRAST_PARAM).unwrap().shape(), &[3, 4]);
    }

    #[test]
    fn trace_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let trace = vec![LossRecord { step: 1, l_mse: 2.0, l_cl: 0.5, l_neg: 0.25, total: 2.075 }];
        write_trace_csv(&path, &trace).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("step,L_MSE,L_CL,L_neg,total\n"));
        assert_eq!(read_trace_csv(&path).unwrap(), trace);
    }
}
