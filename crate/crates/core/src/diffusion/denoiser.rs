//! Transformer denoiser with x0-prediction.
//!
//! Each item becomes a three-token sequence `[timestep, condition, x_t]`.
//! The output head reads the `x_t` token after the final layer norm.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::checkpoint;
use crate::numerics::{BoundParams, ParamStore, Rng, Tape, Tensor, Var};

pub(crate) const LN_EPS: f64 = 1e-5;
const SEQ: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub d_cond: usize,
    pub d_emb: usize,
}

impl DenoiserConfig {
    /// 4 layers, width 128, 4 heads.
    pub fn test_profile(d_cond: usize, d_emb: usize) -> Self {
        Self {
            n_layers: 4,
            d_model: 128,
            n_heads: 4,
            d_ff: 256,
            d_cond,
            d_emb,
        }
    }

    /// 12 layers, width 512, 8 heads.
    pub fn paper_profile(d_cond: usize, d_emb: usize) -> Self {
        Self {
            n_layers: 12,
            d_model: 512,
            n_heads: 8,
            d_ff: 2048,
            d_cond,
            d_emb,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.n_layers, self.d_model, self.n_heads, self.d_ff, self.d_cond, self.d_emb];
        if dims.contains(&0) {
            return Err(Error::config(format!("denoiser dimensions must be positive: {self:?}")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::config("d_model must be even for the timestep embedding"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub params: ParamStore,
}

fn linear(p: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Result<()> {
    let std = 1.0 / (fan_in as f64).sqrt();
    p.insert(format!("{name}.w"), Tensor::randn(&[fan_in, fan_out], std, rng))?;
    p.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]))
}

fn norm_params(p: &mut ParamStore, name: &str, d: usize) -> Result<()> {
    p.insert(format!("{name}.g"), Tensor::full(&[d], 1.0))?;
    p.insert(format!("{name}.b"), Tensor::zeros(&[d]))
}

impl Denoiser {
    /// Fresh parameters drawn from `rng`.
    pub fn init(config: DenoiserConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut p = ParamStore::new();
        linear(&mut p, "t_embed", d, d, rng)?;
        linear(&mut p, "cond", config.d_cond, d, rng)?;
        linear(&mut p, "x_in", config.d_emb, d, rng)?;
        p.insert("pos", Tensor::randn(&[SEQ, d], 0.02, rng))?;
        for i in 0..config.n_layers {
            let b = format!("blocks.{i}");
            norm_params(&mut p, &format!("{b}.ln1"), d)?;
            for proj in ["q", "k", "v", "o"] {
                linear(&mut p, &format!("{b}.attn.{proj}"), d, d, rng)?;
            }
            norm_params(&mut p, &format!("{b}.ln2"), d)?;
            linear(&mut p, &format!("{b}.ff1"), d, config.d_ff, rng)?;
            linear(&mut p, &format!("{b}.ff2"), config.d_ff, d, rng)?;
        }
        norm_params(&mut p, "final_ln", d)?;
        linear(&mut p, "head", d, config.d_emb, rng)?;
        Ok(Self { config, params: p })
    }

    /// Batched x0 prediction for `x_t: [B, d_emb]`, `cond: [B, d_cond]`.
    pub fn denoise(&self, x_t: &Tensor, t: &[usize], cond: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let xv = tape.leaf(x_t.clone());
        let cv = tape.leaf(cond.clone());
        let out = forward(&mut tape, &bound, &self.config, xv, t, cv)?;
        let value = tape.value(out).clone();
        if !value.is_finite() {
            return Err(Error::NonFinite("denoiser output".into()));
        }
        Ok(value)
    }

    /// Single-item convenience wrapper around [`Denoiser::denoise`].
    pub fn denoise_one(&self, x_t: &[f64], t: usize, cond: &[f64]) -> Result<Vec<f64>> {
        let x = Tensor::matrix(1, x_t.len(), x_t.to_vec())?;
        let c = Tensor::matrix(1, cond.len(), cond.to_vec())?;
        Ok(self.denoise(&x, &[t], &c)?.into_data())
    }

    /// Writes `config.json` and `params.ckpt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.json"), serde_json::to_vec_pretty(&self.config)?)?;
        checkpoint::save(&dir.join("params.ckpt"), &self.params)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config: DenoiserConfig = serde_json::from_slice(&std::fs::read(dir.join("config.json"))?)?;
        config.validate()?;
        let params = checkpoint::load(&dir.join("params.ckpt"))?;
        let fresh = Denoiser::init(config, &mut Rng::new(0))?;
        for (name, t) in fresh.params.iter() {
            let got = params
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if got.shape() != t.shape() {
                return Err(Error::Checkpoint(format!("tensor {name} has shape {:?}", got.shape())));
            }
        }
        Ok(Self { config, params })
    }
}

/// Sinusoidal features of each timestep, `[B, d]`.
pub fn timestep_features(t: &[usize], d: usize) -> Tensor {
    let half = d / 2;
    let mut data = Vec::with_capacity(t.len() * d);
    for &step in t {
        let mut cos = Vec::with_capacity(half);
        for i in 0..half {
            let freq = (-(10_000f64).ln() * i as f64 / half as f64).exp();
            let a = step as f64 * freq;
            data.push(a.sin());
            cos.push(a.cos());
        }
        data.extend(cos);
    }
    Tensor::raw(vec![t.len(), d], data)
}

fn dense(tape: &mut Tape, p: &BoundParams, name: &str, x: Var) -> Result<Var> {
    let h = tape.matmul(x, p.var(&format!("{name}.w"))?)?;
    tape.add_row(h, p.var(&format!("{name}.b"))?)
}

fn norm(tape: &mut Tape, p: &BoundParams, name: &str, x: Var) -> Result<Var> {
    let n = tape.layer_norm(x, LN_EPS);
    let g = tape.mul_row(n, p.var(&format!("{name}.g"))?)?;
    tape.add_row(g, p.var(&format!("{name}.b"))?)
}

/// Denoiser graph on `tape`; returns x0 predictions `[B, d_emb]`.
pub fn forward(
    tape: &mut Tape,
    p: &BoundParams,
    cfg: &DenoiserConfig,
    x_t: Var,
    t: &[usize],
    cond: Var,
) -> Result<Var> {
    let batch = t.len();
    let (xs, cs) = (tape.value(x_t).shape().to_vec(), tape.value(cond).shape().to_vec());
    if xs != [batch, cfg.d_emb] {
        return Err(Error::shape("denoise x_t", &xs, &[batch, cfg.d_emb]));
    }
    if cs != [batch, cfg.d_cond] {
        return Err(Error::shape("denoise cond", &cs, &[batch, cfg.d_cond]));
    }

    let feats = tape.leaf(timestep_features(t, cfg.d_model));
    let t_tok = dense(tape, p, "t_embed", feats)?;
    let t_tok = tape.gelu(t_tok);
    let c_tok = dense(tape, p, "cond", cond)?;
    let x_tok = dense(tape, p, "x_in", x_t)?;
    let pos = p.var("pos")?;
    let mut tokens = Vec::with_capacity(SEQ);
    for (s, tok) in [t_tok, c_tok, x_tok].into_iter().enumerate() {
        let ps = tape.slice_rows(pos, s, 1)?;
        tokens.push(tape.add_row(tok, ps)?);
    }
    let mut h = tape.concat_rows(&tokens)?;

    for i in 0..cfg.n_layers {
        let b = format!("blocks.{i}");
        let n = norm(tape, p, &format!("{b}.ln1"), h)?;
        let q = dense(tape, p, &format!("{b}.attn.q"), n)?;
        let k = dense(tape, p, &format!("{b}.attn.k"), n)?;
        let v = dense(tape, p, &format!("{b}.attn.v"), n)?;
        let a = tape.attention(q, k, v, batch, SEQ, cfg.n_heads)?;
        let a = dense(tape, p, &format!("{b}.attn.o"), a)?;
        h = tape.add(h, a)?;

        let n = norm(tape, p, &format!("{b}.ln2"), h)?;
        let f = dense(tape, p, &format!("{b}.ff1"), n)?;
        let f = tape.gelu(f);
        let f = dense(tape, p, &format!("{b}.ff2"), f)?;
        h = tape.add(h, f)?;
    }

    let h = norm(tape, p, "final_ln", h)?;
    let x_rows = tape.slice_rows(h, 2 * batch, batch)?;
    dense(tape, p, "head", x_rows)
}
