//! Reconstruction and contrastive losses, as plain functions and as tape
//! graphs over a batch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveMode {
    /// Positives and negatives are target embeddings.
    ReferenceEmbedding,
    /// Positives and negatives are prompt embeddings; predictions pass
    /// through a trainable projection first.
    PromptEmbedding,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastiveConfig {
    pub margin: f64,
    pub lambda_neg: f64,
    pub lambda: f64,
    pub mode: ContrastiveMode,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            margin: 0.5,
            lambda_neg: 1.0,
            lambda: 0.1,
            mode: ContrastiveMode::ReferenceEmbedding,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.margin) {
            return Err(Error::config(format!("margin {} outside [-1, 1]", self.margin)));
        }
        if !(self.lambda >= 0.0 && self.lambda_neg >= 0.0) {
            return Err(Error::config("lambda and lambda_neg must be non-negative"));
        }
        Ok(())
    }

    /// True when the loss uses in-batch negatives.
    pub fn uses_negatives(&self) -> bool {
        self.lambda > 0.0 && self.lambda_neg > 0.0
    }
}

/// Sum of squared coordinate differences.
pub fn loss_mse(pred: &[f64], x0: &[f64]) -> Result<f64> {
    if pred.len() != x0.len() {
        return Err(Error::shape("loss_mse", &[pred.len()], &[x0.len()]));
    }
    Ok(pred.iter().zip(x0).map(|(a, b)| (a - b) * (a - b)).sum())
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine", &[a.len()], &[b.len()]));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine of a zero-norm vector"));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveParts {
    pub l_cl: f64,
    pub l_neg: f64,
}

impl ContrastiveParts {
    pub fn combined(&self, lambda_neg: f64) -> f64 {
        self.l_cl + lambda_neg * self.l_neg
    }
}

pub fn contrastive_parts(z_pred: &[f64], z_ref: &[f64], negatives: &[&[f64]], margin: f64) -> Result<ContrastiveParts> {
    let l_cl = 1.0 - cosine(z_pred, z_ref)?;
    let mut l_neg = 0.0;
    for n in negatives {
        l_neg += (cosine(z_pred, n)? - margin).max(0.0);
    }
    Ok(ContrastiveParts { l_cl, l_neg })
}

/// `L_CL + λ_neg · L_neg` for one anchor.
pub fn loss_contrastive(z_pred: &[f64], z_ref: &[f64], negatives: &[&[f64]], cfg: &ContrastiveConfig) -> Result<f64> {
    Ok(contrastive_parts(z_pred, z_ref, negatives, cfg.margin)?.combined(cfg.lambda_neg))
}

pub fn total_loss(l_mse: f64, l_contrastive: f64, lambda: f64) -> f64 {
    l_mse + lambda * l_contrastive
}

/// Batch-mean loss terms on a tape.
#[derive(Clone, Copy, Debug)]
pub struct BatchLoss {
    pub total: Var,
    pub mse: Var,
    pub l_cl: Option<Var>,
    pub l_neg: Option<Var>,
}

/// Batch loss graph. `pred` and `x0` are `[B, d]`; `contrast_pred` and
/// `refs` are the (possibly projected) predictions and their positives,
/// row `i` of `refs` being the positive for row `i` and a negative for every
/// other row. Contrastive terms are built only when `λ > 0`.
pub fn batch_loss(
    tape: &mut Tape,
    pred: Var,
    x0: Var,
    contrast_pred: Var,
    refs: Var,
    cfg: &ContrastiveConfig,
) -> Result<BatchLoss> {
    let b = tape.value(pred).rows();
    let diff = tape.sub(pred, x0)?;
    let sq = tape.square(diff);
    let s = tape.sum(sq);
    let mse = tape.scale(s, 1.0 / b as f64);
    if cfg.lambda == 0.0 {
        return Ok(BatchLoss {
            total: mse,
            mse,
            l_cl: None,
            l_neg: None,
        });
    }
    if cfg.uses_negatives() && b < 2 {
        return Err(Error::config("in-batch negatives need a batch of at least 2"));
    }
    let pn = tape.row_normalize(contrast_pred)?;
    let rn = tape.row_normalize(refs)?;
    let cos = tape.matmul_t(pn, rn)?;
    let diag = tape.mul_const(cos, Tensor::identity(b))?;
    let diag = tape.sum(diag);
    let l_cl = tape.scale(diag, -1.0 / b as f64);
    let l_cl = tape.add_scalar(l_cl, 1.0);
    let mut contrastive = l_cl;
    let mut l_neg = None;
    if cfg.lambda_neg > 0.0 {
        let hinge = tape.add_scalar(cos, -cfg.margin);
        let hinge = tape.relu(hinge);
        let off_diag = Tensor::identity(b).map(|v| 1.0 - v);
        let masked = tape.mul_const(hinge, off_diag)?;
        let s = tape.sum(masked);
        let neg = tape.scale(s, 1.0 / b as f64);
        let weighted = tape.scale(neg, cfg.lambda_neg);
        contrastive = tape.add(l_cl, weighted)?;
        l_neg = Some(neg);
    }
    let weighted = tape.scale(contrastive, cfg.lambda);
    let total = tape.add(mse, weighted)?;
    Ok(BatchLoss {
        total,
        mse,
        l_cl: Some(l_cl),
        l_neg,
    })
}
