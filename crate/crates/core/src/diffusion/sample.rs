//! Ancestral sampling with the x0-parameterized posterior.

use crate::diffusion::denoiser::Denoiser;
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

/// Draw one embedding. `t_start` defaults to the full chain length.
pub fn sample(den: &Denoiser, cond: &[f64], schedule: &NoiseSchedule, seed: u64, t_start: Option<usize>) -> Result<Vec<f64>> {
    let c = Tensor::matrix(1, cond.len(), cond.to_vec())?;
    Ok(sample_batch(den, &c, schedule, &[seed], t_start)?.into_data())
}

/// Draw one embedding per row of `conds: [N, d_cond]`. Row `i` uses its own
/// random stream from `seeds[i]`, so it equals a single [`sample`] call with
/// that seed.
pub fn sample_batch(
    den: &Denoiser,
    conds: &Tensor,
    schedule: &NoiseSchedule,
    seeds: &[u64],
    t_start: Option<usize>,
) -> Result<Tensor> {
    let n = conds.rows();
    if seeds.len() != n {
        return Err(Error::invalid(format!("{} seeds for {n} conditions", seeds.len())));
    }
    let t_start = t_start.unwrap_or(schedule.steps());
    if t_start == 0 || t_start > schedule.steps() {
        return Err(Error::invalid(format!("t_start {t_start} outside 1..={}", schedule.steps())));
    }
    let d = den.config.d_emb;
    let mut rngs: Vec<Rng> = seeds.iter().map(|&s| Rng::stream(s, "sample")).collect();
    let mut x: Vec<f64> = rngs.iter_mut().flat_map(|r| r.normal_vec(d)).collect();
    let mut t = t_start;
    loop {
        let xt = Tensor::matrix(n, d, x)?;
        let x0 = den.denoise(&xt, &vec![t; n], conds)?;
        if t == 1 {
            return Ok(x0);
        }
        let (c0, ct, var) = schedule.posterior(t);
        let sd = var.sqrt();
        x = Vec::with_capacity(n * d);
        for (i, r) in rngs.iter_mut().enumerate() {
            for (a, b) in x0.row(i).iter().zip(xt.row(i)) {
                x.push(c0 * a + ct * b + sd * r.normal());
            }
        }
        t -= 1;
    }
}
