use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear-β schedule settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleConfig {
    /// The default β range rescaled by `1000 / steps` (capped at 0.5), so a
    /// shorter chain still ends near pure noise.
    pub fn scaled(steps: usize) -> Self {
        let k = 1000.0 / steps.max(1) as f64;
        Self {
            steps,
            beta_start: (1e-4 * k).min(0.5),
            beta_end: (0.02 * k).min(0.5),
        }
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

/// β, α = 1 − β and ᾱ = ∏α for t = 1..=T (stored 0-based).
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::config("schedule needs at least one step"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::config(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
        )));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for a in &alphas {
        acc *= a;
        alpha_bars.push(acc);
    }
    Ok(NoiseSchedule {
        betas,
        alphas,
        alpha_bars,
    })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// ᾱ_t, with ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(Error::invalid(format!("timestep {t} outside 0..={}", self.steps())));
        }
        Ok(())
    }

    /// Coefficients `(c_x0, c_xt, variance)` of q(x_{t-1} | x_t, x_0) for t ≥ 2.
    pub fn posterior(&self, t: usize) -> (f64, f64, f64) {
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar(t - 1);
        let beta = self.beta(t);
        let c_x0 = beta * ab_prev.sqrt() / (1.0 - ab);
        let c_xt = (1.0 - ab_prev) * self.alpha(t).sqrt() / (1.0 - ab);
        let var = beta * (1.0 - ab_prev) / (1.0 - ab);
        (c_x0, c_xt, var)
    }
}

/// Forward noising: √ᾱ_t·x0 + √(1−ᾱ_t)·z. `t = 0` returns `x0`.
pub fn q_sample(x0: &[f64], t: usize, z: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    schedule.check_t(t)?;
    if x0.len() != z.len() {
        return Err(Error::shape("q_sample", &[x0.len()], &[z.len()]));
    }
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(z).map(|(x, n)| a * x + b * n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step() {
        let s = make_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bars(), &[0.5]);
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(make_schedule(0, 0.1, 0.2).is_err());
        assert!(make_schedule(10, 0.0, 0.2).is_err());
        assert!(make_schedule(10, 0.3, 0.2).is_err());
        assert!(make_schedule(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn quarter_alpha_bar_example() {
        // T=1 with β = 0.75 gives ᾱ_1 = 0.25.
        let s = make_schedule(1, 0.75, 0.75).unwrap();
        let xt = q_sample(&[1.0, 0.0], 1, &[0.0, 1.0], &s).unwrap();
        assert!((xt[0] - 0.5).abs() < 1e-12);
        assert!((xt[1] - 0.75f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn t_zero_is_identity_and_range_checked() {
        let s = ScheduleConfig::default().build().unwrap();
        assert_eq!(q_sample(&[3.0, -1.0], 0, &[9.0, 9.0], &s).unwrap(), vec![3.0, -1.0]);
        assert!(q_sample(&[0.0], 1001, &[0.0], &s).is_err());
    }

    #[test]
    fn scaled_profile_ends_near_noise() {
        let s = ScheduleConfig::scaled(50).build().unwrap();
        assert!(s.alpha_bar(50) < 1e-4);
    }
}
