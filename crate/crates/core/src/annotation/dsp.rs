//! Per-utterance signal measurements: silence trimming, F0, rate, loudness
//! and the default gender heuristic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TRIM_DB: f64 = -40.0;

/// Drop leading and trailing 10 ms frames quieter than the loudest frame by
/// more than `rel_threshold_db`, then any exact zeros left at either edge.
pub fn trim_silence(samples: &[f64], sr: u32, rel_threshold_db: f64) -> Result<&[f64]> {
    if samples.is_empty() {
        return Err(Error::invalid("trim_silence on empty input"));
    }
    if sr == 0 {
        return Err(Error::invalid("sample rate must be positive"));
    }
    let flen = (sr as usize / 100).max(1);
    let rms: Vec<f64> = samples.chunks(flen).map(rms).collect();
    let peak = rms.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::NoSpeech);
    }
    let thr = peak * 10f64.powf(rel_threshold_db / 20.0);
    let first = rms.iter().position(|&r| r >= thr).unwrap_or(0);
    let last = rms.iter().rposition(|&r| r >= thr).unwrap_or(rms.len() - 1);
    let mut start = first * flen;
    let mut end = ((last + 1) * flen).min(samples.len());
    while start < end && samples[start] == 0.0 {
        start += 1;
    }
    while end > start && samples[end - 1] == 0.0 {
        end -= 1;
    }
    Ok(&samples[start..end])
}

fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct F0Config {
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub fmin: f64,
    pub fmax: f64,
    /// Minimum normalized autocorrelation at the chosen lag.
    pub voicing_threshold: f64,
    /// Frames quieter than the loudest frame by more than this are unvoiced.
    pub energy_db: f64,
}

impl Default for F0Config {
    fn default() -> Self {
        Self {
            frame_ms: 40.0,
            hop_ms: 10.0,
            fmin: 50.0,
            fmax: 500.0,
            voicing_threshold: 0.45,
            energy_db: -40.0,
        }
    }
}

/// Anything that turns samples into a per-frame F0 track (0 = unvoiced).
pub trait PitchExtractor: Send + Sync {
    fn extract(&self, samples: &[f64], sr: u32) -> Result<Vec<f64>>;
}

/// Normalized autocorrelation with parabolic peak refinement.
#[derive(Clone, Copy, Debug, Default)]
pub struct AutocorrelationPitch {
    pub config: F0Config,
}

impl PitchExtractor for AutocorrelationPitch {
    fn extract(&self, samples: &[f64], sr: u32) -> Result<Vec<f64>> {
        extract_f0_with(samples, sr, &self.config)
    }
}

pub fn extract_f0(samples: &[f64], sr: u32, frame_ms: f64, hop_ms: f64, fmin: f64, fmax: f64) -> Result<Vec<f64>> {
    let cfg = F0Config {
        frame_ms,
        hop_ms,
        fmin,
        fmax,
        ..F0Config::default()
    };
    extract_f0_with(samples, sr, &cfg)
}

pub fn extract_f0_with(samples: &[f64], sr: u32, cfg: &F0Config) -> Result<Vec<f64>> {
    if sr < 8000 {
        return Err(Error::invalid(format!("sample rate {sr} below 8000")));
    }
    let srf = f64::from(sr);
    if !(cfg.fmin > 0.0 && cfg.fmin < cfg.fmax && cfg.fmax < srf / 2.0) {
        return Err(Error::invalid(format!(
            "invalid F0 band [{}, {}] at {sr} Hz",
            cfg.fmin, cfg.fmax
        )));
    }
    let frame = (cfg.frame_ms * srf / 1000.0).round() as usize;
    let hop = (cfg.hop_ms * srf / 1000.0).round() as usize;
    if hop == 0 {
        return Err(Error::invalid("hop shorter than one sample"));
    }
    let lag_min = ((srf / cfg.fmax).floor() as usize).max(2);
    let lag_max = (srf / cfg.fmin).ceil() as usize;
    if lag_max + 2 >= frame {
        return Err(Error::invalid(format!(
            "{} ms frame too short for fmin {}",
            cfg.frame_ms, cfg.fmin
        )));
    }
    if samples.len() < frame {
        return Ok(Vec::new());
    }

    let n_frames = (samples.len() - frame) / hop + 1;
    let frames: Vec<Vec<f64>> = (0..n_frames)
        .map(|k| {
            let x = &samples[k * hop..k * hop + frame];
            let mean = x.iter().sum::<f64>() / frame as f64;
            x.iter().map(|v| v - mean).collect()
        })
        .collect();
    let loudest = frames.iter().map(|f| rms(f)).fold(0.0, f64::max);
    let gate = (loudest * 10f64.powf(cfg.energy_db / 20.0)).max(1e-6);

    let mut r = vec![0.0; lag_max + 2];
    let mut prefix = vec![0.0; frame + 1];
    let mut out = Vec::with_capacity(n_frames);
    for x in &frames {
        if rms(x) < gate {
            out.push(0.0);
            continue;
        }
        for (i, v) in x.iter().enumerate() {
            prefix[i + 1] = prefix[i] + v * v;
        }
        for lag in (lag_min - 1)..=(lag_max + 1) {
            let m = frame - lag;
            let num: f64 = x[..m].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum();
            let e0 = prefix[m];
            let e1 = prefix[frame] - prefix[lag];
            r[lag] = if e0 > 0.0 && e1 > 0.0 { num / (e0 * e1).sqrt() } else { 0.0 };
        }
        let peaks: Vec<usize> = (lag_min..=lag_max)
            .filter(|&l| r[l] > r[l - 1] && r[l] >= r[l + 1])
            .collect();
        let best = peaks.iter().map(|&l| r[l]).fold(f64::NEG_INFINITY, f64::max);
        // earliest strong peak, so period multiples do not win
        let pick = peaks.iter().copied().find(|&l| r[l] >= 0.9 * best);
        let f0 = match pick {
            Some(l) if r[l] >= cfg.voicing_threshold => {
                let (a, b, c) = (r[l - 1], r[l], r[l + 1]);
                let den = a - 2.0 * b + c;
                let shift = if den != 0.0 { 0.5 * (a - c) / den } else { 0.0 };
                let f = srf / (l as f64 + shift.clamp(-0.5, 0.5));
                if f >= cfg.fmin && f <= cfg.fmax {
                    f
                } else {
                    0.0
                }
            }
            _ => 0.0,
        };
        out.push(f0);
    }
    Ok(out)
}

/// Mean and population standard deviation of the voiced (non-zero) frames.
pub fn pitch_stats(f0: &[f64]) -> Result<(f64, f64)> {
    let voiced: Vec<f64> = f0.iter().copied().filter(|&v| v != 0.0).collect();
    if voiced.len() < 2 {
        return Err(Error::invalid(format!(
            "pitch statistics need at least 2 voiced frames, got {}",
            voiced.len()
        )));
    }
    let n = voiced.len() as f64;
    let mean = voiced.iter().sum::<f64>() / n;
    let var = voiced.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Phonemes per second.
pub fn speech_rate(phoneme_count: u32, duration_s: f64) -> Result<f64> {
    if phoneme_count == 0 {
        return Err(Error::invalid("phoneme count must be at least 1"));
    }
    if !(duration_s > 0.0) {
        return Err(Error::invalid(format!("duration must be positive, got {duration_s}")));
    }
    Ok(f64::from(phoneme_count) / duration_s)
}

/// RMS level in dB relative to full scale 1.0.
pub fn volume(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("volume of empty input"));
    }
    let r = rms(samples);
    if r == 0.0 {
        return Err(Error::NoSpeech);
    }
    Ok(20.0 * r.log10())
}

/// Crude phoneme count from text, for demos without a real G2P front end:
/// two per Han character, one per Latin letter. Approximate by design.
pub fn estimate_phonemes(transcript: &str) -> u32 {
    transcript
        .chars()
        .map(|c| match c {
            '\u{4e00}'..='\u{9fff}' => 2,
            c if c.is_ascii_alphabetic() => 1,
            _ => 0,
        })
        .sum()
}

/// What a gender classifier gets to look at.
#[derive(Clone, Copy, Debug)]
pub struct GenderInput<'a> {
    pub pitch_mean: Option<f64>,
    pub samples: &'a [f64],
    pub sample_rate: u32,
}

pub trait GenderClassifier: Send + Sync {
    /// Probability that the speaker is female.
    fn female_prob(&self, input: &GenderInput<'_>) -> Result<f64>;
}

/// Logistic in mean F0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PitchHeuristic {
    pub center_hz: f64,
    pub width_hz: f64,
}

impl Default for PitchHeuristic {
    fn default() -> Self {
        Self {
            center_hz: 165.0,
            width_hz: 20.0,
        }
    }
}

impl PitchHeuristic {
    pub fn prob(&self, pitch_mean: f64) -> f64 {
        1.0 / (1.0 + (-(pitch_mean - self.center_hz) / self.width_hz).exp())
    }
}

impl GenderClassifier for PitchHeuristic {
    fn female_prob(&self, input: &GenderInput<'_>) -> Result<f64> {
        let p = input
            .pitch_mean
            .ok_or_else(|| Error::invalid("pitch heuristic needs pitch statistics"))?;
        Ok(self.prob(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(f: f64, sr: u32, secs: f64, amp: f64, phase: f64) -> Vec<f64> {
        let n = (f64::from(sr) * secs) as usize;
        (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * f * i as f64 / f64::from(sr) + phase).sin())
            .collect()
    }

    #[test]
    fn trims_exact_zero_padding() {
        let core = sine(200.0, 16000, 0.3, 0.5, 0.7);
        let mut x = vec![0.0; 1234];
        x.extend(&core);
        x.extend(vec![0.0; 777]);
        assert_eq!(trim_silence(&x, 16000, DEFAULT_TRIM_DB).unwrap(), core.as_slice());
    }

    #[test]
    fn trim_keeps_interior_silence() {
        let mut x = sine(200.0, 16000, 0.1, 0.5, 0.7);
        x.extend(vec![0.0; 3200]);
        x.extend(sine(200.0, 16000, 0.1, 0.5, 0.7));
        assert_eq!(trim_silence(&x, 16000, DEFAULT_TRIM_DB).unwrap().len(), x.len());
        assert!(matches!(trim_silence(&[0.0; 100], 16000, -40.0), Err(Error::NoSpeech)));
    }

    #[test]
    fn sine_220() {
        let x = sine(220.0, 16000, 0.5, 0.5, 0.0);
        let f0 = extract_f0(&x, 16000, 40.0, 10.0, 50.0, 500.0).unwrap();
        let (mean, _) = pitch_stats(&f0).unwrap();
        assert!((mean - 220.0).abs() < 3.0, "{mean}");
        assert!(f0.iter().all(|&f| f > 0.0));
    }

    #[test]
    fn out_of_band_sine_unvoiced() {
        let x = sine(100.0, 16000, 0.5, 0.5, 0.0);
        let f0 = extract_f0(&x, 16000, 40.0, 10.0, 150.0, 500.0).unwrap();
        assert!(!f0.is_empty());
        assert!(f0.iter().all(|&f| f == 0.0), "{f0:?}");
    }

    #[test]
    fn band_validation() {
        let x = sine(220.0, 16000, 0.2, 0.5, 0.0);
        assert!(extract_f0(&x, 16000, 40.0, 10.0, 300.0, 200.0).is_err());
        assert!(extract_f0(&x, 16000, 40.0, 10.0, 50.0, 9000.0).is_err());
        assert!(extract_f0(&x, 4000, 40.0, 10.0, 50.0, 500.0).is_err());
    }

    #[test]
    fn pitch_stats_examples() {
        assert_eq!(pitch_stats(&[0.0, 200.0, 0.0, 200.0]).unwrap(), (200.0, 0.0));
        assert_eq!(pitch_stats(&[100.0, 300.0]).unwrap(), (200.0, 100.0));
        assert!(pitch_stats(&[0.0, 120.0, 0.0]).is_err());
    }

    #[test]
    fn rate_and_volume() {
        assert_eq!(speech_rate(30, 2.0).unwrap(), 15.0);
        assert!(speech_rate(30, 0.0).is_err());
        assert!(speech_rate(0, 1.0).is_err());
        assert_eq!(volume(&[1.0; 10]).unwrap(), 0.0);
        assert!((volume(&[0.5, -0.5, 0.5]).unwrap() + 6.0206).abs() < 1e-4);
        assert!(volume(&[0.0; 4]).is_err());
    }

    #[test]
    fn heuristic_center() {
        let h = PitchHeuristic::default();
        assert_eq!(h.prob(165.0), 0.5);
        assert!(h.prob(250.0) > 0.95);
        let input = GenderInput {
            pitch_mean: None,
            samples: &[],
            sample_rate: 16000,
        };
        assert!(h.female_prob(&input).is_err());
    }

    #[test]
    fn phoneme_estimate() {
        assert_eq!(estimate_phonemes("ab c"), 3);
        assert_eq!(estimate_phonemes("你好"), 4);
    }
}
