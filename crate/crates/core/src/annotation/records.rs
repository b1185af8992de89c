//! Utterance records: manifest and CSV I/O, WAV loading and attribute
//! computation.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dsp::{
    estimate_phonemes, pitch_stats, speech_rate, trim_silence, volume, AutocorrelationPitch, GenderClassifier,
    GenderInput, PitchExtractor, PitchHeuristic, DEFAULT_TRIM_DB,
};
use crate::error::{Error, Result};
use crate::labels::{Attribute, Gender, Language, Level};
use crate::numerics::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Audio {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Audio {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeValues {
    /// Phonemes per second.
    pub speech_rate: f64,
    /// dBFS.
    pub volume: f64,
    pub pitch_mean: f64,
    pub pitch_std: f64,
    pub gender_prob: f64,
}

impl AttributeValues {
    /// Value graded for `attr`; gender and language have none.
    pub fn get(&self, attr: Attribute) -> Result<f64> {
        match attr {
            Attribute::Speed => Ok(self.speech_rate),
            Attribute::Volume => Ok(self.volume),
            Attribute::Pitch => Ok(self.pitch_mean),
            Attribute::Fluctuation => Ok(self.pitch_std),
            other => Err(Error::invalid(format!("{other} has no graded value"))),
        }
    }

    /// Most probable gender; exactly 0.5 reads as male.
    pub fn gender(&self) -> Gender {
        if self.gender_prob > 0.5 {
            Gender::Female
        } else {
            Gender::Male
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_path: Option<PathBuf>,
    #[serde(default)]
    pub transcript: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phoneme_count: Option<u32>,
    pub language: Language,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender_truth: Option<Gender>,
    #[serde(skip)]
    pub audio: Option<Audio>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub computed: Option<AttributeValues>,
}

impl UtteranceRecord {
    /// Record with values already known, e.g. from a computed-values CSV.
    pub fn with_values(id: impl Into<String>, language: Language, values: AttributeValues) -> Self {
        Self {
            id: id.into(),
            audio_path: None,
            transcript: String::new(),
            phoneme_count: None,
            language,
            gender_truth: None,
            audio: None,
            computed: Some(values),
        }
    }

    pub fn values(&self) -> Result<&AttributeValues> {
        self.computed
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("record {} has no computed values", self.id)))
    }

    pub fn value(&self, attr: Attribute) -> Result<f64> {
        self.values()?.get(attr)
    }

    /// Grouping key for threshold statistics: language for speed, gender for
    /// pitch and fluctuation, a single global group for volume.
    pub fn group(&self, attr: Attribute) -> Result<String> {
        match attr {
            Attribute::Speed => Ok(self.language.as_str().to_string()),
            Attribute::Pitch | Attribute::Fluctuation => Ok(self.values()?.gender().as_str().to_string()),
            Attribute::Volume => Ok(GLOBAL_GROUP.to_string()),
            other => Err(Error::invalid(format!("{other} is not graded by threshold"))),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::invalid("record with empty id"));
        }
        if self.phoneme_count == Some(0) {
            return Err(Error::invalid(format!("record {}: phoneme_count must be >= 1", self.id)));
        }
        if let Some(a) = &self.audio {
            if a.sample_rate == 0 {
                return Err(Error::invalid(format!("record {}: sample rate must be positive", self.id)));
            }
        }
        Ok(())
    }
}

pub const GLOBAL_GROUP: &str = "global";

/// Read a JSON-lines manifest; relative audio paths resolve against the
/// manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<UtteranceRecord>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: UtteranceRecord = serde_json::from_str(&line)
            .map_err(|e| Error::invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if let Some(p) = &rec.audio_path {
            if p.is_relative() {
                rec.audio_path = Some(base.join(p));
            }
        }
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, records: &[UtteranceRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Mono samples scaled to [-1, 1]; multi-channel input is averaged.
pub fn read_wav(path: &Path) -> Result<Audio> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let raw: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let ch = usize::from(spec.channels.max(1));
    let samples = raw.chunks(ch).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    Ok(Audio {
        samples,
        sample_rate: spec.sample_rate,
    })
}

/// 16-bit mono PCM.
pub fn write_wav(path: &Path, audio: &Audio) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in &audio.samples {
        w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    w.finalize()?;
    Ok(())
}

pub struct ComputeOptions {
    pub trim_db: f64,
    pub pitch: Box<dyn PitchExtractor>,
    pub gender: Box<dyn GenderClassifier>,
    /// Fall back to [`estimate_phonemes`] when the manifest has no count.
    pub estimate_phonemes: bool,
}

impl Default for ComputeOptions {
    fn default() -> Self {
        Self {
            trim_db: DEFAULT_TRIM_DB,
            pitch: Box::new(AutocorrelationPitch::default()),
            gender: Box::new(PitchHeuristic::default()),
            estimate_phonemes: false,
        }
    }
}

pub fn compute_values(record: &UtteranceRecord, opts: &ComputeOptions) -> Result<AttributeValues> {
    record.validate()?;
    let loaded;
    let audio = match (&record.audio, &record.audio_path) {
        (Some(a), _) => a,
        (None, Some(p)) => {
            loaded = read_wav(p)?;
            &loaded
        }
        (None, None) => return Err(Error::invalid(format!("record {} has no audio", record.id))),
    };
    let trimmed = trim_silence(&audio.samples, audio.sample_rate, opts.trim_db)?;
    let f0 = opts.pitch.extract(trimmed, audio.sample_rate)?;
    let (pitch_mean, pitch_std) =
        pitch_stats(&f0).map_err(|e| Error::invalid(format!("record {}: {e}", record.id)))?;
    let count = match record.phoneme_count {
        Some(c) => c,
        None if opts.estimate_phonemes => estimate_phonemes(&record.transcript),
        None => return Err(Error::invalid(format!("record {} has no phoneme_count", record.id))),
    };
    let duration = trimmed.len() as f64 / f64::from(audio.sample_rate);
    let gender_prob = opts.gender.female_prob(&GenderInput {
        pitch_mean: Some(pitch_mean),
        samples: trimmed,
        sample_rate: audio.sample_rate,
    })?;
    Ok(AttributeValues {
        speech_rate: speech_rate(count, duration)?,
        volume: volume(trimmed)?,
        pitch_mean,
        pitch_std,
        gender_prob,
    })
}

/// Compute every record's values across worker threads; the first failure
/// (in record order) is returned.
pub fn compute_all(records: &mut [UtteranceRecord], opts: &ComputeOptions) -> Result<()> {
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let chunk = records.len().div_ceil(workers).max(1);
    let results: Vec<Result<()>> = std::thread::scope(|s| {
        let handles: Vec<_> = records
            .chunks_mut(chunk)
            .map(|part| {
                s.spawn(move || {
                    for r in part.iter_mut() {
                        r.computed = Some(compute_values(r, opts)?);
                    }
                    Ok(())
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::invalid("worker panicked"))))
            .collect()
    });
    results.into_iter().collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct ValuesRow {
    id: String,
    language: Language,
    audio_path: Option<String>,
    speech_rate: f64,
    volume: f64,
    pitch_mean: f64,
    pitch_std: f64,
    gender_prob: f64,
}

pub fn write_values_csv(path: &Path, records: &[UtteranceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        let v = r.values()?;
        w.serialize(ValuesRow {
            id: r.id.clone(),
            language: r.language,
            audio_path: r.audio_path.as_ref().map(|p| p.display().to_string()),
            speech_rate: v.speech_rate,
            volume: v.volume,
            pitch_mean: v.pitch_mean,
            pitch_std: v.pitch_std,
            gender_prob: v.gender_prob,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_values_csv(path: &Path) -> Result<Vec<UtteranceRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: ValuesRow = row?;
        let mut rec = UtteranceRecord::with_values(
            row.id,
            row.language,
            AttributeValues {
                speech_rate: row.speech_rate,
                volume: row.volume,
                pitch_mean: row.pitch_mean,
                pitch_std: row.pitch_std,
                gender_prob: row.gender_prob,
            },
        );
        rec.audio_path = row.audio_path.filter(|p| !p.is_empty()).map(PathBuf::from);
        out.push(rec);
    }
    Ok(out)
}

/// Settings for one synthetic demo utterance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoiceSpec {
    pub f0: f64,
    /// Peak F0 excursion of the slow vibrato, in Hz.
    pub f0_swing: f64,
    pub amplitude: f64,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub pad_s: f64,
}

/// Harmonic voice-like tone with a slow F0 wobble and silent padding.
pub fn synth_voice(spec: &VoiceSpec, rng: &mut Rng) -> Audio {
    let sr = f64::from(spec.sample_rate);
    let n = (spec.duration_s * sr) as usize;
    let pad = (spec.pad_s * sr) as usize;
    let wobble_hz = 3.0 + rng.uniform() * 2.0;
    let mut phase = rng.uniform() * std::f64::consts::TAU;
    let mut samples = vec![0.0; pad];
    let norm = 1.0 + 0.5 + 0.25;
    for i in 0..n {
        let t = i as f64 / sr;
        let f = spec.f0 + spec.f0_swing * (std::f64::consts::TAU * wobble_hz * t).sin();
        phase += std::f64::consts::TAU * f / sr;
        let env = (t / 0.02).min(1.0) * ((spec.duration_s - t) / 0.02).min(1.0);
        let v = phase.sin() + 0.5 * (2.0 * phase).sin() + 0.25 * (3.0 * phase).sin();
        samples.push(spec.amplitude * env * v / norm);
    }
    samples.extend(std::iter::repeat_n(0.0, pad));
    Audio {
        samples,
        sample_rate: spec.sample_rate,
    }
}

/// Small WAV corpus with known generating parameters, written under `dir`
/// alongside `manifest.jsonl`.
pub fn write_demo_audio(dir: &Path, n: usize, seed: u64) -> Result<Vec<UtteranceRecord>> {
    std::fs::create_dir_all(dir)?;
    let mut rng = Rng::stream(seed, "demo-audio");
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let gender = Gender::ALL[i % 2];
        let language = Language::ALL[(i / 2) % 2];
        let base = match gender {
            Gender::Male => 120.0 + 15.0 * rng.normal(),
            Gender::Female => 210.0 + 20.0 * rng.normal(),
        };
        let rate = match language {
            Language::Zh => 14.6 + 4.9 * rng.normal(),
            Language::En => 18.2 + 7.7 * rng.normal(),
        }
        .max(4.0);
        let phonemes = 20 + rng.below(30) as u32;
        let spec = VoiceSpec {
            f0: base.clamp(70.0, 400.0),
            f0_swing: 4.0 + 20.0 * rng.uniform(),
            amplitude: 10f64.powf((-16.0 + 5.0 * rng.normal()) / 20.0).min(0.9),
            duration_s: f64::from(phonemes) / rate,
            sample_rate: 16000,
            pad_s: 0.1,
        };
        let audio = synth_voice(&spec, &mut rng);
        let file = format!("utt{i:04}.wav");
        write_wav(&dir.join(&file), &audio)?;
        out.push(UtteranceRecord {
            id: format!("utt{i:04}"),
            audio_path: Some(PathBuf::from(file)),
            transcript: String::new(),
            phoneme_count: Some(phonemes),
            language,
            gender_truth: Some(gender),
            audio: None,
            computed: None,
        });
    }
    write_manifest(&dir.join("manifest.jsonl"), &out)?;
    Ok(out)
}

/// Records with attribute values drawn from per-group normal distributions,
/// for exercising the threshold loop without audio. Speakers alternate
/// gender; languages alternate in pairs.
pub fn synthetic_values(n: usize, seed: u64) -> Vec<UtteranceRecord> {
    let mut rng = Rng::stream(seed, "synthetic-values");
    let heuristic = PitchHeuristic::default();
    (0..n)
        .map(|i| {
            let gender = Gender::ALL[i % 2];
            let language = Language::ALL[(i / 2) % 2];
            let speech_rate = match language {
                Language::Zh => 14.63 + 4.94 * rng.normal(),
                Language::En => 18.25 + 7.70 * rng.normal(),
            }
            .max(1.0);
            let (pitch_mean, pitch_std) = match gender {
                Gender::Male => (125.0 + 14.0 * rng.normal(), 18.0 + 5.0 * rng.normal()),
                Gender::Female => (210.0 + 22.0 * rng.normal(), 28.0 + 7.0 * rng.normal()),
            };
            let values = AttributeValues {
                speech_rate,
                volume: -20.0 + 4.0 * rng.normal(),
                pitch_mean,
                pitch_std: pitch_std.max(1.0),
                gender_prob: heuristic.prob(pitch_mean),
            };
            let mut r = UtteranceRecord::with_values(format!("v{i:05}"), language, values);
            r.gender_truth = Some(gender);
            r
        })
        .collect()
}

/// Wire name of a level: speed uses slow/fast, everything else low/high.
pub fn level_wire_name(attr: Attribute, level: Level) -> &'static str {
    match (attr, level) {
        (Attribute::Speed, Level::Low) => "slow",
        (Attribute::Speed, Level::High) => "fast",
        (_, l) => l.as_str(),
    }
}

/// Parse a vote level for `attr`. Speed accepts slow/fast as well as
/// low/high; attributes without three levels accept nothing.
pub fn parse_vote_level(attr: Attribute, s: &str) -> Result<Level> {
    let bad = || Error::invalid(format!("level {s:?} is not valid for {attr}"));
    if !Attribute::GRADED.contains(&attr) {
        return Err(bad());
    }
    match (attr, s.to_ascii_lowercase().as_str()) {
        (Attribute::Speed, "slow") => Ok(Level::Low),
        (Attribute::Speed, "fast") => Ok(Level::High),
        (_, other) => other.parse().map_err(|_| bad()),
    }
}
