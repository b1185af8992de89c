//! Deterministic text-prompt featurizer.
//!
//! Prompts are rendered from a template bank with one slot per attribute and
//! parsed back by canonical keywords. The embedding is a fixed orthonormal
//! projection of the concatenated one-hot label blocks, normalized to unit
//! length, so distinct label tuples always get distinct embeddings.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{Attribute, AttributeLabels, Gender, Language, Level};
use crate::numerics::rng::Rng;

const DEFAULT_KEYWORDS: &str = include_str!("../assets/keywords.json");
const DEFAULT_TEMPLATES: &str = include_str!("../assets/templates.json");

/// Total one-hot width: gender 2 + four graded attributes × 3 + language 2.
pub const ONE_HOT_DIM: usize = 16;

/// attribute → level name → keywords, for one prompt language.
pub type KeywordSection = BTreeMap<Attribute, BTreeMap<String, Vec<String>>>;

/// Canonical keywords per prompt language. The first keyword of each level
/// is the one templates insert.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeywordTable {
    #[serde(flatten)]
    pub sections: BTreeMap<String, KeywordSection>,
}

impl Default for KeywordTable {
    fn default() -> Self {
        Self::from_json(DEFAULT_KEYWORDS).expect("bundled keyword table is valid")
    }
}

impl KeywordTable {
    pub fn from_json(json: &str) -> Result<Self> {
        let table: KeywordTable = serde_json::from_str(json)?;
        table.validate()?;
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        if self.sections.is_empty() {
            return Err(Error::config("keyword table has no languages"));
        }
        for (lang, section) in &self.sections {
            for attr in Attribute::ALL {
                let levels = section
                    .get(&attr)
                    .ok_or_else(|| Error::config(format!("keywords[{lang}] missing {attr}")))?;
                for level in attr.level_names() {
                    let kws = levels.get(*level).map(Vec::as_slice).unwrap_or(&[]);
                    if kws.is_empty() || kws.iter().any(|k| k.trim().is_empty()) {
                        return Err(Error::config(format!("keywords[{lang}][{attr}][{level}] empty")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn canonical(&self, lang: &str, attr: Attribute, level: &str) -> Result<&str> {
        self.sections
            .get(lang)
            .and_then(|s| s.get(&attr))
            .and_then(|l| l.get(level))
            .and_then(|k| k.first())
            .map(String::as_str)
            .ok_or_else(|| Error::config(format!("no keyword for {lang}/{attr}/{level}")))
    }

    /// Recover labels from a sentence. Every attribute needs keywords from
    /// exactly one level.
    pub fn parse(&self, text: &str) -> Result<AttributeLabels> {
        let lowered = text.to_lowercase();
        let mut found: BTreeMap<Attribute, Vec<String>> = BTreeMap::new();
        for section in self.sections.values() {
            for (attr, levels) in section {
                for (level, keywords) in levels {
                    if keywords.iter().any(|k| contains_keyword(&lowered, &k.to_lowercase())) {
                        let hits = found.entry(*attr).or_default();
                        if !hits.contains(level) {
                            hits.push(level.clone());
                        }
                    }
                }
            }
        }
        let mut pick = |attr: Attribute| -> Result<String> {
            match found.remove(&attr) {
                None => Err(Error::MissingAttribute(attr)),
                Some(levels) if levels.len() > 1 => Err(Error::ConflictingAttribute { attribute: attr, levels }),
                Some(mut levels) => Ok(levels.remove(0)),
            }
        };
        Ok(AttributeLabels {
            gender: pick(Attribute::Gender)?.parse::<Gender>()?,
            speed: pick(Attribute::Speed)?.parse::<Level>()?,
            volume: pick(Attribute::Volume)?.parse::<Level>()?,
            pitch: pick(Attribute::Pitch)?.parse::<Level>()?,
            fluctuation: pick(Attribute::Fluctuation)?.parse::<Level>()?,
            language: pick(Attribute::Language)?.parse::<Language>()?,
        })
    }
}

/// Substring match; ASCII keyword edges must sit on a word boundary.
fn contains_keyword(text: &str, keyword: &str) -> bool {
    let first_ascii = keyword.chars().next().is_some_and(|c| c.is_ascii_alphanumeric());
    let last_ascii = keyword.chars().last().is_some_and(|c| c.is_ascii_alphanumeric());
    let mut from = 0;
    while let Some(pos) = text[from..].find(keyword) {
        let start = from + pos;
        let end = start + keyword.len();
        let before_ok = !first_ascii || text[..start].chars().last().is_none_or(|c| !c.is_alphanumeric());
        let after_ok = !last_ascii || text[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            return true;
        }
        from = start + keyword.chars().next().map_or(1, char::len_utf8);
    }
    false
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Template {
    /// Keyword section used to fill the slots.
    pub lang: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateBank {
    pub templates: Vec<Template>,
}

impl Default for TemplateBank {
    fn default() -> Self {
        Self::from_json(DEFAULT_TEMPLATES).expect("bundled template bank is valid")
    }
}

impl TemplateBank {
    pub fn from_json(json: &str) -> Result<Self> {
        let bank: TemplateBank = serde_json::from_str(json)?;
        bank.validate()?;
        Ok(bank)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.templates.is_empty() {
            return Err(Error::config("template bank is empty"));
        }
        for (i, t) in self.templates.iter().enumerate() {
            for attr in Attribute::ALL {
                let slot = format!("{{{attr}}}");
                match t.text.matches(&slot).count() {
                    1 => {}
                    0 => return Err(Error::config(format!("template {i} is missing slot {slot}"))),
                    _ => return Err(Error::config(format!("template {i} repeats slot {slot}"))),
                }
            }
        }
        Ok(())
    }
}

/// Fill a seeded choice of template with the canonical keyword per attribute.
pub fn render_prompt(labels: &AttributeLabels, bank: &TemplateBank, keywords: &KeywordTable, seed: u64) -> Result<String> {
    bank.validate()?;
    let mut rng = Rng::stream(seed, "prompt-template");
    let template = &bank.templates[rng.below(bank.templates.len())];
    let mut text = template.text.clone();
    for attr in Attribute::ALL {
        let word = keywords.canonical(&template.lang, attr, labels.level_name(attr))?;
        text = text.replace(&format!("{{{attr}}}"), word);
    }
    Ok(text)
}

/// Parse with the bundled keyword table.
pub fn parse_prompt(text: &str) -> Result<AttributeLabels> {
    KeywordTable::default().parse(text)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptEncoderConfig {
    pub d_text: usize,
    pub seed: u64,
}

impl Default for PromptEncoderConfig {
    fn default() -> Self {
        Self {
            d_text: 64,
            seed: 0x5354_594c_4531, // "STYLE1"
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptEmbedding {
    pub vector: Vec<f64>,
    pub source_labels: AttributeLabels,
}

/// Fixed projection from one-hot label blocks to the text-embedding space.
#[derive(Clone, Debug)]
pub struct PromptEncoder {
    config: PromptEncoderConfig,
    /// Row-major `[d_text, ONE_HOT_DIM]` with orthonormal columns.
    projection: Vec<f64>,
}

impl PromptEncoder {
    pub fn new(config: PromptEncoderConfig) -> Result<Self> {
        if config.d_text < ONE_HOT_DIM {
            return Err(Error::config(format!(
                "d_text {} must be at least {ONE_HOT_DIM}",
                config.d_text
            )));
        }
        let mut rng = Rng::stream(config.seed, "prompt-projection");
        let columns = orthonormal_columns(config.d_text, ONE_HOT_DIM, &mut rng);
        let mut projection = vec![0.0; config.d_text * ONE_HOT_DIM];
        for (j, col) in columns.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                projection[i * ONE_HOT_DIM + j] = *v;
            }
        }
        Ok(Self { config, projection })
    }

    pub fn config(&self) -> PromptEncoderConfig {
        self.config
    }

    pub fn dim(&self) -> usize {
        self.config.d_text
    }

    pub fn encode(&self, labels: &AttributeLabels) -> PromptEmbedding {
        let hot = one_hot(labels);
        let mut v: Vec<f64> = self
            .projection
            .chunks(ONE_HOT_DIM)
            .map(|row| row.iter().zip(&hot).map(|(a, b)| a * b).sum())
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= norm;
        }
        PromptEmbedding {
            vector: v,
            source_labels: *labels,
        }
    }

    pub fn encode_text(&self, text: &str, keywords: &KeywordTable) -> Result<PromptEmbedding> {
        Ok(self.encode(&keywords.parse(text)?))
    }
}

/// Concatenated one-hot blocks in [`Attribute::ALL`] order.
pub fn one_hot(labels: &AttributeLabels) -> [f64; ONE_HOT_DIM] {
    let mut out = [0.0; ONE_HOT_DIM];
    let mut offset = 0;
    for attr in Attribute::ALL {
        out[offset + labels.level_index(attr)] = 1.0;
        offset += attr.n_levels();
    }
    out
}

/// `k` orthonormal vectors of length `n` by Gram-Schmidt on Gaussian draws.
pub(crate) fn orthonormal_columns(n: usize, k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v = rng.normal_vec(n);
        // two passes keep the basis orthogonal to machine precision
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= d * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> AttributeLabels {
        AttributeLabels {
            gender: Gender::Female,
            speed: Level::High,
            volume: Level::Medium,
            pitch: Level::Low,
            fluctuation: Level::Low,
            language: Language::Zh,
        }
    }

    #[test]
    fn rendered_sentence_has_each_keyword() {
        let kw = KeywordTable::default();
        let bank = TemplateBank::default();
        let text = render_prompt(&example(), &bank, &kw, 0).unwrap();
        let tpl_lang = if text.is_ascii() { "en" } else { "zh" };
        for attr in Attribute::ALL {
            let word = kw.canonical(tpl_lang, attr, example().level_name(attr)).unwrap();
            assert!(text.contains(word), "{text} lacks {word}");
        }
    }

    #[test]
    fn render_parse_round_trip_over_label_space() {
        let kw = KeywordTable::default();
        let bank = TemplateBank::default();
        for (i, labels) in AttributeLabels::all().iter().enumerate() {
            for seed in [i as u64, 1000 + i as u64] {
                let text = render_prompt(labels, &bank, &kw, seed).unwrap();
                assert_eq!(kw.parse(&text).unwrap(), *labels, "{text}");
            }
        }
    }

    #[test]
    fn every_template_round_trips() {
        let kw = KeywordTable::default();
        for t in TemplateBank::default().templates {
            let bank = TemplateBank { templates: vec![t] };
            for labels in AttributeLabels::all() {
                let text = render_prompt(&labels, &bank, &kw, 3).unwrap();
                assert_eq!(kw.parse(&text).unwrap(), labels, "{text}");
            }
        }
    }

    #[test]
    fn conflicting_speed_keywords() {
        let err = parse_prompt("A female speaker talks fast and slow, softly, low-pitched, flat intonation, English.")
            .unwrap_err();
        assert!(matches!(err, Error::ConflictingAttribute { attribute: Attribute::Speed, .. }), "{err}");
    }

    #[test]
    fn missing_volume_keyword() {
        let err = parse_prompt("A male speaker talks quickly in English, with a deep voice and flat intonation.")
            .unwrap_err();
        assert!(matches!(err, Error::MissingAttribute(Attribute::Volume)), "{err}");
    }

    #[test]
    fn word_boundaries_respected() {
        // "woman" must not also count as "man", "slowly" not as "slow" + "low".
        let labels = parse_prompt("A woman speaks slowly and loudly in English, high-pitched, very lively.").unwrap();
        assert_eq!(labels.gender, Gender::Female);
        assert_eq!(labels.speed, Level::Low);
    }

    #[test]
    fn template_missing_slot_is_error() {
        let bank = TemplateBank {
            templates: vec![Template {
                lang: "en".into(),
                text: "A {gender} voice, {speed}, {volume}, {pitch}, {language}.".into(),
            }],
        };
        assert!(render_prompt(&example(), &bank, &KeywordTable::default(), 0).is_err());
    }

    #[test]
    fn encoding_is_unit_norm_and_deterministic() {
        let enc = PromptEncoder::new(PromptEncoderConfig::default()).unwrap();
        let a = enc.encode(&example());
        let b = enc.encode(&example());
        assert_eq!(a, b);
        let n: f64 = a.vector.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
        assert_eq!(a.vector.len(), 64);
    }

    #[test]
    fn small_text_dim_rejected() {
        assert!(PromptEncoder::new(PromptEncoderConfig { d_text: 8, seed: 1 }).is_err());
    }
}
