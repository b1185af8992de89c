//! Categorical style labels shared by the corpus, prompt and annotation code.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Low,
    Medium,
    High,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Zh,
    En,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Gender,
    Speed,
    Volume,
    Pitch,
    Fluctuation,
    Language,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Male, Gender::Female];

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Low, Level::Medium, Level::High];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Low => "low",
            Level::Medium => "medium",
            Level::High => "high",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl Language {
    pub const ALL: [Language; 2] = [Language::Zh, Language::En];

    pub fn as_str(self) -> &'static str {
        match self {
            Language::Zh => "zh",
            Language::En => "en",
        }
    }
}

impl Attribute {
    pub const ALL: [Attribute; 6] = [
        Attribute::Gender,
        Attribute::Speed,
        Attribute::Volume,
        Attribute::Pitch,
        Attribute::Fluctuation,
        Attribute::Language,
    ];

    /// The five attributes reported in accuracy tables.
    pub const REPORTED: [Attribute; 5] = [
        Attribute::Gender,
        Attribute::Speed,
        Attribute::Volume,
        Attribute::Pitch,
        Attribute::Fluctuation,
    ];

    /// Attributes graded on a three-level scale.
    pub const GRADED: [Attribute; 4] = [
        Attribute::Speed,
        Attribute::Volume,
        Attribute::Pitch,
        Attribute::Fluctuation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Attribute::Gender => "gender",
            Attribute::Speed => "speed",
            Attribute::Volume => "volume",
            Attribute::Pitch => "pitch",
            Attribute::Fluctuation => "fluctuation",
            Attribute::Language => "language",
        }
    }

    /// Level names in index order.
    pub fn level_names(self) -> &'static [&'static str] {
        match self {
            Attribute::Gender => &["male", "female"],
            Attribute::Language => &["zh", "en"],
            _ => &["low", "medium", "high"],
        }
    }

    pub fn n_levels(self) -> usize {
        self.level_names().len()
    }
}

macro_rules! display_and_parse {
    ($ty:ty, $what:literal, $($name:literal => $variant:expr),+) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.to_ascii_lowercase().as_str() {
                    $($name => Ok($variant),)+
                    other => Err(Error::invalid(format!("unknown {} {other:?}", $what))),
                }
            }
        }
    };
}

display_and_parse!(Gender, "gender", "male" => Gender::Male, "female" => Gender::Female);
display_and_parse!(Level, "level", "low" => Level::Low, "medium" => Level::Medium, "high" => Level::High);
display_and_parse!(Language, "language", "zh" => Language::Zh, "en" => Language::En);
display_and_parse!(Attribute, "attribute",
    "gender" => Attribute::Gender,
    "speed" => Attribute::Speed,
    "volume" => Attribute::Volume,
    "pitch" => Attribute::Pitch,
    "fluctuation" => Attribute::Fluctuation,
    "language" => Attribute::Language);

/// Full categorical style description of one utterance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttributeLabels {
    pub gender: Gender,
    pub speed: Level,
    pub volume: Level,
    pub pitch: Level,
    pub fluctuation: Level,
    pub language: Language,
}

impl AttributeLabels {
    /// Index of this tuple's level for `attr`, in [`Attribute::level_names`] order.
    pub fn level_index(&self, attr: Attribute) -> usize {
        match attr {
            Attribute::Gender => self.gender as usize,
            Attribute::Speed => self.speed.index(),
            Attribute::Volume => self.volume.index(),
            Attribute::Pitch => self.pitch.index(),
            Attribute::Fluctuation => self.fluctuation.index(),
            Attribute::Language => self.language as usize,
        }
    }

    pub fn level_name(&self, attr: Attribute) -> &'static str {
        attr.level_names()[self.level_index(attr)]
    }

    /// Every label tuple, in a fixed order (2 · 3⁴ · 2 = 324 tuples).
    pub fn all() -> Vec<AttributeLabels> {
        let mut out = Vec::with_capacity(324);
        for gender in Gender::ALL {
            for language in Language::ALL {
                for graded in graded_combinations() {
                    out.push(AttributeLabels::from_graded(gender, language, graded));
                }
            }
        }
        out
    }

    pub fn from_graded(gender: Gender, language: Language, graded: [Level; 4]) -> Self {
        let [speed, volume, pitch, fluctuation] = graded;
        Self {
            gender,
            speed,
            volume,
            pitch,
            fluctuation,
            language,
        }
    }

    pub fn graded(&self) -> [Level; 4] {
        [self.speed, self.volume, self.pitch, self.fluctuation]
    }
}

/// All 81 combinations of the four graded attributes, speed-major.
pub fn graded_combinations() -> Vec<[Level; 4]> {
    let mut out = Vec::with_capacity(81);
    for a in Level::ALL {
        for b in Level::ALL {
            for c in Level::ALL {
                for d in Level::ALL {
                    out.push([a, b, c, d]);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_space_size_and_uniqueness() {
        let all = AttributeLabels::all();
        assert_eq!(all.len(), 324);
        let set: std::collections::HashSet<_> = all.iter().collect();
        assert_eq!(set.len(), 324);
    }

    #[test]
    fn parse_names() {
        assert_eq!("Female".parse::<Gender>().unwrap(), Gender::Female);
        assert_eq!("fluctuation".parse::<Attribute>().unwrap(), Attribute::Fluctuation);
        assert!("loud".parse::<Level>().is_err());
    }

    #[test]
    fn serde_lowercase() {
        let json = serde_json::to_string(&Level::Medium).unwrap();
        assert_eq!(json, "\"medium\"");
    }
}
