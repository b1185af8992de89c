//! Per-group statistics, μ ± σ boundaries and three-level classification.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::records::UtteranceRecord;
use crate::error::{Error, Result};
use crate::labels::{Attribute, Level};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub attribute: Attribute,
    pub group: String,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n: usize,
}

impl GroupStats {
    pub fn from_values(attribute: Attribute, group: impl Into<String>, values: &[f64]) -> Result<Self> {
        let group = group.into();
        if values.len() < 2 {
            return Err(Error::invalid(format!(
                "group {group:?} of {attribute} has {} values, need at least 2",
                values.len()
            )));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(Self {
            attribute,
            group,
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }
}

/// Statistics for each group of `attr`, in group-name order.
pub fn compute_group_stats(records: &[UtteranceRecord], attr: Attribute) -> Result<Vec<GroupStats>> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        groups.entry(r.group(attr)?).or_default().push(r.value(attr)?);
    }
    groups
        .into_iter()
        .map(|(g, v)| GroupStats::from_values(attr, g, &v))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Low,
    High,
}

impl Side {
    /// The level just below and just above this boundary.
    pub fn levels(self) -> (Level, Level) {
        match self {
            Side::Low => (Level::Low, Level::Medium),
            Side::High => (Level::Medium, Level::High),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub attribute: Attribute,
    pub group: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub low: f64,
    pub high: f64,
}

impl ThresholdEntry {
    pub fn boundary(&self, side: Side) -> f64 {
        match side {
            Side::Low => self.low,
            Side::High => self.high,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub round: usize,
    pub attribute: Attribute,
    pub group: String,
    pub boundary: Side,
    pub old: f64,
    pub new: f64,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub entries: Vec<ThresholdEntry>,
    #[serde(default)]
    pub history: Vec<HistoryEntry>,
}

/// `low = μ − σ`, `high = μ + σ` for every group.
pub fn init_thresholds(stats: &[GroupStats]) -> Result<ThresholdTable> {
    let mut entries = Vec::with_capacity(stats.len());
    for s in stats {
        if !(s.std > 0.0) {
            return Err(Error::invalid(format!(
                "group {:?} of {} has zero spread; boundaries would coincide",
                s.group, s.attribute
            )));
        }
        if entries.iter().any(|e: &ThresholdEntry| e.attribute == s.attribute && e.group == s.group) {
            return Err(Error::invalid(format!("duplicate group {:?} for {}", s.group, s.attribute)));
        }
        entries.push(ThresholdEntry {
            attribute: s.attribute,
            group: s.group.clone(),
            mean: s.mean,
            std: s.std,
            n: s.n,
            low: s.mean - s.std,
            high: s.mean + s.std,
        });
    }
    entries.sort_by(|a, b| (a.attribute, &a.group).cmp(&(b.attribute, &b.group)));
    Ok(ThresholdTable {
        entries,
        history: Vec::new(),
    })
}

impl ThresholdTable {
    /// Stats and boundaries for every attribute in `attrs`.
    pub fn from_records(records: &[UtteranceRecord], attrs: &[Attribute]) -> Result<Self> {
        let mut stats = Vec::new();
        for &a in attrs {
            stats.extend(compute_group_stats(records, a)?);
        }
        init_thresholds(&stats)
    }

    pub fn entry(&self, attr: Attribute, group: &str) -> Result<&ThresholdEntry> {
        self.entries
            .iter()
            .find(|e| e.attribute == attr && e.group == group)
            .ok_or_else(|| Error::UnknownGroup {
                attribute: attr,
                group: group.to_string(),
            })
    }

    pub fn entry_mut(&mut self, attr: Attribute, group: &str) -> Result<&mut ThresholdEntry> {
        self.entries
            .iter_mut()
            .find(|e| e.attribute == attr && e.group == group)
            .ok_or_else(|| Error::UnknownGroup {
                attribute: attr,
                group: group.to_string(),
            })
    }

    pub fn attributes(&self) -> Vec<Attribute> {
        let mut a: Vec<Attribute> = self.entries.iter().map(|e| e.attribute).collect();
        a.dedup();
        a
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            if !(e.low < e.high) {
                return Err(Error::invalid(format!(
                    "{} group {:?}: low {} not below high {}",
                    e.attribute, e.group, e.low, e.high
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let t: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        t.validate()?;
        Ok(t)
    }
}

/// Boundaries classify as medium.
pub fn classify(value: f64, attr: Attribute, group: &str, table: &ThresholdTable) -> Result<Level> {
    let e = table.entry(attr, group)?;
    Ok(level_for(value, e.low, e.high))
}

pub(crate) fn level_for(value: f64, low: f64, high: f64) -> Level {
    if value < low {
        Level::Low
    } else if value > high {
        Level::High
    } else {
        Level::Medium
    }
}

/// Per-record labels for every attribute in the table.
pub fn classify_records(records: &[UtteranceRecord], table: &ThresholdTable) -> Result<Vec<BTreeMap<Attribute, Level>>> {
    let attrs = table.attributes();
    records
        .iter()
        .map(|r| {
            attrs
                .iter()
                .map(|&a| Ok((a, classify(r.value(a)?, a, &r.group(a)?, table)?)))
                .collect()
        })
        .collect()
}

pub fn write_labels_csv(path: &Path, records: &[UtteranceRecord], table: &ThresholdTable) -> Result<()> {
    let labels = classify_records(records, table)?;
    let attrs = table.attributes();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "gender".to_string(), "gender_prob".to_string()];
    header.extend(attrs.iter().map(|a| a.as_str().to_string()));
    w.write_record(&header)?;
    for (r, l) in records.iter().zip(&labels) {
        let v = r.values()?;
        let mut row = vec![r.id.clone(), v.gender().as_str().to_string(), v.gender_prob.to_string()];
        row.extend(attrs.iter().map(|a| super::records::level_wire_name(*a, l[a]).to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(mean: f64, std: f64, group: &str) -> GroupStats {
        GroupStats {
            attribute: Attribute::Speed,
            group: group.into(),
            mean,
            std,
            n: 100,
        }
    }

    #[test]
    fn rate_boundaries_by_language() {
        let t = init_thresholds(&[stats(14.63, 4.94, "zh"), stats(18.25, 7.70, "en")]).unwrap();
        let zh = t.entry(Attribute::Speed, "zh").unwrap();
        assert!((zh.low - 9.69).abs() < 1e-9 && (zh.high - 19.57).abs() < 1e-9);
        let en = t.entry(Attribute::Speed, "en").unwrap();
        assert!((en.low - 10.55).abs() < 1e-9 && (en.high - 25.95).abs() < 1e-9);
        assert_eq!(classify(20.0, Attribute::Speed, "zh", &t).unwrap(), Level::High);
        assert_eq!(classify(20.0, Attribute::Speed, "en", &t).unwrap(), Level::Medium);
        assert_eq!(classify(14.63, Attribute::Speed, "zh", &t).unwrap(), Level::Medium);
        assert_eq!(classify(zh.low, Attribute::Speed, "zh", &t).unwrap(), Level::Medium);
        assert_eq!(classify(zh.high, Attribute::Speed, "zh", &t).unwrap(), Level::Medium);
        assert!(classify(1.0, Attribute::Speed, "fr", &t).is_err());
    }

    #[test]
    fn zero_spread_rejected() {
        assert!(init_thresholds(&[stats(3.0, 0.0, "zh")]).is_err());
        let s = GroupStats::from_values(Attribute::Volume, "global", &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(s.std, 0.0);
        assert!(GroupStats::from_values(Attribute::Volume, "global", &[2.0]).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let t = init_thresholds(&[stats(14.63, 4.94, "zh")]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.json");
        t.save(&p).unwrap();
        assert_eq!(ThresholdTable::load(&p).unwrap(), t);
    }
}
