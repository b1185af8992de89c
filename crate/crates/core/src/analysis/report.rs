use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::silhouette::{silhouette_subset, Distances};
use crate::corpus::CorpusItem;
use crate::error::{Error, Result};
use crate::labels::{Attribute, AttributeLabels};

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub vectors: Vec<Vec<f64>>,
    pub speakers: Vec<usize>,
    pub labels: Vec<AttributeLabels>,
}

impl EmbeddingSet {
    pub fn new(vectors: Vec<Vec<f64>>, speakers: Vec<usize>, labels: Vec<AttributeLabels>) -> Result<Self> {
        if vectors.len() != speakers.len() || vectors.len() != labels.len() {
            return Err(Error::invalid("embedding set fields differ in length"));
        }
        let d = vectors.first().map_or(0, Vec::len);
        if vectors.iter().any(|v| v.len() != d) {
            return Err(Error::invalid("embedding set vectors differ in dimension"));
        }
        Ok(Self { vectors, speakers, labels })
    }

    /// Style embeddings of corpus items.
    pub fn from_corpus(items: &[CorpusItem]) -> Self {
        Self {
            vectors: items.iter().map(|it| it.style_emb.clone()).collect(),
            speakers: items.iter().map(|it| it.speaker_id).collect(),
            labels: items.iter().map(|it| it.labels).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchyReport {
    pub n_points: usize,
    pub margin: f64,
    pub global_by_speaker: f64,
    pub global_by_attribute: BTreeMap<Attribute, f64>,
    /// attribute → speaker → silhouette, for attributes that vary within the speaker.
    pub within_speaker: BTreeMap<Attribute, BTreeMap<usize, f64>>,
    pub within_speaker_mean: BTreeMap<Attribute, f64>,
    pub mean_within_speaker: f64,
    /// Speaker silhouette beats every global attribute silhouette by the margin.
    pub speaker_dominates: bool,
    /// Mean within-speaker silhouette exceeds the margin.
    pub within_structure: bool,
    pub verdict: String,
}

impl HierarchyReport {
    pub fn is_hierarchical(&self) -> bool {
        self.speaker_dominates && self.within_structure
    }
}

pub const DEFAULT_MARGIN: f64 = 0.02;

pub fn hierarchy_report(set: &EmbeddingSet) -> Result<HierarchyReport> {
    hierarchy_report_with_margin(set, DEFAULT_MARGIN)
}

pub fn hierarchy_report_with_margin(set: &EmbeddingSet, margin: f64) -> Result<HierarchyReport> {
    let speakers: BTreeSet<usize> = set.speakers.iter().copied().collect();
    if speakers.len() < 2 {
        return Err(Error::invalid("hierarchy report needs at least two speakers"));
    }
    let dist = Distances::new(&set.vectors)?;
    let all: Vec<usize> = (0..set.len()).collect();
    let global_by_speaker = silhouette_subset(&dist, &all, &set.speakers)?;

    let mut global_by_attribute = BTreeMap::new();
    for attr in Attribute::ALL {
        let labels: Vec<usize> = set.labels.iter().map(|l| l.level_index(attr)).collect();
        if labels.iter().collect::<BTreeSet<_>>().len() >= 2 {
            global_by_attribute.insert(attr, silhouette_subset(&dist, &all, &labels)?);
        }
    }

    let mut within_speaker: BTreeMap<Attribute, BTreeMap<usize, f64>> = BTreeMap::new();
    for &s in &speakers {
        let members: Vec<usize> = all.iter().copied().filter(|&i| set.speakers[i] == s).collect();
        for attr in Attribute::ALL {
            let labels: Vec<usize> = members.iter().map(|&i| set.labels[i].level_index(attr)).collect();
            if labels.iter().collect::<BTreeSet<_>>().len() >= 2 {
                let v = silhouette_subset(&dist, &members, &labels)?;
                within_speaker.entry(attr).or_default().insert(s, v);
            }
        }
    }
    if within_speaker.is_empty() {
        return Err(Error::invalid("no attribute varies within any speaker"));
    }
    let within_speaker_mean: BTreeMap<Attribute, f64> = within_speaker
        .iter()
        .map(|(a, m)| (*a, m.values().sum::<f64>() / m.len() as f64))
        .collect();
    let mean_within_speaker = within_speaker_mean.values().sum::<f64>() / within_speaker_mean.len() as f64;

    let speaker_dominates = global_by_attribute.values().all(|&v| global_by_speaker > v + margin);
    let within_structure = mean_within_speaker > margin;
    let verdict = if speaker_dominates && within_structure {
        "hierarchical"
    } else if speaker_dominates {
        "speaker_only"
    } else if within_structure {
        "attribute_dominated"
    } else {
        "unstructured"
    };
    Ok(HierarchyReport {
        n_points: set.len(),
        margin,
        global_by_speaker,
        global_by_attribute,
        within_speaker,
        within_speaker_mean,
        mean_within_speaker,
        speaker_dominates,
        within_structure,
        verdict: verdict.into(),
    })
}

/// Mean embedding per (attribute, level) over a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelCentroids {
    pub centroids: BTreeMap<Attribute, Vec<Option<Vec<f64>>>>,
}

impl LevelCentroids {
    pub fn from_pairs(vectors: &[Vec<f64>], labels: &[AttributeLabels]) -> Result<Self> {
        if vectors.len() != labels.len() || vectors.is_empty() {
            return Err(Error::invalid("centroids need equally many non-empty vectors and labels"));
        }
        let d = vectors[0].len();
        let mut centroids = BTreeMap::new();
        for attr in Attribute::REPORTED {
            let mut sums = vec![vec![0.0; d]; attr.n_levels()];
            let mut counts = vec![0usize; attr.n_levels()];
            for (v, l) in vectors.iter().zip(labels) {
                if v.len() != d {
                    return Err(Error::invalid("centroid inputs differ in dimension"));
                }
                let k = l.level_index(attr);
                counts[k] += 1;
                for (s, x) in sums[k].iter_mut().zip(v) {
                    *s += x;
                }
            }
            let cs = sums
                .into_iter()
                .zip(counts)
                .map(|(s, c)| (c > 0).then(|| s.into_iter().map(|x| x / c as f64).collect()))
                .collect();
            centroids.insert(attr, cs);
        }
        Ok(Self { centroids })
    }

    pub fn from_corpus(items: &[CorpusItem]) -> Result<Self> {
        let set = EmbeddingSet::from_corpus(items);
        Self::from_pairs(&set.vectors, &set.labels)
    }

    /// Nearest level index for `attr`; ties go to the lower level.
    pub fn decode(&self, attr: Attribute, v: &[f64]) -> Result<usize> {
        let levels = self
            .centroids
            .get(&attr)
            .ok_or_else(|| Error::invalid(format!("no centroids for {attr}")))?;
        let mut best = (f64::INFINITY, 0);
        for (k, c) in levels.iter().enumerate() {
            let c = c
                .as_ref()
                .ok_or_else(|| Error::invalid(format!("missing centroid for {attr}={}", attr.level_names()[k])))?;
            if c.len() != v.len() {
                return Err(Error::shape("decode", &[c.len()], &[v.len()]));
            }
            let d: f64 = c.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, k);
            }
        }
        Ok(best.1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub model: String,
    pub n: usize,
    pub per_attribute: BTreeMap<Attribute, f64>,
    /// Mean over the reported attributes.
    pub style_average: f64,
}

impl AccuracyReport {
    pub fn get(&self, attr: Attribute) -> f64 {
        self.per_attribute.get(&attr).copied().unwrap_or(f64::NAN)
    }
}

/// Nearest-centroid accuracy of predicted embeddings against prompt labels.
pub fn eval_accuracy(
    model: &str,
    predictions: &[Vec<f64>],
    truth: &[AttributeLabels],
    centroids: &LevelCentroids,
) -> Result<AccuracyReport> {
    if predictions.len() != truth.len() || predictions.is_empty() {
        return Err(Error::invalid("accuracy needs equally many non-empty predictions and labels"));
    }
    let mut per_attribute = BTreeMap::new();
    for attr in Attribute::REPORTED {
        let mut hits = 0usize;
        for (p, t) in predictions.iter().zip(truth) {
            if centroids.decode(attr, p)? == t.level_index(attr) {
                hits += 1;
            }
        }
        per_attribute.insert(attr, hits as f64 / predictions.len() as f64);
    }
    let style_average = per_attribute.values().sum::<f64>() / per_attribute.len() as f64;
    Ok(AccuracyReport {
        model: model.into(),
        n: predictions.len(),
        per_attribute,
        style_average,
    })
}

/// One row per report: `model,n,gender,speed,volume,pitch,fluctuation,style_average`.
pub fn write_accuracy_csv(path: &Path, reports: &[AccuracyReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["model".to_string(), "n".to_string()];
    header.extend(Attribute::REPORTED.iter().map(|a| a.to_string()));
    header.push("style_average".into());
    w.write_record(&header)?;
    for r in reports {
        let mut row = vec![r.model.clone(), r.n.to_string()];
        row.extend(Attribute::REPORTED.iter().map(|a| format!("{:.6}", r.get(*a))));
        row.push(format!("{:.6}", r.style_average));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `attribute,scope,speaker,silhouette` rows for a hierarchy report.
pub fn write_hierarchy_csv(path: &Path, report: &HierarchyReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["attribute", "scope", "speaker", "silhouette"])?;
    w.write_record(["speaker", "global", "", &format!("{:.6}", report.global_by_speaker)])?;
    for (a, v) in &report.global_by_attribute {
        w.write_record([a.as_str(), "global", "", &format!("{v:.6}")])?;
    }
    for (a, per) in &report.within_speaker {
        for (s, v) in per {
            w.write_record([a.as_str(), "within_speaker", &s.to_string(), &format!("{v:.6}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::{Gender, Language, Level};

    fn lab(speed: Level) -> AttributeLabels {
        AttributeLabels::from_graded(Gender::Male, Language::En, [speed, Level::Low, Level::Low, Level::Low])
    }

    #[test]
    fn missing_level_centroid_is_error() {
        let c = LevelCentroids::from_pairs(&[vec![0.0], vec![1.0]], &[lab(Level::Low), lab(Level::High)]).unwrap();
        assert!(c.decode(Attribute::Speed, &[0.2]).is_err());
    }

    #[test]
    fn single_speaker_is_error() {
        let set = EmbeddingSet::new(vec![vec![0.0], vec![1.0]], vec![0, 0], vec![lab(Level::Low), lab(Level::High)]).unwrap();
        assert!(hierarchy_report(&set).is_err());
    }

    #[test]
    fn accuracy_csv_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("acc.csv");
        let r = AccuracyReport {
            model: "m".into(),
            n: 1,
            per_attribute: Attribute::REPORTED.iter().map(|a| (*a, 1.0)).collect(),
            style_average: 1.0,
        };
        write_accuracy_csv(&path, &[r]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("model,n,gender,speed,volume,pitch,fluctuation,style_average\n"));
    }
}
