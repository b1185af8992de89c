//! Simulated listeners with their own perceptual boundaries.

use serde::{Deserialize, Serialize};

use super::round::{AnnotationRound, Vote};
use super::thresholds::ThresholdTable;
use crate::error::{Error, Result};
use crate::labels::{Attribute, Level};
use crate::numerics::rng::{fnv1a, mix};
use crate::numerics::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerceptualBoundary {
    pub attribute: Attribute,
    pub group: String,
    pub low: f64,
    pub high: f64,
    /// Logistic scale of the decision; 0 gives a hard step.
    pub noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimAnnotatorConfig {
    pub boundaries: Vec<PerceptualBoundary>,
    pub seed: u64,
}

impl SimAnnotatorConfig {
    /// Listeners whose boundaries sit `offset_sigma · σ` above the table's,
    /// with decision noise `noise_sigma · σ`.
    pub fn offset_from(table: &ThresholdTable, offset_sigma: f64, noise_sigma: f64, seed: u64) -> Self {
        let boundaries = table
            .entries
            .iter()
            .map(|e| PerceptualBoundary {
                attribute: e.attribute,
                group: e.group.clone(),
                low: e.low + offset_sigma * e.std,
                high: e.high + offset_sigma * e.std,
                noise: noise_sigma * e.std,
            })
            .collect();
        Self { boundaries, seed }
    }

    pub fn validate(&self) -> Result<()> {
        for b in &self.boundaries {
            if !(b.low < b.high) || !(b.noise >= 0.0) {
                return Err(Error::config(format!(
                    "perceptual boundary for {} {:?} needs low < high and noise >= 0",
                    b.attribute, b.group
                )));
            }
        }
        Ok(())
    }

    pub fn boundary(&self, attr: Attribute, group: &str) -> Result<&PerceptualBoundary> {
        self.boundaries
            .iter()
            .find(|b| b.attribute == attr && b.group == group)
            .ok_or_else(|| Error::UnknownGroup {
                attribute: attr,
                group: group.to_string(),
            })
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Probabilities of (low, medium, high) for one listener.
pub fn vote_probabilities(b: &PerceptualBoundary, value: f64) -> [f64; 3] {
    let step = |x: f64, at: f64| {
        if b.noise == 0.0 {
            if x > at {
                1.0
            } else {
                0.0
            }
        } else {
            sigmoid((x - at) / b.noise)
        }
    };
    let p_low = if b.noise == 0.0 {
        if value < b.low {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - step(value, b.low)
    };
    let p_high = step(value, b.high);
    let p_med = (1.0 - p_low - p_high).max(0.0);
    [p_low, p_med, p_high]
}

pub fn simulate_annotator(
    cfg: &SimAnnotatorConfig,
    value: f64,
    attr: Attribute,
    group: &str,
    rng: &mut Rng,
) -> Result<Level> {
    let p = vote_probabilities(cfg.boundary(attr, group)?, value);
    let u = rng.uniform() * (p[0] + p[1] + p[2]);
    Ok(if u < p[0] {
        Level::Low
    } else if u < p[0] + p[2] {
        Level::High
    } else {
        Level::Medium
    })
}

/// Source of votes for a round.
pub trait Annotator {
    fn annotate(&mut self, round: &AnnotationRound) -> Result<Vec<Vote>>;
}

/// A roster of simulated listeners sharing one perceptual model.
#[derive(Clone, Debug)]
pub struct SimAnnotator {
    pub config: SimAnnotatorConfig,
    pub roster: Vec<String>,
}

impl SimAnnotator {
    pub fn new(config: SimAnnotatorConfig, n_annotators: usize) -> Self {
        Self {
            config,
            roster: (0..n_annotators).map(|i| format!("sim-{i}")).collect(),
        }
    }

    /// The vote `annotator` casts on one round item; a pure function of the
    /// seed, annotator, round, item and attribute.
    pub fn vote(&self, annotator: &str, round: usize, item_id: &str, attr: Attribute, group: &str, value: f64) -> Result<Level> {
        let seed = mix(self.config.seed, &[fnv1a(annotator), round as u64, fnv1a(item_id), fnv1a(attr.as_str())]);
        simulate_annotator(&self.config, value, attr, group, &mut Rng::new(seed))
    }
}

impl Annotator for SimAnnotator {
    fn annotate(&mut self, round: &AnnotationRound) -> Result<Vec<Vote>> {
        let mut out = Vec::with_capacity(self.roster.len() * round.items.len());
        for a in &self.roster {
            for it in &round.items {
                out.push(Vote {
                    annotator: a.clone(),
                    item_id: it.item_id.clone(),
                    attribute: it.attribute,
                    level: self.vote(a, round.index, &it.item_id, it.attribute, &it.group, it.value)?,
                });
            }
        }
        Ok(out)
    }
}
