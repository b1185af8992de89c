//! Borderline sampling, vote bookkeeping, agreement and boundary adjustment.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::records::UtteranceRecord;
use super::thresholds::{level_for, HistoryEntry, Side, ThresholdTable};
use crate::error::{Error, Result};
use crate::labels::{Attribute, Level};
use crate::numerics::Rng;

pub const DEFAULT_MARGIN: f64 = 0.05;
pub const DEFAULT_ITEMS_PER_ATTRIBUTE: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundItem {
    pub item_id: String,
    pub attribute: Attribute,
    pub group: String,
    pub value: f64,
    pub threshold_label: Level,
    /// Nearest boundary whose window holds the value.
    pub boundary: Side,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub annotator: String,
    pub item_id: String,
    pub attribute: Attribute,
    pub level: Level,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundStatus {
    Open,
    Closed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRound {
    /// 1-based.
    pub index: usize,
    pub margin: f64,
    pub items: Vec<RoundItem>,
    pub votes: Vec<Vote>,
    pub status: RoundStatus,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Sampled {
    Round(AnnotationRound),
    NoBorderline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub attributes: Vec<Attribute>,
    /// Window half-width as a fraction of the boundary value.
    pub margin: f64,
    pub n_per_attribute: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            attributes: Attribute::GRADED.to_vec(),
            margin: DEFAULT_MARGIN,
            n_per_attribute: DEFAULT_ITEMS_PER_ATTRIBUTE,
        }
    }
}

pub(crate) fn in_window(value: f64, boundary: f64, margin: f64) -> bool {
    (value - boundary).abs() <= margin * boundary.abs()
}

/// Items within `margin · |b|` of a boundary, sampled per attribute with
/// round-robin draws across strata of (group, boundary, threshold level) so
/// every boundary window is represented on both of its sides.
pub fn sample_borderline(
    records: &[UtteranceRecord],
    table: &ThresholdTable,
    cfg: &SamplingConfig,
    index: usize,
    seed: u64,
) -> Result<Sampled> {
    if cfg.n_per_attribute == 0 {
        return Err(Error::config("n_per_attribute must be at least 1"));
    }
    if !(cfg.margin >= 0.0) {
        return Err(Error::config("margin must be non-negative"));
    }
    let mut items = Vec::new();
    for &attr in &cfg.attributes {
        let mut strata: BTreeMap<(String, Side, Level), Vec<RoundItem>> = BTreeMap::new();
        for r in records {
            let group = r.group(attr)?;
            let e = table.entry(attr, &group)?;
            let v = r.value(attr)?;
            let d_low = (v - e.low).abs();
            let d_high = (v - e.high).abs();
            let side = match (in_window(v, e.low, cfg.margin), in_window(v, e.high, cfg.margin)) {
                (true, true) => {
                    if d_low <= d_high {
                        Side::Low
                    } else {
                        Side::High
                    }
                }
                (true, false) => Side::Low,
                (false, true) => Side::High,
                (false, false) => continue,
            };
            let label = level_for(v, e.low, e.high);
            strata.entry((group.clone(), side, label)).or_default().push(RoundItem {
                item_id: r.id.clone(),
                attribute: attr,
                group,
                value: v,
                threshold_label: label,
                boundary: side,
            });
        }
        let mut rng = Rng::stream(seed, &format!("borderline-{attr}"));
        for s in strata.values_mut() {
            rng.shuffle(s);
            s.reverse();
        }
        let mut picked = Vec::new();
        while picked.len() < cfg.n_per_attribute && strata.values().any(|s| !s.is_empty()) {
            for s in strata.values_mut() {
                if picked.len() == cfg.n_per_attribute {
                    break;
                }
                if let Some(it) = s.pop() {
                    picked.push(it);
                }
            }
        }
        picked.sort_by(|a, b| a.item_id.cmp(&b.item_id));
        items.extend(picked);
    }
    if items.is_empty() {
        return Ok(Sampled::NoBorderline);
    }
    Ok(Sampled::Round(AnnotationRound {
        index,
        margin: cfg.margin,
        items,
        votes: Vec::new(),
        status: RoundStatus::Open,
    }))
}

impl AnnotationRound {
    pub fn item(&self, item_id: &str, attr: Attribute) -> Option<&RoundItem> {
        self.items.iter().find(|i| i.item_id == item_id && i.attribute == attr)
    }

    /// Store a vote; a later vote for the same (annotator, item, attribute)
    /// replaces the earlier one.
    pub fn record_vote(&mut self, vote: Vote) -> Result<()> {
        if self.status != RoundStatus::Open {
            return Err(Error::Finalized);
        }
        if self.item(&vote.item_id, vote.attribute).is_none() {
            return Err(Error::UnknownItem(vote.item_id));
        }
        match self
            .votes
            .iter_mut()
            .find(|v| v.annotator == vote.annotator && v.item_id == vote.item_id && v.attribute == vote.attribute)
        {
            Some(v) => v.level = vote.level,
            None => self.votes.push(vote),
        }
        Ok(())
    }

    /// (annotator, item, attribute) triples still without a vote.
    pub fn missing_votes(&self, roster: &[String]) -> usize {
        roster
            .iter()
            .map(|a| {
                self.items
                    .iter()
                    .filter(|i| {
                        !self
                            .votes
                            .iter()
                            .any(|v| &v.annotator == a && v.item_id == i.item_id && v.attribute == i.attribute)
                    })
                    .count()
            })
            .sum()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelCounts {
    pub low: usize,
    pub medium: usize,
    pub high: usize,
}

impl LevelCounts {
    pub fn get(&self, l: Level) -> usize {
        match l {
            Level::Low => self.low,
            Level::Medium => self.medium,
            Level::High => self.high,
        }
    }

    fn bump(&mut self, l: Level) {
        match l {
            Level::Low => self.low += 1,
            Level::Medium => self.medium += 1,
            Level::High => self.high += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.low + self.medium + self.high
    }

    /// Strict plurality; ties give none.
    pub fn majority(&self) -> Option<Level> {
        let best = Level::ALL.iter().map(|&l| self.get(l)).max().unwrap_or(0);
        let top: Vec<Level> = Level::ALL.into_iter().filter(|&l| self.get(l) == best).collect();
        (best > 0 && top.len() == 1).then(|| top[0])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemTally {
    pub item_id: String,
    pub attribute: Attribute,
    pub group: String,
    pub value: f64,
    pub threshold_label: Level,
    pub counts: LevelCounts,
    pub majority: Option<Level>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SideTally {
    pub items: usize,
    pub votes: usize,
    pub disagreeing: usize,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryTally {
    pub attribute: Attribute,
    pub group: String,
    pub side: Side,
    pub boundary: f64,
    pub window_items: usize,
    pub votes: usize,
    /// Votes naming the level across the boundary from the threshold label.
    pub disagreeing: usize,
    pub rate: f64,
    /// Items labeled with the level below the boundary.
    pub below: SideTally,
    /// Items labeled with the level above the boundary.
    pub above: SideTally,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub round: usize,
    pub margin: f64,
    pub n_votes: usize,
    pub n_agreeing: usize,
    pub agreement: f64,
    pub items: Vec<ItemTally>,
    pub boundaries: Vec<BoundaryTally>,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn agreement(round: &AnnotationRound, table: &ThresholdTable) -> Result<AgreementReport> {
    if round.votes.is_empty() {
        return Err(Error::invalid(format!("round {} has no votes", round.index)));
    }
    let mut items = Vec::with_capacity(round.items.len());
    let mut n_agreeing = 0;
    for it in &round.items {
        let mut counts = LevelCounts::default();
        for v in round
            .votes
            .iter()
            .filter(|v| v.item_id == it.item_id && v.attribute == it.attribute)
        {
            counts.bump(v.level);
        }
        n_agreeing += counts.get(it.threshold_label);
        items.push(ItemTally {
            item_id: it.item_id.clone(),
            attribute: it.attribute,
            group: it.group.clone(),
            value: it.value,
            threshold_label: it.threshold_label,
            majority: counts.majority(),
            counts,
        });
    }

    let mut keys: Vec<(Attribute, String)> = items.iter().map(|i| (i.attribute, i.group.clone())).collect();
    keys.sort();
    keys.dedup();
    let mut boundaries = Vec::new();
    for (attr, group) in keys {
        let e = table.entry(attr, &group)?;
        for side in [Side::Low, Side::High] {
            let b = e.boundary(side);
            let (lower, upper) = side.levels();
            let (mut below, mut above) = (SideTally::default(), SideTally::default());
            for t in items
                .iter()
                .filter(|t| t.attribute == attr && t.group == group && in_window(t.value, b, round.margin))
            {
                let (tally, other) = if t.threshold_label == lower {
                    (&mut below, upper)
                } else if t.threshold_label == upper {
                    (&mut above, lower)
                } else {
                    continue;
                };
                tally.items += 1;
                tally.votes += t.counts.total();
                tally.disagreeing += t.counts.get(other);
            }
            below.rate = ratio(below.disagreeing, below.votes);
            above.rate = ratio(above.disagreeing, above.votes);
            let votes = below.votes + above.votes;
            let disagreeing = below.disagreeing + above.disagreeing;
            boundaries.push(BoundaryTally {
                attribute: attr,
                group: group.clone(),
                side,
                boundary: b,
                window_items: below.items + above.items,
                votes,
                disagreeing,
                rate: ratio(disagreeing, votes),
                below,
                above,
            });
        }
    }
    let n_votes = round.votes.len();
    Ok(AgreementReport {
        round: round.index,
        margin: round.margin,
        n_votes,
        n_agreeing,
        agreement: ratio(n_agreeing, n_votes),
        items,
        boundaries,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdjustConfig {
    /// Largest move per round, as a fraction of the group σ.
    pub step_fraction: f64,
    /// An item is disputed when more than this share of its votes name the
    /// level across the boundary.
    pub trigger: f64,
}

impl Default for AdjustConfig {
    fn default() -> Self {
        Self {
            step_fraction: 0.25,
            trigger: 0.8,
        }
    }
}

/// Move each boundary toward relabeling its disputed window items.
///
/// A boundary moves up when disputed items sit above it and down when they
/// sit below (the side with more disputed items wins; a tie holds still).
/// The target is halfway between the farthest disputed item and the next
/// item whose votes agree with its threshold label, or a full step when no
/// such item was observed. Moves are capped at `step_fraction · σ`, and a
/// pair that would cross is pinned around its midpoint.
pub fn adjust_thresholds(table: &ThresholdTable, report: &AgreementReport, cfg: &AdjustConfig) -> Result<ThresholdTable> {
    let mut out = table.clone();
    let mut keys: Vec<(Attribute, String)> = report.boundaries.iter().map(|b| (b.attribute, b.group.clone())).collect();
    keys.dedup();
    for (attr, group) in keys {
        let e = table.entry(attr, &group)?;
        let step = cfg.step_fraction * e.std;
        let mut moved = [None, None];
        for (k, side) in [Side::Low, Side::High].into_iter().enumerate() {
            let b = e.boundary(side);
            let (lower, upper) = side.levels();
            let window: Vec<&ItemTally> = report
                .items
                .iter()
                .filter(|t| {
                    t.attribute == attr
                        && t.group == group
                        && t.counts.total() > 0
                        && (t.threshold_label == lower || t.threshold_label == upper)
                        && in_window(t.value, b, report.margin)
                })
                .collect();
            let disputed = |t: &&&ItemTally| {
                let other = if t.threshold_label == lower { upper } else { lower };
                ratio(t.counts.get(other), t.counts.total()) > cfg.trigger
            };
            let up: Vec<f64> = window
                .iter()
                .filter(|t| t.threshold_label == upper)
                .filter(disputed)
                .map(|t| t.value)
                .collect();
            let down: Vec<f64> = window
                .iter()
                .filter(|t| t.threshold_label == lower)
                .filter(disputed)
                .map(|t| t.value)
                .collect();
            let agreeing = |t: &&&ItemTally| t.majority == Some(t.threshold_label);
            let new = if up.len() > down.len() {
                let far = up.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let next = window
                    .iter()
                    .filter(|t| t.threshold_label == upper && t.value > far)
                    .filter(agreeing)
                    .map(|t| t.value)
                    .fold(f64::INFINITY, f64::min);
                let target = if next.is_finite() { 0.5 * (far + next) } else { far + step };
                let reason = format!(
                    "{} of {} items above were perceived {} by more than {:.0}% of votes",
                    up.len(),
                    window.iter().filter(|t| t.threshold_label == upper).count(),
                    lower,
                    cfg.trigger * 100.0
                );
                Some((target.min(b + step), reason))
            } else if down.len() > up.len() {
                let far = down.iter().cloned().fold(f64::INFINITY, f64::min);
                let next = window
                    .iter()
                    .filter(|t| t.threshold_label == lower && t.value < far)
                    .filter(agreeing)
                    .map(|t| t.value)
                    .fold(f64::NEG_INFINITY, f64::max);
                let target = if next.is_finite() { 0.5 * (far + next) } else { far - step };
                let reason = format!(
                    "{} of {} items below were perceived {} by more than {:.0}% of votes",
                    down.len(),
                    window.iter().filter(|t| t.threshold_label == lower).count(),
                    upper,
                    cfg.trigger * 100.0
                );
                Some((target.max(b - step), reason))
            } else {
                None
            };
            moved[k] = new.filter(|(v, _)| *v != b);
        }
        if moved.iter().all(Option::is_none) {
            continue;
        }
        let mut low = moved[0].as_ref().map_or(e.low, |m| m.0);
        let mut high = moved[1].as_ref().map_or(e.high, |m| m.0);
        let mut clamp_note = "";
        if low >= high {
            let mid = 0.5 * (low + high);
            let eps = 1e-6 * e.std;
            low = mid - eps;
            high = mid + eps;
            clamp_note = "; clamped at midpoint";
        }
        for (side, new, old) in [(Side::Low, low, e.low), (Side::High, high, e.high)] {
            if new == old {
                continue;
            }
            let idx = if side == Side::Low { 0 } else { 1 };
            let reason = moved[idx].as_ref().map_or_else(
                || "moved to keep boundaries ordered".to_string(),
                |m| m.1.clone(),
            );
            out.history.push(HistoryEntry {
                round: report.round,
                attribute: attr,
                group: group.clone(),
                boundary: side,
                old,
                new,
                reason: format!("{reason}{clamp_note}"),
            });
        }
        let entry = out.entry_mut(attr, &group)?;
        entry.low = low;
        entry.high = high;
    }
    Ok(out)
}
