//! The sample → vote → agree → adjust loop as a replayable state machine.
//!
//! Both the in-process loop and the HTTP service drive the same
//! [`AnnotationSession`]; every successful mutation is appended to its event
//! list, and replaying that list from the same starting point rebuilds the
//! identical session.

use serde::{Deserialize, Serialize};

use super::records::UtteranceRecord;
use super::round::{
    adjust_thresholds, agreement, sample_borderline, AdjustConfig, AgreementReport, AnnotationRound, RoundStatus,
    Sampled, SamplingConfig, Vote,
};
use super::sim::Annotator;
use super::thresholds::{HistoryEntry, ThresholdTable};
use crate::error::{Error, Result};
use crate::numerics::rng::mix;

pub const DEFAULT_TARGET_AGREEMENT: f64 = 0.85;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub sampling: SamplingConfig,
    pub adjust: AdjustConfig,
    pub target_agreement: f64,
    pub max_rounds: usize,
    pub seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            sampling: SamplingConfig::default(),
            adjust: AdjustConfig::default(),
            target_agreement: DEFAULT_TARGET_AGREEMENT,
            max_rounds: 3,
            seed: 0,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_rounds == 0 {
            return Err(Error::config("max_rounds must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.target_agreement) || !(0.0..=1.0).contains(&self.adjust.trigger) {
            return Err(Error::config("target_agreement and trigger must lie in [0, 1]"));
        }
        if !(self.adjust.step_fraction >= 0.0) {
            return Err(Error::config("step_fraction must be non-negative"));
        }
        if self.sampling.attributes.is_empty() {
            return Err(Error::config("no attributes to annotate"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalReason {
    TargetReached,
    RoundsExhausted,
    NoBorderline,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state", content = "reason")]
pub enum SessionStatus {
    Idle,
    Active,
    Finalized(FinalReason),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "event")]
pub enum SessionEvent {
    Start,
    Vote(Vote),
    Advance { force: bool },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: AnnotationRound,
    pub report: AgreementReport,
    pub adjustments: Vec<HistoryEntry>,
    pub table_after: ThresholdTable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvanceOutcome {
    pub report: AgreementReport,
    pub adjustments: Vec<HistoryEntry>,
    pub status: SessionStatus,
    /// Index of the newly opened round, if any.
    pub next_round: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationSession {
    pub records: Vec<UtteranceRecord>,
    pub config: LoopConfig,
    pub roster: Vec<String>,
    initial: ThresholdTable,
    table: ThresholdTable,
    round: Option<AnnotationRound>,
    status: SessionStatus,
    log: Vec<RoundLog>,
    events: Vec<SessionEvent>,
}

impl AnnotationSession {
    pub fn new(records: Vec<UtteranceRecord>, table: ThresholdTable, config: LoopConfig, roster: Vec<String>) -> Result<Self> {
        config.validate()?;
        table.validate()?;
        if roster.is_empty() {
            return Err(Error::config("annotator roster is empty"));
        }
        Ok(Self {
            records,
            config,
            roster,
            initial: table.clone(),
            table,
            round: None,
            status: SessionStatus::Idle,
            log: Vec::new(),
            events: Vec::new(),
        })
    }

    /// Rebuild a session by applying `events` to a fresh one.
    pub fn replay(
        records: Vec<UtteranceRecord>,
        table: ThresholdTable,
        config: LoopConfig,
        roster: Vec<String>,
        events: &[SessionEvent],
    ) -> Result<Self> {
        let mut s = Self::new(records, table, config, roster)?;
        for e in events {
            s.apply(e.clone())?;
        }
        Ok(s)
    }

    pub fn apply(&mut self, event: SessionEvent) -> Result<()> {
        match event {
            SessionEvent::Start => self.start(),
            SessionEvent::Vote(v) => self.record_vote(v),
            SessionEvent::Advance { force } => self.advance(force).map(|_| ()),
        }
    }

    pub fn table(&self) -> &ThresholdTable {
        &self.table
    }

    pub fn initial_table(&self) -> &ThresholdTable {
        &self.initial
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn log(&self) -> &[RoundLog] {
        &self.log
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn current_round(&self) -> Option<&AnnotationRound> {
        self.round.as_ref()
    }

    pub fn record(&self, id: &str) -> Option<&UtteranceRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    fn round_seed(&self, index: usize) -> u64 {
        mix(self.config.seed, &[index as u64])
    }

    fn open_round(&mut self, index: usize) -> Result<Option<usize>> {
        match sample_borderline(&self.records, &self.table, &self.config.sampling, index, self.round_seed(index))? {
            Sampled::Round(r) => {
                self.round = Some(r);
                self.status = SessionStatus::Active;
                Ok(Some(index))
            }
            Sampled::NoBorderline => {
                self.status = SessionStatus::Finalized(FinalReason::NoBorderline);
                Ok(None)
            }
        }
    }

    pub fn start(&mut self) -> Result<()> {
        if self.status != SessionStatus::Idle {
            return Err(Error::invalid("session already started"));
        }
        self.open_round(1)?;
        self.events.push(SessionEvent::Start);
        Ok(())
    }

    pub fn record_vote(&mut self, vote: Vote) -> Result<()> {
        if let SessionStatus::Finalized(_) = self.status {
            return Err(Error::Finalized);
        }
        if !self.roster.contains(&vote.annotator) {
            return Err(Error::invalid(format!("annotator {:?} is not on the roster", vote.annotator)));
        }
        let round = self.round.as_mut().ok_or(Error::NoActiveRound)?;
        round.record_vote(vote.clone())?;
        self.events.push(SessionEvent::Vote(vote));
        Ok(())
    }

    pub fn missing_votes(&self) -> usize {
        self.round.as_ref().map_or(0, |r| r.missing_votes(&self.roster))
    }

    pub fn agreement(&self) -> Result<AgreementReport> {
        agreement(self.round.as_ref().ok_or(Error::NoActiveRound)?, &self.table)
    }

    /// Close the active round: apply the listeners' adjustments, then
    /// finalize if agreement reached the target or rounds ran out, otherwise
    /// open the next round.
    pub fn advance(&mut self, force: bool) -> Result<AdvanceOutcome> {
        if let SessionStatus::Finalized(_) = self.status {
            return Err(Error::Finalized);
        }
        let round = self.round.as_ref().ok_or(Error::NoActiveRound)?;
        let missing = round.missing_votes(&self.roster);
        if missing > 0 && !force {
            return Err(Error::Quorum { missing });
        }
        let report = agreement(round, &self.table)?;
        let index = round.index;

        let mut next_round = None;
        let adjusted = adjust_thresholds(&self.table, &report, &self.config.adjust)?;
        let adjustments = adjusted.history[self.table.history.len()..].to_vec();
        self.table = adjusted;
        if report.agreement >= self.config.target_agreement {
            self.status = SessionStatus::Finalized(FinalReason::TargetReached);
        } else if index >= self.config.max_rounds {
            self.status = SessionStatus::Finalized(FinalReason::RoundsExhausted);
        }

        let mut closed = self.round.take().expect("checked above");
        closed.status = RoundStatus::Closed;
        self.log.push(RoundLog {
            round: closed,
            report: report.clone(),
            adjustments: adjustments.clone(),
            table_after: self.table.clone(),
        });
        if self.status == SessionStatus::Active {
            next_round = self.open_round(index + 1)?;
        }
        self.events.push(SessionEvent::Advance { force });
        Ok(AdvanceOutcome {
            report,
            adjustments,
            status: self.status,
            next_round,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopOutcome {
    pub table: ThresholdTable,
    pub rounds: Vec<RoundLog>,
    pub status: SessionStatus,
    /// Set when the annotator failed; the log holds the rounds completed so far.
    pub aborted: Option<String>,
}

impl LoopOutcome {
    pub fn converged(&self) -> bool {
        self.status == SessionStatus::Finalized(FinalReason::TargetReached)
    }
}

/// Roster names for an annotator source.
pub trait Roster {
    fn roster(&self) -> Vec<String>;
}

impl Roster for super::sim::SimAnnotator {
    fn roster(&self) -> Vec<String> {
        self.roster.clone()
    }
}

pub fn run_adjustment_loop<A: Annotator + Roster>(
    records: &[UtteranceRecord],
    table: &ThresholdTable,
    annotator: &mut A,
    cfg: &LoopConfig,
) -> Result<LoopOutcome> {
    let mut session = AnnotationSession::new(records.to_vec(), table.clone(), cfg.clone(), annotator.roster())?;
    session.start()?;
    let mut aborted = None;
    while let Some(round) = session.current_round() {
        let votes = match annotator.annotate(round) {
            Ok(v) => v,
            Err(e) => {
                aborted = Some(e.to_string());
                break;
            }
        };
        for v in votes {
            session.record_vote(v)?;
        }
        session.advance(false)?;
    }
    Ok(LoopOutcome {
        table: session.table().clone(),
        rounds: session.log().to_vec(),
        status: session.status(),
        aborted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::records::synthetic_values;
    use crate::annotation::sim::{SimAnnotator, SimAnnotatorConfig};
    use crate::labels::Attribute;

    fn setup() -> (Vec<UtteranceRecord>, ThresholdTable, LoopConfig) {
        let recs = synthetic_values(400, 2);
        let table = ThresholdTable::from_records(&recs, &[Attribute::Pitch]).unwrap();
        let cfg = LoopConfig {
            sampling: SamplingConfig {
                attributes: vec![Attribute::Pitch],
                n_per_attribute: 12,
                ..SamplingConfig::default()
            },
            seed: 5,
            ..LoopConfig::default()
        };
        (recs, table, cfg)
    }

    #[test]
    fn zero_rounds_rejected() {
        let (recs, table, mut cfg) = setup();
        cfg.max_rounds = 0;
        let mut sim = SimAnnotator::new(SimAnnotatorConfig::offset_from(&table, 0.0, 0.05, 1), 3);
        assert!(run_adjustment_loop(&recs, &table, &mut sim, &cfg).is_err());
    }

    #[test]
    fn quorum_guard_and_finalize() {
        let (recs, table, cfg) = setup();
        let sim = SimAnnotator::new(SimAnnotatorConfig::offset_from(&table, 0.0, 0.0, 1), 3);
        let mut s = AnnotationSession::new(recs, table, cfg, sim.roster.clone()).unwrap();
        assert!(matches!(s.agreement(), Err(Error::NoActiveRound)));
        s.start().unwrap();
        assert!(matches!(s.advance(false), Err(Error::Quorum { .. })));
        let mut sim = sim;
        let votes = sim.annotate(s.current_round().unwrap()).unwrap();
        for v in votes.iter().cloned() {
            s.record_vote(v).unwrap();
        }
        assert_eq!(s.missing_votes(), 0);
        let out = s.advance(false).unwrap();
        assert_eq!(out.status, SessionStatus::Finalized(FinalReason::TargetReached));
        assert!(out.adjustments.is_empty());
        assert!(matches!(s.record_vote(votes[0].clone()), Err(Error::Finalized)));
        assert!(matches!(s.advance(true), Err(Error::Finalized)));
    }

    #[test]
    fn replay_rebuilds_session() {
        let (recs, table, cfg) = setup();
        let mut sim = SimAnnotator::new(SimAnnotatorConfig::offset_from(&table, 0.3, 0.05, 1), 3);
        let mut s = AnnotationSession::new(recs.clone(), table.clone(), cfg.clone(), sim.roster.clone()).unwrap();
        s.start().unwrap();
        while let Some(r) = s.current_round() {
            for v in sim.annotate(r).unwrap() {
                s.record_vote(v).unwrap();
            }
            s.advance(false).unwrap();
        }
        let again = AnnotationSession::replay(recs, table, cfg, sim.roster.clone(), s.events()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn force_advances_partial_round() {
        let (recs, table, cfg) = setup();
        let mut sim = SimAnnotator::new(SimAnnotatorConfig::offset_from(&table, 0.3, 0.05, 1), 3);
        let mut s = AnnotationSession::new(recs, table, cfg, sim.roster.clone()).unwrap();
        s.start().unwrap();
        let v = sim.annotate(s.current_round().unwrap()).unwrap();
        s.record_vote(v[0].clone()).unwrap();
        let out = s.advance(true).unwrap();
        assert_eq!(out.report.n_votes, 1);
    }

    struct Failing;

    impl Annotator for Failing {
        fn annotate(&mut self, _: &AnnotationRound) -> Result<Vec<Vote>> {
            Err(Error::Annotator("listener left".into()))
        }
    }

    impl Roster for Failing {
        fn roster(&self) -> Vec<String> {
            vec!["a".into()]
        }
    }

    #[test]
    fn annotator_failure_keeps_partial_log() {
        let (recs, table, cfg) = setup();
        let out = run_adjustment_loop(&recs, &table, &mut Failing, &cfg).unwrap();
        assert!(out.aborted.is_some());
        assert!(out.rounds.is_empty());
        assert_eq!(out.table, table);
    }
}
