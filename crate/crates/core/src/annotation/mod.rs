//! Attribute computation from audio, statistic-based grading and the
//! listener-driven threshold adjustment loop.

pub mod dsp;
pub mod records;
pub mod round;
pub mod session;
pub mod sim;
pub mod thresholds;

pub use dsp::{
    extract_f0, extract_f0_with, pitch_stats, speech_rate, trim_silence, volume, AutocorrelationPitch, F0Config,
    GenderClassifier, GenderInput, PitchExtractor, PitchHeuristic,
};
pub use records::{
    compute_all, compute_values, level_wire_name, parse_vote_level, read_manifest, read_values_csv, read_wav,
    synthetic_values, write_demo_audio, write_manifest, write_values_csv, write_wav, AttributeValues, Audio, ComputeOptions,
    UtteranceRecord, GLOBAL_GROUP,
};
pub use round::{
    adjust_thresholds, agreement, sample_borderline, AdjustConfig, AgreementReport, AnnotationRound, BoundaryTally,
    ItemTally, LevelCounts, RoundItem, RoundStatus, Sampled, SamplingConfig, SideTally, Vote,
};
pub use session::{
    run_adjustment_loop, AdvanceOutcome, AnnotationSession, FinalReason, LoopConfig, LoopOutcome, RoundLog, Roster,
    SessionEvent, SessionStatus,
};
pub use sim::{simulate_annotator, vote_probabilities, Annotator, PerceptualBoundary, SimAnnotator, SimAnnotatorConfig};
pub use thresholds::{
    classify, classify_records, compute_group_stats, init_thresholds, write_labels_csv, GroupStats, HistoryEntry,
    Side, ThresholdEntry, ThresholdTable,
};

use crate::error::Result;
use crate::labels::AttributeLabels;
use crate::prompt::{render_prompt, KeywordTable, TemplateBank};

/// Prompt sentence for a label tuple; same renderer as the synthetic corpus.
pub fn generate_prompt_text(labels: &AttributeLabels, bank: &TemplateBank, seed: u64) -> Result<String> {
    render_prompt(labels, bank, &KeywordTable::default(), seed)
}
