//! Session-log analysis: recovery times, distracted time and counts, pattern attribution,
//! annotation/detection agreement and the hypothesis tests over them.

mod attribution;
mod episodes;
mod hypothesis;
mod report;
pub mod special;
mod track;

use thiserror::Error;

pub use attribution::{attribution_from_counts, pattern_attribution, PatternAttribution};
pub use episodes::{extract_episodes, recovery_time_stats, Episode, RecoveryStats};
pub use hypothesis::{
    chi_square_test, eta_squared_from_f, one_way_anova, paired_t_test, unpaired_t_test, AnovaResult, EffectSize,
    GroupStats, PairwiseComparison, TestResult,
};
pub use report::{
    render_svg, render_text, report, ConfusionSummary, ModeAnova, Omission, PartReport, Report,
    SessionInput, SessionReport,
};
pub use track::{
    annotation_track, confusion_matrix, detection_track, detection_track_from_changes,
    distraction_count, total_distracted_time, ConfusionMatrix, Interval, IntervalTrack,
    TrackSource,
};

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("malformed log at t = {t}: {reason}")]
    MalformedLog { t: f64, reason: String },
    #[error("annotation span {annotation:?} differs from detection span {detection:?}")]
    SpanMismatch {
        annotation: (f64, f64),
        detection: (f64, f64),
    },
    #[error("degenerate contingency table: {0}")]
    DegenerateTable(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, AnalyticsError>;
