use serde::{Deserialize, Serialize};

use super::{AnalyticsError, Result};
use crate::scheduler::{AnnotationMark, EventKind, SessionLog};
use crate::sensor::{AttentionLabel, StateChange};

// Spans that differ by less than this are the same span.
const SPAN_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackSource {
    Annotation,
    Detection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
    pub label: AttentionLabel,
}

impl Interval {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Alternating attentive/distracted intervals covering a span without gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalTrack {
    pub source: TrackSource,
    intervals: Vec<Interval>,
}

impl IntervalTrack {
    /// Validates contiguity; adjacent intervals with the same label are merged.
    pub fn new(source: TrackSource, intervals: Vec<Interval>) -> Result<Self> {
        let mut merged: Vec<Interval> = Vec::with_capacity(intervals.len());
        for iv in intervals {
            if !(iv.start.is_finite() && iv.end.is_finite() && iv.end >= iv.start) {
                return Err(AnalyticsError::InvalidInput(format!(
                    "interval [{}, {}] is not ordered",
                    iv.start, iv.end
                )));
            }
            if let Some(last) = merged.last_mut() {
                if (iv.start - last.end).abs() > SPAN_TOL {
                    return Err(AnalyticsError::InvalidInput(format!(
                        "gap or overlap between {} and {}",
                        last.end, iv.start
                    )));
                }
                if last.label == iv.label {
                    last.end = iv.end;
                    continue;
                }
            }
            if iv.end > iv.start || merged.is_empty() {
                merged.push(iv);
            }
        }
        if merged.is_empty() {
            return Err(AnalyticsError::InvalidInput("track has no intervals".into()));
        }
        Ok(Self {
            source,
            intervals: merged,
        })
    }

    /// Track over `[start, end]` from label changes; changes outside the span only set
    /// the label in force at its start.
    pub fn from_changes(
        source: TrackSource,
        start: f64,
        end: f64,
        initial: AttentionLabel,
        changes: &[(f64, AttentionLabel)],
    ) -> Result<Self> {
        if !(start.is_finite() && end.is_finite() && end > start) {
            return Err(AnalyticsError::InvalidInput(format!(
                "track span [{start}, {end}] is empty"
            )));
        }
        let mut label = initial;
        let mut cursor = start;
        let mut intervals = Vec::new();
        for &(t, next) in changes {
            if t <= start {
                label = next;
                continue;
            }
            if t >= end {
                break;
            }
            if next != label {
                intervals.push(Interval {
                    start: cursor,
                    end: t,
                    label,
                });
                cursor = t;
                label = next;
            }
        }
        intervals.push(Interval {
            start: cursor,
            end,
            label,
        });
        Self::new(source, intervals)
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn start(&self) -> f64 {
        self.intervals[0].start
    }

    pub fn end(&self) -> f64 {
        self.intervals[self.intervals.len() - 1].end
    }

    pub fn duration(&self) -> f64 {
        self.end() - self.start()
    }

    pub fn label_at(&self, t: f64) -> Option<AttentionLabel> {
        self.intervals
            .iter()
            .find(|iv| iv.start <= t && t < iv.end)
            .map(|iv| iv.label)
    }

    /// The same track with every time multiplied by `factor`.
    pub fn rescaled(&self, factor: f64) -> Self {
        Self {
            source: self.source,
            intervals: self
                .intervals
                .iter()
                .map(|iv| Interval {
                    start: iv.start * factor,
                    end: iv.end * factor,
                    label: iv.label,
                })
                .collect(),
        }
    }
}

pub fn total_distracted_time(track: &IntervalTrack) -> f64 {
    track
        .intervals
        .iter()
        .filter(|iv| iv.label == AttentionLabel::Distracted)
        .map(Interval::duration)
        .sum()
}

pub fn distraction_count(track: &IntervalTrack) -> usize {
    track
        .intervals
        .iter()
        .filter(|iv| iv.label == AttentionLabel::Distracted && iv.duration() > 0.0)
        .count()
}

/// Annotated attention over `[start, end]`; attentive until the first annotation.
pub fn annotation_track(log: &SessionLog, start: f64, end: f64) -> Result<IntervalTrack> {
    let changes: Vec<(f64, AttentionLabel)> = log
        .events()
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::Annotation { mark } => Some((
                e.t,
                match mark {
                    AnnotationMark::DistractionStart => AttentionLabel::Distracted,
                    AnnotationMark::Refocus => AttentionLabel::Attentive,
                },
            )),
            _ => None,
        })
        .collect();
    IntervalTrack::from_changes(TrackSource::Annotation, start, end, AttentionLabel::Attentive, &changes)
}

/// Sensor detections logged by the server over `[start, end]`.
pub fn detection_track(log: &SessionLog, start: f64, end: f64) -> Result<IntervalTrack> {
    let changes: Vec<(f64, AttentionLabel)> = log
        .events()
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::DetectionChange { state } => Some((e.t, state)),
            _ => None,
        })
        .collect();
    IntervalTrack::from_changes(TrackSource::Detection, start, end, AttentionLabel::Attentive, &changes)
}

/// Detection track from offline sensor output.
pub fn detection_track_from_changes(
    changes: &[StateChange],
    start: f64,
    end: f64,
) -> Result<IntervalTrack> {
    let changes: Vec<(f64, AttentionLabel)> = changes.iter().map(|c| (c.t, c.state)).collect();
    IntervalTrack::from_changes(TrackSource::Detection, start, end, AttentionLabel::Attentive, &changes)
}

/// Duration-weighted agreement between annotations and detections, in minutes.
///
/// Field names are `<annotated>_<detected>`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub attentive_attentive: f64,
    pub attentive_distracted: f64,
    pub distracted_attentive: f64,
    pub distracted_distracted: f64,
}

impl ConfusionMatrix {
    pub fn from_minutes(aa: f64, ad: f64, da: f64, dd: f64) -> Self {
        Self {
            attentive_attentive: aa,
            attentive_distracted: ad,
            distracted_attentive: da,
            distracted_distracted: dd,
        }
    }

    pub fn total(&self) -> f64 {
        self.attentive_attentive
            + self.attentive_distracted
            + self.distracted_attentive
            + self.distracted_distracted
    }

    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0.0).then(|| (self.attentive_attentive + self.distracted_distracted) / total)
    }

    /// Fraction of detected-distracted time that was annotated distracted.
    pub fn precision(&self) -> Option<f64> {
        let detected = self.attentive_distracted + self.distracted_distracted;
        (detected > 0.0).then(|| self.distracted_distracted / detected)
    }

    pub fn recall(&self) -> Option<f64> {
        let actual = self.distracted_attentive + self.distracted_distracted;
        (actual > 0.0).then(|| self.distracted_distracted / actual)
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        self.attentive_attentive += other.attentive_attentive;
        self.attentive_distracted += other.attentive_distracted;
        self.distracted_attentive += other.distracted_attentive;
        self.distracted_distracted += other.distracted_distracted;
    }

    fn cell_mut(&mut self, annotated: AttentionLabel, detected: AttentionLabel) -> &mut f64 {
        use AttentionLabel::*;
        match (annotated, detected) {
            (Attentive, Attentive) => &mut self.attentive_attentive,
            (Attentive, Distracted) => &mut self.attentive_distracted,
            (Distracted, Attentive) => &mut self.distracted_attentive,
            (Distracted, Distracted) => &mut self.distracted_distracted,
        }
    }
}

pub fn confusion_matrix(annotation: &IntervalTrack, detection: &IntervalTrack) -> Result<ConfusionMatrix> {
    if (annotation.start() - detection.start()).abs() > SPAN_TOL
        || (annotation.end() - detection.end()).abs() > SPAN_TOL
    {
        return Err(AnalyticsError::SpanMismatch {
            annotation: (annotation.start(), annotation.end()),
            detection: (detection.start(), detection.end()),
        });
    }
    let mut m = ConfusionMatrix::default();
    let (a, d) = (annotation.intervals(), detection.intervals());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < d.len() {
        let lo = a[i].start.max(d[j].start);
        let hi = a[i].end.min(d[j].end);
        if hi > lo {
            *m.cell_mut(a[i].label, d[j].label) += (hi - lo) / 60.0;
        }
        if a[i].end <= d[j].end {
            i += 1;
        } else {
            j += 1;
        }
    }
    Ok(m)
}
