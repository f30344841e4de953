//! Fixed-length segmentation and threshold-based rejection of defective
//! arterial pressure segments.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::waveform_io::WaveformRecord;

pub const SEGMENT_SECONDS: f64 = 60.0;

/// One (SBP, DBP) pair in mmHg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpReading {
    pub sbp: f64,
    pub dbp: f64,
}

impl BpReading {
    pub fn new(sbp: f64, dbp: f64) -> Self {
        Self { sbp, dbp }
    }

    pub fn is_valid(&self) -> bool {
        self.sbp.is_finite() && self.dbp.is_finite() && self.sbp >= self.dbp
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.sbp, self.dbp]
    }

    pub fn from_array(v: [f64; 2]) -> Self {
        Self { sbp: v[0], dbp: v[1] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Range,
    Saturation,
    Missing,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::Range => "range",
            RejectReason::Saturation => "saturation",
            RejectReason::Missing => "missing",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentStatus {
    Pending,
    Accepted,
    Rejected(RejectReason),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub subject_id: String,
    pub index: usize,
    pub samples: Vec<f64>,
    pub sampling_rate_hz: f64,
    pub hypertensive: bool,
    pub status: SegmentStatus,
    /// Present iff `status == Accepted`.
    pub truth: Option<BpReading>,
}

impl Segment {
    pub fn is_accepted(&self) -> bool {
        self.status == SegmentStatus::Accepted
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sampling_rate_hz
    }
}

/// Rejection thresholds in mmHg.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QcThresholds {
    pub lower: f64,
    pub upper: f64,
    pub upper_hypertensive: f64,
    pub saturation_s: f64,
}

impl Default for QcThresholds {
    fn default() -> Self {
        Self {
            lower: 25.0,
            upper: 180.0,
            upper_hypertensive: 230.0,
            saturation_s: 0.5,
        }
    }
}

pub fn samples_per_segment(fs: f64) -> usize {
    (SEGMENT_SECONDS * fs).round() as usize
}

/// Splits a record into consecutive non-overlapping 60 s windows. A trailing
/// partial window is dropped.
pub fn segment_record(record: &WaveformRecord) -> Vec<Segment> {
    let len = samples_per_segment(record.sampling_rate_hz);
    if len == 0 {
        return Vec::new();
    }
    record
        .samples
        .chunks_exact(len)
        .enumerate()
        .map(|(index, chunk)| Segment {
            subject_id: record.subject_id.clone(),
            index,
            samples: chunk.to_vec(),
            sampling_rate_hz: record.sampling_rate_hz,
            hypertensive: record.hypertensive,
            status: SegmentStatus::Pending,
            truth: None,
        })
        .collect()
}

/// Smallest run length (in samples) that spans at least `seconds`.
pub fn saturation_run_length(fs: f64, seconds: f64) -> usize {
    ((seconds * fs).ceil() as usize).max(1)
}

/// True when some run of exactly equal consecutive samples lasts 500 ms or
/// longer.
pub fn detect_saturation(samples: &[f64], sampling_rate_hz: f64) -> bool {
    detect_flat_run(samples, saturation_run_length(sampling_rate_hz, 0.5))
}

pub fn detect_flat_run(samples: &[f64], min_run: usize) -> bool {
    if samples.is_empty() {
        return false;
    }
    let mut run = 1usize;
    if run >= min_run {
        return true;
    }
    for w in samples.windows(2) {
        if w[1] == w[0] {
            run += 1;
            if run >= min_run {
                return true;
            }
        } else {
            run = 1;
        }
    }
    false
}

pub fn qc_filter(segment: Segment, hypertensive: bool) -> Segment {
    qc_filter_with(segment, hypertensive, &QcThresholds::default())
}

/// Sets the segment status. Missing samples are checked first, then the
/// per-sample range, then saturation.
pub fn qc_filter_with(mut segment: Segment, hypertensive: bool, th: &QcThresholds) -> Segment {
    let upper = if hypertensive { th.upper_hypertensive } else { th.upper };
    let status = if segment.samples.is_empty() || segment.samples.iter().any(|v| v.is_nan()) {
        SegmentStatus::Rejected(RejectReason::Missing)
    } else if segment.samples.iter().any(|&v| v < th.lower || v > upper) {
        SegmentStatus::Rejected(RejectReason::Range)
    } else if detect_flat_run(
        &segment.samples,
        saturation_run_length(segment.sampling_rate_hz, th.saturation_s),
    ) {
        SegmentStatus::Rejected(RejectReason::Saturation)
    } else {
        SegmentStatus::Accepted
    };
    segment.hypertensive = hypertensive;
    segment.status = status;
    segment.truth = match status {
        SegmentStatus::Accepted => {
            let (min, max) = segment
                .samples
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            Some(BpReading::new(max, min))
        }
        _ => None,
    };
    segment
}

/// Accepted and rejected counts, overall or for one subject.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QcAttrition {
    pub total: usize,
    pub accepted: usize,
    pub rejected_by_reason: BTreeMap<String, usize>,
}

impl QcAttrition {
    pub fn add(&mut self, segment: &Segment) {
        self.total += 1;
        match segment.status {
            SegmentStatus::Accepted => self.accepted += 1,
            SegmentStatus::Rejected(r) => *self.rejected_by_reason.entry(r.as_str().to_string()).or_default() += 1,
            SegmentStatus::Pending => *self.rejected_by_reason.entry("pending".to_string()).or_default() += 1,
        }
    }

    pub fn from_segments<'a>(segments: impl IntoIterator<Item = &'a Segment>) -> Self {
        let mut a = Self::default();
        for s in segments {
            a.add(s);
        }
        a
    }
}

/// Writes the QC ledger: one row per segment.
pub fn write_qc_ledger<W: Write>(segments: &[Segment], writer: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "subject_id",
        "segment_index",
        "status",
        "reason",
        "sbp_truth",
        "dbp_truth",
    ])?;
    for s in segments {
        let (status, reason) = match s.status {
            SegmentStatus::Accepted => ("accepted", String::new()),
            SegmentStatus::Rejected(r) => ("rejected", r.to_string()),
            SegmentStatus::Pending => ("pending", String::new()),
        };
        let (sbp, dbp) = match s.truth {
            Some(t) => (t.sbp.to_string(), t.dbp.to_string()),
            None => (String::new(), String::new()),
        };
        wtr.write_record([s.subject_id.as_str(), &s.index.to_string(), status, &reason, &sbp, &dbp])?;
    }
    wtr.flush()?;
    Ok(())
}
