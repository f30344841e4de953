//! Cuff-deflation simulation on continuous arterial pressure.
//!
//! The cuff pressure falls linearly from its initial value starting at the
//! segment's first sample. The waveform is linear between samples, so each
//! sample interval holds at most one crossing, located in closed form. The
//! first crossing reads SBP and the last reads DBP.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quality_control::{BpReading, Segment};
use crate::stats::mean_sd;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CuffProfile {
    /// mmHg
    pub initial_pressure: f64,
    /// mmHg/s, positive
    pub deflation_rate: f64,
}

impl CuffProfile {
    pub fn new(initial_pressure: f64, deflation_rate: f64) -> Result<Self, SimError> {
        if !(initial_pressure > 0.0 && initial_pressure.is_finite())
            || !(deflation_rate > 0.0 && deflation_rate.is_finite())
        {
            return Err(SimError::InvalidProfile {
                initial_pressure,
                deflation_rate,
            });
        }
        Ok(Self {
            initial_pressure,
            deflation_rate,
        })
    }

    pub fn pressure_at(&self, t: f64) -> f64 {
        self.initial_pressure - self.deflation_rate * t
    }
}

/// 180 mmHg at 2.5 mmHg/s, or 230 mmHg at 3.5 mmHg/s for elevated-BP subjects.
pub fn default_profile(hypertensive: bool) -> CuffProfile {
    if hypertensive {
        CuffProfile {
            initial_pressure: 230.0,
            deflation_rate: 3.5,
        }
    } else {
        CuffProfile {
            initial_pressure: 180.0,
            deflation_rate: 2.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Error, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimErrorKind {
    #[error("segment not accepted")]
    NotAccepted,
    #[error("cuff too low")]
    CuffTooLow,
    #[error("no intersection")]
    NoIntersection,
    #[error("diastolic unreachable")]
    DbpUnreachable,
    #[error("insufficient crossings")]
    InsufficientCrossings,
    #[error("invalid profile")]
    InvalidProfile,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("segment {subject_id}#{index} is not accepted")]
    NotAccepted { subject_id: String, index: usize },
    #[error("initial cuff pressure {initial} mmHg does not exceed waveform maximum {sbp} mmHg")]
    CuffTooLow { initial: f64, sbp: f64 },
    #[error("cuff ramp never meets the waveform")]
    NoIntersection,
    #[error("cuff ends at {final_pressure} mmHg, above the waveform minimum {dbp} mmHg")]
    DbpUnreachable { final_pressure: f64, dbp: f64 },
    #[error("only {found} crossing(s) on a non-constant waveform")]
    InsufficientCrossings { found: usize },
    #[error("invalid cuff profile ({initial_pressure} mmHg, {deflation_rate} mmHg/s)")]
    InvalidProfile { initial_pressure: f64, deflation_rate: f64 },
    #[error("empty waveform")]
    Empty,
}

impl SimError {
    pub fn kind(&self) -> SimErrorKind {
        match self {
            SimError::NotAccepted { .. } => SimErrorKind::NotAccepted,
            SimError::CuffTooLow { .. } => SimErrorKind::CuffTooLow,
            SimError::NoIntersection | SimError::Empty => SimErrorKind::NoIntersection,
            SimError::DbpUnreachable { .. } => SimErrorKind::DbpUnreachable,
            SimError::InsufficientCrossings { .. } => SimErrorKind::InsufficientCrossings,
            SimError::InvalidProfile { .. } => SimErrorKind::InvalidProfile,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedReading {
    pub subject_id: String,
    pub segment_index: usize,
    pub reading: BpReading,
    /// Seconds from segment start to the first crossing.
    pub t_sbp: f64,
    /// Seconds from segment start to the last crossing.
    pub t_dbp: f64,
    pub profile: CuffProfile,
}

/// Times where the linearly interpolated waveform meets the cuff ramp. A
/// crossing exactly on a sample is reported once.
pub fn crossing_times(samples: &[f64], fs: f64, profile: &CuffProfile) -> Vec<f64> {
    let dt = 1.0 / fs;
    let diff = |i: usize| samples[i] - profile.pressure_at(i as f64 * dt);
    let mut out = Vec::new();
    let n = samples.len();
    for i in 0..n {
        let d0 = diff(i);
        if d0 == 0.0 {
            out.push(i as f64 * dt);
            continue;
        }
        if i + 1 < n {
            let d1 = diff(i + 1);
            if d1 != 0.0 && (d0 < 0.0) != (d1 < 0.0) {
                out.push((i as f64 + d0 / (d0 - d1)) * dt);
            }
        }
    }
    out
}

/// Simulates one reading on raw samples. A single crossing is accepted only
/// for a constant waveform, where it is exact.
pub fn simulate_samples(samples: &[f64], fs: f64, profile: &CuffProfile) -> Result<(BpReading, f64, f64), SimError> {
    if samples.is_empty() {
        return Err(SimError::Empty);
    }
    let (min, max) = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if profile.initial_pressure <= max {
        return Err(SimError::CuffTooLow {
            initial: profile.initial_pressure,
            sbp: max,
        });
    }
    let crossings = crossing_times(samples, fs, profile);
    let (Some(&t_first), Some(&t_last)) = (crossings.first(), crossings.last()) else {
        return Err(SimError::NoIntersection);
    };
    let final_pressure = profile.pressure_at((samples.len() - 1) as f64 / fs);
    if final_pressure > min {
        return Err(SimError::DbpUnreachable {
            final_pressure,
            dbp: min,
        });
    }
    if crossings.len() < 2 && max != min {
        return Err(SimError::InsufficientCrossings { found: crossings.len() });
    }
    let reading = BpReading::new(profile.pressure_at(t_first), profile.pressure_at(t_last));
    Ok((reading, t_first, t_last))
}

pub fn simulate_cuff_reading(segment: &Segment, profile: &CuffProfile) -> Result<SimulatedReading, SimError> {
    if !segment.is_accepted() {
        return Err(SimError::NotAccepted {
            subject_id: segment.subject_id.clone(),
            index: segment.index,
        });
    }
    let (reading, t_sbp, t_dbp) = simulate_samples(&segment.samples, segment.sampling_rate_hz, profile)?;
    Ok(SimulatedReading {
        subject_id: segment.subject_id.clone(),
        segment_index: segment.index,
        reading,
        t_sbp,
        t_dbp,
        profile: *profile,
    })
}

/// A simulated reading next to its segment's ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedReading {
    pub simulated: SimulatedReading,
    pub truth: BpReading,
}

impl PairedReading {
    pub fn error(&self) -> [f64; 2] {
        [
            self.simulated.reading.sbp - self.truth.sbp,
            self.simulated.reading.dbp - self.truth.dbp,
        ]
    }

    pub fn as_pair(&self) -> (BpReading, BpReading) {
        (self.simulated.reading, self.truth)
    }
}

/// Simulates every accepted segment with the profile chosen per segment.
/// Failures are returned as counts by kind; the readings keep input order.
pub fn simulate_all(
    segments: &[Segment],
    profile_for: impl Fn(&Segment) -> CuffProfile + Sync,
) -> (Vec<PairedReading>, BTreeMap<SimErrorKind, usize>) {
    let results: Vec<Result<PairedReading, SimError>> = segments
        .par_iter()
        .map(|seg| {
            let sim = simulate_cuff_reading(seg, &profile_for(seg))?;
            let truth = seg.truth.ok_or(SimError::NotAccepted {
                subject_id: seg.subject_id.clone(),
                index: seg.index,
            })?;
            Ok(PairedReading { simulated: sim, truth })
        })
        .collect();
    let mut excluded = BTreeMap::new();
    let mut ok = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(p) => ok.push(p),
            Err(e) => *excluded.entry(e.kind()).or_insert(0) += 1,
        }
    }
    (ok, excluded)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub rate: f64,
    pub count: usize,
    pub sbp_bias: Option<f64>,
    pub sbp_sd: Option<f64>,
    pub dbp_bias: Option<f64>,
    pub dbp_sd: Option<f64>,
    pub excluded: BTreeMap<SimErrorKind, usize>,
    #[serde(skip)]
    pub readings: Vec<PairedReading>,
}

/// Simulates all segments at each deflation rate, keeping each segment's
/// initial cuff pressure fixed across rates.
pub fn sweep_deflation_rates(
    segments: &[Segment],
    rates: &[f64],
    initial_pressure: impl Fn(&Segment) -> f64 + Sync,
) -> Result<Vec<RateSummary>, SimError> {
    rates
        .iter()
        .map(|&rate| {
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(SimError::InvalidProfile {
                    initial_pressure: f64::NAN,
                    deflation_rate: rate,
                });
            }
            let (readings, excluded) = simulate_all(segments, |s| CuffProfile {
                initial_pressure: initial_pressure(s),
                deflation_rate: rate,
            });
            let sbp: Vec<f64> = readings.iter().map(|p| p.error()[0]).collect();
            let dbp: Vec<f64> = readings.iter().map(|p| p.error()[1]).collect();
            let (sbp_bias, sbp_sd) = mean_sd(&sbp);
            let (dbp_bias, dbp_sd) = mean_sd(&dbp);
            Ok(RateSummary {
                rate,
                count: readings.len(),
                sbp_bias,
                sbp_sd,
                dbp_bias,
                dbp_sd,
                excluded,
                readings,
            })
        })
        .collect()
}

/// Writes the paired-readings CSV for one or more rate runs.
pub fn write_paired_readings<W: std::io::Write>(pairs: &[PairedReading], writer: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "subject_id",
        "segment_index",
        "rate",
        "sbp_est",
        "dbp_est",
        "sbp_truth",
        "dbp_truth",
        "t_sbp",
        "t_dbp",
    ])?;
    for p in pairs {
        let s = &p.simulated;
        wtr.write_record([
            s.subject_id.clone(),
            s.segment_index.to_string(),
            s.profile.deflation_rate.to_string(),
            s.reading.sbp.to_string(),
            s.reading.dbp.to_string(),
            p.truth.sbp.to_string(),
            p.truth.dbp.to_string(),
            s.t_sbp.to_string(),
            s.t_dbp.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
