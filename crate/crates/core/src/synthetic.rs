//! Seeded generator of arterial pressure waveforms with respiratory
//! modulation, slow drift and injectable artifacts.
//!
//! Each beat uses a fixed normalised template (systolic upstroke plus a
//! dicrotic wave) scaled between the instantaneous diastolic level and
//! diastolic + pulse pressure. Respiration enters twice: as a common-mode
//! offset on the whole waveform and as amplitude modulation of the pulse
//! pressure. Both are what the envelope spectra are expected to recover.

use crate::waveform_io::{WaveformError, WaveformRecord, MISSING};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::TAU;

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectParams {
    pub subject_id: String,
    pub fs: f64,
    pub duration_s: f64,
    pub heart_rate_hz: f64,
    /// Relative SD of beat-to-beat interval jitter.
    pub hrv_sd: f64,
    /// Relative depth of respiratory sinus arrhythmia.
    pub rsa_depth: f64,
    pub sbp: f64,
    pub dbp: f64,
    pub resp_rate_hz: f64,
    /// Common-mode respiratory swing amplitude (mmHg).
    pub resp_offset_mmhg: f64,
    /// Relative pulse-pressure modulation depth.
    pub resp_am_depth: f64,
    /// Amplitude of slow baseline wander (mmHg).
    pub drift_mmhg: f64,
    pub noise_sd: f64,
    pub hypertensive: bool,
}

impl SubjectParams {
    pub fn normotensive(subject_id: impl Into<String>) -> Self {
        Self {
            subject_id: subject_id.into(),
            fs: 125.0,
            duration_s: 600.0,
            heart_rate_hz: 1.2,
            hrv_sd: 0.02,
            rsa_depth: 0.03,
            sbp: 120.0,
            dbp: 75.0,
            resp_rate_hz: 0.3,
            resp_offset_mmhg: 3.0,
            resp_am_depth: 0.08,
            drift_mmhg: 4.0,
            noise_sd: 0.3,
            hypertensive: false,
        }
    }

    /// Draws plausible per-subject parameters.
    pub fn random(subject_id: impl Into<String>, rng: &mut impl Rng) -> Self {
        let mut p = Self::normotensive(subject_id);
        p.heart_rate_hz = rng.random_range(0.9..1.4);
        p.sbp = rng.random_range(105.0..145.0);
        p.dbp = rng.random_range(58.0f64..85.0).min(p.sbp - 38.0);
        p.resp_rate_hz = rng.random_range(0.22..0.38);
        p.resp_offset_mmhg = rng.random_range(1.0..3.5);
        p.resp_am_depth = rng.random_range(0.04..0.12);
        p.drift_mmhg = rng.random_range(1.0..6.0);
        p
    }
}

/// Localised corruption injected after synthesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Artifact {
    /// Holds the value at `start_s` for `duration_s`.
    Flat { start_s: f64, duration_s: f64 },
    /// Overwrites a short stretch with a constant pressure.
    Level { start_s: f64, duration_s: f64, value: f64 },
    /// Marks samples as missing.
    Gap { start_s: f64, duration_s: f64 },
}

impl Artifact {
    fn span(start_s: f64, duration_s: f64, fs: f64, len: usize) -> std::ops::Range<usize> {
        let a = ((start_s * fs).round().max(0.0) as usize).min(len);
        let b = (a + (duration_s * fs).round().max(0.0) as usize).min(len);
        a..b
    }

    pub fn apply(&self, samples: &mut [f64], fs: f64) {
        let len = samples.len();
        match *self {
            Artifact::Flat { start_s, duration_s } => {
                let r = Self::span(start_s, duration_s, fs, len);
                if let Some(&v) = samples.get(r.start) {
                    samples[r].fill(v);
                }
            }
            Artifact::Level {
                start_s,
                duration_s,
                value,
            } => samples[Self::span(start_s, duration_s, fs, len)].fill(value),
            Artifact::Gap { start_s, duration_s } => samples[Self::span(start_s, duration_s, fs, len)].fill(MISSING),
        }
    }
}

const TEMPLATE_GRID: usize = 2048;

/// Normalised beat template on phase [0, 1): min 0, max 1, periodic.
#[derive(Debug, Clone)]
pub struct BeatTemplate {
    table: Vec<f64>,
}

impl Default for BeatTemplate {
    fn default() -> Self {
        let wrapped = |phi: f64, c: f64, w: f64| -> f64 {
            (-1..=1)
                .map(|k| {
                    let d = (phi - c + k as f64) / w;
                    (-0.5 * d * d).exp()
                })
                .sum()
        };
        let raw: Vec<f64> = (0..TEMPLATE_GRID)
            .map(|i| {
                let phi = i as f64 / TEMPLATE_GRID as f64;
                wrapped(phi, 0.18, 0.065) + 0.6 * wrapped(phi, 0.42, 0.11)
            })
            .collect();
        let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Self {
            table: raw.iter().map(|v| (v - lo) / (hi - lo)).collect(),
        }
    }
}

impl BeatTemplate {
    pub fn eval(&self, phase: f64) -> f64 {
        let x = phase.rem_euclid(1.0) * TEMPLATE_GRID as f64;
        let i = x.floor() as usize % TEMPLATE_GRID;
        let j = (i + 1) % TEMPLATE_GRID;
        let f = x - x.floor();
        self.table[i] * (1.0 - f) + self.table[j] * f
    }
}

/// Synthesises one subject's waveform. Deterministic for a given `rng` state.
pub fn synthesize(
    params: &SubjectParams,
    artifacts: &[Artifact],
    rng: &mut impl Rng,
) -> Result<WaveformRecord, WaveformError> {
    let n = (params.duration_s * params.fs).round() as usize;
    let template = BeatTemplate::default();
    let jitter = Normal::new(0.0, params.hrv_sd.max(0.0)).expect("finite sd");
    let noise = Normal::new(0.0, params.noise_sd.max(0.0)).expect("finite sd");
    let resp_phase = rng.random_range(0.0..TAU);
    let drift_f = [
        rng.random_range(1.0 / 900.0..1.0 / 400.0),
        rng.random_range(1.0 / 300.0..1.0 / 120.0),
    ];
    let drift_ph = [rng.random_range(0.0..TAU), rng.random_range(0.0..TAU)];
    let pp0 = params.sbp - params.dbp;

    let mut samples = Vec::with_capacity(n);
    let mut beat_start = -rng.random_range(0.0..1.0 / params.heart_rate_hz);
    let mut beat_len = 1.0 / params.heart_rate_hz;
    for i in 0..n {
        let t = i as f64 / params.fs;
        while t >= beat_start + beat_len {
            beat_start += beat_len;
            let rsa = 1.0 - params.rsa_depth * (TAU * params.resp_rate_hz * beat_start + resp_phase).sin();
            beat_len = (rsa * (1.0 + jitter.sample(rng)) / params.heart_rate_hz).max(0.25 / params.heart_rate_hz);
        }
        let resp = (TAU * params.resp_rate_hz * t + resp_phase).sin();
        let drift = params.drift_mmhg
            * 0.5
            * ((TAU * drift_f[0] * t + drift_ph[0]).sin() + (TAU * drift_f[1] * t + drift_ph[1]).sin());
        let pp = pp0 * (1.0 + params.resp_am_depth * resp);
        let base = params.dbp + params.resp_offset_mmhg * resp + drift;
        let phase = (t - beat_start) / beat_len;
        samples.push(base + pp * template.eval(phase) + noise.sample(rng));
    }
    for a in artifacts {
        a.apply(&mut samples, params.fs);
    }
    Ok(
        WaveformRecord::new(params.subject_id.clone(), params.fs, samples, "ABP")?
            .with_hypertensive(params.hypertensive),
    )
}

/// The bundled demonstration cohort: six subjects, one hypertensive, with
/// a known set of artifacts spread across segments.
pub fn demo_cohort(seed: u64, duration_s: f64) -> Result<Vec<WaveformRecord>, WaveformError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for k in 1..=6 {
        let id = format!("syn{k:02}");
        let mut p = SubjectParams::random(&id, &mut rng);
        p.duration_s = duration_s;
        let artifacts: Vec<Artifact> = match k {
            1 => vec![Artifact::Flat {
                start_s: 3.0 * 60.0 + 12.0,
                duration_s: 2.0,
            }],
            2 => vec![Artifact::Level {
                start_s: 5.0 * 60.0 + 30.0,
                duration_s: 0.1,
                value: 260.0,
            }],
            3 => vec![Artifact::Level {
                start_s: 7.0 * 60.0 + 5.0,
                duration_s: 1.0,
                value: 12.0,
            }],
            4 => {
                p.hypertensive = true;
                p.sbp = rng.random_range(182.0..195.0);
                p.dbp = rng.random_range(95.0..105.0);
                p.drift_mmhg = 2.0;
                vec![]
            }
            5 => vec![Artifact::Gap {
                start_s: 2.0 * 60.0 + 40.0,
                duration_s: 1.5,
            }],
            _ => vec![Artifact::Flat {
                start_s: 4.0 * 60.0 + 20.0,
                duration_s: 0.4,
            }],
        };
        out.push(synthesize(&p, &artifacts, &mut rng)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quality_control::{qc_filter, segment_record, RejectReason, SegmentStatus};

    #[test]
    fn template_normalised_and_periodic() {
        let t = BeatTemplate::default();
        let vals: Vec<f64> = (0..1000).map(|i| t.eval(i as f64 / 1000.0)).collect();
        let hi = vals.iter().cloned().fold(f64::MIN, f64::max);
        let lo = vals.iter().cloned().fold(f64::MAX, f64::min);
        assert!((hi - 1.0).abs() < 1e-3 && lo.abs() < 1e-3);
        assert!((t.eval(0.0) - t.eval(1.0)).abs() < 1e-12);
        assert!((t.eval(0.999_999) - t.eval(0.0)).abs() < 1e-3);
    }

    #[test]
    fn same_seed_same_waveform() {
        let p = SubjectParams::normotensive("a");
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let a = synthesize(&p, &[], &mut r1).unwrap();
        let b = synthesize(&p, &[], &mut r2).unwrap();
        assert_eq!(a.samples.len(), 75_000);
        assert!(a
            .samples
            .iter()
            .zip(&b.samples)
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn beat_extremes_near_targets() {
        let mut p = SubjectParams::normotensive("a");
        p.drift_mmhg = 0.0;
        p.resp_offset_mmhg = 0.0;
        p.resp_am_depth = 0.0;
        p.noise_sd = 0.0;
        let rec = synthesize(&p, &[], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let hi = rec.samples.iter().cloned().fold(f64::MIN, f64::max);
        let lo = rec.samples.iter().cloned().fold(f64::MAX, f64::min);
        assert!((hi - 120.0).abs() < 0.5, "{hi}");
        assert!((lo - 75.0).abs() < 0.5, "{lo}");
    }

    #[test]
    fn demo_cohort_artifacts_hit_expected_rules() {
        let cohort = demo_cohort(7, 600.0).unwrap();
        let reasons = |id: &str| -> Vec<SegmentStatus> {
            let rec = cohort.iter().find(|r| r.subject_id == id).unwrap();
            segment_record(rec)
                .into_iter()
                .map(|s| qc_filter(s, rec.hypertensive).status)
                .collect()
        };
        assert_eq!(reasons("syn01")[3], SegmentStatus::Rejected(RejectReason::Saturation));
        assert_eq!(reasons("syn02")[5], SegmentStatus::Rejected(RejectReason::Range));
        assert_eq!(reasons("syn03")[7], SegmentStatus::Rejected(RejectReason::Range));
        assert_eq!(reasons("syn05")[2], SegmentStatus::Rejected(RejectReason::Missing));
        assert_eq!(reasons("syn06")[4], SegmentStatus::Accepted);
        assert!(reasons("syn04").iter().all(|s| *s == SegmentStatus::Accepted));
    }
}
