//! Respiratory modulation analysis of the pressure envelopes.
//!
//! A centered moving average tracks MAP and serves as a dynamic threshold.
//! One key point is taken per supra-threshold run (roughly one per beat) and
//! a monotone cubic through the key points gives the envelope. The envelope
//! spectra come from a Welch estimator.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interp::Pchip;

pub const DEFAULT_MAP_WINDOW_S: f64 = 10.0;
/// Spectral content below this frequency is treated as drift.
pub const DRIFT_FLOOR_HZ: f64 = 0.05;
pub const RESPIRATORY_BAND_HZ: (f64, f64) = (0.2, 0.4);
pub const ENVELOPE_DOMINANCE_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum RespirationError {
    #[error("empty input signal")]
    Empty,
    #[error("averaging window of {0} samples is shorter than one sample")]
    InvalidWindow(f64),
    #[error("threshold length {threshold} does not match signal length {signal}")]
    LengthMismatch { signal: usize, threshold: usize },
    #[error("signal contains non-finite samples")]
    NonFinite,
    #[error("insufficient peaks: found {found} key point(s), need at least 2")]
    InsufficientPeaks { found: usize },
    #[error("lower envelope exceeds upper envelope by {excess} mmHg")]
    EnvelopeCrossing { excess: f64 },
    #[error("signal of {len} samples is shorter than one {needed}-sample window")]
    SignalTooShort { len: usize, needed: usize },
    #[error("invalid Welch settings: {0}")]
    InvalidSettings(String),
    #[error("spectra do not share a frequency grid")]
    GridMismatch,
    #[error("no spectra to average")]
    NoSpectra,
    #[error("band [{lo}, {hi}] Hz is outside the spectrum or reversed")]
    InvalidBand { lo: f64, hi: f64 },
    #[error("no frequency bins inside band [{lo}, {hi}] Hz")]
    EmptyBand { lo: f64, hi: f64 },
}

pub type Result<T> = std::result::Result<T, RespirationError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Upper,
    Lower,
}

/// Centered moving average, truncated (shorter window) near the edges.
pub fn moving_average_map(samples: &[f64], fs: f64, window_s: f64) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(RespirationError::Empty);
    }
    let width = (window_s * fs).round();
    if !(width >= 1.0) {
        return Err(RespirationError::InvalidWindow(window_s * fs));
    }
    let width = width as usize;
    let n = samples.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &v in samples {
        acc += v;
        prefix.push(acc);
    }
    let back = width / 2;
    let ahead = (width - 1) / 2;
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(back);
            let hi = (i + ahead).min(n - 1);
            (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
        })
        .collect())
}

/// Indices of key points: the first maximum of each maximal run of samples at
/// or above the threshold.
pub fn key_points(samples: &[f64], threshold: &[f64]) -> Vec<usize> {
    let mut keys = Vec::new();
    let mut best: Option<usize> = None;
    for (i, (&x, &t)) in samples.iter().zip(threshold).enumerate() {
        if x >= t {
            best = match best {
                Some(b) if samples[b] >= x => Some(b),
                _ => Some(i),
            };
        } else if let Some(b) = best.take() {
            keys.push(b);
        }
    }
    keys.extend(best);
    keys
}

/// Upper or lower envelope at every sample time. The lower envelope is the
/// negated upper envelope of the negated signal and threshold.
pub fn extract_envelope(samples: &[f64], fs: f64, map_track: &[f64], polarity: Polarity) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(RespirationError::Empty);
    }
    if map_track.len() != samples.len() {
        return Err(RespirationError::LengthMismatch {
            signal: samples.len(),
            threshold: map_track.len(),
        });
    }
    if samples.iter().chain(map_track).any(|v| !v.is_finite()) {
        return Err(RespirationError::NonFinite);
    }
    let sign = match polarity {
        Polarity::Upper => 1.0,
        Polarity::Lower => -1.0,
    };
    let x: Vec<f64> = samples.iter().map(|v| sign * v).collect();
    let thr: Vec<f64> = map_track.iter().map(|v| sign * v).collect();
    let keys = key_points(&x, &thr);
    if keys.len() < 2 {
        return Err(RespirationError::InsufficientPeaks { found: keys.len() });
    }
    let kt: Vec<f64> = keys.iter().map(|&i| i as f64 / fs).collect();
    let kv: Vec<f64> = keys.iter().map(|&i| x[i]).collect();
    let spline = Pchip::new(kt, kv).ok_or(RespirationError::InsufficientPeaks { found: keys.len() })?;
    Ok(spline
        .eval_sorted((0..samples.len()).map(|i| i as f64 / fs))
        .into_iter()
        .map(|v| sign * v)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopePair {
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
    pub fs: f64,
}

impl EnvelopePair {
    /// Both envelopes of `samples` using a MAP track over `window_s` seconds.
    /// Fails if the lower envelope rises above the upper one anywhere.
    pub fn extract(samples: &[f64], fs: f64, window_s: f64) -> Result<Self> {
        let map = moving_average_map(samples, fs, window_s)?;
        let upper = extract_envelope(samples, fs, &map, Polarity::Upper)?;
        let lower = extract_envelope(samples, fs, &map, Polarity::Lower)?;
        let pair = Self { upper, lower, fs };
        let excess = pair.max_crossing();
        if excess > ENVELOPE_DOMINANCE_TOL {
            return Err(RespirationError::EnvelopeCrossing { excess });
        }
        Ok(pair)
    }

    /// Largest amount by which `lower` exceeds `upper` (≤ 0 when dominated).
    pub fn max_crossing(&self) -> f64 {
        self.upper
            .iter()
            .zip(&self.lower)
            .map(|(u, l)| l - u)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Envelope difference, a pulse-pressure track.
    pub fn pulse_pressure(&self) -> Vec<f64> {
        self.upper.iter().zip(&self.lower).map(|(u, l)| u - l).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchSettings {
    pub window_s: f64,
    pub overlap: f64,
}

impl Default for WelchSettings {
    fn default() -> Self {
        Self {
            window_s: 30.0,
            overlap: 0.5,
        }
    }
}

/// One-sided power spectral density in mmHg²/Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEstimate {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
    pub window_s: f64,
    pub overlap: f64,
}

impl SpectrumEstimate {
    pub fn df(&self) -> f64 {
        if self.freqs.len() > 1 {
            self.freqs[1] - self.freqs[0]
        } else {
            0.0
        }
    }

    /// Σ power·Δf, which approximates the variance of the source signal.
    pub fn total_power(&self) -> f64 {
        self.power.iter().sum::<f64>() * self.df()
    }

    pub fn peak_frequency(&self) -> f64 {
        let (i, _) = self.power.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc },
        );
        self.freqs[i]
    }

    fn same_grid(&self, other: &Self) -> bool {
        self.freqs.len() == other.freqs.len() && (self.df() - other.df()).abs() <= 1e-12 * self.df().abs().max(1.0)
    }
}

fn periodic_hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Welch estimator with per-window mean removal, a Hann window and
/// density scaling, reused across signals of the same configuration.
pub struct Welch {
    settings: WelchSettings,
    fs: f64,
    nperseg: usize,
    step: usize,
    window: Vec<f64>,
    scale: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl Welch {
    pub fn new(fs: f64, settings: WelchSettings) -> Result<Self> {
        if !(fs.is_finite() && fs > 0.0) {
            return Err(RespirationError::InvalidSettings(format!("sampling rate {fs}")));
        }
        if !(0.0..1.0).contains(&settings.overlap) {
            return Err(RespirationError::InvalidSettings(format!(
                "overlap {}",
                settings.overlap
            )));
        }
        let nperseg = (settings.window_s * fs).round();
        if !(nperseg >= 2.0) {
            return Err(RespirationError::InvalidSettings(format!(
                "window {} s",
                settings.window_s
            )));
        }
        let nperseg = nperseg as usize;
        let noverlap = (settings.overlap * nperseg as f64).round() as usize;
        let step = (nperseg - noverlap.min(nperseg - 1)).max(1);
        let window = periodic_hann(nperseg);
        let s2: f64 = window.iter().map(|w| w * w).sum();
        let fft = FftPlanner::new().plan_fft_forward(nperseg);
        Ok(Self {
            settings,
            fs,
            nperseg,
            step,
            window,
            scale: 1.0 / (fs * s2),
            fft,
        })
    }

    pub fn segment_len(&self) -> usize {
        self.nperseg
    }

    pub fn estimate(&self, x: &[f64]) -> Result<SpectrumEstimate> {
        let n = self.nperseg;
        if x.len() < n {
            return Err(RespirationError::SignalTooShort {
                len: x.len(),
                needed: n,
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(RespirationError::NonFinite);
        }
        let nbins = n / 2 + 1;
        let mut acc = vec![0.0; nbins];
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut count = 0usize;
        let mut start = 0usize;
        while start + n <= x.len() {
            let chunk = &x[start..start + n];
            let mean = chunk.iter().sum::<f64>() / n as f64;
            for ((b, &v), &w) in buf.iter_mut().zip(chunk).zip(&self.window) {
                *b = Complex::new((v - mean) * w, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (a, c) in acc.iter_mut().zip(&buf) {
                *a += c.norm_sqr();
            }
            count += 1;
            start += self.step;
        }
        let norm = self.scale / count as f64;
        let power: Vec<f64> = acc
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let one_sided = if k == 0 || (n.is_multiple_of(2) && k == n / 2) {
                    1.0
                } else {
                    2.0
                };
                p * norm * one_sided
            })
            .collect();
        let freqs = (0..nbins).map(|k| k as f64 * self.fs / n as f64).collect();
        Ok(SpectrumEstimate {
            freqs,
            power,
            window_s: self.settings.window_s,
            overlap: self.settings.overlap,
        })
    }
}

pub fn welch_psd(x: &[f64], fs: f64, settings: WelchSettings) -> Result<SpectrumEstimate> {
    Welch::new(fs, settings)?.estimate(x)
}

/// Pointwise mean of spectra that share one grid.
pub fn average_psd(spectra: &[SpectrumEstimate]) -> Result<SpectrumEstimate> {
    let first = spectra.first().ok_or(RespirationError::NoSpectra)?;
    if spectra.iter().any(|s| !first.same_grid(s)) {
        return Err(RespirationError::GridMismatch);
    }
    let mut power = vec![0.0; first.power.len()];
    for s in spectra {
        for (a, p) in power.iter_mut().zip(&s.power) {
            *a += p;
        }
    }
    let n = spectra.len() as f64;
    power.iter_mut().for_each(|p| *p /= n);
    Ok(SpectrumEstimate {
        freqs: first.freqs.clone(),
        power,
        window_s: first.window_s,
        overlap: first.overlap,
    })
}

/// Linear re-gridding onto `freqs`, which must lie within the source range.
pub fn regrid(spec: &SpectrumEstimate, freqs: &[f64]) -> Result<SpectrumEstimate> {
    let last = *spec.freqs.last().ok_or(RespirationError::NoSpectra)?;
    let mut power = Vec::with_capacity(freqs.len());
    let mut j = 0usize;
    for &f in freqs {
        if f < spec.freqs[0] - 1e-12 || f > last + 1e-9 {
            return Err(RespirationError::GridMismatch);
        }
        while j + 2 < spec.freqs.len() && spec.freqs[j + 1] < f {
            j += 1;
        }
        if spec.freqs.len() == 1 {
            power.push(spec.power[0]);
            continue;
        }
        let (f0, f1) = (spec.freqs[j], spec.freqs[j + 1]);
        let w = ((f - f0) / (f1 - f0)).clamp(0.0, 1.0);
        power.push(spec.power[j] * (1.0 - w) + spec.power[j + 1] * w);
    }
    Ok(SpectrumEstimate {
        freqs: freqs.to_vec(),
        power,
        window_s: spec.window_s,
        overlap: spec.overlap,
    })
}

/// Averages spectra after re-gridding all of them onto the grid with the
/// narrowest frequency span.
pub fn average_psd_regridded(spectra: &[SpectrumEstimate]) -> Result<SpectrumEstimate> {
    let target = spectra
        .iter()
        .min_by(|a, b| {
            let fa = a.freqs.last().copied().unwrap_or(0.0);
            let fb = b.freqs.last().copied().unwrap_or(0.0);
            fa.total_cmp(&fb)
        })
        .ok_or(RespirationError::NoSpectra)?;
    if spectra.iter().all(|s| target.same_grid(s)) {
        return average_psd(spectra);
    }
    let regridded = spectra
        .iter()
        .map(|s| regrid(s, &target.freqs))
        .collect::<Result<Vec<_>>>()?;
    average_psd(&regridded)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DominantBand {
    pub peak_hz: f64,
    pub band_fraction: f64,
}

/// Peak frequency inside `[lo, hi]` and the share of non-drift power
/// (above 0.05 Hz) that falls inside the band.
pub fn dominant_band(spec: &SpectrumEstimate, lo: f64, hi: f64) -> Result<DominantBand> {
    let nyquist = spec.freqs.last().copied().unwrap_or(0.0);
    if !(lo >= 0.0 && lo <= hi && hi <= nyquist + 1e-9) {
        return Err(RespirationError::InvalidBand { lo, hi });
    }
    let mut peak: Option<(f64, f64)> = None;
    let mut in_band = 0.0;
    let mut above_floor = 0.0;
    for (&f, &p) in spec.freqs.iter().zip(&spec.power) {
        if f > DRIFT_FLOOR_HZ {
            above_floor += p;
        }
        if f >= lo && f <= hi {
            in_band += p;
            if peak.is_none_or(|(_, best)| p > best) {
                peak = Some((f, p));
            }
        }
    }
    let (peak_hz, _) = peak.ok_or(RespirationError::EmptyBand { lo, hi })?;
    let band_fraction = if above_floor > 0.0 { in_band / above_floor } else { 0.0 };
    Ok(DominantBand { peak_hz, band_fraction })
}

/// Per-segment envelope spectra.
#[derive(Debug, Clone)]
pub struct EnvelopeSpectra {
    pub upper: SpectrumEstimate,
    pub lower: SpectrumEstimate,
}

impl EnvelopeSpectra {
    pub fn from_signal(samples: &[f64], welch: &Welch, map_window_s: f64) -> Result<Self> {
        let pair = EnvelopePair::extract(samples, welch.fs, map_window_s)?;
        Ok(Self {
            upper: welch.estimate(&pair.upper)?,
            lower: welch.estimate(&pair.lower)?,
        })
    }

    /// Mean of the upper and lower envelope spectra.
    pub fn pooled(&self) -> Result<SpectrumEstimate> {
        average_psd(&[self.upper.clone(), self.lower.clone()])
    }
}
