//! Measurement model `x_k = θ + n_k` with Gaussian noise `n_k ~ N(μ_n, C_n)`,
//! the least-squares and maximum-likelihood estimators of θ, and fitting of
//! the noise parameters from (measured, true) pairs.
//!
//! Errors follow the convention `n = measured − true`, so an oscillometric
//! SBP underestimate shows up as a negative `mu[0]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quality_control::BpReading;
use crate::stats::skew_kurtosis;

pub type Matrix2 = [[f64; 2]; 2];

pub const CONVENTION: &str = "measured_minus_true";
const PSD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimationError {
    #[error("insufficient data: {found} pair(s), need at least {needed}")]
    InsufficientData { found: usize, needed: usize },
    #[error("measurement set is empty")]
    EmptySet,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("measurement count must be at least 1, got {0}")]
    InvalidCount(usize),
    #[error("covariance is not symmetric positive semidefinite")]
    InvalidCovariance,
    #[error("unknown error convention `{0}`")]
    Convention(String),
}

pub type Result<T> = std::result::Result<T, EstimationError>;

/// Mean and covariance of the (SBP, DBP) measurement error, in mmHg and mmHg².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "NoiseModelJson", try_from = "NoiseModelJson")]
pub struct NoiseModel {
    pub mu: [f64; 2],
    pub cov: Matrix2,
    /// Number of pairs the model was fitted on; 0 for a prescribed model.
    pub n_pairs: usize,
}

#[derive(Serialize, Deserialize)]
struct NoiseModelJson {
    mu_sbp_mmhg: f64,
    mu_dbp_mmhg: f64,
    cov: Matrix2,
    n_pairs: usize,
    convention: String,
}

impl From<NoiseModel> for NoiseModelJson {
    fn from(m: NoiseModel) -> Self {
        Self {
            mu_sbp_mmhg: m.mu[0],
            mu_dbp_mmhg: m.mu[1],
            cov: m.cov,
            n_pairs: m.n_pairs,
            convention: CONVENTION.to_string(),
        }
    }
}

impl TryFrom<NoiseModelJson> for NoiseModel {
    type Error = EstimationError;

    fn try_from(j: NoiseModelJson) -> Result<Self> {
        if j.convention != CONVENTION {
            return Err(EstimationError::Convention(j.convention));
        }
        NoiseModel::new([j.mu_sbp_mmhg, j.mu_dbp_mmhg], j.cov, j.n_pairs)
    }
}

impl NoiseModel {
    pub fn new(mu: [f64; 2], cov: Matrix2, n_pairs: usize) -> Result<Self> {
        if mu.iter().chain(cov.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(EstimationError::NonFinite("noise model"));
        }
        let m = Self { mu, cov, n_pairs };
        if !m.is_symmetric_psd() {
            return Err(EstimationError::InvalidCovariance);
        }
        Ok(m)
    }

    /// Zero-mean model with the given SDs and correlation.
    pub fn from_moments(mu: [f64; 2], sd: [f64; 2], rho: f64) -> Result<Self> {
        let off = rho * sd[0] * sd[1];
        Self::new(mu, [[sd[0] * sd[0], off], [off, sd[1] * sd[1]]], 0)
    }

    pub fn eigenvalues(&self) -> [f64; 2] {
        sym_eigenvalues(&self.cov)
    }

    pub fn is_symmetric_psd(&self) -> bool {
        let c = &self.cov;
        let scale = c[0][0].abs().max(c[1][1].abs()).max(1.0);
        (c[0][1] - c[1][0]).abs() <= 1e-12 * scale && self.eigenvalues()[0] >= -PSD_TOL * scale
    }

    pub fn sd(&self) -> [f64; 2] {
        [self.cov[0][0].max(0.0).sqrt(), self.cov[1][1].max(0.0).sqrt()]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("noise model serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// Eigenvalues of a symmetric 2×2 matrix, ascending.
pub fn sym_eigenvalues(c: &Matrix2) -> [f64; 2] {
    let tr = c[0][0] + c[1][1];
    let off = 0.5 * (c[0][1] + c[1][0]);
    let half_diff = 0.5 * (c[0][0] - c[1][1]);
    let r = half_diff.hypot(off);
    [0.5 * tr - r, 0.5 * tr + r]
}

/// Repeated readings `x_1..x_N` assumed to share one true BP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub subject_id: String,
    pub readings: Vec<BpReading>,
    /// Segment indices the readings came from, when known.
    pub segment_indices: Vec<usize>,
}

impl MeasurementSet {
    pub fn new(subject_id: impl Into<String>, readings: Vec<BpReading>) -> Result<Self> {
        if readings.is_empty() {
            return Err(EstimationError::EmptySet);
        }
        if readings.iter().any(|r| !(r.sbp.is_finite() && r.dbp.is_finite())) {
            return Err(EstimationError::NonFinite("measurement set"));
        }
        Ok(Self {
            subject_id: subject_id.into(),
            readings,
            segment_indices: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }
}

/// Fits μ_n (sample mean) and C_n (unbiased sample covariance) from
/// `(estimate, truth)` pairs.
pub fn estimate_noise_model(pairs: &[(BpReading, BpReading)]) -> Result<NoiseModel> {
    if pairs.len() < 2 {
        return Err(EstimationError::InsufficientData {
            found: pairs.len(),
            needed: 2,
        });
    }
    let diffs: Vec<[f64; 2]> = pairs
        .iter()
        .map(|(est, truth)| [est.sbp - truth.sbp, est.dbp - truth.dbp])
        .collect();
    if diffs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(EstimationError::NonFinite("reading pairs"));
    }
    let n = diffs.len() as f64;
    let mu = [
        diffs.iter().map(|d| d[0]).sum::<f64>() / n,
        diffs.iter().map(|d| d[1]).sum::<f64>() / n,
    ];
    let mut cov = [[0.0; 2]; 2];
    for d in &diffs {
        let c = [d[0] - mu[0], d[1] - mu[1]];
        for i in 0..2 {
            for j in 0..2 {
                cov[i][j] += c[i] * c[j];
            }
        }
    }
    cov.iter_mut().flatten().for_each(|v| *v /= n - 1.0);
    cov[1][0] = cov[0][1];
    Ok(NoiseModel {
        mu,
        cov,
        n_pairs: pairs.len(),
    })
}

/// Least squares: the componentwise mean of the readings.
pub fn ls_estimate(set: &MeasurementSet) -> Result<BpReading> {
    if set.readings.is_empty() {
        return Err(EstimationError::EmptySet);
    }
    let n = set.readings.len() as f64;
    let (s, d) = set.readings.iter().fold((0.0, 0.0), |(s, d), r| (s + r.sbp, d + r.dbp));
    Ok(BpReading::new(s / n, d / n))
}

/// Maximum likelihood under Gaussian noise: the mean reading minus μ_n.
pub fn ml_estimate(set: &MeasurementSet, noise: &NoiseModel) -> Result<BpReading> {
    if !(noise.mu[0].is_finite() && noise.mu[1].is_finite()) {
        return Err(EstimationError::NonFinite("noise mean"));
    }
    let ls = ls_estimate(set)?;
    Ok(BpReading::new(ls.sbp - noise.mu[0], ls.dbp - noise.mu[1]))
}

/// Error covariance of either estimator after averaging `n` i.i.d. readings.
pub fn predicted_error_covariance(noise: &NoiseModel, n: usize) -> Result<Matrix2> {
    if n < 1 {
        return Err(EstimationError::InvalidCount(n));
    }
    let k = n as f64;
    Ok([
        [noise.cov[0][0] / k, noise.cov[0][1] / k],
        [noise.cov[1][0] / k, noise.cov[1][1] / k],
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpMap {
    pub pp: f64,
    pub map: f64,
}

/// Pulse pressure and mean arterial pressure `(2·DBP + SBP)/3`.
pub fn derive_pp_map(reading: &BpReading) -> PpMap {
    PpMap {
        pp: reading.sbp - reading.dbp,
        map: (2.0 * reading.dbp + reading.sbp) / 3.0,
    }
}

/// Shape diagnostics of the fitted residuals, reported next to the model
/// since the Gaussian assumption is not enforced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualDiagnostics {
    pub sbp_skewness: Option<f64>,
    pub sbp_excess_kurtosis: Option<f64>,
    pub dbp_skewness: Option<f64>,
    pub dbp_excess_kurtosis: Option<f64>,
}

pub fn residual_diagnostics(pairs: &[(BpReading, BpReading)]) -> ResidualDiagnostics {
    let s: Vec<f64> = pairs.iter().map(|(e, t)| e.sbp - t.sbp).collect();
    let d: Vec<f64> = pairs.iter().map(|(e, t)| e.dbp - t.dbp).collect();
    let sk = skew_kurtosis(&s);
    let dk = skew_kurtosis(&d);
    ResidualDiagnostics {
        sbp_skewness: sk.map(|v| v.0),
        sbp_excess_kurtosis: sk.map(|v| v.1),
        dbp_skewness: dk.map(|v| v.0),
        dbp_excess_kurtosis: dk.map(|v| v.1),
    }
}
