//! Agreement and accuracy statistics for simulated and corrected readings.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimation::{ls_estimate, ml_estimate, EstimationError, MeasurementSet, NoiseModel};
use crate::oscillometry::PairedReading;
use crate::quality_control::BpReading;
use crate::stats::{mean_sd, quantile_sorted};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("need at least {needed} samples, got {found}")]
    TooFew { found: usize, needed: usize },
    #[error("group size must be at least 1")]
    InvalidGroupSize,
    #[error("unknown method `{0}` (expected LS or ML)")]
    UnknownMethod(String),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "LS")]
    Ls,
    #[serde(rename = "ML")]
    Ml,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Ls => "LS",
            Method::Ml => "ML",
        })
    }
}

impl FromStr for Method {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "LS" => Ok(Method::Ls),
            "ML" => Ok(Method::Ml),
            _ => Err(EvalError::UnknownMethod(s.to_string())),
        }
    }
}

impl Method {
    pub fn estimate(self, set: &MeasurementSet, noise: &NoiseModel) -> std::result::Result<BpReading, EstimationError> {
        match self {
            Method::Ls => ls_estimate(set),
            Method::Ml => ml_estimate(set, noise),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Sbp,
    Dbp,
}

impl Component {
    pub fn of(self, r: &BpReading) -> f64 {
        match self {
            Component::Sbp => r.sbp,
            Component::Dbp => r.dbp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub method: Method,
    pub n: usize,
    pub sbp_error: f64,
    pub dbp_error: f64,
    pub subject_id: String,
}

impl ErrorSample {
    pub fn component(&self, c: Component) -> f64 {
        match c {
            Component::Sbp => self.sbp_error,
            Component::Dbp => self.dbp_error,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlandAltmanSummary {
    pub bias: f64,
    pub sd: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    pub count: usize,
}

const LOA_Z: f64 = 1.96;

/// Bias and 95% limits of agreement of `estimate − truth`.
pub fn bland_altman(pairs: &[(BpReading, BpReading)], component: Component) -> Result<BlandAltmanSummary> {
    let diffs: Vec<f64> = pairs.iter().map(|(e, t)| component.of(e) - component.of(t)).collect();
    let (Some(bias), Some(sd)) = mean_sd(&diffs) else {
        return Err(EvalError::TooFew {
            found: pairs.len(),
            needed: 2,
        });
    };
    Ok(BlandAltmanSummary {
        bias,
        sd,
        loa_low: bias - LOA_Z * sd,
        loa_high: bias + LOA_Z * sd,
        count: pairs.len(),
    })
}

/// Scatter points `((estimate + truth)/2, estimate − truth)`.
pub fn bland_altman_points(pairs: &[(BpReading, BpReading)], component: Component) -> Vec<(f64, f64)> {
    pairs
        .iter()
        .map(|(e, t)| {
            let (a, b) = (component.of(e), component.of(t));
            (0.5 * (a + b), a - b)
        })
        .collect()
}

/// `n` consecutive readings of one subject with the mean of their truths.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementGroup {
    pub set: MeasurementSet,
    pub truth: BpReading,
}

/// Splits each subject's readings (in segment order) into consecutive groups
/// of `n`. Leftover readings are dropped.
pub fn group_measurements(readings: &[PairedReading], n: usize) -> Result<Vec<MeasurementGroup>> {
    if n == 0 {
        return Err(EvalError::InvalidGroupSize);
    }
    let mut by_subject: BTreeMap<&str, Vec<&PairedReading>> = BTreeMap::new();
    for r in readings {
        by_subject.entry(r.simulated.subject_id.as_str()).or_default().push(r);
    }
    let mut groups = Vec::new();
    for (subject, mut rs) in by_subject {
        rs.sort_by_key(|r| r.simulated.segment_index);
        for chunk in rs.chunks_exact(n) {
            let k = n as f64;
            let truth = BpReading::new(
                chunk.iter().map(|r| r.truth.sbp).sum::<f64>() / k,
                chunk.iter().map(|r| r.truth.dbp).sum::<f64>() / k,
            );
            let mut set = MeasurementSet::new(subject, chunk.iter().map(|r| r.simulated.reading).collect())?;
            set.segment_indices = chunk.iter().map(|r| r.simulated.segment_index).collect();
            groups.push(MeasurementGroup { set, truth });
        }
    }
    Ok(groups)
}

/// One error sample per (group, method).
pub fn evaluate_methods(
    groups: &[MeasurementGroup],
    noise: &NoiseModel,
    methods: &[Method],
) -> Result<Vec<ErrorSample>> {
    let mut out = Vec::with_capacity(groups.len() * methods.len());
    for &method in methods {
        for g in groups {
            let est = method.estimate(&g.set, noise)?;
            out.push(ErrorSample {
                method,
                n: g.set.len(),
                sbp_error: est.sbp - g.truth.sbp,
                dbp_error: est.dbp - g.truth.dbp,
                subject_id: g.set.subject_id.clone(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaeStd {
    /// Mean absolute error.
    pub mae: f64,
    /// Sample SD of the signed errors.
    pub sd: f64,
    /// Mean signed error.
    pub mean: f64,
}

pub fn mae_std(errors: &[f64]) -> Result<MaeStd> {
    let (Some(mean), Some(sd)) = mean_sd(errors) else {
        return Err(EvalError::TooFew {
            found: errors.len(),
            needed: 2,
        });
    };
    let mae = errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len() as f64;
    Ok(MaeStd { mae, sd, mean })
}

/// One row of the method × N accuracy table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: Method,
    pub n: usize,
    pub sbp_mae: Option<f64>,
    pub sbp_sd: Option<f64>,
    pub dbp_mae: Option<f64>,
    pub dbp_sd: Option<f64>,
    pub sbp_mean: Option<f64>,
    pub dbp_mean: Option<f64>,
    pub count: usize,
}

impl TableRow {
    pub fn from_samples(method: Method, n: usize, samples: &[&ErrorSample]) -> Self {
        let s: Vec<f64> = samples.iter().map(|e| e.sbp_error).collect();
        let d: Vec<f64> = samples.iter().map(|e| e.dbp_error).collect();
        let ms = mae_std(&s).ok();
        let md = mae_std(&d).ok();
        Self {
            method,
            n,
            sbp_mae: ms.map(|m| m.mae),
            sbp_sd: ms.map(|m| m.sd),
            dbp_mae: md.map(|m| m.mae),
            dbp_sd: md.map(|m| m.sd),
            sbp_mean: ms.map(|m| m.mean),
            dbp_mean: md.map(|m| m.mean),
            count: samples.len(),
        }
    }
}

/// Pooled table: one row per (method, n) in the given order.
pub fn method_table(samples: &[ErrorSample], methods: &[Method], ns: &[usize]) -> Vec<TableRow> {
    let mut rows = Vec::new();
    for &m in methods {
        for &n in ns {
            let sel: Vec<&ErrorSample> = samples.iter().filter(|e| e.method == m && e.n == n).collect();
            rows.push(TableRow::from_samples(m, n, &sel));
        }
    }
    rows
}

/// Histogram plus Gaussian kernel density of an error sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPdf {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub bandwidth: f64,
    pub density_x: Vec<f64>,
    pub density_y: Vec<f64>,
}

impl ErrorPdf {
    /// Trapezoidal integral of the smoothed density.
    pub fn integral(&self) -> f64 {
        self.density_x
            .windows(2)
            .zip(self.density_y.windows(2))
            .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
            .sum()
    }

    pub fn mode(&self) -> f64 {
        let (i, _) =
            self.density_y.iter().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, &y)| if y > acc.1 { (i, y) } else { acc },
            );
        self.density_x[i]
    }
}

const MIN_PDF_SAMPLES: usize = 10;
const MAX_BINS: usize = 1000;

/// Freedman-Diaconis histogram and Silverman-bandwidth Gaussian KDE.
pub fn error_pdf(errors: &[f64]) -> Result<ErrorPdf> {
    let n = errors.len();
    if n < MIN_PDF_SAMPLES {
        return Err(EvalError::TooFew {
            found: n,
            needed: MIN_PDF_SAMPLES,
        });
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[n - 1]);
    let range = hi - lo;
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let sd = mean_sd(errors).1.unwrap_or(0.0);
    let nf = n as f64;

    let mut width = 2.0 * iqr * nf.powf(-1.0 / 3.0);
    if width <= 0.0 {
        width = 3.49 * sd * nf.powf(-1.0 / 3.0);
    }
    let (bin_edges, counts) = if range <= 0.0 || width <= 0.0 {
        let half = 0.5 * lo.abs().max(1.0) * 1e-3;
        (vec![lo - half, lo + half], vec![n])
    } else {
        let bins = ((range / width).ceil() as usize).clamp(1, MAX_BINS);
        let w = range / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|i| lo + w * i as f64).collect();
        let mut counts = vec![0usize; bins];
        for &x in &sorted {
            let k = (((x - lo) / w) as usize).min(bins - 1);
            counts[k] += 1;
        }
        (edges, counts)
    };

    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let mut h = 0.9 * spread * nf.powf(-0.2);
    if !(h > 0.0) {
        h = 1e-3 * lo.abs().max(1.0);
    }
    let start = lo - 5.0 * h;
    let span = range + 10.0 * h;
    let points = ((span / (0.25 * h)).ceil() as usize).clamp(512, 20_000);
    let dx = span / (points - 1) as f64;
    let norm = 1.0 / (nf * h * (2.0 * std::f64::consts::PI).sqrt());
    let density_x: Vec<f64> = (0..points).map(|i| start + dx * i as f64).collect();
    let density_y = density_x
        .iter()
        .map(|&x| {
            let a = sorted.partition_point(|&v| v < x - 8.0 * h);
            let b = sorted.partition_point(|&v| v <= x + 8.0 * h);
            sorted[a..b]
                .iter()
                .map(|&v| {
                    let z = (x - v) / h;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect();
    Ok(ErrorPdf {
        bin_edges,
        counts,
        bandwidth: h,
        density_x,
        density_y,
    })
}
