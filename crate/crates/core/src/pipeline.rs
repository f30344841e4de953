//! End-to-end stages: ingest, QC, simulation, noise fitting, evaluation
//! and respiration analysis. Every stage orders its output by subject id
//! and segment index so aggregates do not depend on scheduling.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{PipelineConfig, Protocol};
use crate::estimation::{estimate_noise_model, residual_diagnostics, EstimationError, NoiseModel, ResidualDiagnostics};
use crate::evaluation::{evaluate_methods, group_measurements, method_table, ErrorSample, EvalError, Method, TableRow};
use crate::oscillometry::{simulate_all, sweep_deflation_rates, PairedReading, RateSummary, SimError, SimErrorKind};
use crate::quality_control::{qc_filter, segment_record, BpReading, QcAttrition, Segment};
use crate::respiration::{
    average_psd, average_psd_regridded, dominant_band, DominantBand, EnvelopeSpectra, RespirationError,
    SpectrumEstimate, Welch, RESPIRATORY_BAND_HZ,
};
use crate::waveform_io::{read_csv_waveform_file, read_wfdb_record, WaveformError, WaveformRecord};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(#[from] crate::config::ConfigError),
    #[error("ingest: {0}")]
    Ingest(String),
    #[error("qc: no accepted segments out of {total}")]
    NoAcceptedSegments { total: usize },
    #[error("simulate: {0}")]
    Simulate(#[from] SimError),
    #[error("simulate: no segment produced a reading")]
    NoReadings,
    #[error("fit-noise: {0}")]
    Fit(EstimationError),
    #[error("fit-noise: {0}")]
    Split(String),
    #[error("evaluate: {0}")]
    Evaluate(#[from] EvalError),
    #[error("respiration: {0}")]
    Respiration(#[from] RespirationError),
    #[error("report: {0}")]
    Report(String),
    #[error("{stage}: internal invariant violated: {message}")]
    Invariant { stage: &'static str, message: String },
}

impl PipelineError {
    /// Process exit code: 1 usage, 2 data, 3 invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Invariant { .. } => 3,
            PipelineError::Fit(EstimationError::InvalidCovariance) => 3,
            PipelineError::Respiration(RespirationError::EnvelopeCrossing { .. }) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, PartialEq)]
pub struct IngestFailure {
    pub path: PathBuf,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub records: Vec<WaveformRecord>,
    pub failures: Vec<IngestFailure>,
}

fn is_input(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("hea" | "csv")
    )
}

/// Expands directories into their `.hea`/`.csv` files, sorted by path.
pub fn discover_inputs(paths: &[PathBuf]) -> (Vec<PathBuf>, Vec<IngestFailure>) {
    let mut files = BTreeSet::new();
    let mut failures = Vec::new();
    for p in paths {
        if p.is_dir() {
            match std::fs::read_dir(p) {
                Ok(entries) => {
                    for e in entries.flatten() {
                        let path = e.path();
                        if path.is_file() && is_input(&path) {
                            files.insert(path);
                        }
                    }
                }
                Err(e) => failures.push(IngestFailure {
                    path: p.clone(),
                    message: e.to_string(),
                }),
            }
        } else if p.is_file() {
            files.insert(p.clone());
        } else {
            failures.push(IngestFailure {
                path: p.clone(),
                message: "no such file or directory".into(),
            });
        }
    }
    (files.into_iter().collect(), failures)
}

pub fn read_input(
    path: &Path,
    csv_fs: f64,
    channel: Option<&str>,
) -> std::result::Result<WaveformRecord, WaveformError> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("csv") => read_csv_waveform_file(path, csv_fs),
        Some("hea") => read_wfdb_record(path, channel),
        _ => Err(WaveformError::UnsupportedFormat(path.display().to_string())),
    }
}

/// Reads every input. Per-file failures are collected rather than fatal;
/// duplicate subject ids keep the first file in path order.
pub fn ingest(paths: &[PathBuf], cfg: &PipelineConfig) -> Ingested {
    let (files, mut failures) = discover_inputs(paths);
    let results: Vec<_> = files
        .par_iter()
        .map(|f| read_input(f, cfg.csv_sampling_rate_hz, cfg.channel.as_deref()))
        .collect();
    let mut records: Vec<WaveformRecord> = Vec::new();
    let mut seen = BTreeSet::new();
    for (f, r) in files.iter().zip(results) {
        match r {
            Ok(rec) if !seen.insert(rec.subject_id.clone()) => failures.push(IngestFailure {
                path: f.clone(),
                message: format!("duplicate subject id `{}`", rec.subject_id),
            }),
            Ok(rec) => {
                let hyper = cfg.is_hypertensive(&rec.subject_id);
                records.push(rec.with_hypertensive(hyper));
            }
            Err(e) => failures.push(IngestFailure {
                path: f.clone(),
                message: e.to_string(),
            }),
        }
    }
    records.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    Ingested { records, failures }
}

/// Segments and filters all records; output is ordered by (subject, index).
pub fn run_qc(records: &[WaveformRecord]) -> Vec<Segment> {
    let mut per_record: Vec<(String, Vec<Segment>)> = records
        .par_iter()
        .map(|r| {
            let segs = segment_record(r)
                .into_iter()
                .map(|s| qc_filter(s, r.hypertensive))
                .collect();
            (r.subject_id.clone(), segs)
        })
        .collect();
    per_record.sort_by(|a, b| a.0.cmp(&b.0));
    per_record.into_iter().flat_map(|(_, s)| s).collect()
}

pub fn accepted(segments: &[Segment]) -> Vec<Segment> {
    segments.iter().filter(|s| s.is_accepted()).cloned().collect()
}

#[derive(Debug, Clone)]
pub struct Simulation {
    /// Readings at each subject's configured profile.
    pub readings: Vec<PairedReading>,
    pub excluded: BTreeMap<SimErrorKind, usize>,
    /// One entry per swept rate, if any.
    pub sweeps: Vec<RateSummary>,
}

pub fn run_simulation(accepted: &[Segment], cfg: &PipelineConfig) -> Result<Simulation> {
    if accepted.is_empty() {
        return Err(PipelineError::NoAcceptedSegments { total: 0 });
    }
    let (readings, excluded) = simulate_all(accepted, |s| cfg.profile(s.hypertensive));
    let sweeps = sweep_deflation_rates(accepted, &cfg.rates, |s| cfg.profile(s.hypertensive).initial_pressure)?;
    Ok(Simulation {
        readings,
        excluded,
        sweeps,
    })
}

/// Subjects used to fit the noise model and to evaluate the estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectSplit {
    pub protocol: Protocol,
    pub fit: Vec<String>,
    pub eval: Vec<String>,
}

pub fn split_subjects(readings: &[PairedReading], protocol: Protocol, seed: u64) -> Result<SubjectSplit> {
    let subjects: Vec<String> = readings
        .iter()
        .map(|r| r.simulated.subject_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    match protocol {
        Protocol::InSample => Ok(SubjectSplit {
            protocol,
            fit: subjects.clone(),
            eval: subjects,
        }),
        Protocol::Holdout(k) => {
            if k >= subjects.len() {
                return Err(PipelineError::Split(format!(
                    "holdout:{k} needs more than {k} subjects with readings, found {}",
                    subjects.len()
                )));
            }
            let mut shuffled = subjects;
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut fit = shuffled[..k].to_vec();
            let mut eval = shuffled[k..].to_vec();
            fit.sort();
            eval.sort();
            Ok(SubjectSplit { protocol, fit, eval })
        }
    }
}

pub fn subset(readings: &[PairedReading], subjects: &[String]) -> Vec<PairedReading> {
    let keep: BTreeSet<&str> = subjects.iter().map(String::as_str).collect();
    readings
        .iter()
        .filter(|r| keep.contains(r.simulated.subject_id.as_str()))
        .cloned()
        .collect()
}

#[derive(Debug, Clone)]
pub struct NoiseFit {
    pub model: NoiseModel,
    pub diagnostics: ResidualDiagnostics,
}

pub fn fit_noise(readings: &[PairedReading]) -> Result<NoiseFit> {
    let pairs: Vec<_> = readings.iter().map(PairedReading::as_pair).collect();
    let model = estimate_noise_model(&pairs).map_err(PipelineError::Fit)?;
    if !model.is_symmetric_psd() {
        return Err(PipelineError::Invariant {
            stage: "fit-noise",
            message: "fitted covariance is not positive semi-definite".into(),
        });
    }
    Ok(NoiseFit {
        model,
        diagnostics: residual_diagnostics(&pairs),
    })
}

/// One noise model per subject, for deployments that calibrate each subject
/// separately. Subjects with fewer than two pairs or a degenerate covariance
/// are left out.
pub fn fit_noise_by_subject(readings: &[PairedReading]) -> BTreeMap<String, NoiseModel> {
    let mut by_subject: BTreeMap<&str, Vec<(BpReading, BpReading)>> = BTreeMap::new();
    for r in readings {
        by_subject
            .entry(r.simulated.subject_id.as_str())
            .or_default()
            .push(r.as_pair());
    }
    by_subject
        .into_iter()
        .filter_map(|(id, pairs)| {
            let m = estimate_noise_model(&pairs).ok()?;
            m.is_symmetric_psd().then(|| (id.to_string(), m))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub samples: Vec<ErrorSample>,
    pub table: Vec<TableRow>,
    pub by_subject: BTreeMap<String, Vec<TableRow>>,
}

pub fn run_evaluation(
    readings: &[PairedReading],
    noise: &NoiseModel,
    ns: &[usize],
    methods: &[Method],
) -> Result<Evaluation> {
    let mut samples = Vec::new();
    for &n in ns {
        let groups = group_measurements(readings, n)?;
        samples.extend(evaluate_methods(&groups, noise, methods)?);
    }
    let table = method_table(&samples, methods, ns);
    let mut per: BTreeMap<String, Vec<ErrorSample>> = BTreeMap::new();
    for s in &samples {
        per.entry(s.subject_id.clone()).or_default().push(s.clone());
    }
    let by_subject = per
        .into_iter()
        .map(|(id, s)| (id, method_table(&s, methods, ns)))
        .collect();
    Ok(Evaluation {
        samples,
        table,
        by_subject,
    })
}

#[derive(Debug, Clone)]
pub struct SubjectSpectrum {
    pub subject_id: String,
    pub n_segments: usize,
    pub spectrum: SpectrumEstimate,
    pub dominant: DominantBand,
}

#[derive(Debug, Clone)]
pub struct RespirationSummary {
    pub subjects: Vec<SubjectSpectrum>,
    pub cohort: SpectrumEstimate,
    pub dominant: DominantBand,
    /// Segments skipped, keyed by reason.
    pub skipped: BTreeMap<String, usize>,
}

fn skip_reason(e: &RespirationError) -> &'static str {
    match e {
        RespirationError::InsufficientPeaks { .. } => "insufficient_peaks",
        RespirationError::SignalTooShort { .. } => "signal_too_short",
        RespirationError::EnvelopeCrossing { .. } => "envelope_crossing",
        _ => "other",
    }
}

/// Per-subject mean envelope PSD over accepted segments and the cohort mean
/// of those subject spectra.
pub fn run_respiration(accepted: &[Segment], cfg: &PipelineConfig) -> Result<RespirationSummary> {
    let mut by_subject: BTreeMap<&str, Vec<&Segment>> = BTreeMap::new();
    for s in accepted {
        by_subject.entry(s.subject_id.as_str()).or_default().push(s);
    }
    let mut skipped: BTreeMap<String, usize> = BTreeMap::new();
    let mut subjects = Vec::new();
    for (id, segs) in by_subject {
        let fs = segs[0].sampling_rate_hz;
        let welch = Welch::new(fs, cfg.welch())?;
        let results: Vec<_> = segs
            .par_iter()
            .map(|s| EnvelopeSpectra::from_signal(&s.samples, &welch, cfg.map_window_s).and_then(|e| e.pooled()))
            .collect();
        let mut spectra = Vec::new();
        for r in results {
            match r {
                Ok(s) => spectra.push(s),
                Err(e) => *skipped.entry(skip_reason(&e).to_string()).or_default() += 1,
            }
        }
        if spectra.is_empty() {
            continue;
        }
        let spectrum = average_psd(&spectra)?;
        let dominant = dominant_band(&spectrum, RESPIRATORY_BAND_HZ.0, RESPIRATORY_BAND_HZ.1)?;
        subjects.push(SubjectSpectrum {
            subject_id: id.to_string(),
            n_segments: spectra.len(),
            spectrum,
            dominant,
        });
    }
    if subjects.is_empty() {
        return Err(PipelineError::Respiration(RespirationError::NoSpectra));
    }
    let all: Vec<SpectrumEstimate> = subjects.iter().map(|s| s.spectrum.clone()).collect();
    let cohort = average_psd_regridded(&all)?;
    let dominant = dominant_band(&cohort, RESPIRATORY_BAND_HZ.0, RESPIRATORY_BAND_HZ.1)?;
    Ok(RespirationSummary {
        subjects,
        cohort,
        dominant,
        skipped,
    })
}

/// Everything a full run produces, before serialization.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub config: PipelineConfig,
    pub n_records: usize,
    pub ingest_failures: Vec<IngestFailure>,
    pub segments: Vec<Segment>,
    pub qc: QcAttrition,
    pub simulation: Simulation,
    pub split: SubjectSplit,
    pub noise: NoiseFit,
    pub evaluation: Evaluation,
    pub respiration: RespirationSummary,
}

pub fn ingest_required(cfg: &PipelineConfig) -> Result<Ingested> {
    let ing = ingest(&cfg.data, cfg);
    if ing.records.is_empty() {
        let detail = ing
            .failures
            .iter()
            .map(|f| format!("{}: {}", f.path.display(), f.message))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(PipelineError::Ingest(if detail.is_empty() {
            "no input records found".into()
        } else {
            format!("no readable records ({detail})")
        }));
    }
    Ok(ing)
}

/// QC through simulation, shared by the stage subcommands.
pub fn segments_and_simulation(cfg: &PipelineConfig) -> Result<(Ingested, Vec<Segment>, Simulation)> {
    let ing = ingest_required(cfg)?;
    let segments = run_qc(&ing.records);
    let acc = accepted(&segments);
    if acc.is_empty() {
        return Err(PipelineError::NoAcceptedSegments { total: segments.len() });
    }
    let sim = run_simulation(&acc, cfg)?;
    if sim.readings.is_empty() {
        return Err(PipelineError::NoReadings);
    }
    Ok((ing, segments, sim))
}

pub fn run(cfg: &PipelineConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let (ing, segments, simulation) = segments_and_simulation(cfg)?;
    let qc = QcAttrition::from_segments(&segments);
    let split = split_subjects(&simulation.readings, cfg.protocol, cfg.seed)?;
    let noise = fit_noise(&subset(&simulation.readings, &split.fit))?;
    let evaluation = run_evaluation(
        &subset(&simulation.readings, &split.eval),
        &noise.model,
        &cfg.n,
        &cfg.methods,
    )?;
    let respiration = run_respiration(&accepted(&segments), cfg)?;
    Ok(RunArtifacts {
        config: cfg.clone(),
        n_records: ing.records.len(),
        ingest_failures: ing.failures,
        segments,
        qc,
        simulation,
        split,
        noise,
        evaluation,
        respiration,
    })
}
