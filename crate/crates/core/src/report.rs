//! Serialisable run summary plus the CSV and SVG artefacts behind it.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::estimation::{NoiseModel, ResidualDiagnostics};
use crate::evaluation::{
    bland_altman, bland_altman_points, error_pdf, BlandAltmanSummary, Component, ErrorPdf, ErrorSample, Method,
    TableRow,
};
use crate::oscillometry::{write_paired_readings, CuffProfile, PairedReading, SimErrorKind};
use crate::pipeline::{Evaluation, PipelineError, RespirationSummary, RunArtifacts, Simulation};
use crate::quality_control::{write_qc_ledger, QcAttrition, Segment};
use crate::respiration::RESPIRATORY_BAND_HZ;
use crate::svg::{self, HLine, Line, Panel, Scatter, PALETTE};

type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub seed: u64,
    pub protocol: String,
    pub n: Vec<usize>,
    pub methods: Vec<Method>,
    pub rates: Vec<f64>,
    pub n_records: usize,
    pub ingest_failures: usize,
    pub fit_subjects: Vec<String>,
    pub eval_subjects: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationInfo {
    pub readings: usize,
    pub excluded: BTreeMap<SimErrorKind, usize>,
    pub profile: CuffProfile,
    pub profile_hypertensive: CuffProfile,
}

/// Observed error-SD ratio between group size `n` and `reference_n`, next to
/// the independent-errors prediction `sqrt(reference_n / n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdRatio {
    pub method: Method,
    pub n: usize,
    pub reference_n: usize,
    pub sbp: Option<f64>,
    pub dbp: Option<f64>,
    pub iid_prediction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltmanEntry {
    pub label: String,
    /// `None` for the per-subject default profile.
    pub rate: Option<f64>,
    pub count: usize,
    pub sbp: Option<BlandAltmanSummary>,
    pub dbp: Option<BlandAltmanSummary>,
    pub excluded: BTreeMap<SimErrorKind, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltmanSection {
    pub entries: Vec<BlandAltmanEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectPsd {
    pub subject_id: String,
    pub n_segments: usize,
    pub peak_hz: f64,
    pub band_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdSection {
    pub peak_hz: f64,
    pub band_fraction: f64,
    pub band_hz: [f64; 2],
    pub df_hz: f64,
    pub subjects: Vec<SubjectPsd>,
    pub skipped_segments: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPdfInfo {
    pub method: Method,
    pub n: usize,
    pub component: String,
    pub count: usize,
    pub mode: f64,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub run: RunInfo,
    pub noise_model: NoiseModel,
    pub diagnostics: ResidualDiagnostics,
    pub table: Vec<TableRow>,
    pub table_by_subject: BTreeMap<String, Vec<TableRow>>,
    pub sd_ratio: Vec<SdRatio>,
    pub bland_altman: BlandAltmanSection,
    pub error_pdf: Vec<ErrorPdfInfo>,
    pub psd: PsdSection,
    pub qc: QcAttrition,
    pub simulation: SimulationInfo,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

fn component_name(c: Component) -> &'static str {
    match c {
        Component::Sbp => "sbp",
        Component::Dbp => "dbp",
    }
}

const COMPONENTS: [Component; 2] = [Component::Sbp, Component::Dbp];

pub fn sd_ratios(table: &[TableRow], methods: &[Method], ns: &[usize]) -> Vec<SdRatio> {
    let Some(&reference_n) = ns.first() else {
        return Vec::new();
    };
    let find = |m: Method, n: usize| table.iter().find(|r| r.method == m && r.n == n);
    let ratio = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    };
    let mut out = Vec::new();
    for &m in methods {
        let Some(base) = find(m, reference_n) else { continue };
        for &n in &ns[1..] {
            if let Some(row) = find(m, n) {
                out.push(SdRatio {
                    method: m,
                    n,
                    reference_n,
                    sbp: ratio(row.sbp_sd, base.sbp_sd),
                    dbp: ratio(row.dbp_sd, base.dbp_sd),
                    iid_prediction: (reference_n as f64 / n as f64).sqrt(),
                });
            }
        }
    }
    out
}

fn ba_entry(
    label: String,
    rate: Option<f64>,
    readings: &[PairedReading],
    excluded: &BTreeMap<SimErrorKind, usize>,
) -> BlandAltmanEntry {
    let pairs: Vec<_> = readings.iter().map(PairedReading::as_pair).collect();
    BlandAltmanEntry {
        label,
        rate,
        count: pairs.len(),
        sbp: bland_altman(&pairs, Component::Sbp).ok(),
        dbp: bland_altman(&pairs, Component::Dbp).ok(),
        excluded: excluded.clone(),
    }
}

type BaSource<'a> = (
    String,
    Option<f64>,
    &'a [PairedReading],
    &'a BTreeMap<SimErrorKind, usize>,
);

/// Bland-Altman inputs: one per swept rate, or the default profile when no
/// sweep was requested.
fn ba_sources(sim: &Simulation) -> Vec<BaSource<'_>> {
    if sim.sweeps.is_empty() {
        vec![("default".to_string(), None, sim.readings.as_slice(), &sim.excluded)]
    } else {
        sim.sweeps
            .iter()
            .map(|s| {
                (
                    format!("{} mmHg/s", s.rate),
                    Some(s.rate),
                    s.readings.as_slice(),
                    &s.excluded,
                )
            })
            .collect()
    }
}

pub fn bland_altman_section(sim: &Simulation) -> BlandAltmanSection {
    BlandAltmanSection {
        entries: ba_sources(sim)
            .into_iter()
            .map(|(l, r, rd, ex)| ba_entry(l, r, rd, ex))
            .collect(),
    }
}

/// Error densities per (method, n, component) with enough samples.
pub fn error_pdfs(
    samples: &[ErrorSample],
    methods: &[Method],
    ns: &[usize],
) -> Vec<(Method, usize, Component, ErrorPdf)> {
    let mut out = Vec::new();
    for &m in methods {
        for &n in ns {
            for c in COMPONENTS {
                let errs: Vec<f64> = samples
                    .iter()
                    .filter(|s| s.method == m && s.n == n)
                    .map(|s| s.component(c))
                    .collect();
                if let Ok(pdf) = error_pdf(&errs) {
                    out.push((m, n, c, pdf));
                }
            }
        }
    }
    out
}

pub fn psd_section(resp: &RespirationSummary) -> PsdSection {
    PsdSection {
        peak_hz: resp.dominant.peak_hz,
        band_fraction: resp.dominant.band_fraction,
        band_hz: [RESPIRATORY_BAND_HZ.0, RESPIRATORY_BAND_HZ.1],
        df_hz: resp.cohort.df(),
        subjects: resp
            .subjects
            .iter()
            .map(|s| SubjectPsd {
                subject_id: s.subject_id.clone(),
                n_segments: s.n_segments,
                peak_hz: s.dominant.peak_hz,
                band_fraction: s.dominant.band_fraction,
            })
            .collect(),
        skipped_segments: resp.skipped.clone(),
    }
}

pub fn build_report(a: &RunArtifacts) -> Result<Report> {
    if a.simulation.readings.is_empty() || a.evaluation.samples.is_empty() {
        return Err(PipelineError::Report("empty results: nothing to report".into()));
    }
    let cfg = &a.config;
    let pdfs = error_pdfs(&a.evaluation.samples, &cfg.methods, &cfg.n);
    let report = Report {
        run: RunInfo {
            seed: cfg.seed,
            protocol: cfg.protocol.to_string(),
            n: cfg.n.clone(),
            methods: cfg.methods.clone(),
            rates: cfg.rates.clone(),
            n_records: a.n_records,
            ingest_failures: a.ingest_failures.len(),
            fit_subjects: a.split.fit.clone(),
            eval_subjects: a.split.eval.clone(),
        },
        noise_model: a.noise.model.clone(),
        diagnostics: a.noise.diagnostics,
        table: a.evaluation.table.clone(),
        table_by_subject: a.evaluation.by_subject.clone(),
        sd_ratio: sd_ratios(&a.evaluation.table, &cfg.methods, &cfg.n),
        bland_altman: bland_altman_section(&a.simulation),
        error_pdf: pdfs
            .iter()
            .map(|(m, n, c, p)| ErrorPdfInfo {
                method: *m,
                n: *n,
                component: component_name(*c).to_string(),
                count: p.counts.iter().sum(),
                mode: p.mode(),
                bandwidth: p.bandwidth,
            })
            .collect(),
        psd: psd_section(&a.respiration),
        qc: a.qc.clone(),
        simulation: SimulationInfo {
            readings: a.simulation.readings.len(),
            excluded: a.simulation.excluded.clone(),
            profile: cfg.profile(false),
            profile_hypertensive: cfg.profile(true),
        },
    };
    // NaN would serialize as null and fail to read back, so this doubles as
    // the finiteness check.
    match Report::from_json(&report.to_json()) {
        Ok(back) if back == report => Ok(report),
        _ => Err(PipelineError::Invariant {
            stage: "report",
            message: "report contains non-finite values or does not round-trip".into(),
        }),
    }
}

fn create(out: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = out.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| PipelineError::Report(format!("cannot write {}: {e}", path.display())))
}

fn io_err(name: &str) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Report(format!("{name}: {e}"))
}

fn csv_err(name: &str) -> impl Fn(csv::Error) -> PipelineError + '_ {
    move |e| PipelineError::Report(format!("{name}: {e}"))
}

pub fn ensure_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| PipelineError::Report(format!("cannot create {}: {e}", out.display())))
}

pub fn write_text(out: &Path, name: &str, text: &str) -> Result<()> {
    let mut w = create(out, name)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(io_err(name))
}

pub fn write_qc_outputs(out: &Path, segments: &[Segment]) -> Result<QcAttrition> {
    ensure_dir(out)?;
    write_qc_ledger(segments, create(out, "qc_ledger.csv")?).map_err(csv_err("qc_ledger.csv"))?;
    let attrition = QcAttrition::from_segments(segments);
    write_text(
        out,
        "qc.json",
        &(serde_json::to_string_pretty(&attrition).expect("serializes") + "\n"),
    )?;
    Ok(attrition)
}

pub fn write_simulation_outputs(out: &Path, sim: &Simulation) -> Result<()> {
    ensure_dir(out)?;
    write_paired_readings(&sim.readings, create(out, "paired_readings.csv")?)
        .map_err(csv_err("paired_readings.csv"))?;
    if !sim.sweeps.is_empty() {
        let all: Vec<PairedReading> = sim.sweeps.iter().flat_map(|s| s.readings.iter().cloned()).collect();
        write_paired_readings(&all, create(out, "paired_readings_sweep.csv")?)
            .map_err(csv_err("paired_readings_sweep.csv"))?;
    }
    let section = bland_altman_section(sim);
    let mut w = csv::Writer::from_writer(create(out, "bland_altman_points.csv")?);
    let e = csv_err("bland_altman_points.csv");
    w.write_record(["label", "component", "mean_mmhg", "diff_mmhg"])
        .map_err(&e)?;
    for (label, _, readings, _) in ba_sources(sim) {
        let pairs: Vec<_> = readings.iter().map(PairedReading::as_pair).collect();
        for c in COMPONENTS {
            for (m, d) in bland_altman_points(&pairs, c) {
                w.write_record([label.as_str(), component_name(c), &m.to_string(), &d.to_string()])
                    .map_err(&e)?;
            }
        }
    }
    w.flush().map_err(io_err("bland_altman_points.csv"))?;
    write_text(out, "bland_altman.svg", &bland_altman_svg(sim))?;
    write_text(
        out,
        "bland_altman.json",
        &(serde_json::to_string_pretty(&section).expect("serializes") + "\n"),
    )
}

pub fn write_evaluation_outputs(out: &Path, eval: &Evaluation, methods: &[Method], ns: &[usize]) -> Result<()> {
    ensure_dir(out)?;
    let e = csv_err("error_samples.csv");
    let mut w = csv::Writer::from_writer(create(out, "error_samples.csv")?);
    w.write_record(["method", "n", "subject_id", "sbp_error", "dbp_error"])
        .map_err(&e)?;
    for s in &eval.samples {
        w.write_record([
            s.method.to_string(),
            s.n.to_string(),
            s.subject_id.clone(),
            s.sbp_error.to_string(),
            s.dbp_error.to_string(),
        ])
        .map_err(&e)?;
    }
    w.flush().map_err(io_err("error_samples.csv"))?;

    let pdfs = error_pdfs(&eval.samples, methods, ns);
    let e = csv_err("error_hist.csv");
    let mut h = csv::Writer::from_writer(create(out, "error_hist.csv")?);
    h.write_record(["method", "n", "component", "bin_lo", "bin_hi", "count"])
        .map_err(&e)?;
    let e2 = csv_err("error_density.csv");
    let mut d = csv::Writer::from_writer(create(out, "error_density.csv")?);
    d.write_record(["method", "n", "component", "x_mmhg", "density"])
        .map_err(&e2)?;
    for (m, n, c, p) in &pdfs {
        let (m, n, c) = (m.to_string(), n.to_string(), component_name(*c));
        for (i, count) in p.counts.iter().enumerate() {
            h.write_record([
                m.as_str(),
                &n,
                c,
                &p.bin_edges[i].to_string(),
                &p.bin_edges[i + 1].to_string(),
                &count.to_string(),
            ])
            .map_err(&e)?;
        }
        for (x, y) in p.density_x.iter().zip(&p.density_y) {
            d.write_record([m.as_str(), &n, c, &x.to_string(), &y.to_string()])
                .map_err(&e2)?;
        }
    }
    h.flush().map_err(io_err("error_hist.csv"))?;
    d.flush().map_err(io_err("error_density.csv"))?;
    write_text(out, "error_density.svg", &error_density_svg(&pdfs))?;
    write_text(
        out,
        "table.json",
        &(serde_json::to_string_pretty(&eval.table).expect("serializes") + "\n"),
    )
}

pub fn write_respiration_outputs(out: &Path, resp: &RespirationSummary) -> Result<()> {
    ensure_dir(out)?;
    let e = csv_err("psd_subjects.csv");
    let mut w = csv::Writer::from_writer(create(out, "psd_subjects.csv")?);
    w.write_record(["subject_id", "freq_hz", "power_mmhg2_per_hz"])
        .map_err(&e)?;
    for s in &resp.subjects {
        for (f, p) in s.spectrum.freqs.iter().zip(&s.spectrum.power) {
            w.write_record([s.subject_id.as_str(), &f.to_string(), &p.to_string()])
                .map_err(&e)?;
        }
    }
    w.flush().map_err(io_err("psd_subjects.csv"))?;
    let e = csv_err("psd_cohort.csv");
    let mut w = csv::Writer::from_writer(create(out, "psd_cohort.csv")?);
    w.write_record(["freq_hz", "power_mmhg2_per_hz"]).map_err(&e)?;
    for (f, p) in resp.cohort.freqs.iter().zip(&resp.cohort.power) {
        w.write_record([f.to_string(), p.to_string()]).map_err(&e)?;
    }
    w.flush().map_err(io_err("psd_cohort.csv"))?;
    write_text(out, "psd.svg", &psd_svg(resp))?;
    write_text(
        out,
        "psd.json",
        &(serde_json::to_string_pretty(&psd_section(resp)).expect("serializes") + "\n"),
    )
}

/// Writes the full bundle into `out` and returns the summary.
pub fn emit_report(a: &RunArtifacts, out: &Path) -> Result<Report> {
    let report = build_report(a)?;
    ensure_dir(out)?;
    write_qc_outputs(out, &a.segments)?;
    write_simulation_outputs(out, &a.simulation)?;
    write_evaluation_outputs(out, &a.evaluation, &a.config.methods, &a.config.n)?;
    write_respiration_outputs(out, &a.respiration)?;
    write_text(out, "noise_model.json", &(a.noise.model.to_json() + "\n"))?;
    write_text(out, "config.toml", &a.config.to_toml_string())?;
    write_text(out, "report.json", &report.to_json())?;
    Ok(report)
}

const MAX_PSD_HZ: f64 = 2.0;

pub fn psd_svg(resp: &RespirationSummary) -> String {
    let mut lines: Vec<Line> = resp
        .subjects
        .iter()
        .map(|s| Line {
            label: String::new(),
            color: "#9ecae1".into(),
            width: 0.8,
            points: s
                .spectrum
                .freqs
                .iter()
                .cloned()
                .zip(s.spectrum.power.iter().cloned())
                .collect(),
        })
        .collect();
    lines.push(Line {
        label: "cohort mean".into(),
        color: PALETTE[0].into(),
        width: 2.0,
        points: resp
            .cohort
            .freqs
            .iter()
            .cloned()
            .zip(resp.cohort.power.iter().cloned())
            .collect(),
    });
    svg::render(&[Panel {
        title: format!("Envelope PSD (peak {:.3} Hz)", resp.dominant.peak_hz),
        xlabel: "frequency (Hz)".into(),
        ylabel: "log10 PSD (mmHg^2/Hz)".into(),
        lines,
        vband: Some(RESPIRATORY_BAND_HZ),
        x_range: Some((0.0, MAX_PSD_HZ)),
        log_y: true,
        ..Default::default()
    }])
}

pub fn bland_altman_svg(sim: &Simulation) -> String {
    let sources = ba_sources(sim);
    let panels: Vec<Panel> = COMPONENTS
        .iter()
        .map(|&c| {
            let mut p = Panel {
                title: format!("Bland-Altman {}", component_name(c).to_uppercase()),
                xlabel: "mean of cuff and reference (mmHg)".into(),
                ylabel: "cuff - reference (mmHg)".into(),
                ..Default::default()
            };
            for (i, (label, _, readings, _)) in sources.iter().enumerate() {
                let color = PALETTE[i % PALETTE.len()].to_string();
                let pairs: Vec<_> = readings.iter().map(PairedReading::as_pair).collect();
                p.scatters.push(Scatter {
                    label: label.clone(),
                    color: color.clone(),
                    points: bland_altman_points(&pairs, c),
                });
                if let Ok(s) = bland_altman(&pairs, c) {
                    p.hlines.push(HLine {
                        y: s.bias,
                        color: color.clone(),
                        dashed: false,
                    });
                    for y in [s.loa_low, s.loa_high] {
                        p.hlines.push(HLine {
                            y,
                            color: color.clone(),
                            dashed: true,
                        });
                    }
                }
            }
            p
        })
        .collect();
    svg::render(&panels)
}

pub fn error_density_svg(pdfs: &[(Method, usize, Component, ErrorPdf)]) -> String {
    let panels: Vec<Panel> = COMPONENTS
        .iter()
        .map(|&c| {
            let lines = pdfs
                .iter()
                .filter(|(_, _, pc, _)| *pc == c)
                .enumerate()
                .map(|(i, (m, n, _, p))| Line {
                    label: format!("{m} N={n}"),
                    color: PALETTE[i % PALETTE.len()].into(),
                    width: 1.5,
                    points: p.density_x.iter().cloned().zip(p.density_y.iter().cloned()).collect(),
                })
                .collect();
            Panel {
                title: format!("{} error density", component_name(c).to_uppercase()),
                xlabel: "estimate - truth (mmHg)".into(),
                ylabel: "density (1/mmHg)".into(),
                lines,
                hlines: vec![],
                ..Default::default()
            }
        })
        .collect();
    svg::render(&panels)
}
