use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bpcorr::config::{PipelineConfig, Protocol};
use bpcorr::estimation::{derive_pp_map, MeasurementSet, NoiseModel};
use bpcorr::evaluation::Method;
use bpcorr::pipeline::{self, PipelineError};
use bpcorr::quality_control::BpReading;
use bpcorr::report;
use bpcorr::synthetic::demo_cohort;
use bpcorr::waveform_io::{write_csv_waveform, write_wfdb_record, StorageFormat};

#[derive(Parser)]
#[command(name = "bpcorr", version, about = "Oscillometric BP bias analysis and correction")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Common {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Deflation rates to sweep (mmHg/s), comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    rates: Option<Vec<f64>>,
    /// Group sizes, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    /// Estimators, comma separated (LS, ML).
    #[arg(long, global = true, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// in_sample or holdout:<k>.
    #[arg(long, global = true, conflicts_with = "holdout")]
    protocol: Option<Protocol>,
    /// Shorthand for --protocol holdout:<k>: fit on k subjects, evaluate on the rest.
    #[arg(long, global = true, value_name = "K")]
    holdout: Option<usize>,
    /// Hypertensive subject ids, comma separated, or a file with one id per line.
    #[arg(long = "hypertensive-list", global = true)]
    hypertensive_list: Option<String>,
    /// Input files or directories, replacing the configured data paths.
    #[arg(long, global = true, value_delimiter = ',')]
    data: Option<Vec<PathBuf>>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse inputs and list the records found.
    Ingest { paths: Vec<PathBuf> },
    /// Segment and quality-filter records; writes qc_ledger.csv.
    Qc,
    /// Simulate cuff readings on accepted segments.
    Simulate,
    /// Fit the measurement-noise model; writes noise_model.json.
    FitNoise {
        /// Also fit one model per subject; writes noise_models_by_subject.json.
        #[arg(long)]
        per_subject: bool,
    },
    /// Evaluate LS/ML estimators over the configured group sizes.
    Evaluate {
        /// Use this noise model instead of fitting one.
        #[arg(long)]
        noise_model: Option<PathBuf>,
    },
    /// Envelope PSD analysis.
    Respiration,
    /// Correct user-supplied cuff readings.
    Correct {
        /// CSV with `sbp,dbp` columns and an optional `subject_id` column.
        #[arg(long)]
        readings: PathBuf,
        /// noise_model.json, or a per-subject map from `fit-noise --per-subject`.
        #[arg(long)]
        noise_model: PathBuf,
        #[arg(long, default_value = "ML")]
        method: Method,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run all stages and write the report bundle.
    Run,
    /// Generate the demonstration corpus.
    Synth {
        #[arg(long, default_value_t = 900.0)]
        duration_s: f64,
        /// Also write this subject as CSV instead of WFDB.
        #[arg(long)]
        csv_subject: Option<String>,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Pipeline(PipelineError),
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Pipeline(e)
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Pipeline(e) => e.exit_code() as u8,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
            CliError::Pipeline(e) => write!(f, "{e}"),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn hypertensive_ids(spec: &str) -> Result<Vec<String>> {
    let path = Path::new(spec);
    let text = if path.is_file() {
        std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
    } else {
        spec.replace(',', "\n")
    };
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

fn resolve_config(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::load(p).map_err(|e| CliError::Usage(e.to_string()))?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = &c.out {
        cfg.out = v.clone();
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = &c.rates {
        cfg.rates = v.clone();
    }
    if let Some(v) = &c.n {
        cfg.n = v.clone();
    }
    if let Some(v) = &c.methods {
        cfg.methods = v.clone();
    }
    if let Some(v) = c.protocol {
        cfg.protocol = v;
    }
    if let Some(k) = c.holdout {
        cfg.protocol = Protocol::Holdout(k);
    }
    if let Some(v) = &c.hypertensive_list {
        cfg.hypertensive = hypertensive_ids(v)?;
    }
    if let Some(v) = &c.data {
        cfg.data = v.clone();
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn cmd_ingest(paths: &[PathBuf], cfg: &PipelineConfig) -> Result<()> {
    let paths = if paths.is_empty() { cfg.data.as_slice() } else { paths };
    let ing = pipeline::ingest(paths, cfg);
    for f in &ing.failures {
        eprintln!("error: {}: {}", f.path.display(), f.message);
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let _ = writeln!(
        out,
        "subject_id\tsampling_rate_hz\tsamples\tduration_s\tmissing\tchannel\thypertensive"
    );
    for r in &ing.records {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{:.3}\t{}\t{}\t{}",
            r.subject_id,
            r.sampling_rate_hz,
            r.samples.len(),
            r.duration_s(),
            r.missing_count(),
            r.channel_label,
            r.hypertensive
        );
    }
    if ing.records.is_empty() {
        return Err(CliError::Data(format!(
            "no readable records ({} failure(s))",
            ing.failures.len()
        )));
    }
    Ok(())
}

fn cmd_qc(cfg: &PipelineConfig) -> Result<()> {
    let ing = pipeline::ingest_required(cfg)?;
    let segments = pipeline::run_qc(&ing.records);
    let a = report::write_qc_outputs(&cfg.out, &segments)?;
    println!(
        "segments {} accepted {} rejected {:?}",
        a.total, a.accepted, a.rejected_by_reason
    );
    Ok(())
}

fn cmd_simulate(cfg: &PipelineConfig) -> Result<()> {
    let (_, _, sim) = pipeline::segments_and_simulation(cfg)?;
    report::write_simulation_outputs(&cfg.out, &sim)?;
    println!("readings {} excluded {:?}", sim.readings.len(), sim.excluded);
    for s in &sim.sweeps {
        println!(
            "rate {} count {} sbp_bias {:?} sbp_sd {:?} dbp_bias {:?} dbp_sd {:?}",
            s.rate, s.count, s.sbp_bias, s.sbp_sd, s.dbp_bias, s.dbp_sd
        );
    }
    Ok(())
}

fn fitted_model(
    cfg: &PipelineConfig,
    readings: &[bpcorr::oscillometry::PairedReading],
) -> Result<(pipeline::SubjectSplit, pipeline::NoiseFit)> {
    let split = pipeline::split_subjects(readings, cfg.protocol, cfg.seed)?;
    let fit = pipeline::fit_noise(&pipeline::subset(readings, &split.fit))?;
    Ok((split, fit))
}

fn cmd_fit_noise(cfg: &PipelineConfig, per_subject: bool) -> Result<()> {
    let (_, _, sim) = pipeline::segments_and_simulation(cfg)?;
    let (split, fit) = fitted_model(cfg, &sim.readings)?;
    report::ensure_dir(&cfg.out)?;
    let json = fit.model.to_json() + "\n";
    report::write_text(&cfg.out, "noise_model.json", &json)?;
    print!("{json}");
    if per_subject {
        let models = pipeline::fit_noise_by_subject(&pipeline::subset(&sim.readings, &split.fit));
        let text = serde_json::to_string_pretty(&models).map_err(|e| CliError::Data(e.to_string()))? + "\n";
        report::write_text(&cfg.out, "noise_models_by_subject.json", &text)?;
        eprintln!("fitted {} per-subject model(s)", models.len());
    }
    Ok(())
}

/// A population model, or per-subject models keyed by subject id.
enum NoiseModels {
    Population(NoiseModel),
    BySubject(BTreeMap<String, NoiseModel>),
}

impl NoiseModels {
    fn for_subject(&self, id: &str) -> Result<&NoiseModel> {
        match self {
            Self::Population(m) => Ok(m),
            Self::BySubject(map) => map
                .get(id)
                .ok_or_else(|| CliError::Data(format!("no noise model for subject {id}"))),
        }
    }
}

fn read_noise_models(path: &Path) -> Result<NoiseModels> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    match NoiseModel::from_json(&text) {
        Ok(m) => Ok(NoiseModels::Population(m)),
        Err(e) => serde_json::from_str(&text)
            .map(NoiseModels::BySubject)
            .map_err(|_| CliError::Data(format!("{}: {e}", path.display()))),
    }
}

fn load_noise_model(path: &Path) -> Result<NoiseModel> {
    match read_noise_models(path)? {
        NoiseModels::Population(m) => Ok(m),
        NoiseModels::BySubject(_) => Err(CliError::Data(format!(
            "{}: expected a single noise model",
            path.display()
        ))),
    }
}

fn cmd_evaluate(cfg: &PipelineConfig, noise_model: Option<&Path>) -> Result<()> {
    let (_, _, sim) = pipeline::segments_and_simulation(cfg)?;
    let (eval_readings, model) = match noise_model {
        Some(p) => (sim.readings.clone(), load_noise_model(p)?),
        None => {
            let (split, fit) = fitted_model(cfg, &sim.readings)?;
            (pipeline::subset(&sim.readings, &split.eval), fit.model)
        }
    };
    let eval = pipeline::run_evaluation(&eval_readings, &model, &cfg.n, &cfg.methods)?;
    report::write_evaluation_outputs(&cfg.out, &eval, &cfg.methods, &cfg.n)?;
    println!("method\tn\tsbp_mae\tsbp_sd\tdbp_mae\tdbp_sd\tcount");
    let f = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.2}"));
    for r in &eval.table {
        println!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.method,
            r.n,
            f(r.sbp_mae),
            f(r.sbp_sd),
            f(r.dbp_mae),
            f(r.dbp_sd),
            r.count
        );
    }
    Ok(())
}

fn cmd_respiration(cfg: &PipelineConfig) -> Result<()> {
    let ing = pipeline::ingest_required(cfg)?;
    let segments = pipeline::run_qc(&ing.records);
    let resp = pipeline::run_respiration(&pipeline::accepted(&segments), cfg)?;
    report::write_respiration_outputs(&cfg.out, &resp)?;
    println!(
        "peak_hz {:.4} band_fraction {:.4} subjects {}",
        resp.dominant.peak_hz,
        resp.dominant.band_fraction,
        resp.subjects.len()
    );
    Ok(())
}

fn cmd_run(cfg: &PipelineConfig) -> Result<()> {
    let artifacts = pipeline::run(cfg)?;
    for f in &artifacts.ingest_failures {
        eprintln!("warning: {}: {}", f.path.display(), f.message);
    }
    let r = report::emit_report(&artifacts, &cfg.out)?;
    println!(
        "wrote {} (mu = [{:.2}, {:.2}], {} readings)",
        cfg.out.join("report.json").display(),
        r.noise_model.mu[0],
        r.noise_model.mu[1],
        r.simulation.readings
    );
    Ok(())
}

#[derive(serde::Deserialize)]
struct ReadingRow {
    #[serde(default)]
    subject_id: Option<String>,
    sbp: f64,
    dbp: f64,
}

fn cmd_correct(readings: &Path, noise: &Path, method: Method, n: Option<usize>, output: Option<&Path>) -> Result<()> {
    let models = read_noise_models(noise)?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(readings)
        .map_err(|e| CliError::Data(format!("{}: {e}", readings.display())))?;
    let mut by_subject: BTreeMap<String, Vec<BpReading>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for (i, row) in rdr.deserialize::<ReadingRow>().enumerate() {
        let row = row.map_err(|e| CliError::Data(format!("{}: row {}: {e}", readings.display(), i + 1)))?;
        let r = BpReading::new(row.sbp, row.dbp);
        if !r.sbp.is_finite() || !r.dbp.is_finite() {
            return Err(CliError::Data(format!(
                "{}: row {}: non-finite reading",
                readings.display(),
                i + 1
            )));
        }
        let id = row.subject_id.unwrap_or_else(|| "subject".into());
        if !by_subject.contains_key(&id) {
            order.push(id.clone());
        }
        by_subject.entry(id).or_default().push(r);
    }
    if by_subject.is_empty() {
        return Err(CliError::Data(format!("{}: no readings", readings.display())));
    }
    let sink: Box<dyn Write> = match output {
        Some(p) => Box::new(std::fs::File::create(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let werr = |e: csv::Error| CliError::Data(format!("write: {e}"));
    w.write_record(["subject_id", "group", "n", "method", "sbp", "dbp", "pp", "map"])
        .map_err(werr)?;
    for id in order {
        let rs = &by_subject[&id];
        let model = models.for_subject(&id)?;
        let size = n.unwrap_or(rs.len());
        for (g, chunk) in rs.chunks(size).enumerate() {
            let set = MeasurementSet::new(id.clone(), chunk.to_vec()).map_err(|e| CliError::Data(e.to_string()))?;
            let est = method
                .estimate(&set, model)
                .map_err(|e| CliError::Data(e.to_string()))?;
            let pm = derive_pp_map(&est);
            w.write_record([
                id.clone(),
                g.to_string(),
                chunk.len().to_string(),
                method.to_string(),
                est.sbp.to_string(),
                est.dbp.to_string(),
                pm.pp.to_string(),
                pm.map.to_string(),
            ])
            .map_err(werr)?;
        }
    }
    w.flush().map_err(|e| CliError::Data(format!("write: {e}")))?;
    Ok(())
}

/// WFDB format 212 parameters for the bundled corpus.
const SYNTH_GAIN: f64 = 8.0;
const SYNTH_BASELINE: i32 = -1024;

fn cmd_synth(out: &Path, seed: u64, duration_s: f64, csv_subject: Option<&str>) -> Result<()> {
    if !(duration_s >= 60.0 && duration_s.is_finite()) {
        return Err(CliError::Usage("--duration-s must be at least 60".into()));
    }
    let cohort = demo_cohort(seed, duration_s).map_err(|e| CliError::Data(e.to_string()))?;
    report::ensure_dir(out)?;
    for rec in &cohort {
        if csv_subject == Some(rec.subject_id.as_str()) {
            let mut rec = rec.clone();
            for v in rec.samples.iter_mut() {
                *v = (*v * SYNTH_GAIN).round() / SYNTH_GAIN;
            }
            let path = out.join(format!("{}.csv", rec.subject_id));
            let f = std::fs::File::create(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            write_csv_waveform(&rec, std::io::BufWriter::new(f)).map_err(|e| CliError::Data(e.to_string()))?;
        } else {
            write_wfdb_record(out, rec, StorageFormat::Format212, SYNTH_GAIN, SYNTH_BASELINE)
                .map_err(|e| CliError::Data(e.to_string()))?;
        }
        println!("{}\t{}\t{}", rec.subject_id, rec.samples.len(), rec.hypertensive);
    }
    let hyper: Vec<&str> = cohort
        .iter()
        .filter(|r| r.hypertensive)
        .map(|r| r.subject_id.as_str())
        .collect();
    report::write_text(out, "hypertensive.txt", &(hyper.join("\n") + "\n"))?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.common)?;
    match cli.command {
        Command::Ingest { paths } => cmd_ingest(&paths, &cfg),
        Command::Qc => cmd_qc(&cfg),
        Command::Simulate => cmd_simulate(&cfg),
        Command::FitNoise { per_subject } => cmd_fit_noise(&cfg, per_subject),
        Command::Evaluate { noise_model } => cmd_evaluate(&cfg, noise_model.as_deref()),
        Command::Respiration => cmd_respiration(&cfg),
        Command::Correct {
            readings,
            noise_model,
            method,
            output,
        } => {
            let n = match cli.common.n.as_deref() {
                None => None,
                Some([k]) => Some(*k),
                Some(_) => return Err(CliError::Usage("correct takes a single --n value".into())),
            };
            cmd_correct(&readings, &noise_model, method, n, output.as_deref())
        }
        Command::Run => cmd_run(&cfg),
        Command::Synth {
            duration_s,
            csv_subject,
        } => cmd_synth(&cfg.out, cfg.seed, duration_s, csv_subject.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
