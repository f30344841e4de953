//! Waveform ingestion: a WFDB subset (formats 16 and 212) and single-column CSV.
//!
//! Decoded samples are converted to mmHg with `(adc - baseline) / gain`. The
//! format-specific invalid-sample sentinel becomes `f64::NAN`, which is the
//! only way a NaN is allowed into a [`WaveformRecord`].

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Missing-sample marker carried in [`WaveformRecord::samples`].
pub const MISSING: f64 = f64::NAN;

/// Column name expected in CSV waveform files.
pub const CSV_COLUMN: &str = "abp_mmhg";

#[derive(Debug, Error)]
pub enum WaveformError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported storage format `{0}` (only 16 and 212 are supported)")]
    UnsupportedFormat(String),
    #[error("signal {signal} has zero gain")]
    ZeroGain { signal: usize },
    #[error("format 212 stream length {len} is not a multiple of 3")]
    PartialTriplet { len: usize },
    #[error("format 16 stream has odd byte count {len}")]
    OddByteCount { len: usize },
    #[error("sample {value} at index {index} does not fit the storage format")]
    Unencodable { index: usize, value: i32 },
    #[error("CSV has no `{CSV_COLUMN}` header column")]
    MissingCsvHeader,
    #[error("CSV row {row}: non-numeric cell `{value}`")]
    NonNumeric { row: usize, value: String },
    #[error("waveform contains no samples")]
    Empty,
    #[error("sampling rate must be positive and finite, got {0}")]
    InvalidSamplingRate(f64),
    #[error("sample {index} is not finite")]
    NonFiniteSample { index: usize },
    #[error("no arterial pressure channel found{}", match .0 { Some(c) => format!(" matching `{c}`"), None => String::new() })]
    NoArterialChannel(Option<String>),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, WaveformError>;

/// One subject's continuous arterial pressure signal in mmHg.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformRecord {
    pub subject_id: String,
    pub sampling_rate_hz: f64,
    pub samples: Vec<f64>,
    pub channel_label: String,
    pub hypertensive: bool,
}

impl WaveformRecord {
    pub fn new(
        subject_id: impl Into<String>,
        sampling_rate_hz: f64,
        samples: Vec<f64>,
        channel_label: impl Into<String>,
    ) -> Result<Self> {
        if !(sampling_rate_hz.is_finite() && sampling_rate_hz > 0.0) {
            return Err(WaveformError::InvalidSamplingRate(sampling_rate_hz));
        }
        if samples.is_empty() {
            return Err(WaveformError::Empty);
        }
        if let Some(index) = samples.iter().position(|v| v.is_infinite()) {
            return Err(WaveformError::NonFiniteSample { index });
        }
        Ok(Self {
            subject_id: subject_id.into(),
            sampling_rate_hz,
            samples,
            channel_label: channel_label.into(),
            hypertensive: false,
        })
    }

    pub fn with_hypertensive(mut self, flag: bool) -> Self {
        self.hypertensive = flag;
        self
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sampling_rate_hz
    }

    pub fn missing_count(&self) -> usize {
        self.samples.iter().filter(|v| v.is_nan()).count()
    }
}

/// WFDB storage formats understood by this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StorageFormat {
    /// 16-bit little-endian two's complement.
    Format16,
    /// Two 12-bit two's complement samples packed into three bytes.
    Format212,
}

impl StorageFormat {
    pub fn code(self) -> u16 {
        match self {
            StorageFormat::Format16 => 16,
            StorageFormat::Format212 => 212,
        }
    }

    /// ADC value that WFDB writers use for an invalid sample.
    pub fn missing_sentinel(self) -> i32 {
        match self {
            StorageFormat::Format16 => -32768,
            StorageFormat::Format212 => -2048,
        }
    }

    pub fn decode(self, bytes: &[u8]) -> Result<Vec<i32>> {
        match self {
            StorageFormat::Format16 => decode_format16(bytes),
            StorageFormat::Format212 => decode_format212(bytes),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalSpec {
    pub filename: String,
    pub format: StorageFormat,
    /// Byte offset of the first sample in the signal file.
    pub byte_offset: u64,
    /// ADC units per physical unit.
    pub gain: f64,
    pub baseline: i32,
    pub units: String,
    pub adc_zero: i32,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WfdbHeader {
    pub record_name: String,
    pub n_signals: usize,
    pub fs: f64,
    /// Samples per signal; `None` when the header leaves it unspecified.
    pub n_samples: Option<u64>,
    pub signals: Vec<SignalSpec>,
}

const DEFAULT_FS: f64 = 250.0;
const DEFAULT_GAIN: f64 = 200.0;

/// Parses a WFDB header: a record line followed by one line per signal.
/// `#` comment lines and blank lines are skipped.
pub fn parse_wfdb_header(text: &[u8]) -> Result<WfdbHeader> {
    let text = std::str::from_utf8(text).map_err(|e| WaveformError::MalformedHeader(format!("not UTF-8: {e}")))?;
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));

    let record_line = lines
        .next()
        .ok_or_else(|| WaveformError::MalformedHeader("missing record line".into()))?;
    let mut fields = record_line.split_whitespace();
    let name_field = fields.next().unwrap_or_default();
    if name_field.contains('/') {
        return Err(WaveformError::MalformedHeader(format!(
            "multi-segment record `{name_field}` is not supported"
        )));
    }
    let n_signals: usize = fields
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| WaveformError::MalformedHeader(format!("bad record line `{record_line}`")))?;
    if n_signals == 0 {
        return Err(WaveformError::MalformedHeader("record declares zero signals".into()));
    }
    let fs = match fields.next() {
        Some(tok) => {
            let head = tok.split(['/', '(']).next().unwrap_or(tok);
            head.parse::<f64>()
                .ok()
                .filter(|f| f.is_finite() && *f > 0.0)
                .ok_or_else(|| WaveformError::MalformedHeader(format!("bad sampling frequency `{tok}`")))?
        }
        None => DEFAULT_FS,
    };
    let n_samples = match fields.next() {
        Some(tok) => Some(
            tok.parse::<u64>()
                .map_err(|_| WaveformError::MalformedHeader(format!("bad sample count `{tok}`")))?,
        ),
        None => None,
    };

    let mut signals = Vec::with_capacity(n_signals);
    for idx in 0..n_signals {
        let line = lines
            .next()
            .ok_or_else(|| WaveformError::MalformedHeader(format!("expected {n_signals} signal lines, found {idx}")))?;
        signals.push(parse_signal_line(line, idx)?);
    }

    Ok(WfdbHeader {
        record_name: name_field.to_string(),
        n_signals,
        fs,
        n_samples,
        signals,
    })
}

fn parse_signal_line(line: &str, idx: usize) -> Result<SignalSpec> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.len() < 2 {
        return Err(WaveformError::MalformedHeader(format!("bad signal line `{line}`")));
    }
    let filename = tokens[0].to_string();
    let (format, byte_offset) = parse_format_field(tokens[1])?;

    let (gain, explicit_baseline, units) = match tokens.get(2) {
        Some(tok) => parse_gain_field(tok)?,
        None => (DEFAULT_GAIN, None, None),
    };
    if gain == 0.0 {
        return Err(WaveformError::ZeroGain { signal: idx });
    }
    // tokens[3] is the ADC resolution, which decoding does not need.
    let adc_zero = match tokens.get(4) {
        Some(tok) => tok
            .parse::<i32>()
            .map_err(|_| WaveformError::MalformedHeader(format!("bad ADC zero `{tok}`")))?,
        None => 0,
    };
    let description = if tokens.len() > 8 {
        tokens[8..].join(" ")
    } else {
        String::new()
    };

    Ok(SignalSpec {
        filename,
        format,
        byte_offset,
        gain,
        baseline: explicit_baseline.unwrap_or(adc_zero),
        units: units.unwrap_or_else(|| "mV".to_string()),
        adc_zero,
        description,
    })
}

/// `fmt[xspf][:skew][+offset]`
fn parse_format_field(tok: &str) -> Result<(StorageFormat, u64)> {
    let digits_end = tok.find(|c: char| !c.is_ascii_digit()).unwrap_or(tok.len());
    let code = &tok[..digits_end];
    let format = match code {
        "16" => StorageFormat::Format16,
        "212" => StorageFormat::Format212,
        _ => return Err(WaveformError::UnsupportedFormat(tok.to_string())),
    };
    let rest = &tok[digits_end..];
    if let Some(spf) = rest.strip_prefix('x') {
        let spf_val: String = spf.chars().take_while(char::is_ascii_digit).collect();
        if spf_val != "1" {
            return Err(WaveformError::UnsupportedFormat(format!("{tok} (multi-sample frames)")));
        }
    }
    let byte_offset = match rest.split_once('+') {
        Some((_, off)) => off
            .parse::<u64>()
            .map_err(|_| WaveformError::MalformedHeader(format!("bad byte offset in `{tok}`")))?,
        None => 0,
    };
    Ok((format, byte_offset))
}

/// `gain[(baseline)][/units]`
fn parse_gain_field(tok: &str) -> Result<(f64, Option<i32>, Option<String>)> {
    let (value_part, units) = match tok.split_once('/') {
        Some((v, u)) => (v, Some(u.to_string())),
        None => (tok, None),
    };
    let (gain_str, baseline) = match value_part.split_once('(') {
        Some((g, b)) => {
            let b = b.trim_end_matches(')');
            let b = b
                .parse::<i32>()
                .map_err(|_| WaveformError::MalformedHeader(format!("bad baseline in `{tok}`")))?;
            (g, Some(b))
        }
        None => (value_part, None),
    };
    let gain = gain_str
        .parse::<f64>()
        .map_err(|_| WaveformError::MalformedHeader(format!("bad gain `{tok}`")))?;
    if !gain.is_finite() {
        return Err(WaveformError::MalformedHeader(format!("bad gain `{tok}`")));
    }
    Ok((gain, baseline, units))
}

/// Writes a single-signal header line pair for `spec`.
pub fn format_wfdb_header(header: &WfdbHeader) -> String {
    let mut out = format!("{} {} {}", header.record_name, header.n_signals, header.fs);
    if let Some(n) = header.n_samples {
        out.push_str(&format!(" {n}"));
    }
    out.push('\n');
    for s in &header.signals {
        let fmt = if s.byte_offset > 0 {
            format!("{}+{}", s.format.code(), s.byte_offset)
        } else {
            s.format.code().to_string()
        };
        let bits = match s.format {
            StorageFormat::Format16 => 16,
            StorageFormat::Format212 => 12,
        };
        out.push_str(&format!(
            "{} {} {}({})/{} {} {} 0 0 0 {}\n",
            s.filename, fmt, s.gain, s.baseline, s.units, bits, s.adc_zero, s.description
        ));
    }
    out
}

fn sign_extend_12(v: u16) -> i32 {
    let v = i32::from(v & 0x0FFF);
    if v >= 0x800 {
        v - 0x1000
    } else {
        v
    }
}

/// Unpacks format 212: each 3-byte group holds two 12-bit samples.
pub fn decode_format212(bytes: &[u8]) -> Result<Vec<i32>> {
    if !bytes.len().is_multiple_of(3) {
        return Err(WaveformError::PartialTriplet { len: bytes.len() });
    }
    let mut out = Vec::with_capacity(bytes.len() / 3 * 2);
    for chunk in bytes.chunks_exact(3) {
        let (b0, b1, b2) = (u16::from(chunk[0]), u16::from(chunk[1]), u16::from(chunk[2]));
        out.push(sign_extend_12(b0 | ((b1 & 0x0F) << 8)));
        out.push(sign_extend_12(b2 | ((b1 >> 4) << 8)));
    }
    Ok(out)
}

/// Inverse of [`decode_format212`]. Requires an even sample count and values
/// in `[-2048, 2047]`.
pub fn encode_format212(samples: &[i32]) -> Result<Vec<u8>> {
    if let Some((index, &value)) = samples.iter().enumerate().find(|(_, v)| !(-2048..=2047).contains(*v)) {
        return Err(WaveformError::Unencodable { index, value });
    }
    if !samples.len().is_multiple_of(2) {
        return Err(WaveformError::Unencodable {
            index: samples.len(),
            value: 0,
        });
    }
    let mut out = Vec::with_capacity(samples.len() / 2 * 3);
    for pair in samples.chunks_exact(2) {
        let s1 = (pair[0] & 0x0FFF) as u16;
        let s2 = (pair[1] & 0x0FFF) as u16;
        out.push((s1 & 0xFF) as u8);
        out.push((((s1 >> 8) & 0x0F) | (((s2 >> 8) & 0x0F) << 4)) as u8);
        out.push((s2 & 0xFF) as u8);
    }
    Ok(out)
}

pub fn decode_format16(bytes: &[u8]) -> Result<Vec<i32>> {
    if !bytes.len().is_multiple_of(2) {
        return Err(WaveformError::OddByteCount { len: bytes.len() });
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|c| i32::from(i16::from_le_bytes([c[0], c[1]])))
        .collect())
}

pub fn encode_format16(samples: &[i32]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(samples.len() * 2);
    for (index, &value) in samples.iter().enumerate() {
        let v = i16::try_from(value).map_err(|_| WaveformError::Unencodable { index, value })?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Converts ADC units to physical units. Samples equal to the format's
/// invalid-sample sentinel become [`MISSING`].
pub fn to_physical(adc: &[i32], gain: f64, baseline: i32, format: StorageFormat) -> Result<Vec<f64>> {
    if gain == 0.0 {
        return Err(WaveformError::ZeroGain { signal: 0 });
    }
    let sentinel = format.missing_sentinel();
    Ok(adc
        .iter()
        .map(|&a| {
            if a == sentinel {
                MISSING
            } else {
                f64::from(a - baseline) / gain
            }
        })
        .collect())
}

/// Picks the arterial channel: an explicit selector (signal index or a
/// case-insensitive description substring) or the first description
/// containing "ABP" or "ART".
pub fn select_channel(header: &WfdbHeader, selector: Option<&str>) -> Result<usize> {
    match selector {
        Some(sel) => {
            if let Ok(idx) = sel.parse::<usize>() {
                if idx < header.signals.len() {
                    return Ok(idx);
                }
            }
            let needle = sel.to_ascii_uppercase();
            header
                .signals
                .iter()
                .position(|s| s.description.to_ascii_uppercase().contains(&needle))
                .ok_or_else(|| WaveformError::NoArterialChannel(Some(sel.to_string())))
        }
        None => header
            .signals
            .iter()
            .position(|s| {
                let d = s.description.to_ascii_uppercase();
                d.contains("ABP") || d.contains("ART")
            })
            .ok_or(WaveformError::NoArterialChannel(None)),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| WaveformError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a WFDB record from its `.hea` path and returns the selected channel.
/// Signals sharing a data file are de-interleaved in header order.
pub fn read_wfdb_record(header_path: &Path, channel: Option<&str>) -> Result<WaveformRecord> {
    let header = parse_wfdb_header(&read_file(header_path)?)?;
    let idx = select_channel(&header, channel)?;
    let spec = &header.signals[idx];

    let group: Vec<usize> = header
        .signals
        .iter()
        .enumerate()
        .filter(|(_, s)| s.filename == spec.filename)
        .map(|(i, _)| i)
        .collect();
    if group.iter().any(|&i| header.signals[i].format != spec.format) {
        return Err(WaveformError::UnsupportedFormat(format!(
            "{} (mixed formats in one file)",
            spec.filename
        )));
    }
    let stride = group.len();
    let lane = group.iter().position(|&i| i == idx).unwrap_or(0);

    let dir = header_path.parent().unwrap_or_else(|| Path::new("."));
    let data_path = dir.join(&spec.filename);
    let bytes = read_file(&data_path)?;
    let start = usize::try_from(spec.byte_offset).unwrap_or(usize::MAX).min(bytes.len());
    let mut payload = &bytes[start..];
    // Writers may leave a dangling partial group at EOF; drop it.
    let unit = match spec.format {
        StorageFormat::Format16 => 2,
        StorageFormat::Format212 => 3,
    };
    payload = &payload[..payload.len() - payload.len() % unit];
    let adc = spec.format.decode(payload)?;

    let mut lane_adc: Vec<i32> = adc.iter().skip(lane).step_by(stride).copied().collect();
    if let Some(n) = header.n_samples {
        lane_adc.truncate(usize::try_from(n).unwrap_or(usize::MAX));
    }
    let samples = to_physical(&lane_adc, spec.gain, spec.baseline, spec.format)?;
    WaveformRecord::new(header.record_name.clone(), header.fs, samples, spec.description.clone())
}

/// Writes a single-signal WFDB record (`<name>.hea` + `<name>.dat`) into `dir`.
pub fn write_wfdb_record(
    dir: &Path,
    record: &WaveformRecord,
    format: StorageFormat,
    gain: f64,
    baseline: i32,
) -> Result<PathBuf> {
    if gain == 0.0 {
        return Err(WaveformError::ZeroGain { signal: 0 });
    }
    let sentinel = format.missing_sentinel();
    let mut adc: Vec<i32> = record
        .samples
        .iter()
        .map(|&v| {
            if v.is_nan() {
                sentinel
            } else {
                (v * gain).round() as i32 + baseline
            }
        })
        .collect();
    let n_samples = adc.len() as u64;
    if format == StorageFormat::Format212 && adc.len() % 2 == 1 {
        adc.push(0);
    }
    let bytes = match format {
        StorageFormat::Format16 => encode_format16(&adc)?,
        StorageFormat::Format212 => encode_format212(&adc)?,
    };
    let dat_name = format!("{}.dat", record.subject_id);
    let header = WfdbHeader {
        record_name: record.subject_id.clone(),
        n_signals: 1,
        fs: record.sampling_rate_hz,
        n_samples: Some(n_samples),
        signals: vec![SignalSpec {
            filename: dat_name.clone(),
            format,
            byte_offset: 0,
            gain,
            baseline,
            units: "mmHg".into(),
            adc_zero: 0,
            description: record.channel_label.clone(),
        }],
    };
    let io_err = |path: PathBuf| move |source| WaveformError::Io { path, source };
    let dat_path = dir.join(&dat_name);
    fs::write(&dat_path, bytes).map_err(io_err(dat_path.clone()))?;
    let hea_path = dir.join(format!("{}.hea", record.subject_id));
    fs::write(&hea_path, format_wfdb_header(&header)).map_err(io_err(hea_path.clone()))?;
    Ok(hea_path)
}

/// Reads a CSV waveform with an `abp_mmhg` column; other columns are ignored.
/// A literal `NaN` cell is read as a missing sample.
pub fn read_csv_waveform<R: Read>(reader: R, subject_id: &str, sampling_rate_hz: f64) -> Result<WaveformRecord> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(WaveformError::Empty);
    }
    let col = headers
        .iter()
        .position(|h| h.trim_start_matches('\u{feff}').eq_ignore_ascii_case(CSV_COLUMN))
        .ok_or(WaveformError::MissingCsvHeader)?;

    let mut samples = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let cell = row.get(col).unwrap_or("");
        let value = match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => v,
            Ok(v) if v.is_nan() && cell.eq_ignore_ascii_case("nan") => MISSING,
            _ => {
                return Err(WaveformError::NonNumeric {
                    row: i + 1,
                    value: cell.to_string(),
                })
            }
        };
        samples.push(value);
    }
    WaveformRecord::new(subject_id, sampling_rate_hz, samples, CSV_COLUMN)
}

pub fn read_csv_waveform_file(path: &Path, sampling_rate_hz: f64) -> Result<WaveformRecord> {
    let subject = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let file = fs::File::open(path).map_err(|source| WaveformError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv_waveform(std::io::BufReader::new(file), &subject, sampling_rate_hz)
}

pub fn write_csv_waveform<W: Write>(record: &WaveformRecord, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([CSV_COLUMN])?;
    for v in &record.samples {
        wtr.write_record([v.to_string()])?;
    }
    wtr.flush().map_err(|source| WaveformError::Io {
        path: PathBuf::from("<csv writer>"),
        source,
    })?;
    Ok(())
}
