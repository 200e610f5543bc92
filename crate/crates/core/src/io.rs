//! File formats: trajectory and table CSVs, pulse-sequence and dictionary
//! JSON, estimation reports.
//!
//! Every file starts with a provenance comment line `# spinfp <version>
//! config=<hash>`; CSV readers skip `#` lines. Floats in CSVs are written
//! with 17 significant digits so they read back bit-exact, and JSON uses
//! the shortest round-trip representation.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bloch::{Pulse, PulseSequence, Trajectory};
use crate::error::{Error, Result};
use crate::estimator::{EstimationReport, ScanRow};
use crate::fingerprint::{Dictionary, DictionaryEntry, RecognitionMap};
use crate::grape::OptimizationTrace;
use crate::model::{sequence_hash, EnsembleSpec, ParameterPoint};
use crate::noise::{RatioRow, WidthReport};

pub const FORMAT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Tool version and the hash of the configuration an output came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Self {
            tool: format!("spinfp {TOOL_VERSION}"),
            config_hash: config_hash.into(),
        }
    }

    pub fn header_line(&self) -> String {
        format!("# {} config={}\n", self.tool, self.config_hash)
    }
}

/// `{:.16e}`: 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Parameter point label safe inside a CSV field: `t1_s=0.1;t2_s=0.2`.
pub fn point_label(p: &ParameterPoint) -> String {
    p.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_else(|| "nan".into())
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(source: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source.to_string(),
        message: message.into(),
    }
}

/// Data lines of a CSV after the header, as `(line_number, fields)`.
fn csv_rows<'a>(text: &'a str, source: &str, header: &str) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, h)) if h == header => {}
        Some((n, h)) => return Err(parse_err(source, format!("line {n}: expected header `{header}`, found `{h}`"))),
        None => return Err(parse_err(source, "file has no header")),
    }
    Ok(lines.map(|(n, l)| (n, l.split(',').map(str::trim).collect())).collect())
}

fn field<T: std::str::FromStr>(source: &str, line: usize, fields: &[&str], i: usize, name: &str) -> Result<T> {
    let raw = fields
        .get(i)
        .ok_or_else(|| parse_err(source, format!("line {line}: missing column `{name}`")))?;
    raw.parse()
        .map_err(|_| parse_err(source, format!("line {line}: column `{name}` has invalid value `{raw}`")))
}

pub const TRAJECTORY_HEADER: &str = "k,t,mx,my";

pub fn trajectory_csv(traj: &Trajectory, prov: &Provenance) -> String {
    let mut out = prov.header_line();
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for (k, s) in traj.samples().iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            k + 1,
            fmt_f64(traj.time(k)),
            fmt_f64(s[0]),
            fmt_f64(s[1])
        );
    }
    out
}

/// Reads a trajectory CSV; the delay is recovered from the first row's time.
pub fn parse_trajectory_csv(text: &str, source: &str) -> Result<Trajectory> {
    let rows = csv_rows(text, source, TRAJECTORY_HEADER)?;
    if rows.is_empty() {
        return Err(parse_err(source, "trajectory has no samples"));
    }
    let mut samples = Vec::with_capacity(rows.len());
    let mut delay = 0.0;
    for (i, (line, f)) in rows.iter().enumerate() {
        if f.len() != 4 {
            return Err(parse_err(source, format!("line {line}: expected 4 columns, found {}", f.len())));
        }
        let k: usize = field(source, *line, f, 0, "k")?;
        if k != i + 1 {
            return Err(parse_err(source, format!("line {line}: expected k = {}, found {k}", i + 1)));
        }
        let t: f64 = field(source, *line, f, 1, "t")?;
        if i == 0 {
            delay = t;
        }
        let mx: f64 = field(source, *line, f, 2, "mx")?;
        let my: f64 = field(source, *line, f, 3, "my")?;
        if !(mx.is_finite() && my.is_finite()) {
            return Err(parse_err(source, format!("line {line}: non-finite sample")));
        }
        samples.push([mx, my]);
    }
    Trajectory::new(samples, delay).map_err(|e| parse_err(source, e.to_string()))
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    parse_trajectory_csv(&read_file(path)?, &path.display().to_string())
}

/// Provenance block embedded in optimized pulse-sequence files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceProvenance {
    pub dict_spec_hash: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub final_c_n: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SequenceFile {
    format: String,
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<Provenance>,
    delay_t: f64,
    pulses: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<SequenceProvenance>,
}

const SEQUENCE_FORMAT: &str = "spinfp-pulse-sequence";
const DICTIONARY_FORMAT: &str = "spinfp-dictionary";

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("file structs serialize");
    s.push('\n');
    s
}

fn check_format(source: &str, format: &str, expected: &str, version: u32) -> Result<()> {
    if format != expected {
        return Err(parse_err(source, format!("expected format `{expected}`, found `{format}`")));
    }
    if version != FORMAT_VERSION {
        return Err(parse_err(source, format!("unsupported version {version}, expected {FORMAT_VERSION}")));
    }
    Ok(())
}

pub fn sequence_json(seq: &PulseSequence, generator: Option<&Provenance>, provenance: Option<&SequenceProvenance>) -> String {
    to_json(&SequenceFile {
        format: SEQUENCE_FORMAT.into(),
        version: FORMAT_VERSION,
        generator: generator.cloned(),
        delay_t: seq.delay_t(),
        pulses: seq.pulses().iter().map(|p| [p.theta_x, p.theta_y]).collect(),
        provenance: provenance.cloned(),
    })
}

pub fn parse_sequence_json(text: &str, source: &str) -> Result<(PulseSequence, Option<SequenceProvenance>)> {
    let file: SequenceFile = serde_json::from_str(text).map_err(|e| parse_err(source, e.to_string()))?;
    check_format(source, &file.format, SEQUENCE_FORMAT, file.version)?;
    let pulses = file.pulses.into_iter().map(Pulse::from).collect();
    let seq = PulseSequence::new(pulses, file.delay_t).map_err(|e| parse_err(source, e.to_string()))?;
    Ok((seq, file.provenance))
}

pub fn load_sequence(path: &Path) -> Result<(PulseSequence, Option<SequenceProvenance>)> {
    parse_sequence_json(&read_file(path)?, &path.display().to_string())
}

#[derive(Debug, Serialize, Deserialize)]
struct EntryFile {
    parameters: ParameterPoint,
    samples: Vec<[f64; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DictionaryFile {
    format: String,
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator: Option<Provenance>,
    field_hash: String,
    ensemble_hash: String,
    template: EnsembleSpec,
    delay_t: f64,
    entries: Vec<EntryFile>,
}

pub fn dictionary_json(dict: &Dictionary, generator: Option<&Provenance>) -> String {
    to_json(&DictionaryFile {
        format: DICTIONARY_FORMAT.into(),
        version: FORMAT_VERSION,
        generator: generator.cloned(),
        field_hash: dict.field_hash(),
        ensemble_hash: dict.ensemble_hash(),
        template: *dict.template(),
        delay_t: dict.sequence().delay_t(),
        entries: dict
            .entries()
            .iter()
            .map(|e| EntryFile {
                parameters: e.point.clone(),
                samples: e.trajectory.samples().to_vec(),
            })
            .collect(),
    })
}

/// Reads a dictionary built under `sequence`. A field or ensemble hash that
/// does not match is reported as [`Error::StaleDictionary`].
pub fn parse_dictionary_json(text: &str, source: &str, sequence: &PulseSequence) -> Result<Dictionary> {
    let file: DictionaryFile = serde_json::from_str(text).map_err(|e| parse_err(source, e.to_string()))?;
    check_format(source, &file.format, DICTIONARY_FORMAT, file.version)?;
    let field_hash = sequence_hash(sequence);
    if file.field_hash != field_hash {
        return Err(Error::StaleDictionary(format!(
            "{source} was built for field {} but the current field hashes to {field_hash}",
            file.field_hash
        )));
    }
    if file.template.hash() != file.ensemble_hash {
        return Err(Error::StaleDictionary(format!(
            "{source}: stored ensemble hash does not match its template"
        )));
    }
    let entries = file
        .entries
        .into_iter()
        .map(|e| {
            Ok(DictionaryEntry {
                point: e.parameters,
                trajectory: Trajectory::new(e.samples, file.delay_t)?,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| parse_err(source, e.to_string()))?;
    Dictionary::from_entries(file.template, sequence.clone(), entries)
}

pub fn load_dictionary(path: &Path, sequence: &PulseSequence) -> Result<Dictionary> {
    parse_dictionary_json(&read_file(path)?, &path.display().to_string(), sequence)
}

/// Recognition map as a square CSV matrix; row and column labels are the
/// entries' parameter points.
pub fn recognition_map_csv(map: &RecognitionMap, points: &[ParameterPoint], prov: &Provenance) -> String {
    let mut out = prov.header_line();
    out.push_str("entry");
    for p in points {
        let _ = write!(out, ",{}", point_label(p));
    }
    out.push('\n');
    for (row, p) in map.rows().zip(points) {
        out.push_str(&point_label(p));
        for v in row {
            let _ = write!(out, ",{}", fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognitionSummary {
    pub generator: Provenance,
    pub entries: usize,
    pub min_off_diagonal: Option<f64>,
}

pub fn recognition_summary_json(map: &RecognitionMap, prov: &Provenance) -> String {
    to_json(&RecognitionSummary {
        generator: prov.clone(),
        entries: map.size(),
        min_off_diagonal: map.min_off_diagonal(),
    })
}

pub const TRACE_HEADER: &str = "iteration,c_n,grad_norm,step";

pub fn trace_csv(trace: &OptimizationTrace, prov: &Provenance) -> String {
    let mut out = prov.header_line();
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for (i, ((v, g), s)) in trace.values.iter().zip(&trace.grad_norms).zip(&trace.steps).enumerate() {
        let _ = writeln!(out, "{i},{},{},{}", fmt_f64(*v), fmt_f64(*g), fmt_f64(*s));
    }
    out
}

pub const WIDTH_HEADER: &str = "epsilon,mean,width,draws,failures,method";

pub fn width_csv(reports: &[&WidthReport], prov: &Provenance) -> String {
    let mut out = prov.header_line();
    out.push_str(WIDTH_HEADER);
    out.push('\n');
    for rep in reports {
        for r in &rep.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                fmt_f64(r.epsilon),
                fmt_f64(r.mean),
                fmt_f64(r.width),
                r.draws,
                r.failures,
                rep.method
            );
        }
    }
    out
}

pub const RATIO_HEADER: &str = "epsilon,ratio,std_error,numerator,denominator";

pub fn ratio_csv(rows: &[RatioRow], numerator: &str, denominator: &str, prov: &Provenance) -> String {
    let mut out = prov.header_line();
    out.push_str(RATIO_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{numerator},{denominator}",
            fmt_f64(r.epsilon),
            fmt_opt(r.ratio),
            fmt_opt(r.std_error)
        );
    }
    out
}

pub const SCAN_HEADER: &str = "fwhm,t2,omega_bar,residual,t2_star";

/// Failed scan points are written with `nan` fields.
pub fn scan_csv(rows: &[ScanRow], prov: &Provenance) -> String {
    let mut out = prov.header_line();
    out.push_str(SCAN_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt_f64(r.fwhm),
            fmt_opt(r.t2()),
            fmt_opt(r.center()),
            fmt_opt(r.residual()),
            fmt_opt(r.t2_star())
        );
    }
    out
}

pub const RESIDUAL_HEADER: &str = "index,parameters,residual";

/// Distance from the measurement to every dictionary entry.
pub fn residual_curve_csv(points: &[ParameterPoint], distances: &[f64], prov: &Provenance) -> String {
    let mut out = prov.header_line();
    out.push_str(RESIDUAL_HEADER);
    out.push('\n');
    for (i, (p, d)) in points.iter().zip(distances).enumerate() {
        let _ = writeln!(out, "{i},{},{}", point_label(p), fmt_f64(*d));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub format: String,
    pub version: u32,
    pub generator: Provenance,
    pub field_hash: String,
    pub ensemble_hash: String,
    pub signal_hash: String,
    pub report: EstimationReport,
}

/// SHA-256 over the bit patterns of a trajectory's delay and samples.
pub fn trajectory_hash(traj: &Trajectory) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(b"spinfp-trajectory-v1");
    h.update(traj.delay_t().to_bits().to_le_bytes());
    for s in traj.samples() {
        h.update(s[0].to_bits().to_le_bytes());
        h.update(s[1].to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn report_json(report: &EstimationReport, dict: &Dictionary, signal: &Trajectory, prov: &Provenance) -> String {
    to_json(&ReportFile {
        format: "spinfp-estimation-report".into(),
        version: FORMAT_VERSION,
        generator: prov.clone(),
        field_hash: dict.field_hash(),
        ensemble_hash: dict.ensemble_hash(),
        signal_hash: trajectory_hash(signal),
        report: report.clone(),
    })
}

pub fn parse_report_json(text: &str, source: &str) -> Result<ReportFile> {
    serde_json::from_str(text).map_err(|e| parse_err(source, e.to_string()))
}
