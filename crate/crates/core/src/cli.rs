//! Command-line front end. Every command reads one TOML experiment config,
//! writes data files under `--out`, and is deterministic under the config
//! and its seeds: reruns produce byte-identical files.
//!
//! Exit codes: 0 success, 1 runtime or numerical failure, 2 config or
//! input error.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bloch::{LorentzianSpec, PulseSequence};
use crate::error::{Error, Result};
use crate::estimator::{correlation_scan, estimate, FitConfig};
use crate::fingerprint::{figure_of_merit, recognition_map, recognize, Dictionary, WeightMatrix};
use crate::grape::{optimize_multistart, random_field, AxisMode, DictionarySpec, OptimizerConfig};
use crate::io::{self, Provenance, SequenceProvenance};
use crate::model::{EnsembleSpec, ForwardModel, Parameter, ParameterPoint};
use crate::noise::{add_noise, compare_methods, summarize, CleanSignal, NoiseSpec, Scenario, WidthKind, WidthReport};

#[derive(Debug, Parser)]
#[command(name = "spinfp", version, about = "Optimized fingerprinting of spin-1/2 ensembles")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overrides `seed` in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads; falls back to FP_THREADS, then to all cores.
    #[arg(long, global = true, env = "FP_THREADS")]
    pub threads: Option<usize>,
    /// Restrict optimized pulses to the x axis.
    #[arg(long, global = true, value_enum)]
    pub axis: Option<AxisArg>,
    /// Also write gnuplot scripts next to the main CSV outputs.
    #[arg(long, global = true)]
    pub gnuplot: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    X,
    Xy,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a trajectory for every grid point.
    Simulate,
    /// Build and save a dictionary plus its recognition map.
    BuildDict,
    /// Optimize the control field for the configured dictionary.
    Optimize {
        /// Also evaluate this many random fields as a baseline.
        #[arg(long, default_value_t = 0)]
        random_baseline: usize,
    },
    /// Match and refine a measured signal.
    Estimate {
        /// Trajectory CSV to estimate from.
        #[arg(long)]
        signal: PathBuf,
        /// Saved dictionary to use instead of building one.
        #[arg(long)]
        dictionary: Option<PathBuf>,
    },
    /// Estimator widths versus noise for the configured and a random field.
    NoiseStudy,
    /// Estimator widths of fingerprinting versus inversion recovery.
    IrCompare,
    /// Refit at fixed offset widths to expose the T2* degeneracy.
    ScanFwhm {
        /// Trajectory CSV to scan; synthetic data from `truth` otherwise.
        #[arg(long)]
        signal: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LorentzianConfig {
    #[serde(default)]
    pub center_rad_per_s: f64,
    pub fwhm_rad_per_s: f64,
    #[serde(default = "default_n_points")]
    pub n_points: usize,
    #[serde(default = "default_halfwidth")]
    pub support_halfwidth: f64,
}

fn default_n_points() -> usize {
    LorentzianSpec::DEFAULT_POINTS
}

fn default_halfwidth() -> f64 {
    LorentzianSpec::new(0.0, 1.0).support_halfwidth
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub t1_s: f64,
    pub t2_s: f64,
    #[serde(default = "one")]
    pub rf_scale: f64,
    #[serde(default)]
    pub offset_rad_per_s: f64,
    #[serde(default)]
    pub lorentzian: Option<LorentzianConfig>,
}

impl EnsembleConfig {
    pub fn spec(&self) -> Result<EnsembleSpec> {
        let mut spec = match &self.lorentzian {
            Some(l) => EnsembleSpec::lorentzian(
                self.t1_s,
                self.t2_s,
                LorentzianSpec {
                    center: l.center_rad_per_s,
                    fwhm: l.fwhm_rad_per_s,
                    n_points: l.n_points,
                    support_halfwidth: l.support_halfwidth,
                },
            ),
            None => {
                let mut s = EnsembleSpec::homogeneous(self.t1_s, self.t2_s);
                s.set(Parameter::Center, self.offset_rad_per_s)?;
                s
            }
        };
        spec.set(Parameter::RfScale, self.rf_scale)?;
        if self.lorentzian.is_some() && self.offset_rad_per_s != 0.0 {
            return Err(Error::invalid(
                "ensemble: use lorentzian.center_rad_per_s instead of offset_rad_per_s",
            ));
        }
        spec.build()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceSource {
    #[default]
    Optimize,
    Random,
    File,
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceConfig {
    pub source: SequenceSource,
    pub n_pulses: usize,
    pub delay_s: f64,
    pub path: Option<PathBuf>,
    /// Bound for random fields, radians.
    pub amplitude_bound_rad: f64,
    /// Seed of a random field; the master seed when absent.
    pub seed: Option<u64>,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self {
            source: SequenceSource::Optimize,
            n_pulses: 500,
            delay_s: 0.01,
            path: None,
            amplitude_bound_rad: PI,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub epsilon: Vec<f64>,
    pub draws: usize,
    pub width: WidthKind,
    /// Seed of the baseline random field; the master seed when absent.
    pub random_seed: Option<u64>,
    pub checkpoint: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            epsilon: vec![1e-3, 3e-3, 1e-2, 3e-2, 1e-1],
            draws: 30,
            width: WidthKind::StdDev,
            random_seed: None,
            checkpoint: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IrConfig {
    pub n_points: usize,
    pub spacing_s: f64,
}

impl Default for IrConfig {
    fn default() -> Self {
        Self { n_points: 120, spacing_s: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub fwhm_rad_per_s: Vec<f64>,
    /// Noise added to the synthetic signal.
    pub epsilon: f64,
    /// Fit start; template values are used for anything missing.
    pub start: BTreeMap<Parameter, f64>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            fwhm_rad_per_s: Vec::new(),
            epsilon: 0.01,
            start: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub scenario: String,
    #[serde(default)]
    pub seed: u64,
    pub ensemble: EnsembleConfig,
    /// Parameter values per dimension; the dictionary is their product.
    #[serde(default)]
    pub grid: BTreeMap<Parameter, Vec<f64>>,
    /// True parameters for synthetic studies.
    #[serde(default)]
    pub truth: BTreeMap<Parameter, f64>,
    #[serde(default)]
    pub sequence: SequenceConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub estimator: FitConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub ir: IrConfig,
    #[serde(default)]
    pub scan: ScanConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            source_name: source.to_string(),
            message: e.to_string().trim_end().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&io::read_file(path)?, &path.display().to_string())
    }

    /// Applies command-line overrides and propagates the master seed.
    pub fn resolve(mut self, seed: Option<u64>, axis: Option<AxisArg>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.optimizer.seed = self.seed;
        match axis {
            Some(AxisArg::X) => self.optimizer.axis = AxisMode::X,
            Some(AxisArg::Xy) => self.optimizer.axis = AxisMode::Xy,
            None => {}
        }
        self
    }

    /// SHA-256 of the resolved config's canonical JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn template(&self) -> Result<EnsembleSpec> {
        self.ensemble.spec()
    }

    /// Cartesian product of the grid, first parameter varying slowest.
    /// An empty grid yields the template's own parameters.
    pub fn grid_points(&self) -> Result<Vec<ParameterPoint>> {
        let template = self.template()?;
        if self.grid.is_empty() {
            return Ok(vec![template.to_point()]);
        }
        let mut points = vec![ParameterPoint::default()];
        for (param, values) in &self.grid {
            if values.is_empty() {
                return Err(Error::invalid(format!("grid.{param} is empty")));
            }
            points = points
                .iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.set(*param, *v);
                        q
                    })
                })
                .collect();
        }
        for p in &points {
            p.validate()?;
            template.with_point(p)?.build()?;
        }
        Ok(points)
    }

    pub fn truth_point(&self) -> Result<ParameterPoint> {
        if self.truth.is_empty() {
            return Err(Error::invalid("this command needs a [truth] table"));
        }
        ParameterPoint::new(self.truth.iter().map(|(k, v)| (*k, *v)))
    }

    pub fn dict_spec(&self) -> Result<DictionarySpec> {
        DictionarySpec::new(self.template()?, self.grid_points()?)
    }

    fn random_seed(&self) -> u64 {
        self.sequence.seed.unwrap_or(self.seed)
    }
}

/// A control field and, when it was optimized here, its provenance.
pub struct ResolvedSequence {
    pub sequence: PulseSequence,
    pub provenance: Option<SequenceProvenance>,
}

pub fn resolve_sequence(cfg: &ExperimentConfig) -> Result<ResolvedSequence> {
    let s = &cfg.sequence;
    if s.source != SequenceSource::File && s.n_pulses == 0 {
        return Err(Error::invalid("sequence.n_pulses must be at least 1"));
    }
    match s.source {
        SequenceSource::File => {
            let path = s
                .path
                .as_ref()
                .ok_or_else(|| Error::invalid("sequence.source = \"file\" needs sequence.path"))?;
            let (sequence, provenance) = io::load_sequence(path)?;
            Ok(ResolvedSequence { sequence, provenance })
        }
        SequenceSource::Zeros => Ok(ResolvedSequence {
            sequence: PulseSequence::zeros(s.n_pulses, s.delay_s)?,
            provenance: None,
        }),
        SequenceSource::Random => Ok(ResolvedSequence {
            sequence: random_field(s.n_pulses, s.amplitude_bound_rad, s.delay_s, cfg.random_seed())?,
            provenance: None,
        }),
        SequenceSource::Optimize => {
            let spec = cfg.dict_spec()?;
            if spec.len() < 2 {
                return Err(Error::invalid("optimizing a field needs a grid with at least two points"));
            }
            let w = WeightMatrix::ones(spec.len());
            let (sequence, trace) = optimize_multistart(&spec, s.n_pulses, s.delay_s, &w, &cfg.optimizer)?;
            let provenance = SequenceProvenance {
                dict_spec_hash: spec.hash(),
                config: serde_json::to_value(&cfg.optimizer).expect("optimizer config serializes"),
                seed: cfg.optimizer.seed,
                final_c_n: trace.final_value(),
            };
            Ok(ResolvedSequence { sequence, provenance: Some(provenance) })
        }
    }
}

fn gnuplot_script(csv_name: &str, title: &str, x: &str, ys: &[(usize, usize, &str)], logx: bool) -> String {
    let mut s = String::from("set datafile separator ','\nset key autotitle columnhead\n");
    if logx {
        s.push_str("set logscale x\n");
    }
    let _ = writeln!(s, "set title '{title}'\nset xlabel '{x}'");
    let plots: Vec<String> = ys
        .iter()
        .map(|(xc, yc, label)| format!("'{csv_name}' using {xc}:{yc} with lines title '{label}'"))
        .collect();
    let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
    s
}

struct Ctx {
    cfg: ExperimentConfig,
    prov: Provenance,
    out: PathBuf,
    gnuplot: bool,
}

impl Ctx {
    fn write(&self, rel: &str, contents: &str) -> Result<()> {
        io::write_file(&self.out.join(rel), contents)
    }

    fn plot(&self, rel: &str, script: String) -> Result<()> {
        if self.gnuplot {
            self.write(rel, &script)?;
        }
        Ok(())
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                2
            } else {
                1
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    if let Some(n) = g.threads {
        if n == 0 {
            return Err(Error::invalid("--threads must be at least 1"));
        }
        // A second call in the same process (tests) keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let path = g
        .config
        .ok_or_else(|| Error::invalid("--config <path> is required"))?;
    let cfg = ExperimentConfig::load(&path)?.resolve(g.seed, g.axis);
    cfg.optimizer.validate()?;
    cfg.estimator.validate()?;
    let ctx = Ctx {
        prov: Provenance::new(cfg.hash()),
        cfg,
        out: g.out,
        gnuplot: g.gnuplot,
    };
    match cli.command {
        Command::Simulate => cmd_simulate(&ctx),
        Command::BuildDict => cmd_build_dict(&ctx),
        Command::Optimize { random_baseline } => cmd_optimize(&ctx, random_baseline),
        Command::Estimate { signal, dictionary } => cmd_estimate(&ctx, &signal, dictionary.as_deref()),
        Command::NoiseStudy => cmd_noise_study(&ctx),
        Command::IrCompare => cmd_ir_compare(&ctx),
        Command::ScanFwhm { signal } => cmd_scan(&ctx, signal.as_deref()),
    }
}

fn write_sequence(ctx: &Ctx, seq: &ResolvedSequence) -> Result<()> {
    ctx.write(
        "sequence.json",
        &io::sequence_json(&seq.sequence, Some(&ctx.prov), seq.provenance.as_ref()),
    )
}

fn cmd_simulate(ctx: &Ctx) -> Result<()> {
    let seq = resolve_sequence(&ctx.cfg)?;
    let model = ForwardModel::new(ctx.cfg.template()?, seq.sequence.clone());
    let points = ctx.cfg.grid_points()?;
    let trajectories = points
        .par_iter()
        .map(|p| model.simulate(p))
        .collect::<Result<Vec<_>>>()?;
    let mut index = ctx.prov.header_line();
    index.push_str("file,parameters\n");
    for (i, (p, t)) in points.iter().zip(&trajectories).enumerate() {
        let name = format!("trajectories/entry_{i:03}.csv");
        ctx.write(&name, &io::trajectory_csv(t, &ctx.prov))?;
        let _ = writeln!(index, "{name},{}", io::point_label(p));
    }
    ctx.write("trajectories/index.csv", &index)?;
    write_sequence(ctx, &seq)?;
    ctx.plot(
        "trajectories/entry_000.gp",
        gnuplot_script("entry_000.csv", "fingerprint", "t (s)", &[(2, 3, "mx"), (2, 4, "my")], false),
    )
}

fn build_dictionary(ctx: &Ctx, sequence: PulseSequence) -> Result<Dictionary> {
    Dictionary::build(ctx.cfg.template()?, sequence, ctx.cfg.grid_points()?)
}

fn cmd_build_dict(ctx: &Ctx) -> Result<()> {
    let seq = resolve_sequence(&ctx.cfg)?;
    let dict = build_dictionary(ctx, seq.sequence.clone())?;
    ctx.write("dictionary.json", &io::dictionary_json(&dict, Some(&ctx.prov)))?;
    let map = recognition_map(&dict)?;
    let points: Vec<ParameterPoint> = dict.entries().iter().map(|e| e.point.clone()).collect();
    ctx.write("recognition_map.csv", &io::recognition_map_csv(&map, &points, &ctx.prov))?;
    ctx.write("recognition_map.json", &io::recognition_summary_json(&map, &ctx.prov))?;
    write_sequence(ctx, &seq)
}

fn cmd_optimize(ctx: &Ctx, random_baseline: usize) -> Result<()> {
    let cfg = &ctx.cfg;
    let spec = cfg.dict_spec()?;
    if spec.len() < 2 {
        return Err(Error::invalid("optimize needs a grid with at least two points"));
    }
    let s = &cfg.sequence;
    if s.n_pulses == 0 {
        return Err(Error::invalid("sequence.n_pulses must be at least 1"));
    }
    let w = WeightMatrix::ones(spec.len());
    let (field, trace) = optimize_multistart(&spec, s.n_pulses, s.delay_s, &w, &cfg.optimizer)?;
    let prov = SequenceProvenance {
        dict_spec_hash: spec.hash(),
        config: serde_json::to_value(&cfg.optimizer).expect("optimizer config serializes"),
        seed: cfg.optimizer.seed,
        final_c_n: trace.final_value(),
    };
    ctx.write("field.json", &io::sequence_json(&field, Some(&ctx.prov), Some(&prov)))?;
    ctx.write("trace.csv", &io::trace_csv(&trace, &ctx.prov))?;
    ctx.plot(
        "trace.gp",
        gnuplot_script("trace.csv", "figure of merit", "iteration", &[(1, 2, "C_N")], false),
    )?;
    if random_baseline > 0 {
        let base = cfg.random_seed();
        let rows = (0..random_baseline as u64)
            .into_par_iter()
            .map(|i| {
                let seed = base.wrapping_add(i);
                let f = random_field(s.n_pulses, s.amplitude_bound_rad, s.delay_s, seed)?;
                let d = Dictionary::build(spec.template, f, spec.points.clone())?;
                let c = figure_of_merit(&d, &w)?;
                let m = recognition_map(&d)?.min_off_diagonal().unwrap_or(f64::NAN);
                Ok((seed, c, m))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut csv = ctx.prov.header_line();
        csv.push_str("seed,c_n,min_off_diagonal\n");
        for (seed, c, m) in rows {
            let _ = writeln!(csv, "{seed},{},{}", io::fmt_f64(c), io::fmt_f64(m));
        }
        ctx.write("random_baseline.csv", &csv)?;
    }
    let d = Dictionary::build(spec.template, field, spec.points)?;
    let map = recognition_map(&d)?;
    let points: Vec<ParameterPoint> = d.entries().iter().map(|e| e.point.clone()).collect();
    ctx.write("recognition_map.csv", &io::recognition_map_csv(&map, &points, &ctx.prov))?;
    ctx.write("recognition_map.json", &io::recognition_summary_json(&map, &ctx.prov))
}

fn cmd_estimate(ctx: &Ctx, signal: &Path, dictionary: Option<&Path>) -> Result<()> {
    let g = io::load_trajectory(signal)?;
    let dict = match dictionary {
        Some(path) => {
            let seq = resolve_sequence(&ctx.cfg)?;
            io::load_dictionary(path, &seq.sequence)?
        }
        None => build_dictionary(ctx, resolve_sequence(&ctx.cfg)?.sequence)?,
    };
    if g.len() != dict.sequence().len() {
        return Err(Error::Dimension {
            expected: dict.sequence().len(),
            actual: g.len(),
        });
    }
    let delay = dict.sequence().delay_t();
    if (g.delay_t() - delay).abs() > 1e-9 * delay.max(1e-12) {
        return Err(Error::invalid(format!(
            "signal sample spacing {} s does not match the field delay {delay} s",
            g.delay_t()
        )));
    }
    let matched = recognize(&dict, &g)?;
    let report = estimate(&dict, &g, &ctx.cfg.estimator)?;
    ctx.write("report.json", &io::report_json(&report, &dict, &g, &ctx.prov))?;
    let points: Vec<ParameterPoint> = dict.entries().iter().map(|e| e.point.clone()).collect();
    ctx.write("residuals.csv", &io::residual_curve_csv(&points, &matched.distances, &ctx.prov))?;
    ctx.plot(
        "residuals.gp",
        gnuplot_script("residuals.csv", "distance to each entry", "entry", &[(1, 3, "D")], false),
    )
}

/// Per-draw estimates cached on disk, keyed by config hash, method, noise
/// level and draw index. Lines: `method,epsilon_bits,draw,estimate|fail`.
struct Checkpoint {
    path: Option<PathBuf>,
    done: HashMap<(String, u64, u64), Option<f64>>,
}

impl Checkpoint {
    fn open(ctx: &Ctx, name: &str) -> Result<Self> {
        if !ctx.cfg.noise.checkpoint {
            return Ok(Self { path: None, done: HashMap::new() });
        }
        let path = ctx
            .out
            .join("checkpoints")
            .join(format!("{name}-{}.csv", ctx.prov.config_hash));
        let mut done = HashMap::new();
        if path.exists() {
            for line in io::read_file(&path)?.lines() {
                let f: Vec<&str> = line.split(',').collect();
                // A torn last line from an interrupted write is ignored.
                if f.len() != 4 {
                    continue;
                }
                let (Ok(bits), Ok(draw)) = (f[1].parse::<u64>(), f[2].parse::<u64>()) else {
                    continue;
                };
                let value = match f[3] {
                    "fail" => None,
                    v => match v.parse::<f64>() {
                        Ok(x) => Some(x),
                        Err(_) => continue,
                    },
                };
                done.insert((f[0].to_string(), bits, draw), value);
            }
        }
        Ok(Self { path: Some(path), done })
    }

    fn append(&mut self, method: &str, eps: f64, results: &[(u64, Option<f64>)]) -> Result<()> {
        for (d, v) in results {
            self.done.insert((method.to_string(), eps.to_bits(), *d), *v);
        }
        let Some(path) = &self.path else {
            return Ok(());
        };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut text = String::new();
        for (d, v) in results {
            let value = v.map(io::fmt_f64).unwrap_or_else(|| "fail".into());
            let _ = writeln!(text, "{method},{},{d},{value}", eps.to_bits());
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn run_study(ctx: &Ctx, checkpoint: &mut Checkpoint, scenario: &Scenario) -> Result<WidthReport> {
    let noise = &ctx.cfg.noise;
    if noise.epsilon.is_empty() || noise.draws < 2 {
        return Err(Error::invalid("noise needs a non-empty epsilon grid and draws >= 2"));
    }
    let clean: CleanSignal = scenario.clean()?;
    let method = scenario.label().to_string();
    let mut rows = Vec::with_capacity(noise.epsilon.len());
    for &eps in &noise.epsilon {
        let spec = NoiseSpec::new(eps, ctx.cfg.seed)?;
        let missing: Vec<u64> = (0..noise.draws as u64)
            .filter(|d| !checkpoint.done.contains_key(&(method.clone(), eps.to_bits(), *d)))
            .collect();
        let fresh: Vec<(u64, Option<f64>)> = missing
            .par_iter()
            .map(|&d| (d, scenario.run_draw(&clean, spec, d).ok()))
            .collect();
        checkpoint.append(&method, eps, &fresh)?;
        let estimates: Vec<Option<f64>> = (0..noise.draws as u64)
            .map(|d| checkpoint.done[&(method.clone(), eps.to_bits(), d)])
            .collect();
        rows.push(summarize(eps, &estimates, noise.width)?);
    }
    Ok(WidthReport {
        method,
        kind: noise.width,
        rows,
    })
}

fn fingerprint_scenario(ctx: &Ctx, label: &str, sequence: PulseSequence) -> Result<Scenario> {
    let truth = ctx.cfg.truth_point()?;
    let target = *ctx
        .cfg
        .estimator
        .free
        .first()
        .ok_or_else(|| Error::invalid("estimator.free is empty"))?;
    Ok(Scenario::Fingerprint {
        label: label.into(),
        dictionary: build_dictionary(ctx, sequence)?,
        truth,
        target,
        fit: ctx.cfg.estimator.clone(),
    })
}

fn write_comparison(ctx: &Ctx, num: &WidthReport, den: &WidthReport) -> Result<()> {
    ctx.write("widths.csv", &io::width_csv(&[den, num], &ctx.prov))?;
    let ratios = compare_methods(num, den)?;
    ctx.write("ratios.csv", &io::ratio_csv(&ratios, &num.method, &den.method, &ctx.prov))?;
    ctx.plot(
        "widths.gp",
        gnuplot_script(
            "widths.csv",
            "estimator width",
            "epsilon",
            &[(1, 3, "width")],
            true,
        ),
    )
}

fn cmd_noise_study(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let seq = resolve_sequence(cfg)?;
    let s = &cfg.sequence;
    let random_seed = cfg.noise.random_seed.unwrap_or(cfg.seed);
    let baseline = random_field(seq.sequence.len(), s.amplitude_bound_rad, seq.sequence.delay_t(), random_seed)?;
    let optimal = fingerprint_scenario(ctx, "optimal", seq.sequence.clone())?;
    let random = fingerprint_scenario(ctx, "random", baseline)?;
    let mut ck = Checkpoint::open(ctx, "noise-study")?;
    let opt = run_study(ctx, &mut ck, &optimal)?;
    let rnd = run_study(ctx, &mut ck, &random)?;
    write_sequence(ctx, &seq)?;
    write_comparison(ctx, &rnd, &opt)
}

fn cmd_ir_compare(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let seq = resolve_sequence(cfg)?;
    let ofp = fingerprint_scenario(ctx, "ofp", seq.sequence.clone())?;
    let truth = cfg.truth_point()?;
    let t1 = truth
        .get(Parameter::T1)
        .or_else(|| cfg.template().ok()?.get(Parameter::T1))
        .ok_or_else(|| Error::invalid("ir-compare needs truth.t1_s"))?;
    if cfg.ir.n_points < 2 || !(cfg.ir.spacing_s > 0.0) {
        return Err(Error::invalid("ir needs n_points >= 2 and spacing_s > 0"));
    }
    let ir = Scenario::InversionRecovery {
        label: "ir".into(),
        times: (0..cfg.ir.n_points).map(|m| m as f64 * cfg.ir.spacing_s).collect(),
        t1,
        fit: cfg.estimator.clone(),
    };
    let mut ck = Checkpoint::open(ctx, "ir-compare")?;
    let a = run_study(ctx, &mut ck, &ofp)?;
    let b = run_study(ctx, &mut ck, &ir)?;
    write_sequence(ctx, &seq)?;
    write_comparison(ctx, &b, &a)
}

fn cmd_scan(ctx: &Ctx, signal: Option<&Path>) -> Result<()> {
    let cfg = &ctx.cfg;
    if cfg.scan.fwhm_rad_per_s.is_empty() {
        return Err(Error::invalid("scan.fwhm_rad_per_s must not be empty"));
    }
    let seq = resolve_sequence(cfg)?;
    let template = cfg.template()?;
    let model = ForwardModel::new(template, seq.sequence.clone());
    let g = match signal {
        Some(path) => {
            let g = io::load_trajectory(path)?;
            if g.len() != seq.sequence.len() {
                return Err(Error::Dimension {
                    expected: seq.sequence.len(),
                    actual: g.len(),
                });
            }
            g
        }
        None => {
            let clean = model.simulate(&cfg.truth_point()?)?;
            add_noise(&clean, NoiseSpec::new(cfg.scan.epsilon, cfg.seed)?)?
        }
    };
    let mut start = ParameterPoint::default();
    for p in &cfg.estimator.free {
        let v = cfg
            .scan
            .start
            .get(p)
            .copied()
            .or_else(|| template.get(*p))
            .ok_or_else(|| Error::invalid(format!("no start value for {p}")))?;
        start.set(*p, v);
    }
    let rows = correlation_scan(&g, &model, &start, &cfg.scan.fwhm_rad_per_s, &cfg.estimator)?;
    for r in &rows {
        if let Err(e) = &r.fit {
            eprintln!("warning: fit at fwhm {} failed: {e}", r.fwhm);
        }
    }
    ctx.write("scan.csv", &io::scan_csv(&rows, &ctx.prov))?;
    write_sequence(ctx, &seq)?;
    ctx.plot(
        "scan.gp",
        gnuplot_script("scan.csv", "fwhm scan", "fwhm (rad/s)", &[(1, 4, "residual"), (1, 5, "T2*")], false),
    )
}
