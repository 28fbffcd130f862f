//! `ncollapse` command-line surface.
//!
//! Every command writes a rectangular table to stdout as RFC-4180 CSV or as
//! a flat JSON array of objects. Floats are rendered with 17 significant
//! digits in CSV and shortest round-trip form in JSON, so both encodings
//! parse back to identical values.
//!
//! Exit codes: 0 success, 1 fatal error or bad arguments, 2 when some
//! trajectory epochs failed (the table is still written).

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::classify::{duality_residual, max_margin_solve, webb_lowe, MaxMarginOptions};
use crate::codec::{analytic_exponent, exponent_estimate, CodecInstance};
use crate::error::{Error, Result};
use crate::etf::{etf_deviation, maximin_distance, SimplexEtf};
use crate::io::{read_pack_file, write_classifier_file, ClassifierSnapshot, EpochManifest};
use crate::metrics::{trajectory_report, ProbeSet, ReportOptions};
use crate::moments::{compute_moments, default_rtol};
use crate::synth::{generate, SynthConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FATAL: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "ncollapse",
    version,
    about = "Neural Collapse metrics and simplex ETF codebook tools"
)]
pub struct Cli {
    /// Cap on worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProbeArg {
    Train,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// NC1–NC4 metrics for every epoch of a manifest.
    Metrics {
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Pseudoinverse cutoff relative to the largest eigenvalue.
        #[arg(long)]
        rtol: Option<f64>,
        /// Probe set for the NCC agreement metric.
        #[arg(long, value_enum, default_value = "test")]
        probe: ProbeArg,
    },
    /// Realize a randomly posed simplex ETF and store its columns as the
    /// rows of an NCLF file (zero bias).
    Etf {
        #[arg(long = "classes", short = 'C')]
        classes: usize,
        #[arg(long = "dim", short = 'p')]
        dim: usize,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Monte Carlo error rate and exponents of the simplex ETF codec.
    Codec {
        #[arg(long = "classes", short = 'C')]
        classes: usize,
        /// Comma-separated noise levels.
        #[arg(long, value_delimiter = ',', required = true)]
        sigma: Vec<f64>,
        #[arg(long)]
        trials: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Closed-form MSE-optimal classifier of a pack.
    Lda {
        pack: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rtol: Option<f64>,
    },
    /// Max-margin classifier on a pack's centered class means and its
    /// distance from self-duality.
    Maxmargin {
        pack: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Solve on the raw means instead of rescaling them to unit
        /// spectral norm.
        #[arg(long)]
        raw_scale: bool,
    },
    /// Generate a synthetic trajectory from a JSON config.
    Synth {
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(u64),
    Bool(bool),
    Text(String),
    Empty,
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Float)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// `{:.16e}` gives 17 significant digits, enough to round-trip any f64.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl OutputTable {
    pub fn new(header: &[&str]) -> Self {
        OutputTable {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "row width must match header");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::arg(format!("csv: {e}"));
        wtr.write_record(&self.header).map_err(csv_err)?;
        for row in &self.rows {
            let rendered: Vec<String> = row
                .iter()
                .map(|c| match c {
                    Cell::Float(v) => format_float(*v),
                    Cell::Int(v) => v.to_string(),
                    Cell::Bool(v) => v.to_string(),
                    Cell::Text(s) => s.clone(),
                    Cell::Empty => String::new(),
                })
                .collect();
            wtr.write_record(&rendered).map_err(csv_err)?;
        }
        let bytes = wtr.into_inner().map_err(|e| Error::arg(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|row| {
                let obj: serde_json::Map<String, serde_json::Value> = self
                    .header
                    .iter()
                    .zip(row)
                    .map(|(k, c)| {
                        let v = match c {
                            Cell::Float(v) => serde_json::Number::from_f64(*v)
                                .map_or(serde_json::Value::Null, serde_json::Value::Number),
                            Cell::Int(v) => serde_json::Value::from(*v),
                            Cell::Bool(v) => serde_json::Value::Bool(*v),
                            Cell::Text(s) => serde_json::Value::String(s.clone()),
                            Cell::Empty => serde_json::Value::Null,
                        };
                        (k.clone(), v)
                    })
                    .collect();
                serde_json::Value::Object(obj)
            })
            .collect();
        let mut text = serde_json::to_string_pretty(&rows)?;
        text.push('\n');
        Ok(text)
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }
}

pub const METRICS_HEADER: &[&str] = &[
    "epoch",
    "status",
    "nc1_within_over_between",
    "nc1_trace",
    "between_degenerate",
    "norm_cv_means",
    "norm_cv_classifier",
    "angle_std_means",
    "angle_std_classifier",
    "max_angle_means",
    "max_angle_classifier",
    "duality_gap",
    "ncc_mismatch",
    "probe_set",
    "classifier_present",
];

/// Metrics table for a manifest and whether every epoch succeeded.
pub fn metrics_table(manifest: &EpochManifest, opts: ReportOptions) -> (OutputTable, bool) {
    let reports = trajectory_report(manifest, opts);
    let mut table = OutputTable::new(METRICS_HEADER);
    let mut all_ok = true;
    for rep in &reports {
        match &rep.outcome {
            Ok(r) => table.push(vec![
                r.epoch.into(),
                "ok".into(),
                r.nc1_within_over_between.into(),
                r.nc1_trace.into(),
                r.between_degenerate.into(),
                r.norm_cv_means.into(),
                r.norm_cv_classifier.into(),
                r.angle_std_means.into(),
                r.angle_std_classifier.into(),
                r.max_angle_means.into(),
                r.max_angle_classifier.into(),
                r.duality_gap.into(),
                r.ncc_mismatch.into(),
                r.probe_set.map_or(Cell::Empty, |p| p.as_str().into()),
                r.classifier_present.into(),
            ]),
            Err(msg) => {
                all_ok = false;
                let mut row = vec![Cell::Int(rep.epoch), Cell::Text(format!("failed: {msg}"))];
                row.resize(METRICS_HEADER.len(), Cell::Empty);
                table.push(row);
            }
        }
    }
    (table, all_ok)
}

fn cmd_metrics(
    manifest: &PathBuf,
    format: Format,
    rtol: Option<f64>,
    probe: ProbeArg,
    out: &mut dyn Write,
) -> Result<i32> {
    if let Some(r) = rtol {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::arg("--rtol must be positive"));
        }
    }
    let manifest = EpochManifest::load(manifest)?;
    let opts = ReportOptions {
        rtol,
        probe: match probe {
            ProbeArg::Train => ProbeSet::Train,
            ProbeArg::Test => ProbeSet::Test,
        },
    };
    let (table, all_ok) = metrics_table(&manifest, opts);
    out.write_all(table.render(format)?.as_bytes())?;
    Ok(if all_ok { EXIT_OK } else { EXIT_PARTIAL })
}

fn cmd_etf(
    classes: usize,
    dim: usize,
    alpha: f64,
    seed: u64,
    path: &PathBuf,
    format: Format,
    out: &mut dyn Write,
) -> Result<i32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let etf = SimplexEtf::random(classes, dim, alpha, &mut rng)?;
    let m = etf.realize();
    let clf = ClassifierSnapshot::new(m.transpose(), DVector::zeros(classes))?;
    write_classifier_file(&clf, path)?;
    let dev = etf_deviation(&m)?;
    let mut table = OutputTable::new(&[
        "classes",
        "dim",
        "alpha",
        "seed",
        "norm_cv",
        "cosine_std",
        "max_angle_dev",
        "maximin_distance",
    ]);
    table.push(vec![
        classes.into(),
        dim.into(),
        alpha.into(),
        seed.into(),
        dev.norm_cv.into(),
        dev.cosine_std.into(),
        dev.max_angle_dev.into(),
        maximin_distance(&m)?.into(),
    ]);
    out.write_all(table.render(format)?.as_bytes())?;
    Ok(EXIT_OK)
}

pub fn codec_table(classes: usize, sigmas: &[f64], trials: u64, seed: u64) -> Result<OutputTable> {
    if sigmas.is_empty() {
        return Err(Error::arg("at least one --sigma is required"));
    }
    let base = CodecInstance::simplex(classes, sigmas[0])?;
    let beta = analytic_exponent(&base).beta;
    let points = exponent_estimate(&base, sigmas, trials, seed)?;
    let mut table = OutputTable::new(&[
        "sigma",
        "error_rate",
        "ci_halfwidth",
        "errors",
        "empirical_exponent",
        "analytic_beta",
    ]);
    for pt in points {
        table.push(vec![
            pt.sigma.into(),
            pt.estimate.error_rate.into(),
            pt.estimate.ci_halfwidth.into(),
            pt.estimate.errors.into(),
            pt.empirical_exponent.into(),
            beta.into(),
        ]);
    }
    Ok(table)
}

fn cmd_lda(pack: &PathBuf, path: &PathBuf, rtol: Option<f64>, err: &mut dyn Write) -> Result<i32> {
    let pack = read_pack_file(pack)?;
    let m = compute_moments(&pack)?;
    let rtol = rtol.unwrap_or_else(|| default_rtol(pack.feature_dim()));
    let clf = webb_lowe(&m, rtol)?;
    write_classifier_file(&clf, path)?;
    writeln!(err, "wrote {}", path.display())?;
    Ok(EXIT_OK)
}

fn cmd_maxmargin(pack: &PathBuf, tol: f64, format: Format, raw_scale: bool, out: &mut dyn Write) -> Result<i32> {
    let pack = read_pack_file(pack)?;
    let m = compute_moments(&pack)?;
    let top_singular = m.centered_means.clone().singular_values().max();
    if top_singular == 0.0 {
        return Err(Error::Degenerate("class means coincide".into()));
    }
    let scale = if raw_scale { 1.0 } else { 1.0 / top_singular };
    let means = &m.centered_means * scale;
    let sol = max_margin_solve(
        &means,
        MaxMarginOptions {
            tol,
            ..Default::default()
        },
    )?;
    let mut table = OutputTable::new(&[
        "classes",
        "feature_dim",
        "mean_scale",
        "sweeps",
        "kkt_residual",
        "duality_residual",
    ]);
    table.push(vec![
        pack.num_classes().into(),
        pack.feature_dim().into(),
        scale.into(),
        sol.sweeps.into(),
        sol.kkt_residual().into(),
        duality_residual(&sol.weights, &means).into(),
    ]);
    out.write_all(table.render(format)?.as_bytes())?;
    Ok(EXIT_OK)
}

fn cmd_synth(config: &PathBuf, out_dir: &PathBuf, out: &mut dyn Write) -> Result<i32> {
    let text = std::fs::read_to_string(config).map_err(|e| Error::io(config, e))?;
    let cfg: SynthConfig = serde_json::from_str(&text)?;
    generate(&cfg, out_dir)?;
    writeln!(out, "{}", out_dir.join("manifest.json").display())?;
    Ok(EXIT_OK)
}

fn dispatch(command: &Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Metrics {
            manifest,
            format,
            rtol,
            probe,
        } => cmd_metrics(manifest, *format, *rtol, *probe, out),
        Command::Etf {
            classes,
            dim,
            alpha,
            seed,
            out: path,
            format,
        } => cmd_etf(*classes, *dim, *alpha, *seed, path, *format, out),
        Command::Codec {
            classes,
            sigma,
            trials,
            seed,
            format,
        } => {
            let table = codec_table(*classes, sigma, *trials, *seed)?;
            out.write_all(table.render(*format)?.as_bytes())?;
            Ok(EXIT_OK)
        }
        Command::Lda { pack, out: path, rtol } => cmd_lda(pack, path, *rtol, err),
        Command::Maxmargin {
            pack,
            tol,
            format,
            raw_scale,
        } => cmd_maxmargin(pack, *tol, *format, *raw_scale, out),
        Command::Synth { config, out_dir } => cmd_synth(config, out_dir, out),
    }
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_FATAL } else { EXIT_OK };
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = err.write_all(rendered.as_bytes());
            } else {
                let _ = out.write_all(rendered.as_bytes());
            }
            return code;
        }
    };
    let result = match cli.threads {
        Some(0) => Err(Error::arg("--threads must be at least 1")),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => {
                let (mut obuf, mut ebuf) = (Vec::new(), Vec::new());
                let r = pool.install(|| dispatch(&cli.command, &mut obuf, &mut ebuf));
                let _ = out.write_all(&obuf);
                let _ = err.write_all(&ebuf);
                r
            }
            Err(e) => Err(Error::arg(format!("thread pool: {e}"))),
        },
        None => dispatch(&cli.command, out, err),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_FATAL
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_rendering_round_trips() {
        for v in [0.1, 1.0 / 3.0, 6.209_665_325_776_132e-3, -2.5e-300, 1e300] {
            let s = format_float(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
        assert_eq!(format_float(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn table_csv_and_json() {
        let mut t = OutputTable::new(&["a", "b", "c"]);
        t.push(vec![Cell::Int(1), Cell::Empty, Cell::Text("x,y".into())]);
        assert_eq!(t.to_csv().unwrap(), "a,b,c\r\n1,,\"x,y\"\r\n");
        let json: serde_json::Value = serde_json::from_str(&t.to_json().unwrap()).unwrap();
        assert_eq!(json[0]["a"], 1);
        assert!(json[0]["b"].is_null());
    }

    #[test]
    fn bad_arguments_exit_one() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(
            run(["ncollapse", "etf", "--classes", "3"], &mut out, &mut err),
            EXIT_FATAL
        );
        assert!(!err.is_empty());
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(run(["ncollapse", "bogus"], &mut out, &mut err), EXIT_FATAL);
    }
}
