//! Command-line front end: `certify`, `verify`, `eval` and `report`.
//!
//! Exit codes: 0 on success or a passing report, 1 on a failing report,
//! 2 when a stage aborts or the input is unusable.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};
use num_complex::Complex64 as C64;

use crate::config::{parse_config, RunConfig};
use crate::domain::{project_to_boundary, ParameterValue};
use crate::error::{Error, Result, StageExt};
use crate::figures;
use crate::peak::ConstantsCertificate;
use crate::pipeline::{self, certificate_json, sha256_hex};
use crate::verify::{self, VerificationReport};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "peakfn", version, about = "Peak functions for families of strictly pseudoconvex domains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the construction stages and write the constants certificate.
    Certify {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `output.certificate` of the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated eta1 values; writes one certificate per value.
        #[arg(long, value_delimiter = ',')]
        eta1_sweep: Vec<f64>,
    },
    /// Re-test a certificate on fresh samples and write the report.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        certificate: PathBuf,
        /// Defaults to `output.report` of the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print h_t(z; zeta). Coordinates are comma-separated complex numbers such as `0.6+0.8i,0`.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Reuse a stored certificate instead of certifying first.
        #[arg(long)]
        certificate: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        t: f64,
        #[arg(long, allow_hyphen_values = true)]
        zeta: String,
        #[arg(long, allow_hyphen_values = true)]
        z: String,
    },
    /// CSV point dump and SVG figure from a stored certificate.
    Report {
        /// Certificate JSON of a prior run.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Verification report whose continuity table is drawn next to the level sets.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Samples per evaluator in the CSV dump.
        #[arg(long, default_value_t = 200)]
        points: usize,
        /// Grid resolution of the level-set panel.
        #[arg(long, default_value_t = 160)]
        resolution: usize,
    },
}

/// Comma-separated complex coordinates.
pub fn parse_point(text: &str) -> Result<Vec<C64>> {
    text.split(',')
        .map(|s| {
            let s = s.trim();
            C64::from_str(s).map_err(|_| Error::InvalidInput(format!("cannot parse complex number `{s}`")))
        })
        .collect()
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn load_config(path: &Path) -> Result<RunConfig> {
    read(path).and_then(|t| parse_config(&t)).stage("config")
}

/// Certificate text, its hash and the parsed certificate.
pub fn load_certificate(path: &Path) -> Result<(ConstantsCertificate, String)> {
    let text = read(path).stage("certificate")?;
    let cert: ConstantsCertificate = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        .stage("certificate")?;
    Ok((cert, sha256_hex(text.as_bytes())))
}

fn out_path(flag: Option<PathBuf>, fallback: &Option<String>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| fallback.as_ref().map(PathBuf::from))
        .ok_or_else(|| Error::Config(format!("no {what} output path given")))
}

fn sweep_path(base: &Path, eta1: f64) -> PathBuf {
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("certificate");
    let ext = base.extension().and_then(|s| s.to_str()).unwrap_or("json");
    base.with_file_name(format!("{stem}.eta1-{eta1}.{ext}"))
}

/// Certifies, verifies and returns the report without touching the filesystem.
pub fn verify_config(config: &RunConfig, certificate: &ConstantsCertificate, hash: &str) -> Result<VerificationReport> {
    let construction = pipeline::rebuild(config, certificate)?;
    verify::verify(&construction, hash).stage("verification")
}

/// One line per property, `PASS`/`FAIL` first.
pub fn summary(report: &VerificationReport) -> String {
    let mut s = String::new();
    for p in &report.properties {
        s.push_str(&format!(
            "{} {:<18} margin {:>+.4e} samples {}\n",
            if p.pass { "PASS" } else { "FAIL" },
            p.name,
            p.margin,
            p.samples
        ));
    }
    for r in &report.continuity {
        s.push_str(&format!("     omega({}) = {:.4e} over {} triples\n", r.delta, r.omega, r.count));
    }
    s.push_str(&format!(
        "     solver {:?} residual max {:.3e} mean {:.3e} certified {}\n",
        report.solver.backend, report.solver.residual_max, report.solver.residual_mean, report.solver.certified
    ));
    s.push_str(if report.pass { "report PASS\n" } else { "report FAIL\n" });
    s
}

/// Evaluates `h_t(z; ζ)`, projecting `ζ` onto `∂G_t` first.
pub fn eval_point(config: &RunConfig, certificate: Option<&ConstantsCertificate>, t: f64, zeta: &[C64], z: &[C64]) -> Result<C64> {
    let construction = match certificate {
        Some(c) => pipeline::load(config, c)?,
        None => {
            let mut c = pipeline::certify(config)?;
            c.evaluators.clear();
            c
        }
    };
    let tv = ParameterValue::real(t);
    let n = construction.family.dimension();
    if zeta.len() != n || z.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: if zeta.len() != n { zeta.len() } else { z.len() } }.at_stage("eval"));
    }
    let [ta, tb] = construction.family.t_range();
    if !(ta..=tb).contains(&t) {
        return Err(Error::InvalidInput(format!("t = {t} outside [{ta}, {tb}]")).at_stage("eval"));
    }
    let projected = project_to_boundary(&construction.family, tv, zeta).stage("eval")?.into_inner();
    // evaluating at the given ζ means evaluating at its projection
    let z = if z == zeta { projected.clone() } else { z.to_vec() };
    let ev = construction.evaluator_at(tv, &projected).stage("dbar_c4")?;
    ev.eval_h(&z).stage("eval")
}

pub fn format_complex(h: C64) -> String {
    format!("{:.12}{:+.12}i", h.re, h.im)
}

/// Runs one command; returns the exit code. Progress goes to `out`, errors to `err`.
pub fn run(cli: Cli, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> i32 {
    match dispatch(cli, out) {
        Ok(code) => code,
        Err(e) => {
            let stage = e.stage().unwrap_or("input");
            let _ = writeln!(err, "error in stage `{stage}`: {e}");
            EXIT_ERROR
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn std::io::Write) -> Result<i32> {
    match cli.command {
        Command::Certify { config, out: path, eta1_sweep } => {
            let config = load_config(&config)?;
            let path = out_path(path, &config.output.certificate, "certificate")?;
            if eta1_sweep.is_empty() {
                let c = pipeline::certify(&config)?;
                write(&path, &certificate_json(&c.certificate))?;
                let _ = writeln!(out, "certificate {} (eps2 {:.6}, d1 {:.6}, d2 {:.8})", path.display(), c.certificate.eps2, c.certificate.d1, c.certificate.d2);
            } else {
                for eta1 in eta1_sweep {
                    let mut cfg = config.clone();
                    cfg.construction.eta1 = eta1;
                    let c = pipeline::certify(&cfg)?;
                    let p = sweep_path(&path, eta1);
                    write(&p, &certificate_json(&c.certificate))?;
                    let _ = writeln!(out, "eta1 {eta1}: certificate {} (d1 {:.6}, d2 {:.8})", p.display(), c.certificate.d1, c.certificate.d2);
                }
            }
            Ok(EXIT_PASS)
        }
        Command::Verify { config, certificate, out: path } => {
            let config = load_config(&config)?;
            let path = out_path(path, &config.output.report, "report")?;
            let (cert, hash) = load_certificate(&certificate)?;
            let report = verify_config(&config, &cert, &hash)?;
            write(&path, &report.to_json())?;
            let _ = write!(out, "{}", summary(&report));
            if !report.pass {
                let failed: Vec<&str> = report.properties.iter().filter(|p| !p.pass).map(|p| p.name.as_str()).collect();
                let _ = writeln!(out, "verification failed at: {}", failed.join(", "));
            }
            Ok(if report.pass { EXIT_PASS } else { EXIT_FAIL })
        }
        Command::Eval { config, certificate, t, zeta, z } => {
            let config = load_config(&config)?;
            let cert = match certificate {
                Some(p) => Some(load_certificate(&p)?.0),
                None => None,
            };
            let zeta = parse_point(&zeta).stage("eval")?;
            let z = parse_point(&z).stage("eval")?;
            let h = eval_point(&config, cert.as_ref(), t, &zeta, &z)?;
            let _ = writeln!(out, "{}", format_complex(h));
            Ok(EXIT_PASS)
        }
        Command::Report { input, csv, svg, report, points, resolution } => {
            let (cert, _) = load_certificate(&input)?;
            let config = config_for_report(&cert);
            let construction = pipeline::rebuild(&config, &cert)?;
            write(&csv, &figures::csv_dump(&construction, points).stage("report")?)?;
            let _ = writeln!(out, "csv {}", csv.display());
            if let Some(svg) = svg {
                let rows = match report {
                    Some(p) => {
                        let r: VerificationReport = serde_json::from_str(&read(&p)?)
                            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                        Some(r.continuity)
                    }
                    None => None,
                };
                let ev = construction
                    .evaluators
                    .first()
                    .ok_or_else(|| Error::Degenerate("no evaluators".into()).at_stage("report"))?;
                let text = figures::svg_figure(&construction, ev, rows.as_deref(), resolution).stage("report")?;
                write(&svg, &text)?;
                let _ = writeln!(out, "svg {}", svg.display());
            }
            Ok(EXIT_PASS)
        }
    }
}

fn config_for_report(cert: &ConstantsCertificate) -> RunConfig {
    pipeline::config_from_certificate(cert, 0)
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_PASS };
        }
    };
    run(cli, &mut std::io::stdout(), &mut std::io::stderr())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_parse() {
        let p = parse_point("0.6+0.8i, -1, 2i").unwrap();
        assert_eq!(p, vec![C64::new(0.6, 0.8), C64::new(-1.0, 0.0), C64::new(0.0, 2.0)]);
        assert!(parse_point("1+").is_err());
    }

    #[test]
    fn sweep_paths_keep_extension() {
        assert_eq!(sweep_path(Path::new("out/cert.json"), 0.3), PathBuf::from("out/cert.eta1-0.3.json"));
    }

    #[test]
    fn complex_format_is_fixed() {
        assert_eq!(format_complex(C64::new(1.0, -0.0)), "1.000000000000-0.000000000000i");
        assert_eq!(format_complex(C64::new(0.5, 0.25)), "0.500000000000+0.250000000000i");
    }

    #[test]
    fn commands_parse() {
        let cli = Cli::try_parse_from(["peakfn", "eval", "--config", "c.json", "--t", "0", "--zeta", "1", "--z", "-0.5+0i"]).unwrap();
        match cli.command {
            Command::Eval { z, .. } => assert_eq!(z, "-0.5+0i"),
            _ => panic!(),
        }
        let cli = Cli::try_parse_from(["peakfn", "certify", "--config", "c.json", "--eta1-sweep", "0.3,0.4"]).unwrap();
        match cli.command {
            Command::Certify { eta1_sweep, .. } => assert_eq!(eta1_sweep, vec![0.3, 0.4]),
            _ => panic!(),
        }
    }

    #[test]
    fn missing_config_is_a_stage_error() {
        let cli = Cli::try_parse_from(["peakfn", "certify", "--config", "/nonexistent/c.json", "--out", "/tmp/x"]).unwrap();
        let mut out = Vec::new();
        let mut err = Vec::new();
        assert_eq!(run(cli, &mut out, &mut err), EXIT_ERROR);
        assert!(String::from_utf8(err).unwrap().contains("stage `config`"));
    }
}
