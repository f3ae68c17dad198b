//! `rvm <mode> --config <file> --out <dir> [--seed N]`
//!
//! Exit codes: 0 success, 1-125 number of failed checks (a run that stops on
//! a numerical error counts as one failure), 126 invalid config or usage.

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rvm_core::orchestrator::{
    kernels_mode, ode_csv, ode_mode, parse_config, simulate, trace_mode, verify_mode, OdeSummary, RunConfig, Status,
};
use rvm_core::Error;

const CONFIG_ERROR: u8 = 126;

#[derive(Parser, Debug)]
#[command(name = "rvm", version, about = "Radiative Vlasov-Maxwell toolkit")]
struct Cli {
    #[command(subcommand)]
    mode: Mode,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON config; every field is optional and defaults are echoed to `config.json`.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Mode {
    /// Full-f particle-in-cell run in 1D3V.
    Simulate(Common),
    /// Characteristics in a prescribed field.
    Trace(Common),
    /// Every invariant check, as a JSON report.
    Verify(Common),
    /// Monte Carlo certification of the light-cone kernel bounds.
    Kernels {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<u64>,
        #[arg(long)]
        adversarial: Option<u64>,
        #[arg(long)]
        pmax: Option<f64>,
        /// Report path; defaults to `<out>/kernels_report.json`.
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
    },
    /// The (W, Z) envelope system. Without `--out` the CSV goes to stdout.
    Ode {
        #[command(flatten)]
        common: Common,
        #[arg(long = "C")]
        c: Option<f64>,
        #[arg(long = "W0")]
        w0: Option<f64>,
        #[arg(long = "Z0")]
        z0: Option<f64>,
        #[arg(long = "t")]
        t: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
    },
}

impl Mode {
    fn common(&self) -> &Common {
        match self {
            Mode::Simulate(c) | Mode::Trace(c) | Mode::Verify(c) => c,
            Mode::Kernels { common, .. } | Mode::Ode { common, .. } => common,
        }
    }
}

fn load(mode: &Mode) -> Result<RunConfig, Error> {
    let common = mode.common();
    let text = match &common.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?,
        None => "{}".to_string(),
    };
    let mut config = parse_config(&text)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    match mode {
        Mode::Kernels {
            samples,
            adversarial,
            pmax,
            ..
        } => {
            let k = &mut config.kernels;
            k.samples = samples.unwrap_or(k.samples);
            k.adversarial = adversarial.unwrap_or(k.adversarial);
            k.pmax = pmax.unwrap_or(k.pmax);
        }
        Mode::Ode { c, w0, z0, t, dt, .. } => {
            let o = &mut config.ode;
            o.c = c.unwrap_or(o.c);
            o.w0 = w0.unwrap_or(o.w0);
            o.z0 = z0.unwrap_or(o.z0);
            o.t_end = t.unwrap_or(o.t_end);
            o.dt = dt.unwrap_or(o.dt);
        }
        _ => {}
    }
    config.validate()?;
    Ok(config)
}

fn out_dir(common: &Common) -> &Path {
    common.out.as_deref().unwrap_or(Path::new("rvm-out"))
}

fn print_ode_summary(s: &OdeSummary, to: &mut dyn Write) {
    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
    let _ = writeln!(
        to,
        "{} double-exponential envelope: max log(W+Z) - log envelope = {:e}",
        verdict(s.double_exp_holds),
        s.double_exp_gap
    );
    let _ = writeln!(
        to,
        "{} companion envelope: max log(W+Z) - log envelope = {:e}",
        verdict(s.companion_holds),
        s.companion_gap
    );
}

/// Failure count of a completed run.
fn run(mode: &Mode, config: &RunConfig) -> Result<usize, Error> {
    let out = out_dir(mode.common());
    match mode {
        Mode::Simulate(_) => {
            let s = simulate(config, out)?;
            println!(
                "{} steps to t = {}, {} snapshots in {}",
                s.steps,
                s.final_time,
                s.snapshots.len(),
                out.display()
            );
            println!(
                "max envelope ratio {:e}, max Gauss residual {:e}",
                s.diagnostics.max_envelope_ratio, s.diagnostics.max_gauss_residual
            );
            Ok(0)
        }
        Mode::Trace(_) => {
            let s = trace_mode(config, out)?;
            println!("{} characteristics traced into {}", s.len(), out.display());
            Ok(0)
        }
        Mode::Verify(_) => {
            let report = verify_mode(config, out)?;
            for e in &report.entries {
                let tag = match e.status {
                    Status::Pass => "PASS",
                    Status::Fail => "FAIL",
                    Status::Error => "ERROR",
                };
                println!("{tag} {:<42} measured {:>12.5e}  bound {:e}", e.id, e.measured, e.bound);
            }
            println!(
                "{} of {} checks passed; report in {}",
                report.checks - report.failures,
                report.checks,
                out.join("report.json").display()
            );
            Ok(report.failures)
        }
        Mode::Kernels { report, .. } => {
            let (r, violations) = kernels_mode(config, out, report.as_deref())?;
            for e in &r.entries {
                println!("{:<26} max ratio {:.6}", e.name, e.max_ratio);
            }
            println!("identity defect {:e}", r.identity_defect);
            Ok(violations)
        }
        Mode::Ode { common, .. } => {
            if common.out.is_some() {
                let s = ode_mode(config, out)?;
                print_ode_summary(&s, &mut io::stdout());
                Ok(s.failures())
            } else {
                let stdout = io::stdout();
                let mut lock = io::BufWriter::new(stdout.lock());
                let s = ode_csv(config, &mut lock)?;
                lock.flush().map_err(|e| Error::Io {
                    path: "stdout".into(),
                    source: e,
                })?;
                print_ode_summary(&s, &mut io::stderr());
                Ok(s.failures())
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(CONFIG_ERROR) } else { ExitCode::SUCCESS };
        }
    };
    let config = match load(&cli.mode) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(CONFIG_ERROR);
        }
    };
    match run(&cli.mode, &config) {
        Ok(failures) => ExitCode::from(failures.min(125) as u8),
        Err(e @ Error::Config { .. }) => {
            eprintln!("config error: {e}");
            ExitCode::from(CONFIG_ERROR)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
