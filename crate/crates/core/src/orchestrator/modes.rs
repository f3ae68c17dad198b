//! Mode drivers: each takes a validated config and an output directory and
//! writes its data files plus a JSON manifest echoing the full config.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::config::RunConfig;
use super::verify::{battery_initial_states, verify_all, BatterySpec, VerificationReport};
use crate::characteristics::{envelope_series, envelope_violation, log_f_growth_bound, trace};
use crate::error::{Error, Result};
use crate::fields::PrescribedField;
use crate::kinetic::{self, RunSummary};
use crate::lightcone::{certify_bounds, BoundReport};
use crate::ode::{integrate_wz_log, log_companion_envelope, log_double_exp_envelope};

/// Command-line modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Simulate,
    Trace,
    Verify,
    Kernels,
    Ode,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("manifest is serializable") + "\n"
}

fn prepare(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

/// Writes `config.json`, the resolved config with every default filled in.
pub fn echo_config(config: &RunConfig, out: &Path) -> Result<()> {
    prepare(out)?;
    write_text(&out.join("config.json"), &config.to_json())
}

/// Full-f simulation; snapshots, diagnostics and `manifest.json` in `out`.
pub fn simulate(config: &RunConfig, out: &Path) -> Result<RunSummary> {
    let params = config.force_params()?;
    echo_config(config, out)?;
    kinetic::run(&config.simulate, &params, config.seed, out)
}

/// Per-characteristic worst cases of a trace run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSummary {
    pub file: String,
    pub initial_x: [f64; 3],
    pub initial_p: [f64; 3],
    pub max_radius_increase: f64,
    /// `None` when the trace reaches `p = 0`.
    pub max_envelope_increase: Option<f64>,
    pub max_growth_excess: f64,
    pub light_cone_margin: f64,
}

/// Traces the configured characteristics in one catalog field; writes
/// `trace_NNN.csv` per characteristic and `manifest.json`.
pub fn trace_mode(config: &RunConfig, out: &Path) -> Result<Vec<TraceSummary>> {
    let params = config.force_params()?;
    echo_config(config, out)?;
    let t = &config.trace;
    let field = PrescribedField::catalog(t.field, t.strength, config.seed);
    let spec = BatterySpec {
        fields: 1,
        characteristics: t.characteristics,
        field_strength: t.strength,
        momentum_max: t.momentum_max.max(0.01),
        t_end: t.t_end,
        dt: t.dt,
        seed: config.seed,
    };
    let mut summaries = Vec::with_capacity(t.characteristics);
    for (i, initial) in battery_initial_states(&spec, 0).into_iter().enumerate() {
        let tr = trace(initial, &field, field.to_string(), &params, t.t_end, t.dt)?;
        let name = format!("trace_{i:03}.csv");
        let path = out.join(&name);
        let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
        tr.write_csv(&mut w, params.a)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&path, e))?;
        summaries.push(TraceSummary {
            file: name,
            initial_x: initial.phase.x.into(),
            initial_p: initial.phase.p.into(),
            max_radius_increase: tr.max_radius_increase(),
            max_envelope_increase: envelope_series(&tr, params.a).ok().map(|s| envelope_violation(&s)),
            max_growth_excess: log_f_growth_bound(&tr),
            light_cone_margin: tr.light_cone_margin(),
        });
    }
    let manifest = serde_json::json!({
        "mode": Mode::Trace,
        "seed": config.seed,
        "force": params,
        "field": field,
        "trace": t,
        "characteristics": summaries,
    });
    write_text(&out.join("manifest.json"), &to_json(&manifest))?;
    Ok(summaries)
}

/// Certifies the kernel bounds; writes the report to `report` (default
/// `out/kernels_report.json`) and `manifest.json`. Returns the report and
/// the number of violated inequalities.
pub fn kernels_mode(config: &RunConfig, out: &Path, report: Option<&Path>) -> Result<(BoundReport, usize)> {
    echo_config(config, out)?;
    let k = &config.kernels;
    let r = certify_bounds(k.samples, k.adversarial, k.pmax, config.seed)?;
    let violations =
        r.entries.iter().filter(|e| !(e.max_ratio <= 1.0)).count() + usize::from(!(r.identity_defect <= 1e-12));
    let default_path = out.join("kernels_report.json");
    let path = report.unwrap_or(&default_path);
    write_text(path, &r.to_json())?;
    let manifest = serde_json::json!({
        "mode": Mode::Kernels,
        "seed": config.seed,
        "kernels": k,
        "report": path.display().to_string(),
        "worst_ratio": r.worst_ratio(),
        "identity_defect": r.identity_defect,
        "violations": violations,
    });
    write_text(&out.join("manifest.json"), &to_json(&manifest))?;
    Ok((r, violations))
}

/// Pass/fail summary of the envelope ODE run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdeSummary {
    pub samples: usize,
    /// Largest `log(W + Z) - log envelope`.
    pub double_exp_gap: f64,
    pub double_exp_holds: bool,
    pub companion_gap: f64,
    pub companion_holds: bool,
}

impl OdeSummary {
    pub fn failures(&self) -> usize {
        usize::from(!self.double_exp_holds) + usize::from(!self.companion_holds)
    }
}

/// Writes the `(W, Z)` trajectory with both envelopes as CSV. Linear
/// columns overflow to `inf` past the double range; the log columns do not.
pub fn ode_csv(config: &RunConfig, w: &mut dyn Write) -> Result<OdeSummary> {
    let params = config.ode.params()?;
    let series = integrate_wz_log(&params, config.ode.dt)?;
    let io = |e| Error::Io {
        path: "ode csv".into(),
        source: e,
    };
    writeln!(w, "t,W,Z,envelope,log_W,log_Z,log_envelope,log_companion").map_err(io)?;
    let mut summary = OdeSummary {
        samples: series.len(),
        double_exp_gap: f64::NEG_INFINITY,
        double_exp_holds: true,
        companion_gap: f64::NEG_INFINITY,
        companion_holds: true,
    };
    for s in &series {
        let env = log_double_exp_envelope(&params, s.t);
        let comp = log_companion_envelope(&params, s.t);
        summary.double_exp_gap = summary.double_exp_gap.max(s.log_sum() - env);
        summary.companion_gap = summary.companion_gap.max(s.log_sum() - comp);
        writeln!(
            w,
            "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            s.t,
            s.log_w.exp(),
            s.log_z.exp(),
            env.exp(),
            s.log_w,
            s.log_z,
            env,
            comp
        )
        .map_err(io)?;
    }
    summary.double_exp_holds = summary.double_exp_gap <= 1e-9;
    summary.companion_holds = summary.companion_gap <= 1e-9;
    Ok(summary)
}

/// Envelope ODE run: `ode.csv` and `manifest.json` in `out`.
pub fn ode_mode(config: &RunConfig, out: &Path) -> Result<OdeSummary> {
    echo_config(config, out)?;
    let path = out.join("ode.csv");
    let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    let summary = ode_csv(config, &mut w)?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    let manifest = serde_json::json!({
        "mode": Mode::Ode,
        "ode": config.ode,
        "summary": summary,
    });
    write_text(&out.join("manifest.json"), &to_json(&manifest))?;
    Ok(summary)
}

/// Runs the verification suite; writes `report.json` and `manifest.json`.
pub fn verify_mode(config: &RunConfig, out: &Path) -> Result<VerificationReport> {
    echo_config(config, out)?;
    let report = verify_all(config)?;
    write_text(&out.join("report.json"), &report.to_json())?;
    let manifest = serde_json::json!({
        "mode": Mode::Verify,
        "seed": config.seed,
        "checks": report.checks,
        "failures": report.failures,
        "exit_code": report.exit_code(),
    });
    write_text(&out.join("manifest.json"), &to_json(&manifest))?;
    Ok(report)
}
