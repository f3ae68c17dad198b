//! The JSON run configuration: one document with a block per mode, all
//! fields optional with documented defaults.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::FieldKind;
use crate::force::{minimal_admissible_a, ForceParams};
use crate::kinetic::SimulationConfig;
use crate::ode::LogSysParams;

/// Reaction-force constants as written in a config. `R1 = R0 + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForceConfig {
    pub m: f64,
    pub r0: f64,
    pub a: f64,
    /// Accept an envelope rate below the admissible minimum. Meant for
    /// counterexample runs: the envelope checks are then expected to fail.
    pub allow_inadmissible_rate: bool,
}

impl Default for ForceConfig {
    fn default() -> Self {
        ForceConfig {
            m: 3.0,
            r0: 1.0,
            a: 5.0,
            allow_inadmissible_rate: false,
        }
    }
}

impl ForceConfig {
    pub fn params(&self) -> Result<ForceParams> {
        if self.allow_inadmissible_rate {
            ForceParams::with_unchecked_rate(self.m, self.r0, self.a)
        } else {
            ForceParams::new(self.m, self.r0, self.a)
        }
    }
}

/// Characteristic tracing in a prescribed field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceConfig {
    pub field: FieldKind,
    pub strength: f64,
    /// Number of characteristics, seeded from the run seed.
    pub characteristics: usize,
    /// Initial momenta are drawn with `|p_i| <= momentum_max` per component.
    pub momentum_max: f64,
    pub t_end: f64,
    pub dt: f64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            field: FieldKind::RandomFourier,
            strength: 1.0,
            characteristics: 4,
            momentum_max: 5.0,
            t_end: 5.0,
            dt: 1e-3,
        }
    }
}

/// Kernel bound certification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub samples: u64,
    pub adversarial: u64,
    pub pmax: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            samples: 1_000_000,
            adversarial: 10_000,
            pmax: 1e3,
        }
    }
}

/// The `(W, Z)` envelope system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdeConfig {
    pub c: f64,
    pub w0: f64,
    pub z0: f64,
    pub t_end: f64,
    pub dt: f64,
}

impl Default for OdeConfig {
    fn default() -> Self {
        OdeConfig {
            c: 1.0,
            w0: E,
            z0: E,
            t_end: 3.0,
            dt: 1e-4,
        }
    }
}

impl OdeConfig {
    pub fn params(&self) -> Result<LogSysParams> {
        LogSysParams::new(self.c, self.w0, self.z0, self.t_end)
    }
}

/// Sizes of the verification suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Random prescribed fields in the characteristic battery.
    pub fields: usize,
    /// Characteristics per field.
    pub characteristics: usize,
    /// Amplitude scale of the random fields.
    pub field_strength: f64,
    /// Initial momenta have `|p|` log-uniform in `[0.01, momentum_max]`.
    pub momentum_max: f64,
    pub t_end: f64,
    pub dt: f64,
    /// Samples of the radial sign condition.
    pub sign_samples: u64,
    /// Random paths for the running-maximum Lipschitz check.
    pub lipschitz_paths: usize,
    /// Steps of the vacuum energy check.
    pub vacuum_steps: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            fields: 100,
            characteristics: 100,
            field_strength: 1.0,
            momentum_max: 10.0,
            t_end: 5.0,
            dt: 1e-3,
            sign_samples: 1_000_000,
            lipschitz_paths: 1000,
            vacuum_steps: 10_000,
        }
    }
}

/// Complete run configuration. The mode is chosen on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub force: ForceConfig,
    pub simulate: SimulationConfig,
    pub trace: TraceConfig,
    pub kernels: KernelConfig,
    pub ode: OdeConfig,
    pub verify: VerifyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            force: ForceConfig::default(),
            simulate: SimulationConfig::default(),
            trace: TraceConfig::default(),
            kernels: KernelConfig::default(),
            ode: OdeConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

fn at(path: &str, err: Error) -> Error {
    let message = match err {
        Error::InvalidParams(m) | Error::Domain(m) => m,
        other => other.to_string(),
    };
    Error::Config {
        path: path.into(),
        message,
    }
}

fn require(ok: bool, path: &str, message: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config {
            path: path.into(),
            message: message(),
        })
    }
}

impl RunConfig {
    /// Validated force parameters.
    pub fn force_params(&self) -> Result<ForceParams> {
        let f = &self.force;
        self.force.params().map_err(|e| {
            let path = if !(f.m > 2.0) {
                "force.m"
            } else if !(f.r0 >= 0.5) {
                "force.r0"
            } else {
                "force.a"
            };
            at(path, e)
        })
    }

    /// Checks every block, so that a config accepted for one mode is
    /// accepted for all of them.
    pub fn validate(&self) -> Result<()> {
        let params = self.force_params()?;
        let sim = &self.simulate;
        sim.grid().map_err(|e| at("simulate", e))?;
        require(sim.output_every > 0, "simulate.output_every", || "must be at least 1".into())?;
        require(sim.particle_stride > 0, "simulate.particle_stride", || "must be at least 1".into())?;
        sim.distribution
            .resolve(&sim.grid()?, params.a)
            .map_err(|e| at("simulate.distribution", e))?;

        let t = &self.trace;
        require(t.strength.is_finite() && t.strength >= 0.0, "trace.strength", || {
            format!("{} must be finite and >= 0", t.strength)
        })?;
        require(t.momentum_max.is_finite() && t.momentum_max >= 0.0, "trace.momentum_max", || {
            format!("{} must be finite and >= 0", t.momentum_max)
        })?;
        require(t.dt > 0.0 && t.t_end > 0.0 && t.dt <= t.t_end, "trace.dt", || {
            format!("need 0 < dt <= t_end, got dt = {}, t_end = {}", t.dt, t.t_end)
        })?;

        let k = &self.kernels;
        require(k.samples >= 1, "kernels.samples", || "must be at least 1".into())?;
        require(k.pmax > 0.0 && k.pmax.is_finite(), "kernels.pmax", || format!("{} must be positive", k.pmax))?;

        self.ode.params().map_err(|e| at("ode", e))?;
        require(self.ode.dt > 0.0, "ode.dt", || format!("{} must be positive", self.ode.dt))?;

        let v = &self.verify;
        require(v.fields >= 1 && v.characteristics >= 1, "verify.fields", || {
            "the characteristic battery needs at least one field and one characteristic".into()
        })?;
        require(v.field_strength > 0.0 && v.field_strength.is_finite(), "verify.field_strength", || {
            format!("{} must be positive", v.field_strength)
        })?;
        require(v.momentum_max > 0.01 && v.momentum_max.is_finite(), "verify.momentum_max", || {
            format!("{} must exceed 0.01", v.momentum_max)
        })?;
        require(v.dt > 0.0 && v.t_end > 0.0 && v.dt <= v.t_end, "verify.dt", || {
            format!("need 0 < dt <= t_end, got dt = {}, t_end = {}", v.dt, v.t_end)
        })?;
        require(v.sign_samples >= 1, "verify.sign_samples", || "must be at least 1".into())?;
        require(v.lipschitz_paths >= 1, "verify.lipschitz_paths", || "must be at least 1".into())?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is serializable") + "\n"
    }
}

/// Parses and validates a JSON config. Schema errors carry the JSON path of
/// the offending field; an inadmissible envelope rate names the minimal one.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut de = serde_json::Deserializer::from_str(text);
    let config: RunConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| Error::Config {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    de.end().map_err(|e| Error::Config {
        path: ".".into(),
        message: e.to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

/// `(3 + 2 R0) / ((M - 2) R0^2)` for the configured force block.
pub fn minimal_rate(config: &RunConfig) -> f64 {
    minimal_admissible_a(config.force.m, config.force.r0)
}
