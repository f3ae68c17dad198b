//! Characteristic tracing: `dx/dt = v(p)`, `dp/dt = F`, `d(log f)/dt = -div_p F`.
//!
//! The density is carried in log form, so the multiplicative decay along a
//! characteristic is additive and stays well conditioned over many decades.

use std::io::Write;

use crate::error::{Error, Result};
use crate::fields::FieldSource;
use crate::force::{flow_terms, ForceParams};
use crate::kinematics::{norm, velocity, Vec3};

/// Position and momentum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    pub x: Vec3,
    pub p: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharacteristicState {
    pub phase: PhasePoint,
    /// Natural log of the carried density.
    pub log_f: f64,
    pub t: f64,
}

impl CharacteristicState {
    pub fn new(x: Vec3, p: Vec3, log_f: f64, t: f64) -> Self {
        CharacteristicState {
            phase: PhasePoint { x, p },
            log_f,
            t,
        }
    }

    pub fn radius(&self) -> f64 {
        norm(&self.phase.p)
    }

    fn is_finite(&self) -> bool {
        self.phase.x.iter().chain(self.phase.p.iter()).all(|c| c.is_finite()) && self.log_f.is_finite()
    }
}

#[derive(Debug, Clone, Copy)]
struct Derivative {
    dx: Vec3,
    dp: Vec3,
    dlog_f: f64,
    /// `(3M + |chi'(r)|) K`, the majorant of `dlog_f`.
    budget: f64,
    strength: f64,
}

#[inline]
fn rhs(field: &dyn FieldSource, params: &ForceParams, x: &Vec3, p: &Vec3, t: f64) -> Derivative {
    let terms = flow_terms(&field.sample(x, t), p, params);
    Derivative {
        dx: velocity(p),
        dp: terms.force,
        dlog_f: -terms.divergence,
        budget: (3.0 * params.m + terms.cutoff_slope.abs()) * terms.strength,
        strength: terms.strength,
    }
}

/// One classical fourth-order Runge-Kutta step.
pub fn step(
    state: &CharacteristicState,
    field: &dyn FieldSource,
    params: &ForceParams,
    dt: f64,
) -> Result<CharacteristicState> {
    step_with_budget(state, field, params, dt).map(|(s, _, _)| s)
}

/// RK4 step that also integrates the growth majorant `(3M + |chi'(r)|) K`
/// with the same stages, so the two integrals are directly comparable.
/// Also returns the smallest `K` over the four stages.
fn step_with_budget(
    state: &CharacteristicState,
    field: &dyn FieldSource,
    params: &ForceParams,
    dt: f64,
) -> Result<(CharacteristicState, f64, f64)> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParams(format!("step size {dt} must be positive")));
    }
    let PhasePoint { x, p } = state.phase;
    let t = state.t;
    let h = 0.5 * dt;
    let k1 = rhs(field, params, &x, &p, t);
    let k2 = rhs(field, params, &(x + h * k1.dx), &(p + h * k1.dp), t + h);
    let k3 = rhs(field, params, &(x + h * k2.dx), &(p + h * k2.dp), t + h);
    let k4 = rhs(field, params, &(x + dt * k3.dx), &(p + dt * k3.dp), t + dt);
    let w = dt / 6.0;
    let next = CharacteristicState {
        phase: PhasePoint {
            x: x + w * (k1.dx + 2.0 * (k2.dx + k3.dx) + k4.dx),
            p: p + w * (k1.dp + 2.0 * (k2.dp + k3.dp) + k4.dp),
        },
        log_f: state.log_f + w * (k1.dlog_f + 2.0 * (k2.dlog_f + k3.dlog_f) + k4.dlog_f),
        t: t + dt,
    };
    let budget = w * (k1.budget + 2.0 * (k2.budget + k3.budget) + k4.budget);
    let strength = k1.strength.min(k2.strength).min(k3.strength).min(k4.strength);
    if next.is_finite() {
        Ok((next, budget, strength))
    } else {
        Err(Error::IntegrationFailure {
            t: next.t,
            what: "nonfinite characteristic state".into(),
        })
    }
}

/// Lazily advancing characteristic, one sample per step. Used directly when
/// a full [`Trace`] would not fit in memory.
pub struct Tracer<'a> {
    state: CharacteristicState,
    field: &'a dyn FieldSource,
    params: ForceParams,
    dt: f64,
    last_budget: f64,
    last_strength: f64,
}

impl<'a> Tracer<'a> {
    pub fn new(initial: CharacteristicState, field: &'a dyn FieldSource, params: ForceParams, dt: f64) -> Self {
        Tracer {
            state: initial,
            field,
            params,
            dt,
            last_budget: 0.0,
            last_strength: f64::NAN,
        }
    }

    pub fn state(&self) -> &CharacteristicState {
        &self.state
    }

    /// Field strength at the current state.
    pub fn strength(&self) -> f64 {
        self.field.sample(&self.state.phase.x, self.state.t).strength()
    }

    pub fn advance(&mut self) -> Result<&CharacteristicState> {
        (self.state, self.last_budget, self.last_strength) =
            step_with_budget(&self.state, self.field, &self.params, self.dt)?;
        Ok(&self.state)
    }

    /// Integral of `(3M + |chi'(r)|) K` over the last step.
    pub fn last_growth_budget(&self) -> f64 {
        self.last_budget
    }

    /// Smallest `K` over the Runge-Kutta stages of the last step (NaN
    /// before the first step).
    pub fn last_min_strength(&self) -> f64 {
        self.last_strength
    }
}

/// Uniform-step record of a characteristic, with the field strength `k` at
/// each sample.
#[derive(Debug, Clone)]
pub struct Trace {
    pub states: Vec<CharacteristicState>,
    pub strength: Vec<f64>,
    /// Per step, the integral of `(3M + |chi'(r)|) K` over that step.
    pub growth_budget: Vec<f64>,
    pub dt: f64,
    pub field: String,
    pub params: ForceParams,
}

/// Traces `ceil(t_end / dt)` steps from `initial`.
pub fn trace(
    initial: CharacteristicState,
    field: &dyn FieldSource,
    field_description: impl Into<String>,
    params: &ForceParams,
    t_end: f64,
    dt: f64,
) -> Result<Trace> {
    if !(t_end > 0.0) || !(dt > 0.0) || dt > t_end {
        return Err(Error::InvalidParams(format!(
            "trace needs t_end > 0 and 0 < dt <= t_end (got t_end = {t_end}, dt = {dt})"
        )));
    }
    let steps = (t_end / dt - 1e-9).ceil() as usize;
    let mut tracer = Tracer::new(initial, field, *params, dt);
    let mut states = Vec::with_capacity(steps + 1);
    let mut strength = Vec::with_capacity(steps + 1);
    states.push(initial);
    strength.push(tracer.strength());
    let mut growth_budget = Vec::with_capacity(steps);
    for _ in 0..steps {
        states.push(*tracer.advance()?);
        strength.push(tracer.strength());
        growth_budget.push(tracer.last_growth_budget());
    }
    Ok(Trace {
        states,
        strength,
        growth_budget,
        dt,
        field: field_description.into(),
        params: *params,
    })
}

impl Trace {
    /// Largest `|x(t) - x(0)| - t` over samples with `t > t0`; negative when
    /// the trace stays strictly inside the light cone.
    pub fn light_cone_margin(&self) -> f64 {
        let first = &self.states[0];
        self.states[1..]
            .iter()
            .map(|s| norm(&(s.phase.x - first.phase.x)) - (s.t - first.t))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest single-step increase of `|p|`.
    pub fn max_radius_increase(&self) -> f64 {
        max_increase(self.states.iter().map(|s| s.radius()))
    }

    /// CSV with columns `t,x1,x2,x3,p1,p2,p3,log_f,r,envelope`; the envelope
    /// column is empty where `|p| = 0`.
    pub fn write_csv(&self, out: &mut dyn Write, a: f64) -> std::io::Result<()> {
        writeln!(out, "t,x1,x2,x3,p1,p2,p3,log_f,r,envelope")?;
        for s in &self.states {
            let r = s.radius();
            let env = if r > 0.0 {
                format!("{:e}", envelope_value(s, a))
            } else {
                String::new()
            };
            let PhasePoint { x, p } = s.phase;
            writeln!(
                out,
                "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
                s.t, x.x, x.y, x.z, p.x, p.y, p.z, s.log_f, r, env
            )?;
        }
        Ok(())
    }
}

pub(crate) fn max_increase(values: impl Iterator<Item = f64>) -> f64 {
    let mut prev: Option<f64> = None;
    let mut worst = f64::NEG_INFINITY;
    for v in values {
        if let Some(p) = prev {
            worst = worst.max(v - p);
        }
        prev = Some(v);
    }
    worst
}

/// `A r + 3 log r + log f`, the log of `r^3 f e^{A r}`.
#[inline]
pub fn envelope_value(state: &CharacteristicState, a: f64) -> f64 {
    let r = state.radius();
    a * r + 3.0 * r.ln() + state.log_f
}

/// Log-envelope series along a trace; fails at the first `|p| = 0` sample.
pub fn envelope_series(trace: &Trace, a: f64) -> Result<Vec<f64>> {
    trace
        .states
        .iter()
        .map(|s| {
            if s.radius() > 0.0 {
                Ok(envelope_value(s, a))
            } else {
                Err(Error::Domain(format!("envelope undefined at |p| = 0 (t = {})", s.t)))
            }
        })
        .collect()
}

/// Largest single-step increase of an envelope series (nonpositive when
/// the series is nonincreasing).
pub fn envelope_violation(series: &[f64]) -> f64 {
    max_increase(series.iter().copied())
}

/// Max over steps of `dlog_f - int (3M + |chi'(r)|) k dt`, the right side
/// integrated with the same Runge-Kutta stages as the trace.
pub fn log_f_growth_bound(trace: &Trace) -> f64 {
    (1..trace.states.len())
        .map(|i| trace.states[i].log_f - trace.states[i - 1].log_f - trace.growth_budget[i - 1])
        .fold(f64::NEG_INFINITY, f64::max)
}
