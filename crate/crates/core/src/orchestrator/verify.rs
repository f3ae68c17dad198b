//! The one-shot verification suite: every module's invariants, measured
//! against their bounds and collected into one deterministic report.

use std::f64::consts::{E, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::RunConfig;
use crate::characteristics::{envelope_value, CharacteristicState, Tracer};
use crate::error::{Error, Result};
use crate::fields::{maxwell_step, random_unit, FieldKind, FieldState, GridSpec, PrescribedField, SourceArrays};
use crate::force::{cond_a_residual, FieldSample, ForceParams};
use crate::kinematics::{norm, Vec3};
use crate::kinetic::{continuity_study, init, sim_step, Diagnostics, SimulationConfig};
use crate::lightcone::{
    axis_derivatives, certify_bounds, manufactured_study, operator_study, radial_retarded_integral,
    retarded_integral_refined, symmetric_source, BumpSolution, ShellQuadrature, SmoothProbe, IDENTITY_ANCHOR,
};
use crate::moments::{estimate_g2, density_log_diagnostic, envelope_flux_bound, flux_moment_profile};
use crate::ode::{
    blowup_ode, discrete_lipschitz, integrate_wz_log, log_companion_envelope, log_double_exp_envelope, sup_envelope,
    LogSysParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// The check could not be evaluated; counted as a failure.
    Error,
}

/// One measured quantity and the bound it must respect.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckEntry {
    pub id: String,
    /// The inequality or identity being checked, written out.
    pub anchor: String,
    pub status: Status,
    pub measured: f64,
    pub bound: f64,
    pub tolerance: f64,
    pub comparison: Comparison,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CheckEntry {
    fn judged(id: &str, anchor: &str, measured: f64, comparison: Comparison, bound: f64, tolerance: f64) -> Self {
        let ok = match comparison {
            Comparison::AtMost => measured <= bound + tolerance,
            Comparison::AtLeast => measured >= bound - tolerance,
        };
        CheckEntry {
            id: id.into(),
            anchor: anchor.into(),
            status: if ok { Status::Pass } else { Status::Fail },
            measured,
            bound,
            tolerance,
            comparison,
            error: None,
        }
    }

    fn at_most(id: &str, anchor: &str, measured: f64, bound: f64, tolerance: f64) -> Self {
        Self::judged(id, anchor, measured, Comparison::AtMost, bound, tolerance)
    }

    fn at_least(id: &str, anchor: &str, measured: f64, bound: f64, tolerance: f64) -> Self {
        Self::judged(id, anchor, measured, Comparison::AtLeast, bound, tolerance)
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub seed: u64,
    pub checks: usize,
    pub failures: usize,
    /// Sorted by id.
    pub entries: Vec<CheckEntry>,
}

impl VerificationReport {
    fn new(seed: u64, mut entries: Vec<CheckEntry>) -> Self {
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        let failures = entries.iter().filter(|e| !e.passed()).count();
        VerificationReport {
            seed,
            checks: entries.len(),
            failures,
            entries,
        }
    }

    pub fn entry(&self, id: &str) -> Option<&CheckEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// 0 when every check passes, else the failure count capped at 125.
    pub fn exit_code(&self) -> i32 {
        self.failures.min(125) as i32
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable") + "\n"
    }
}

/// Anchors of the checks other than the kernel bounds, which carry the
/// written-out inequalities of [`crate::lightcone::BOUNDS`] and [`IDENTITY_ANCHOR`].
pub mod anchors {
    pub const SIGN_CONDITION: &str = "(3/|p| + A) F . p_hat - div_p F <= 0";
    pub const MOMENTUM_MONOTONE: &str = "d|p|/dt <= 0 along characteristics";
    pub const ENVELOPE_DECAY: &str = "d/dt (A|p| + 3 log|p| + log f) <= 0 along characteristics";
    pub const LOG_F_GROWTH: &str = "d(log f)/dt <= (3M + |chi'(|p|)|) K along characteristics";
    pub const POSITIVE_STRENGTH: &str = "K = sqrt(|E|^2 + |B|^2) > 0 on the battery";
    pub const LIGHT_CONE: &str = "|x(t) - x(0)| <= t along characteristics";
    pub const REST_FIXED_POINT: &str = "v(0) = 0 and F(x, 0) = 0, so p = 0 is a fixed point";
    pub const ENVELOPE_AUDIT: &str = "f |p|^3 e^{A|p|} <= C0 for all t";
    pub const GAUSS_LAW: &str = "d(Ex)/dx = rho after every step";
    pub const FLUX_BOUND: &str = "vm_n = int |v| [p]^n f dp <= M_n = 4 pi C0 int_0^inf [p]^(n-1) e^{-A r} dr";
    pub const DENSITY_SPLIT: &str = "rho <= pi G2 R^4 + 4 pi C0 (log(1/R) + 1/A), R = G2^(-1/4)";
    pub const CONE_IDENTITY: &str = "omega . T + V = 0";
    pub const DECOMPOSITION: &str = "d_t = (S - v . T) / (1 + omega . v), grad = T + omega d_t";
    pub const RETARDED_MANUFACTURED: &str = "u(x, t) = (1/4 pi) int_{|y - x| <= t} (box u)(y, t - |y - x|) / |y - x| dy";
    pub const RETARDED_RADIAL: &str = "int_{|y - x| <= t} G(|y - x|, t - |y - x|) / |y - x| dy = 4 pi int_0^t rho G(rho, t - rho) d rho";
    pub const CONTINUITY: &str = "d(rho)/dt + d(jx)/dx = 0";
    pub const VACUUM_ENERGY: &str = "vacuum transverse energy is conserved";
    pub const DOUBLE_EXP: &str = "W + Z <= exp((1 + log(W0 + Z0 log Z0)) e^{C t} - 1)";
    pub const COMPANION: &str = "W + Z <= exp((1/2 + log(W0 + Z0 log Z0)) e^{2 C t} - 1/2)";
    pub const BLOWUP: &str = "Y' = Y (log Y)^2 blows up at t = 1 / log Y0";
    pub const SUP_LIPSCHITZ: &str = "Lip(max_{s <= t} g(s)) <= Lip(g)";

    pub const ALL: [&str; 21] = [
        SIGN_CONDITION,
        POSITIVE_STRENGTH,
        MOMENTUM_MONOTONE,
        ENVELOPE_DECAY,
        LOG_F_GROWTH,
        LIGHT_CONE,
        REST_FIXED_POINT,
        ENVELOPE_AUDIT,
        GAUSS_LAW,
        FLUX_BOUND,
        DENSITY_SPLIT,
        CONE_IDENTITY,
        DECOMPOSITION,
        RETARDED_MANUFACTURED,
        RETARDED_RADIAL,
        CONTINUITY,
        VACUUM_ENERGY,
        DOUBLE_EXP,
        COMPANION,
        BLOWUP,
        SUP_LIPSCHITZ,
    ];
}

/// Worst case of the sign condition over a sample set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SignSurvey {
    pub samples: u64,
    pub max_residual: f64,
    pub argmax_p: [f64; 3],
    pub argmax_strength: f64,
}

const SURVEY_BLOCK: u64 = 8192;

/// Evaluates the radial sign condition on `count` seeded samples with
/// `|p|` in `(0, pmax]` and `K` in `[0, kmax]`. Half of the radii and
/// strengths are log-uniform so small values are covered; every 64th sample
/// has `K = 0` and every 16th has `|p|` inside the cutoff shell.
pub fn sign_condition_survey(params: &ForceParams, count: u64, pmax: f64, kmax: f64, seed: u64) -> Result<SignSurvey> {
    if count == 0 || !(pmax > 0.0) || !(kmax >= 0.0) {
        return Err(Error::InvalidParams(format!(
            "survey needs count >= 1, pmax > 0, kmax >= 0 (got {count}, {pmax}, {kmax})"
        )));
    }
    let blocks = count.div_ceil(SURVEY_BLOCK);
    let worst = (0..blocks)
        .into_par_iter()
        .map(|b| -> Result<(f64, Vec3, f64)> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b);
            let mut worst = (f64::NEG_INFINITY, Vec3::zeros(), 0.0);
            for i in b * SURVEY_BLOCK..((b + 1) * SURVEY_BLOCK).min(count) {
                let r = if i % 16 == 0 {
                    rng.random_range(params.r0..=params.r1)
                } else if rng.random_bool(0.5) {
                    pmax * 10f64.powf(-rng.random_range(0.0..12.0))
                } else {
                    pmax * (1.0 - rng.random::<f64>())
                };
                let k = if i % 64 == 0 {
                    0.0
                } else if rng.random_bool(0.5) {
                    kmax * 10f64.powf(-rng.random_range(0.0..12.0))
                } else {
                    kmax * rng.random::<f64>()
                };
                let angle = rng.random_range(0.0..PI / 2.0);
                let fs = FieldSample::new(
                    random_unit(&mut rng) * (k * angle.cos()),
                    random_unit(&mut rng) * (k * angle.sin()),
                );
                let p = random_unit(&mut rng) * r;
                let res = cond_a_residual(&fs, &p, params)?;
                if res > worst.0 {
                    worst = (res, p, fs.strength());
                }
            }
            Ok(worst)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold((f64::NEG_INFINITY, Vec3::zeros(), 0.0), |a, b| if b.0 > a.0 { b } else { a });
    Ok(SignSurvey {
        samples: count,
        max_residual: worst.0,
        argmax_p: worst.1.into(),
        argmax_strength: worst.2,
    })
}

/// Sizes of a characteristic battery in random prescribed fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BatterySpec {
    pub fields: usize,
    pub characteristics: usize,
    pub field_strength: f64,
    pub momentum_max: f64,
    pub t_end: f64,
    pub dt: f64,
    pub seed: u64,
}

/// Per-step worst cases over every characteristic of a battery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BatteryStats {
    pub characteristics: usize,
    pub steps: usize,
    /// Largest single-step increase of `|p|`.
    pub max_radius_increase: f64,
    /// Largest single-step increase of `A|p| + 3 log|p| + log f`.
    pub max_envelope_increase: f64,
    /// Largest per-step excess of the `log f` increment over its majorant.
    pub max_growth_excess: f64,
    /// Largest `|x(t) - x(0)| - t`.
    pub max_light_cone_margin: f64,
    /// Smallest field strength over all Runge-Kutta stages.
    pub min_strength: f64,
}

impl BatteryStats {
    fn merge(self, o: BatteryStats) -> BatteryStats {
        BatteryStats {
            characteristics: self.characteristics + o.characteristics,
            steps: self.steps.max(o.steps),
            max_radius_increase: self.max_radius_increase.max(o.max_radius_increase),
            max_envelope_increase: self.max_envelope_increase.max(o.max_envelope_increase),
            max_growth_excess: self.max_growth_excess.max(o.max_growth_excess),
            max_light_cone_margin: self.max_light_cone_margin.max(o.max_light_cone_margin),
            min_strength: self.min_strength.min(o.min_strength),
        }
    }

    fn empty() -> BatteryStats {
        BatteryStats {
            characteristics: 0,
            steps: 0,
            max_radius_increase: f64::NEG_INFINITY,
            max_envelope_increase: f64::NEG_INFINITY,
            max_growth_excess: f64::NEG_INFINITY,
            max_light_cone_margin: f64::NEG_INFINITY,
            min_strength: f64::INFINITY,
        }
    }
}

/// Seed of field `i` of a battery.
pub fn battery_field(spec: &BatterySpec, i: usize) -> PrescribedField {
    let seed = spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64);
    PrescribedField::catalog(FieldKind::RandomFourier, spec.field_strength, seed)
}

/// Initial states for field `i`: positions uniform in `[-1, 1]^3`, momentum
/// directions uniform and radii log-uniform in `[0.01, momentum_max]`.
pub fn battery_initial_states(spec: &BatterySpec, i: usize) -> Vec<CharacteristicState> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(i as u64);
    let (lo, hi) = (0.01f64.ln(), spec.momentum_max.ln());
    (0..spec.characteristics)
        .map(|_| {
            let x = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let r = rng.random_range(lo..=hi).exp();
            CharacteristicState::new(x, random_unit(&mut rng) * r, 0.0, 0.0)
        })
        .collect()
}

fn track(initial: CharacteristicState, field: &PrescribedField, params: &ForceParams, spec: &BatterySpec) -> Result<BatteryStats> {
    let steps = (spec.t_end / spec.dt - 1e-9).ceil() as usize;
    let mut tracer = Tracer::new(initial, field, *params, spec.dt);
    let mut stats = BatteryStats::empty();
    stats.characteristics = 1;
    stats.steps = steps;
    stats.min_strength = tracer.strength();
    let (mut prev_r, mut prev_env, mut prev_log_f) = (initial.radius(), envelope_value(&initial, params.a), initial.log_f);
    for _ in 0..steps {
        let next = *tracer.advance()?;
        let r = next.radius();
        let env = envelope_value(&next, params.a);
        stats.max_radius_increase = stats.max_radius_increase.max(r - prev_r);
        stats.max_envelope_increase = stats.max_envelope_increase.max(env - prev_env);
        stats.max_growth_excess = stats
            .max_growth_excess
            .max(next.log_f - prev_log_f - tracer.last_growth_budget());
        stats.max_light_cone_margin = stats
            .max_light_cone_margin
            .max(norm(&(next.phase.x - initial.phase.x)) - (next.t - initial.t));
        stats.min_strength = stats.min_strength.min(tracer.last_min_strength());
        (prev_r, prev_env, prev_log_f) = (r, env, next.log_f);
    }
    Ok(stats)
}

/// Traces the whole battery without storing trajectories.
pub fn characteristic_battery(params: &ForceParams, spec: &BatterySpec) -> Result<BatteryStats> {
    if spec.fields == 0 || spec.characteristics == 0 || !(spec.dt > 0.0 && spec.t_end >= spec.dt) {
        return Err(Error::InvalidParams(format!("degenerate battery {spec:?}")));
    }
    (0..spec.fields)
        .into_par_iter()
        .flat_map_iter(|i| {
            let field = battery_field(spec, i);
            battery_initial_states(spec, i)
                .into_iter()
                .map(move |s| (field.clone(), s))
        })
        .map(|(field, s)| track(s, &field, params, spec))
        .try_reduce(BatteryStats::empty, |a, b| Ok(a.merge(b)))
}

/// Largest `|p|` and `|x - x(0)|` of `p = 0` characteristics, one per field.
pub fn rest_battery(params: &ForceParams, spec: &BatterySpec) -> Result<(f64, f64)> {
    (0..spec.fields)
        .into_par_iter()
        .map(|i| -> Result<(f64, f64)> {
            let field = battery_field(spec, i);
            let x0 = battery_initial_states(spec, i)[0].phase.x;
            let mut tracer = Tracer::new(CharacteristicState::new(x0, Vec3::zeros(), 0.0, 0.0), &field, *params, spec.dt);
            let steps = (spec.t_end / spec.dt - 1e-9).ceil() as usize;
            let mut worst = (0.0f64, 0.0f64);
            for _ in 0..steps {
                let s = tracer.advance()?;
                worst = (worst.0.max(s.radius()), worst.1.max(norm(&(s.phase.x - x0))));
            }
            Ok(worst)
        })
        .try_reduce(|| (0.0, 0.0), |a, b| Ok((a.0.max(b.0), a.1.max(b.1))))
}

/// Worst cases of an in-memory kinetic run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KineticAudit {
    pub steps: u64,
    pub final_time: f64,
    pub diagnostics: Diagnostics,
    /// `max_{cells, steps} vm_n / M_n` for `n = 0..=3`, every step.
    pub flux_ratios: [f64; 4],
    /// `max_{cells} rho / density bound`, maximized over output steps.
    pub density_ratio: f64,
}

/// Runs `config` without writing files, auditing the flux moments after
/// every step and the density split at the output cadence.
pub fn kinetic_audit(config: &SimulationConfig, params: &ForceParams, seed: u64) -> Result<KineticAudit> {
    let grid = config.grid()?;
    let mut state = init(&config.distribution, &config.fields, &grid, params, seed)?;
    let bounds = (0..4u32)
        .map(|n| envelope_flux_bound(n, &state.envelope))
        .collect::<Result<Vec<_>>>()?;
    let mut flux_ratios = [0.0f64; 4];
    let mut density_ratio = 0.0f64;
    loop {
        for (n, ratio) in flux_ratios.iter_mut().enumerate() {
            let profile = flux_moment_profile(state.weighted(), &grid, n as u32)?;
            *ratio = ratio.max(profile.max() / bounds[n]);
        }
        if state.step % config.output_every.max(1) == 0 || state.step == config.steps {
            let g2 = estimate_g2(state.weighted(), &grid).g2;
            let density = density_log_diagnostic(state.weighted(), &grid, &state.envelope, g2)?;
            density_ratio = density_ratio.max(density.max_ratio());
        }
        if state.step == config.steps {
            break;
        }
        sim_step(&mut state, params)?;
    }
    Ok(KineticAudit {
        steps: state.step,
        final_time: state.time,
        diagnostics: state.diagnostics.clone(),
        flux_ratios,
        density_ratio,
    })
}

/// Relative energy drift of a vacuum transverse wave over `steps` steps.
pub fn vacuum_energy_drift(steps: u64) -> Result<f64> {
    let grid = GridSpec::new(2.0 * PI, 64, 0.05)?;
    let mut f = FieldState::zeros(grid.nx);
    for i in 0..grid.nx {
        let x = grid.node(i);
        f.ey[i] = (2.0 * x).cos();
        f.ez[i] = 0.5 * (3.0 * x).sin();
        f.by[i] = -0.25 * (3.0 * grid.half_cell(i)).cos();
    }
    let src = SourceArrays::zeros(grid.nx);
    let e0 = f.transverse_energy(&grid);
    for _ in 0..steps {
        f = maxwell_step(&f, &src, &grid)?;
    }
    Ok((f.transverse_energy(&grid) - e0).abs() / e0)
}

/// Continuity study used by the suite.
pub const CONTINUITY_STUDY: (usize, usize, usize, f64, f64) = (128, 3, 4096, 0.5, 0.05);

fn min_order(residuals: &[f64]) -> f64 {
    residuals
        .windows(2)
        .map(|w| (w[0] / w[1]).log2())
        .fold(f64::INFINITY, f64::min)
}

/// Rates of the envelope ODE battery.
pub const ODE_RATES: [f64; 3] = [0.5, 1.0, 2.0];

/// Largest `log(W + Z) - log envelope` over the rate battery.
pub fn ode_envelope_gap(
    base: &LogSysParams,
    dt: f64,
    envelope: fn(&LogSysParams, f64) -> f64,
) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for c in ODE_RATES {
        let p = LogSysParams { c, ..*base };
        for s in integrate_wz_log(&p, dt)? {
            worst = worst.max(s.log_sum() - envelope(&p, s.t));
        }
    }
    Ok(worst)
}

/// Largest relative error of the blow-up time for `Y0 = e, e^2, e^4`.
pub fn blowup_error() -> Result<f64> {
    let mut worst = 0.0f64;
    for k in [1.0, 2.0, 4.0] {
        let b = blowup_ode(E.powf(k), 1e-3)?;
        let exact = 1.0 / k;
        worst = worst.max((b.blowup_time - exact).abs() / exact);
    }
    Ok(worst)
}

/// Largest `Lip(sup g) - Lip(g)` over seeded random walks with bounded slopes.
pub fn sup_envelope_lipschitz_excess(paths: usize, seed: u64) -> f64 {
    (0..paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let len = rng.random_range(2..500);
            let dt = 10f64.powf(rng.random_range(-3.0..0.0));
            let slope = 10f64.powf(rng.random_range(-2.0..2.0));
            let mut g = vec![rng.random_range(-1.0..1.0)];
            for _ in 1..len {
                let next = g.last().unwrap() + slope * rng.random_range(-1.0..=1.0) * dt;
                g.push(next);
            }
            discrete_lipschitz(&sup_envelope(&g), dt) - discrete_lipschitz(&g, dt)
        })
        .reduce(|| f64::NEG_INFINITY, f64::max)
}

/// Largest recombination error of the axis route on affine data.
pub fn affine_recombination_error(samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let a = random_unit(&mut rng) * rng.random_range(0.1..2.0);
        let c = rng.random_range(-2.0..2.0);
        let u = |y: &Vec3, s: f64| 1.5 + a.dot(y) + c * s;
        let apex = random_unit(&mut rng) * 0.2;
        let y = apex + random_unit(&mut rng) * rng.random_range(0.3..1.0);
        let vel = random_unit(&mut rng) * rng.random_range(0.0..0.99);
        if let Some(d) = axis_derivatives(&u, &apex, &y, 0.7, &vel, 0.01) {
            let (grad, dt) = d.recombine(&vel);
            worst = worst.max((grad - a).amax()).max((dt - c).abs());
        }
    }
    worst
}

type Group = (&'static str, Box<dyn Fn(&RunConfig, &ForceParams) -> Result<Vec<CheckEntry>> + Send + Sync>);

fn groups() -> Vec<Group> {
    use anchors::*;
    vec![
        (
            "force",
            Box::new(|c, p| {
                let s = sign_condition_survey(p, c.verify.sign_samples, 1e3, 1e3, c.seed)?;
                Ok(vec![CheckEntry::at_most("force.sign_condition", SIGN_CONDITION, s.max_residual, 0.0, 0.0)])
            }),
        ),
        (
            "characteristics",
            Box::new(|c, p| {
                let v = &c.verify;
                let spec = BatterySpec {
                    fields: v.fields,
                    characteristics: v.characteristics,
                    field_strength: v.field_strength,
                    momentum_max: v.momentum_max,
                    t_end: v.t_end,
                    dt: v.dt,
                    seed: c.seed,
                };
                let s = characteristic_battery(p, &spec)?;
                let rest = rest_battery(p, &BatterySpec { t_end: 10.0, ..spec })?;
                Ok(vec![
                    CheckEntry::at_most("characteristics.momentum_monotone", MOMENTUM_MONOTONE, s.max_radius_increase, 0.0, 1e-8),
                    CheckEntry::at_most("characteristics.envelope_decay", ENVELOPE_DECAY, s.max_envelope_increase, 0.0, 1e-8),
                    CheckEntry::at_most("characteristics.log_f_growth", LOG_F_GROWTH, s.max_growth_excess, 0.0, 1e-8),
                    CheckEntry::at_most("characteristics.light_cone", LIGHT_CONE, s.max_light_cone_margin, 0.0, 1e-12),
                    CheckEntry::at_least("characteristics.field_strength_positive", POSITIVE_STRENGTH, s.min_strength, 0.0, 0.0)
                        .strict_positive(),
                    CheckEntry::at_most("characteristics.rest_momentum", REST_FIXED_POINT, rest.0, 0.0, 1e-12),
                    CheckEntry::at_most("characteristics.rest_displacement", REST_FIXED_POINT, rest.1, 0.0, 1e-12),
                ])
            }),
        ),
        (
            "kinetic",
            Box::new(|c, p| {
                let a = kinetic_audit(&c.simulate, p, c.seed)?;
                let d = &a.diagnostics;
                let mut out = vec![
                    CheckEntry::at_most("kinetic.envelope_audit", ENVELOPE_AUDIT, d.max_envelope_ratio, 1.0, 1e-6),
                    CheckEntry::at_most("kinetic.gauss_residual", GAUSS_LAW, d.max_gauss_residual, 0.0, 1e-10),
                    CheckEntry::at_most("kinetic.rest_tracer_momentum", REST_FIXED_POINT, d.max_tracer_momentum, 0.0, 1e-12),
                    CheckEntry::at_most(
                        "kinetic.rest_tracer_displacement",
                        REST_FIXED_POINT,
                        d.max_tracer_displacement,
                        0.0,
                        1e-12,
                    ),
                    CheckEntry::at_most("moments.density_split", DENSITY_SPLIT, a.density_ratio, 1.0, 0.0),
                ];
                for (n, r) in a.flux_ratios.iter().enumerate() {
                    out.push(CheckEntry::at_most(&format!("moments.flux_{n}"), FLUX_BOUND, *r, 1.0, 0.05));
                }
                Ok(out)
            }),
        ),
        (
            "fields",
            Box::new(|c, p| {
                let (nx0, levels, per_cell, courant, t_end) = CONTINUITY_STUDY;
                let study = continuity_study(2.0 * PI, nx0, levels, per_cell, courant, t_end, p)?;
                let residuals: Vec<f64> = study.iter().map(|l| l.residual).collect();
                Ok(vec![
                    CheckEntry::at_least("fields.continuity_order", CONTINUITY, min_order(&residuals), 1.9, 0.0),
                    CheckEntry::at_most(
                        "fields.vacuum_energy_drift",
                        VACUUM_ENERGY,
                        vacuum_energy_drift(c.verify.vacuum_steps)?,
                        0.0,
                        1e-8,
                    ),
                ])
            }),
        ),
        (
            "kernels",
            Box::new(|c, _| {
                let k = &c.kernels;
                let r = certify_bounds(k.samples, k.adversarial, k.pmax, c.seed)?;
                let mut out: Vec<CheckEntry> = r
                    .entries
                    .iter()
                    .map(|e| CheckEntry::at_most(&format!("kernels.{}", e.name), &e.anchor, e.max_ratio, 1.0, 0.0))
                    .collect();
                out.push(CheckEntry::at_most("kernels.identity", IDENTITY_ANCHOR, r.identity_defect, 0.0, 1e-12));
                Ok(out)
            }),
        ),
        (
            "operators",
            Box::new(|c, _| {
                let study = operator_study(&SmoothProbe::default(), &Vec3::new(0.1, -0.2, 0.15), 24, 0.04, 3, c.seed)?;
                let min = |v: Vec<f64>| v.into_iter().fold(f64::INFINITY, f64::min);
                let decomposition = min(
                    [
                        study.space_orders_cone(),
                        study.time_orders_cone(),
                        study.space_orders_axis(),
                        study.time_orders_axis(),
                    ]
                    .concat(),
                );
                let axis = study.levels.iter().map(|l| l.identity_axis).fold(0.0, f64::max);
                Ok(vec![
                    CheckEntry::at_least("operators.cone_identity_order", CONE_IDENTITY, min(study.identity_orders()), 1.9, 0.0),
                    CheckEntry::at_most("operators.axis_identity", CONE_IDENTITY, axis, 0.0, 1e-12),
                    CheckEntry::at_least("operators.decomposition_order", DECOMPOSITION, decomposition, 1.9, 0.0),
                    CheckEntry::at_most(
                        "operators.affine_exactness",
                        DECOMPOSITION,
                        affine_recombination_error(1000, c.seed),
                        0.0,
                        1e-12,
                    ),
                ])
            }),
        ),
        (
            "retarded",
            Box::new(|_, _| {
                let study = manufactured_study(&BumpSolution::default(), ShellQuadrature::BASELINE, 3)?;
                let contraction = study
                    .windows(2)
                    .map(|w| w[1].max_error / w[0].max_error)
                    .fold(0.0, f64::max);
                let x = Vec3::new(0.3, -0.2, 0.5);
                let g = |y: &Vec3, s: f64| symmetric_source((y - x).norm(), s);
                let mut radial_gap = 0.0f64;
                for t in [0.5, 1.0, 2.0] {
                    let full = retarded_integral_refined(&g, &x, t, ShellQuadrature::BASELINE, 1e-12, 4)?;
                    let radial = radial_retarded_integral(symmetric_source, t)?;
                    radial_gap = radial_gap.max((full.value - radial).abs() / radial.abs().max(1.0));
                }
                Ok(vec![
                    CheckEntry::at_most(
                        "retarded.manufactured_error",
                        RETARDED_MANUFACTURED,
                        study[0].relative_error,
                        0.05,
                        0.0,
                    ),
                    CheckEntry::judged(
                        "retarded.refinement_contraction",
                        RETARDED_MANUFACTURED,
                        contraction,
                        Comparison::AtMost,
                        1.0,
                        0.0,
                    )
                    .strict_below(),
                    CheckEntry::at_most("retarded.radial_agreement", RETARDED_RADIAL, radial_gap, 0.0, 1e-6),
                ])
            }),
        ),
        (
            "ode",
            Box::new(|c, _| {
                let base = c.ode.params()?;
                Ok(vec![
                    CheckEntry::at_most(
                        "ode.double_exp_envelope",
                        DOUBLE_EXP,
                        ode_envelope_gap(&base, c.ode.dt, log_double_exp_envelope)?,
                        0.0,
                        1e-9,
                    ),
                    CheckEntry::at_most(
                        "ode.companion_envelope",
                        COMPANION,
                        ode_envelope_gap(&base, c.ode.dt, log_companion_envelope)?,
                        0.0,
                        1e-9,
                    ),
                    CheckEntry::at_most("ode.blowup_time", BLOWUP, blowup_error()?, 0.02, 0.0),
                    CheckEntry::at_most(
                        "ode.sup_envelope_lipschitz",
                        SUP_LIPSCHITZ,
                        sup_envelope_lipschitz_excess(c.verify.lipschitz_paths, c.seed),
                        0.0,
                        0.0,
                    ),
                ])
            }),
        ),
    ]
}

impl CheckEntry {
    /// Turns a passing `>= bound` check into a strict `> bound` check.
    fn strict_positive(mut self) -> Self {
        if !(self.measured > self.bound) {
            self.status = Status::Fail;
        }
        self
    }

    /// Turns a passing `<= bound` check into a strict `< bound` check.
    fn strict_below(mut self) -> Self {
        if !(self.measured < self.bound) {
            self.status = Status::Fail;
        }
        self
    }
}

/// Group names of the suite, in report order.
pub fn group_names() -> Vec<&'static str> {
    let mut names: Vec<_> = groups().into_iter().map(|(n, _)| n).collect();
    names.sort_unstable();
    names
}

/// Runs every check group on a worker pool and assembles the report in id
/// order. A group that cannot be evaluated contributes one `error` entry.
pub fn verify_all(config: &RunConfig) -> Result<VerificationReport> {
    config.validate()?;
    let params = config.force_params()?;
    let entries: Vec<CheckEntry> = groups()
        .into_par_iter()
        .flat_map_iter(|(name, run)| match run(config, &params) {
            Ok(entries) => entries,
            Err(e) => vec![CheckEntry {
                id: format!("{name}.evaluation"),
                anchor: format!("{name} checks run to completion"),
                status: Status::Error,
                measured: f64::NAN,
                bound: f64::NAN,
                tolerance: 0.0,
                comparison: Comparison::AtMost,
                error: Some(e.to_string()),
            }],
        })
        .collect();
    Ok(VerificationReport::new(config.seed, entries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lightcone::BOUNDS;
    use crate::orchestrator::parse_config;

    const CHECKS_DOC: &str = include_str!("../../../../docs/checks.md");

    fn small_config() -> RunConfig {
        parse_config(
            r#"{
                "simulate": {"nx": 16, "steps": 40, "output_every": 10, "distribution": {"particles": 4000}},
                "kernels": {"samples": 20000, "adversarial": 500},
                "verify": {"fields": 3, "characteristics": 5, "t_end": 1.0, "sign_samples": 20000,
                           "lipschitz_paths": 50, "vacuum_steps": 1000}
            }"#,
        )
        .unwrap()
    }

    fn small_battery(seed: u64) -> BatterySpec {
        BatterySpec {
            fields: 2,
            characteristics: 8,
            field_strength: 1.0,
            momentum_max: 10.0,
            t_end: 1.0,
            dt: 1e-3,
            seed,
        }
    }

    fn entry(id: &str, status: Status) -> CheckEntry {
        CheckEntry {
            id: id.into(),
            anchor: String::new(),
            status,
            measured: 0.0,
            bound: 0.0,
            tolerance: 0.0,
            comparison: Comparison::AtMost,
            error: None,
        }
    }

    #[test]
    fn every_anchor_is_documented() {
        let kernel_anchors = BOUNDS.iter().map(|(_, a)| *a).chain([IDENTITY_ANCHOR]);
        for anchor in anchors::ALL.into_iter().chain(kernel_anchors) {
            assert!(CHECKS_DOC.contains(anchor), "missing anchor {anchor}");
        }
        for group in group_names() {
            assert!(CHECKS_DOC.contains(&format!("{group} checks run to completion")));
        }
    }

    #[test]
    fn judging_examples() {
        assert!(CheckEntry::at_most("a", "", 1.0, 1.0, 0.0).passed());
        assert!(CheckEntry::at_most("a", "", 1.05, 1.0, 0.05).passed());
        assert!(!CheckEntry::at_most("a", "", 1.06, 1.0, 0.05).passed());
        assert!(!CheckEntry::at_most("a", "", f64::NAN, 1.0, 0.05).passed());
        assert!(CheckEntry::at_least("a", "", 1.9, 1.9, 0.0).passed());
        assert!(!CheckEntry::at_least("a", "", f64::NAN, 1.9, 0.0).passed());
        assert!(!CheckEntry::at_least("a", "", 0.0, 0.0, 0.0).strict_positive().passed());
        assert!(!CheckEntry::at_most("a", "", 1.0, 1.0, 0.0).strict_below().passed());
    }

    #[test]
    fn report_sorted_and_exit_code_capped() {
        let r = VerificationReport::new(7, vec![entry("b", Status::Pass), entry("a", Status::Fail)]);
        assert_eq!(r.entries[0].id, "a");
        assert_eq!((r.checks, r.failures, r.exit_code()), (2, 1, 1));
        let many = (0..200).map(|i| entry(&format!("c{i:03}"), Status::Error)).collect();
        assert_eq!(VerificationReport::new(0, many).exit_code(), 125);
        assert_eq!(VerificationReport::new(0, vec![entry("x", Status::Pass)]).exit_code(), 0);
    }

    #[test]
    fn sign_survey_passes_for_admissible_rate() {
        let s = sign_condition_survey(&ForceParams::default(), 50_000, 1e3, 1e3, 3).unwrap();
        assert!(s.max_residual <= 0.0, "{s:?}");
        assert_eq!(s.samples, 50_000);
    }

    #[test]
    fn sign_survey_catches_low_rate() {
        // The admissible-rate formula is sufficient, not sharp: with the
        // default M and R0 the condition itself only breaks below A ~ 0.3.
        let p = ForceParams::with_unchecked_rate(3.0, 1.0, 0.1).unwrap();
        assert!(sign_condition_survey(&p, 50_000, 1e3, 1e3, 3).unwrap().max_residual > 0.0);
    }

    #[test]
    fn survey_does_not_depend_on_block_layout() {
        let p = ForceParams::default();
        let a = sign_condition_survey(&p, 20_000, 1e3, 1e3, 9).unwrap();
        let b = sign_condition_survey(&p, 20_000, 1e3, 1e3, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn battery_matches_stored_traces() {
        // Streaming statistics against the stored-trace helpers.
        let params = ForceParams::default();
        let spec = small_battery(5);
        let stats = characteristic_battery(&params, &spec).unwrap();
        let mut radius = f64::NEG_INFINITY;
        let mut envelope = f64::NEG_INFINITY;
        let mut growth = f64::NEG_INFINITY;
        let mut cone = f64::NEG_INFINITY;
        for i in 0..spec.fields {
            let field = battery_field(&spec, i);
            for s in battery_initial_states(&spec, i) {
                let tr = crate::characteristics::trace(s, &field, "", &params, spec.t_end, spec.dt).unwrap();
                radius = radius.max(tr.max_radius_increase());
                let series = crate::characteristics::envelope_series(&tr, params.a).unwrap();
                envelope = envelope.max(crate::characteristics::envelope_violation(&series));
                growth = growth.max(crate::characteristics::log_f_growth_bound(&tr));
                cone = cone.max(tr.light_cone_margin());
            }
        }
        assert_eq!(stats.characteristics, 16);
        assert_eq!(stats.max_radius_increase, radius);
        assert_eq!(stats.max_envelope_increase, envelope);
        assert_eq!(stats.max_growth_excess, growth);
        assert_eq!(stats.max_light_cone_margin, cone);
        assert!(stats.max_radius_increase <= 1e-8 && stats.max_envelope_increase <= 1e-8);
        assert!(stats.min_strength > 0.0);
    }

    #[test]
    fn battery_initial_momenta_in_range() {
        let spec = small_battery(11);
        for i in 0..spec.fields {
            for s in battery_initial_states(&spec, i) {
                assert!(s.radius() >= 0.01 * (1.0 - 1e-12) && s.radius() <= spec.momentum_max * (1.0 + 1e-12));
                assert!(s.phase.x.amax() <= 1.0);
            }
        }
    }

    #[test]
    fn low_rate_breaks_envelope_decay() {
        // Uniform E along p at |p| = 1.98: the envelope derivative equals
        // K times the sign residual, positive there once A < 0.3.
        use crate::characteristics::{envelope_series, envelope_violation, trace};
        let field = PrescribedField::catalog(FieldKind::UniformE, 1.0, 0);
        let init = CharacteristicState::new(Vec3::zeros(), Vec3::new(1.98, 0.0, 0.0), 0.0, 0.0);
        let low = ForceParams::with_unchecked_rate(3.0, 1.0, 0.1).unwrap();
        let tr = trace(init, &field, "", &low, 0.01, 1e-3).unwrap();
        assert!(envelope_violation(&envelope_series(&tr, low.a).unwrap()) > 1e-8);
        let ok = ForceParams::default();
        let tr = trace(init, &field, "", &ok, 0.01, 1e-3).unwrap();
        assert!(envelope_violation(&envelope_series(&tr, ok.a).unwrap()) <= 0.0);
    }

    #[test]
    fn kinetic_audit_of_small_run() {
        let c = small_config();
        let a = kinetic_audit(&c.simulate, &c.force_params().unwrap(), 1).unwrap();
        assert_eq!(a.steps, 40);
        assert!(a.diagnostics.max_envelope_ratio <= 1.0 + 1e-6);
        assert!(a.diagnostics.max_gauss_residual <= 1e-10);
        assert!(a.flux_ratios.iter().all(|r| *r > 0.0 && *r <= 1.05), "{:?}", a.flux_ratios);
    }

    #[test]
    fn ode_helpers() {
        let base = LogSysParams::new(1.0, E, E, 3.0).unwrap();
        assert!(ode_envelope_gap(&base, 1e-3, log_companion_envelope).unwrap() <= 1e-9);
        assert!(blowup_error().unwrap() <= 0.02);
        assert!(sup_envelope_lipschitz_excess(200, 4) <= 0.0);
    }

    #[test]
    fn vacuum_drift_and_affine_exactness() {
        assert!(vacuum_energy_drift(500).unwrap() <= 1e-8);
        assert!(affine_recombination_error(200, 2) <= 1e-12);
    }

    #[test]
    fn small_suite_is_deterministic_and_passes_except_known_envelope() {
        let c = small_config();
        let a = verify_all(&c).unwrap();
        let b = verify_all(&c).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let ids: Vec<&str> = a.entries.iter().map(|e| e.id.as_str()).collect();
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(ids, sorted, "ids must be unique and sorted");
        assert!(a.entries.iter().all(|e| CHECKS_DOC.contains(&e.anchor)));
        let failed: Vec<&str> = a.entries.iter().filter(|e| !e.passed()).map(|e| e.id.as_str()).collect();
        assert_eq!(failed, ["ode.double_exp_envelope"]);
        let json: serde_json::Value = serde_json::from_str(&a.to_json()).unwrap();
        assert_eq!(json["checks"], a.checks);
    }

    #[test]
    fn low_rate_override_fails_envelope_checks() {
        let mut c = small_config();
        c.force.a = 0.1;
        assert!(verify_all(&c).is_err());
        c.force.allow_inadmissible_rate = true;
        let r = verify_all(&c).unwrap();
        for id in ["force.sign_condition", "characteristics.envelope_decay"] {
            assert_eq!(r.entry(id).unwrap().status, Status::Fail, "{id}");
        }
        assert!(r.exit_code() > 1);
    }
}
