//! Full-f particle-in-cell solve in 1D3V.
//!
//! Macro-particles carry a conserved deposition weight and the log of the
//! distribution value at their phase point. Positions move along `x`, momenta
//! are three-dimensional, and the log-density is transported by `-div_p F`.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};

use crate::error::{Error, Result};
use crate::fields::{continuity_residual, deposit, deposit_one, gauss_residual, FieldState, GridSpec, SourceArrays};
use crate::force::{div_p_force, total_force, ForceParams};
use crate::kinematics::{norm, velocity, Vec3};
use crate::moments::{self, EnvelopeParams};

/// A full-f sample: phase point, carried log-density and deposition weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MacroParticle {
    pub x: f64,
    pub p: Vec3,
    /// `ln f`; `-inf` encodes a zero density value.
    pub log_f: f64,
    pub weight: f64,
}

impl MacroParticle {
    pub fn f_value(&self) -> f64 {
        self.log_f.exp()
    }

    fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.p.iter().all(|c| c.is_finite())
            && self.weight.is_finite()
            && !self.log_f.is_nan()
            && self.log_f != f64::INFINITY
    }

    /// `ln(f |p|^3 e^{A|p|} / C0)`, `-inf` when `f = 0` or `p = 0`.
    fn log_envelope_ratio(&self, c0: f64, a: f64) -> f64 {
        let r = norm(&self.p);
        if r == 0.0 || self.log_f == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        self.log_f + 3.0 * r.ln() + a * r - c0.ln()
    }
}

/// Zero-weight probe particle placed at a chosen phase point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TracerSeed {
    pub x: f64,
    pub p: [f64; 3],
}

/// `f0(x, p) = g(x) q(|p|)` with `g(x) = amplitude (1 + modulation cos(2 pi mode x / L))`
/// and `q(r) = c r^2 e^{-decay r}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialDistribution {
    /// Envelope constant: `|p|^3 f0 e^{A|p|} <= c0` is required.
    pub c0: f64,
    pub amplitude: f64,
    pub modulation: f64,
    pub mode: u32,
    /// Momentum decay rate; defaults to `2 A`.
    pub decay: Option<f64>,
    /// Prefactor `c` of `q`; defaults to the value that saturates the envelope.
    pub q_scale: Option<f64>,
    /// Number of weighted macro-particles.
    pub particles: usize,
    pub tracers: Vec<TracerSeed>,
}

impl Default for InitialDistribution {
    fn default() -> Self {
        InitialDistribution {
            c0: 1.0,
            amplitude: 1.0,
            modulation: 0.2,
            mode: 1,
            decay: None,
            q_scale: None,
            particles: 100_000,
            tracers: vec![TracerSeed {
                x: 1.0,
                p: [0.0; 3],
            }],
        }
    }
}

/// Resolved constants of the initial distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolvedProfile {
    pub amplitude: f64,
    pub modulation: f64,
    pub wavenumber: f64,
    pub decay: f64,
    pub q_scale: f64,
}

impl ResolvedProfile {
    pub fn g(&self, x: f64) -> f64 {
        self.amplitude * (1.0 + self.modulation * (self.wavenumber * x).cos())
    }

    pub fn g_max(&self) -> f64 {
        self.amplitude * (1.0 + self.modulation.abs())
    }

    /// `ln f0(x, p)`.
    pub fn log_f0(&self, x: f64, p: &Vec3) -> f64 {
        let g = self.g(x);
        let r = norm(p);
        if g <= 0.0 || r == 0.0 || self.q_scale == 0.0 {
            return f64::NEG_INFINITY;
        }
        g.ln() + self.q_scale.ln() + 2.0 * r.ln() - self.decay * r
    }

    pub fn f0(&self, x: f64, p: &Vec3) -> f64 {
        self.log_f0(x, p).exp()
    }

    /// Analytic `sup_{x,p} |grad_p f0|`.
    pub fn max_momentum_gradient(&self) -> f64 {
        // d/dr (r^2 e^{-b r}) = (2r - b r^2) e^{-b r}; extrema at r = (2 +- sqrt 2)/b.
        let b = self.decay;
        let d = |r: f64| ((2.0 * r - b * r * r) * (-b * r).exp()).abs();
        let s = 2.0_f64.sqrt();
        self.g_max() * self.q_scale * d((2.0 - s) / b).max(d((2.0 + s) / b))
    }
}

impl InitialDistribution {
    /// Checks the parameters against the envelope rate `a` and fixes defaults.
    pub fn resolve(&self, grid: &GridSpec, a: f64) -> Result<ResolvedProfile> {
        if !(self.c0 > 0.0 && self.c0.is_finite()) {
            return Err(Error::InvalidParams(format!("c0 = {} must be positive", self.c0)));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidParams(format!("amplitude = {} must be >= 0", self.amplitude)));
        }
        if !(self.modulation.abs() < 1.0) {
            return Err(Error::InvalidParams(format!(
                "modulation = {} must satisfy |modulation| < 1 so that g >= 0",
                self.modulation
            )));
        }
        let decay = self.decay.unwrap_or(2.0 * a);
        if !(decay > a && decay.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "decay = {decay} must exceed A = {a}, otherwise |p|^3 f0 e^(A|p|) is unbounded"
            )));
        }
        let mut profile = ResolvedProfile {
            amplitude: self.amplitude,
            modulation: self.modulation,
            wavenumber: 2.0 * PI * self.mode as f64 / grid.length,
            decay,
            q_scale: 0.0,
        };
        // sup_r r^5 e^{-(decay - A) r} is attained at r = 5 / (decay - A).
        let r_star = 5.0 / (decay - a);
        let radial_sup = r_star.powi(5) * (-5.0f64).exp();
        profile.q_scale = match self.q_scale {
            Some(c) if c >= 0.0 && c.is_finite() => c,
            Some(c) => return Err(Error::InvalidParams(format!("q_scale = {c} must be >= 0"))),
            None if profile.g_max() > 0.0 => self.c0 / (profile.g_max() * radial_sup),
            None => 0.0,
        };
        Ok(profile)
    }
}

/// Initial transverse field: a right-moving vacuum wave `Ey = Bz = a cos(k x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldInit {
    pub wave_amplitude: f64,
    pub wave_mode: u32,
}

impl Default for FieldInit {
    fn default() -> Self {
        FieldInit {
            wave_amplitude: 0.0,
            wave_mode: 1,
        }
    }
}

/// Parameters of one self-consistent run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub length: f64,
    pub nx: usize,
    pub dt: f64,
    pub steps: u64,
    pub distribution: InitialDistribution,
    pub fields: FieldInit,
    /// Snapshot cadence in steps; the initial and final states are always written.
    pub output_every: u64,
    /// Every `particle_stride`-th particle is written to the particle snapshots.
    pub particle_stride: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            length: 2.0 * PI,
            nx: 64,
            dt: 0.04,
            steps: 500,
            distribution: InitialDistribution::default(),
            fields: FieldInit::default(),
            output_every: 100,
            particle_stride: 100,
        }
    }
}

impl SimulationConfig {
    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.length, self.nx, self.dt)
    }
}

/// Running diagnostics of a simulation.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub initial_charge: f64,
    pub max_charge_drift: f64,
    pub max_gauss_residual: f64,
    /// Largest `|(rho_new - rho_old)/dt + d(jx)/dx|` over steps.
    pub max_continuity_residual: f64,
    pub max_envelope_ratio: f64,
    pub max_tracer_momentum: f64,
    pub max_tracer_displacement: f64,
}

/// Particles, fields and bookkeeping of a running simulation.
#[derive(Debug, Clone)]
pub struct SimState {
    /// Weighted particles followed by the zero-weight tracers.
    pub particles: Vec<MacroParticle>,
    pub tracer_count: usize,
    tracer_origins: Vec<f64>,
    pub fields: FieldState,
    previous_e: Option<[Vec<f64>; 3]>,
    /// Latest sources: `rho` at the current level, `j` at the last half step.
    pub sources: SourceArrays,
    pub grid: GridSpec,
    pub envelope: EnvelopeParams,
    pub time: f64,
    pub step: u64,
    pub diagnostics: Diagnostics,
}

impl SimState {
    pub fn tracers(&self) -> &[MacroParticle] {
        &self.particles[self.particles.len() - self.tracer_count..]
    }

    pub fn weighted(&self) -> &[MacroParticle] {
        &self.particles[..self.particles.len() - self.tracer_count]
    }

    fn update_diagnostics(&mut self) {
        let audit = envelope_audit(self, self.envelope.c0, self.envelope.a);
        let d = &mut self.diagnostics;
        let charge = self.sources.total_charge(&self.grid);
        let drift = (charge - d.initial_charge).abs() / d.initial_charge.abs().max(f64::MIN_POSITIVE);
        d.max_charge_drift = d.max_charge_drift.max(if d.initial_charge == 0.0 { charge.abs() } else { drift });
        d.max_gauss_residual = d.max_gauss_residual.max(gauss_residual(&self.fields, &self.sources.rho, &self.grid));
        d.max_envelope_ratio = d.max_envelope_ratio.max(audit);
        let n = self.particles.len() - self.tracer_count;
        for (t, x0) in self.particles[n..].iter().zip(&self.tracer_origins) {
            d.max_tracer_momentum = d.max_tracer_momentum.max(norm(&t.p));
            d.max_tracer_displacement = d.max_tracer_displacement.max((t.x - x0).abs());
        }
    }
}

/// Radical inverse of `index` in `base`.
fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let (mut value, mut scale) = (0.0, inv);
    while index > 0 {
        value += (index % base) as f64 * scale;
        index /= base;
        scale *= inv;
    }
    value
}

/// Four-dimensional Halton point with a Cranley-Patterson rotation.
fn halton4(index: u64, shift: &[f64; 4]) -> [f64; 4] {
    const BASES: [u64; 4] = [2, 3, 5, 7];
    let mut u = [0.0; 4];
    for d in 0..4 {
        let v = radical_inverse(index, BASES[d]) + shift[d];
        u[d] = v - v.floor();
    }
    u
}

/// Samples `f0` and sets up fields satisfying Gauss's law.
///
/// Positions are stratified per cell, momentum radii follow
/// `Gamma(5, decay)` and directions are uniform, all driven by one shifted
/// Halton sequence. With this proposal the weight `f0 / (N pdf)` depends on
/// `x` only. The sampled envelope ratio is checked against `C0`.
pub fn init(
    dist: &InitialDistribution,
    field_init: &FieldInit,
    grid: &GridSpec,
    params: &ForceParams,
    seed: u64,
) -> Result<SimState> {
    grid.validate()?;
    let profile = dist.resolve(grid, params.a)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: [f64; 4] = std::array::from_fn(|_| rng.random::<f64>());
    let radial = Gamma::new(5.0, profile.decay).map_err(|e| Error::InvalidParams(e.to_string()))?;
    let total = if profile.g_max() > 0.0 && profile.q_scale > 0.0 {
        dist.particles
    } else {
        0
    };
    let dx = grid.dx();
    // f0 / pdf = g(x) c L 4 pi Gamma(5) / decay^5
    let weight_scale = profile.q_scale * grid.length * 4.0 * PI * 24.0 / profile.decay.powi(5) / total.max(1) as f64;
    let mut particles = Vec::with_capacity(total + dist.tracers.len());
    let mut index = 1u64;
    for cell in 0..grid.nx {
        let count = (cell + 1) * total / grid.nx - cell * total / grid.nx;
        for _ in 0..count {
            let u = halton4(index, &shift);
            index += 1;
            let x = (cell as f64 + u[0]) * dx;
            let r = radial.inverse_cdf(u[1].clamp(1e-300, 1.0 - 1e-16));
            let cos_t = 2.0 * u[2] - 1.0;
            let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
            let phi = 2.0 * PI * u[3];
            let p = r * Vec3::new(sin_t * phi.cos(), sin_t * phi.sin(), cos_t);
            particles.push(MacroParticle {
                x,
                p,
                log_f: profile.log_f0(x, &p),
                weight: profile.g(x) * weight_scale,
            });
        }
    }
    let mut tracer_origins = Vec::with_capacity(dist.tracers.len());
    for seed in &dist.tracers {
        let p = Vec3::from(seed.p);
        if !(seed.x.is_finite() && p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidParams("tracer seed must be finite".into()));
        }
        let x = grid.wrap(seed.x);
        tracer_origins.push(x);
        particles.push(MacroParticle {
            x,
            p,
            log_f: profile.log_f0(x, &p),
            weight: 0.0,
        });
    }
    let envelope = EnvelopeParams { c0: dist.c0, a: params.a };
    let worst = particles
        .iter()
        .map(|q| q.log_envelope_ratio(envelope.c0, envelope.a))
        .fold(f64::NEG_INFINITY, f64::max);
    if worst > 1e-12 {
        return Err(Error::InvalidParams(format!(
            "initial profile violates |p|^3 f0 e^(A|p|) <= C0: sampled ratio {}",
            worst.exp()
        )));
    }

    let sources = deposit(&particles, grid)?;
    let mut fields = FieldState::zeros(grid.nx);
    if field_init.wave_amplitude != 0.0 {
        let k = 2.0 * PI * field_init.wave_mode as f64 / grid.length;
        for i in 0..grid.nx {
            fields.ey[i] = field_init.wave_amplitude * (k * grid.node(i)).cos();
            fields.bz[i] = field_init.wave_amplitude * (k * grid.half_cell(i)).cos();
        }
    }
    fields.solve_gauss(&sources.rho, grid);
    let tracer_count = dist.tracers.len();
    let mut state = SimState {
        particles,
        tracer_count,
        tracer_origins,
        fields,
        previous_e: None,
        sources,
        grid: *grid,
        envelope,
        time: 0.0,
        step: 0,
        diagnostics: Diagnostics::default(),
    };
    state.diagnostics.initial_charge = state.sources.total_charge(grid);
    state.update_diagnostics();
    Ok(state)
}

const PUSH_CHUNK: usize = 4096;

/// One coupled step.
///
/// Particles use the explicit midpoint rule: the first stage samples the
/// fields at level `n`, the second samples `B` at `n + 1/2` and `E`
/// extrapolated to `n + 1/2`. The current is deposited from the midpoint
/// state, `rho` from the new positions; then the fields advance.
pub fn sim_step(state: &mut SimState, params: &ForceParams) -> Result<()> {
    let grid = state.grid;
    let dt = grid.dt;
    let step = state.step;
    let mut mid = state.fields.clone();
    mid.half_advance_b(&grid);
    if let Some(prev) = &state.previous_e {
        for (m, (now, old)) in [&mut mid.ex, &mut mid.ey, &mut mid.ez]
            .into_iter()
            .zip([&state.fields.ex, &state.fields.ey, &state.fields.ez].into_iter().zip(prev))
        {
            for i in 0..grid.nx {
                m[i] = 1.5 * now[i] - 0.5 * old[i];
            }
        }
    }
    let fields = &state.fields;
    let partials: Vec<(SourceArrays, SourceArrays)> = state
        .particles
        .par_chunks_mut(PUSH_CHUNK)
        .map(|chunk| {
            let mut current = SourceArrays::zeros(grid.nx);
            let mut density = SourceArrays::zeros(grid.nx);
            for part in chunk {
                let fs1 = fields.sample(&grid, part.x);
                let v1 = velocity(&part.p);
                let f1 = total_force(&fs1, &part.p, params);
                let x_half = part.x + 0.5 * dt * v1.x;
                let p_half = part.p + 0.5 * dt * f1;
                let fs2 = mid.sample(&grid, x_half);
                let v2 = velocity(&p_half);
                let f2 = total_force(&fs2, &p_half, params);
                let div2 = div_p_force(&fs2, &p_half, params);
                deposit_one(&mut current, &grid, grid.wrap(x_half), &v2, part.weight);
                part.x = grid.wrap(part.x + dt * v2.x);
                part.p += dt * f2;
                part.log_f -= dt * div2;
                deposit_one(&mut density, &grid, part.x, &Vec3::zeros(), part.weight);
            }
            (current, density)
        })
        .collect();
    if let Some(bad) = state.particles.iter().position(|q| !q.is_valid()) {
        return Err(Error::Simulation {
            step,
            what: format!("particle {bad} became nonfinite"),
        });
    }
    let mut sources = SourceArrays::zeros(grid.nx);
    for (current, density) in &partials {
        for i in 0..grid.nx {
            sources.rho[i] += density.rho[i];
            sources.jx[i] += current.jx[i];
            sources.jy[i] += current.jy[i];
            sources.jz[i] += current.jz[i];
        }
    }
    let old_e = [
        state.fields.ex.clone(),
        state.fields.ey.clone(),
        state.fields.ez.clone(),
    ];
    let mut next = state.fields.clone();
    next.half_advance_b(&grid);
    next.advance_e(&sources, &grid);
    next.half_advance_b(&grid);
    next.time += dt;
    if !next.is_finite() {
        return Err(Error::Simulation {
            step,
            what: "field values became nonfinite".into(),
        });
    }
    let continuity = continuity_residual(&state.sources.rho, &sources.rho, &sources.jx, &grid);
    state.diagnostics.max_continuity_residual = state.diagnostics.max_continuity_residual.max(continuity);
    state.fields = next;
    state.previous_e = Some(old_e);
    state.sources = sources;
    state.step += 1;
    state.time = state.step as f64 * dt;
    state.update_diagnostics();
    Ok(())
}

/// `max_i f_i |p_i|^3 e^{A|p_i|} / C0` over all particles (0 for an empty set).
pub fn envelope_audit(state: &SimState, c0: f64, a: f64) -> f64 {
    state
        .particles
        .par_iter()
        .map(|q| q.log_envelope_ratio(c0, a))
        .reduce(|| f64::NEG_INFINITY, f64::max)
        .exp()
}

/// Lattice-loaded plasma with a smooth drift: `per_cell` equally spaced
/// particles per cell, density `1 + 0.2 cos(kx)` and momentum
/// `(0.5 sin kx, 0.2 cos kx, 0.1)`, `k = 2 pi / L`. Fields start from Gauss's
/// law plus a uniform `Bx = 1`, which keeps `K` away from zero: `K` has a
/// kink where both fields vanish, and the flow would inherit it.
pub fn lattice_state(grid: &GridSpec, per_cell: usize, params: &ForceParams) -> Result<SimState> {
    grid.validate()?;
    if per_cell == 0 {
        return Err(Error::InvalidParams("lattice loading needs at least one particle per cell".into()));
    }
    let k = 2.0 * PI / grid.length;
    let n = grid.nx * per_cell;
    let spacing = grid.length / n as f64;
    let particles: Vec<MacroParticle> = (0..n)
        .map(|j| {
            let x = (j as f64 + 0.5) * spacing;
            MacroParticle {
                x,
                p: Vec3::new(0.5 * (k * x).sin(), 0.2 * (k * x).cos(), 0.1),
                log_f: 0.0,
                weight: (1.0 + 0.2 * (k * x).cos()) * spacing,
            }
        })
        .collect();
    let sources = deposit(&particles, grid)?;
    let mut fields = FieldState::zeros(grid.nx);
    fields.bx = 1.0;
    fields.solve_gauss(&sources.rho, grid);
    let mut state = SimState {
        particles,
        tracer_count: 0,
        tracer_origins: Vec::new(),
        fields,
        previous_e: None,
        sources,
        grid: *grid,
        envelope: EnvelopeParams { c0: 1.0, a: params.a },
        time: 0.0,
        step: 0,
        diagnostics: Diagnostics::default(),
    };
    state.diagnostics.initial_charge = state.sources.total_charge(grid);
    Ok(state)
}

/// One level of [`continuity_study`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContinuityLevel {
    pub nx: usize,
    pub dt: f64,
    pub residual: f64,
}

/// Largest continuity residual up to time `t_end` of [`lattice_state`] on
/// `levels` grids `nx0, 2 nx0, ...` with `dt = courant * dx`, keeping
/// `per_cell` fixed so the particle sampling error stays below the grid
/// truncation error.
pub fn continuity_study(
    length: f64,
    nx0: usize,
    levels: usize,
    per_cell: usize,
    courant: f64,
    t_end: f64,
    params: &ForceParams,
) -> Result<Vec<ContinuityLevel>> {
    if !(courant > 0.0 && courant <= 1.0 && t_end > 0.0) {
        return Err(Error::InvalidParams(format!(
            "continuity study needs 0 < courant <= 1 and t_end > 0, got {courant}, {t_end}"
        )));
    }
    (0..levels)
        .map(|level| {
            let nx = nx0 << level;
            let dx = length / nx as f64;
            let steps = (t_end / (courant * dx)).round().max(1.0) as u64;
            let dt = t_end / steps as f64;
            let grid = GridSpec::new(length, nx, dt)?;
            let mut state = lattice_state(&grid, per_cell, params)?;
            for _ in 0..steps {
                sim_step(&mut state, params)?;
            }
            Ok(ContinuityLevel {
                nx,
                dt,
                residual: state.diagnostics.max_continuity_residual,
            })
        })
        .collect()
}

/// Outcome of [`run`].
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub steps: u64,
    pub final_time: f64,
    pub particles: usize,
    pub tracers: usize,
    pub snapshots: Vec<u64>,
    pub diagnostics: Diagnostics,
    /// Per snapshot step, `max_cells vm_n / M_n` for `n = 0..=3`.
    pub flux_ratios: Vec<[f64; 4]>,
    /// Per snapshot step, `max_cells rho / density bound`.
    pub density_ratios: Vec<f64>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_fields(path: &Path, state: &SimState) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "cell,x,Ex,Ey,Ez,Bx,By,Bz").map_err(io)?;
    let f = &state.fields;
    for i in 0..state.grid.nx {
        writeln!(
            w,
            "{i},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            state.grid.node(i),
            f.ex[i],
            f.ey[i],
            f.ez[i],
            f.bx,
            f.by[i],
            f.bz[i]
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

fn write_particles(path: &Path, state: &SimState, stride: usize) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "index,x,p1,p2,p3,log_f,weight").map_err(io)?;
    let n = state.particles.len() - state.tracer_count;
    let picked = (0..n).step_by(stride.max(1)).chain(n..state.particles.len());
    for i in picked {
        let q = &state.particles[i];
        writeln!(w, "{i},{:e},{:e},{:e},{:e},{:e},{:e}", q.x, q.p.x, q.p.y, q.p.z, q.log_f, q.weight).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Runs a simulation and writes CSV snapshots, a diagnostics series and a
/// JSON manifest into `out`. Identical inputs give byte-identical files.
pub fn run(config: &SimulationConfig, params: &ForceParams, seed: u64, out: &Path) -> Result<RunSummary> {
    let grid = config.grid()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut state = init(&config.distribution, &config.fields, &grid, params, seed)?;
    let diag_path = out.join("diagnostics.csv");
    let mut diag = create(&diag_path)?;
    let dio = |e| Error::io(&diag_path, e);
    writeln!(
        diag,
        "step,t,total_charge,gauss_residual,continuity_residual,transverse_energy,envelope_ratio,tracer_momentum,tracer_displacement"
    )
    .map_err(dio)?;
    let mut summary = RunSummary {
        steps: config.steps,
        final_time: 0.0,
        particles: state.particles.len() - state.tracer_count,
        tracers: state.tracer_count,
        snapshots: Vec::new(),
        diagnostics: Diagnostics::default(),
        flux_ratios: Vec::new(),
        density_ratios: Vec::new(),
    };
    loop {
        let d = &state.diagnostics;
        writeln!(
            diag,
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            state.step,
            state.time,
            state.sources.total_charge(&grid),
            gauss_residual(&state.fields, &state.sources.rho, &grid),
            d.max_continuity_residual,
            state.fields.transverse_energy(&grid),
            envelope_audit(&state, state.envelope.c0, state.envelope.a),
            d.max_tracer_momentum,
            d.max_tracer_displacement
        )
        .map_err(dio)?;
        let last = state.step == config.steps;
        if last || state.step % config.output_every.max(1) == 0 {
            let tag = format!("{:06}", state.step);
            write_fields(&out.join(format!("fields_{tag}.csv")), &state)?;
            write_particles(&out.join(format!("particles_{tag}.csv")), &state, config.particle_stride)?;
            let table = moments::snapshot_table(state.weighted(), &grid, &state.envelope)?;
            let path = out.join(format!("moments_{tag}.csv"));
            let mut w = create(&path)?;
            table.write_csv(&mut w).map_err(|e| Error::io(&path, e))?;
            w.flush().map_err(|e| Error::io(&path, e))?;
            summary.snapshots.push(state.step);
            summary.flux_ratios.push(table.flux_ratios());
            summary.density_ratios.push(table.density_ratio());
        }
        if last {
            break;
        }
        sim_step(&mut state, params)?;
    }
    diag.flush().map_err(dio)?;
    summary.final_time = state.time;
    summary.diagnostics = state.diagnostics.clone();
    let manifest = serde_json::json!({
        "seed": seed,
        "force": params,
        "simulation": config,
        "resolved_profile": config.distribution.resolve(&grid, params.a)?,
        "summary": summary,
    });
    let path: PathBuf = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config {
        path: "manifest".into(),
        message: e.to_string(),
    })?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SimulationConfig {
        SimulationConfig {
            nx: 16,
            steps: 10,
            distribution: InitialDistribution {
                particles: 4000,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn continuity_residual_converges_at_second_order() {
        let study = continuity_study(2.0 * PI, 128, 3, 4096, 0.5, 0.05, &ForceParams::default()).unwrap();
        let orders: Vec<f64> = study.windows(2).map(|w| (w[0].residual / w[1].residual).log2()).collect();
        println!("continuity residuals {study:?} orders {orders:?}");
        assert!(orders.iter().all(|o| *o >= 1.9), "{orders:?}");
    }

    #[test]
    fn radical_inverse_values() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(3, 2), 0.75);
        assert!((radical_inverse(5, 3) - (2.0 / 3.0 + 1.0 / 9.0)).abs() < 1e-15);
    }

    #[test]
    fn default_profile_saturates_envelope_at_analytic_maximizer() {
        let grid = GridSpec::new(2.0 * PI, 64, 0.04).unwrap();
        let prof = InitialDistribution::default().resolve(&grid, 5.0).unwrap();
        // r^3 f0 e^{5r} = g c r^5 e^{-5r}, maximal at r = 1 and g = g_max.
        let x = 0.0;
        let ratio = |r: f64| prof.f0(x, &Vec3::new(r, 0.0, 0.0)) * r.powi(3) * (5.0 * r).exp();
        assert!((ratio(1.0) - 1.0).abs() < 1e-12);
        assert!(ratio(0.9) < 1.0 && ratio(1.1) < 1.0);
    }

    #[test]
    fn million_samples_respect_envelope() {
        let grid = GridSpec::new(2.0 * PI, 64, 0.04).unwrap();
        let dist = InitialDistribution {
            particles: 1_000_000,
            ..Default::default()
        };
        let st = init(&dist, &FieldInit::default(), &grid, &ForceParams::default(), 3).unwrap();
        let audit = envelope_audit(&st, 1.0, 5.0);
        assert!(audit <= 1.0, "audit {audit}");
        assert!(audit > 0.9, "sampling should come close to the maximum, got {audit}");
    }

    #[test]
    fn violating_profile_is_rejected() {
        let grid = GridSpec::new(2.0 * PI, 16, 0.04).unwrap();
        let dist = InitialDistribution {
            particles: 2000,
            q_scale: Some(1e4),
            ..Default::default()
        };
        let err = init(&dist, &FieldInit::default(), &grid, &ForceParams::default(), 1).unwrap_err();
        assert!(err.to_string().contains("C0"), "{err}");
        let slow = InitialDistribution {
            decay: Some(4.0),
            ..Default::default()
        };
        assert!(slow.resolve(&grid, 5.0).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = small_config();
        let grid = cfg.grid().unwrap();
        let a = init(&cfg.distribution, &cfg.fields, &grid, &ForceParams::default(), 9).unwrap();
        let b = init(&cfg.distribution, &cfg.fields, &grid, &ForceParams::default(), 9).unwrap();
        assert_eq!(a.particles, b.particles);
        let c = init(&cfg.distribution, &cfg.fields, &grid, &ForceParams::default(), 10).unwrap();
        assert_ne!(a.particles, c.particles);
    }

    #[test]
    fn weights_depend_on_position_only() {
        let cfg = small_config();
        let grid = cfg.grid().unwrap();
        let st = init(&cfg.distribution, &cfg.fields, &grid, &ForceParams::default(), 2).unwrap();
        let prof = cfg.distribution.resolve(&grid, 5.0).unwrap();
        let ratio = st.weighted()[0].weight / prof.g(st.weighted()[0].x);
        for q in st.weighted() {
            assert!((q.weight / prof.g(q.x) - ratio).abs() <= 1e-12 * ratio);
        }
        // Total charge: L * amplitude * 4 pi c int r^4 e^{-b r} dr = L * amplitude * 4 pi c 24 / b^5.
        let expected = grid.length * prof.amplitude * prof.q_scale * 4.0 * PI * 24.0 / prof.decay.powi(5);
        let charge = st.sources.total_charge(&grid);
        assert!((charge - expected).abs() < 1e-3 * expected, "{charge} vs {expected}");
    }

    #[test]
    fn empty_plasma_with_wave_matches_pure_maxwell() {
        let mut cfg = small_config();
        cfg.distribution.amplitude = 0.0;
        cfg.distribution.tracers.clear();
        cfg.fields.wave_amplitude = 0.3;
        let grid = cfg.grid().unwrap();
        let params = ForceParams::default();
        let mut st = init(&cfg.distribution, &cfg.fields, &grid, &params, 0).unwrap();
        assert!(st.particles.is_empty());
        let mut reference = st.fields.clone();
        let zero = SourceArrays::zeros(grid.nx);
        for _ in 0..20 {
            sim_step(&mut st, &params).unwrap();
            reference = crate::fields::maxwell_step(&reference, &zero, &grid).unwrap();
        }
        assert_eq!(st.fields, reference);
    }

    #[test]
    fn empty_plasma_fields_stay_zero() {
        let mut cfg = small_config();
        cfg.distribution.amplitude = 0.0;
        let grid = cfg.grid().unwrap();
        let params = ForceParams::default();
        let mut st = init(&cfg.distribution, &cfg.fields, &grid, &params, 0).unwrap();
        for _ in 0..10 {
            sim_step(&mut st, &params).unwrap();
        }
        assert_eq!(st.fields, FieldState { time: st.fields.time, ..FieldState::zeros(grid.nx) });
    }

    #[test]
    fn zero_momentum_tracer_is_fixed() {
        let cfg = small_config();
        let grid = cfg.grid().unwrap();
        let params = ForceParams::default();
        let mut st = init(&cfg.distribution, &cfg.fields, &grid, &params, 4).unwrap();
        let before = *st.tracers().first().unwrap();
        for _ in 0..50 {
            sim_step(&mut st, &params).unwrap();
        }
        let after = st.tracers()[0];
        assert_eq!(after.p, Vec3::zeros());
        assert_eq!(after.x, before.x);
        assert!(st.fields.max_strength(&grid) > 0.0);
    }

    #[test]
    fn weights_and_charge_are_conserved() {
        let cfg = small_config();
        let grid = cfg.grid().unwrap();
        let params = ForceParams::default();
        let mut st = init(&cfg.distribution, &cfg.fields, &grid, &params, 5).unwrap();
        let weights: Vec<f64> = st.particles.iter().map(|q| q.weight).collect();
        for _ in 0..20 {
            sim_step(&mut st, &params).unwrap();
        }
        assert!(st.particles.iter().zip(&weights).all(|(q, w)| q.weight == *w));
        assert!(st.diagnostics.max_charge_drift <= 1e-12);
        assert!(st.diagnostics.max_gauss_residual <= 1e-10);
        assert!(st.diagnostics.max_envelope_ratio <= 1.0 + 1e-6);
    }

    #[test]
    fn cold_uniform_plasma_stays_uniform() {
        let grid = GridSpec::new(2.0 * PI, 16, 0.04).unwrap();
        let dist = InitialDistribution {
            modulation: 0.0,
            decay: Some(200.0),
            particles: 16_000,
            tracers: vec![],
            ..Default::default()
        };
        let params = ForceParams::default();
        let mut st = init(&dist, &FieldInit::default(), &grid, &params, 6).unwrap();
        let rho0 = st.sources.rho.clone();
        let mean = rho0.iter().sum::<f64>() / rho0.len() as f64;
        // Per-cell Monte-Carlo scale: mean / sqrt(particles per cell).
        let sigma = mean / (1000f64).sqrt();
        for _ in 0..100 {
            sim_step(&mut st, &params).unwrap();
        }
        for r in &st.sources.rho {
            assert!((r - mean).abs() <= 3.0 * sigma, "{r} vs {mean} +- {sigma}");
        }
    }

    #[test]
    fn nonfinite_particle_aborts_with_step() {
        let cfg = small_config();
        let grid = cfg.grid().unwrap();
        let params = ForceParams::default();
        let mut st = init(&cfg.distribution, &cfg.fields, &grid, &params, 5).unwrap();
        st.particles[3].p.x = f64::NAN;
        match sim_step(&mut st, &params) {
            Err(Error::Simulation { step: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn run_writes_deterministic_outputs() {
        let mut cfg = small_config();
        cfg.output_every = 5;
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let params = ForceParams::default();
        let s = run(&cfg, &params, 11, a.path()).unwrap();
        run(&cfg, &params, 11, b.path()).unwrap();
        assert_eq!(s.snapshots, vec![0, 5, 10]);
        let mut names: Vec<_> = std::fs::read_dir(a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert_eq!(names.len(), 3 * 3 + 2);
        for name in names {
            let x = std::fs::read(a.path().join(&name)).unwrap();
            let y = std::fs::read(b.path().join(&name)).unwrap();
            assert_eq!(x, y, "{name:?} differs");
        }
    }

    #[test]
    fn zero_steps_writes_initial_snapshot_only() {
        let mut cfg = small_config();
        cfg.steps = 0;
        let dir = tempfile::tempdir().unwrap();
        let s = run(&cfg, &ForceParams::default(), 1, dir.path()).unwrap();
        assert_eq!(s.snapshots, vec![0]);
        assert!(dir.path().join("fields_000000.csv").exists());
        assert!(!dir.path().join("fields_000001.csv").exists());
    }

    #[test]
    fn unwritable_output_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let err = run(&small_config(), &ForceParams::default(), 1, &blocker.join("sub")).unwrap_err();
        assert!(err.to_string().contains("file"), "{err}");
    }
}
