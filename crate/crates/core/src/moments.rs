//! Moment and moment-flux profiles, their envelope bounds, and the
//! density-versus-gradient split diagnostic.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{Matrix4, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{deposit_one, GridSpec, SourceArrays};
use crate::kinematics::{gamma, norm, velocity, Vec3};
use crate::kinetic::MacroParticle;

/// Largest supported moment order.
pub const MAX_ORDER: u32 = 8;

/// Envelope constants: `f <= C0 |p|^-3 e^{-A|p|}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeParams {
    pub c0: f64,
    pub a: f64,
}

/// Per-cell values of `<[p]^n>` or `<|v| [p]^n>`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentProfile {
    pub n: u32,
    pub values: Vec<f64>,
}

impl MomentProfile {
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

const CHUNK: usize = 4096;

/// Cloud-in-cell deposition of `weight * factor(p)`, chunked and merged
/// exactly like the charge deposit so that `factor = 1` reproduces `rho`
/// bit for bit.
fn deposit_scalar(particles: &[MacroParticle], grid: &GridSpec, factor: impl Fn(&MacroParticle) -> f64 + Sync) -> Vec<f64> {
    let zero = Vec3::zeros();
    let partials: Vec<Vec<f64>> = particles
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut buf = SourceArrays::zeros(grid.nx);
            for part in chunk {
                let w = factor(part);
                if w != 0.0 {
                    deposit_one(&mut buf, grid, part.x, &zero, part.weight * w);
                }
            }
            buf.rho
        })
        .collect();
    let mut total = vec![0.0; grid.nx];
    for part in &partials {
        total.iter_mut().zip(part).for_each(|(t, v)| *t += v);
    }
    total
}

fn check_order(n: u32) -> Result<()> {
    if n > MAX_ORDER {
        return Err(Error::Domain(format!("moment order {n} exceeds the supported maximum {MAX_ORDER}")));
    }
    Ok(())
}

/// `sum_i w_i [p_i]^n S(x - x_i) / dx` per node.
pub fn moment_profile(particles: &[MacroParticle], grid: &GridSpec, n: u32) -> Result<MomentProfile> {
    check_order(n)?;
    let values = deposit_scalar(particles, grid, |q| gamma(&q.p).powi(n as i32));
    Ok(MomentProfile { n, values })
}

/// `sum_i w_i |v_i| [p_i]^n S(x - x_i) / dx` per node.
pub fn flux_moment_profile(particles: &[MacroParticle], grid: &GridSpec, n: u32) -> Result<MomentProfile> {
    check_order(n)?;
    let values = deposit_scalar(particles, grid, |q| norm(&velocity(&q.p)) * gamma(&q.p).powi(n as i32));
    Ok(MomentProfile { n, values })
}

/// `M_n = 4 pi C0 int_0^inf [r]^(n-1) e^(-A r) dr`, the envelope bound on `sup vm_n`.
///
/// Double-exponential quadrature on `[0, 1)` after `r = s / (1 - s)`; the
/// result is accepted at a relative error estimate of `1e-10`.
pub fn envelope_flux_bound(n: u32, env: &EnvelopeParams) -> Result<f64> {
    if !(env.c0 > 0.0 && env.a > 0.0) {
        return Err(Error::InvalidParams(format!(
            "envelope constants must be positive, got C0 = {}, A = {}",
            env.c0, env.a
        )));
    }
    let a = env.a;
    let integrand = |s: f64| {
        if s >= 1.0 {
            return 0.0;
        }
        let r = s / (1.0 - s);
        let jac = 1.0 / ((1.0 - s) * (1.0 - s));
        let value = (1.0 + r * r).sqrt().powi(n as i32 - 1) * (-a * r).exp() * jac;
        if value.is_finite() {
            value
        } else {
            0.0
        }
    };
    // Scale of the integral for the absolute target: e^{-A r} alone gives 1/A.
    let scale = 1.0 / a;
    let out = quadrature::double_exponential::integrate(integrand, 0.0, 1.0, 1e-13 * scale);
    let coarse = quadrature::double_exponential::integrate(integrand, 0.0, 1.0, 1e-7 * scale);
    if !(out.integral.is_finite() && out.error_estimate <= 1e-10 * out.integral.abs()) {
        return Err(Error::Quadrature {
            previous: coarse.integral,
            last: out.integral,
        });
    }
    Ok(4.0 * PI * env.c0 * out.integral)
}

/// Estimate of `G2 = sup |grad_p f| + 2` from particle data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientEstimate {
    pub max_gradient: f64,
    pub g2: f64,
}

const NEIGHBOURS: usize = 16;

/// Nearest-neighbour finite differences in momentum within each cell.
///
/// For every particle with `f > 0`, the `NEIGHBOURS` closest particles in
/// momentum (same cell) define a least-squares fit of
/// `f_j - f_i = g . (p_j - p_i) + s (x_j - x_i)`; the `x` term absorbs the
/// spatial variation inside the cell. `|g|` is maximized over particles.
pub fn estimate_g2(particles: &[MacroParticle], grid: &GridSpec) -> GradientEstimate {
    let dx = grid.dx();
    let mut cells: Vec<Vec<usize>> = vec![Vec::new(); grid.nx];
    for (i, q) in particles.iter().enumerate() {
        if q.log_f.is_finite() {
            let c = ((q.x / dx).floor() as usize).min(grid.nx - 1);
            cells[c].push(i);
        }
    }
    let max_gradient = cells
        .par_iter()
        .map(|members| cell_max_gradient(particles, members))
        .reduce(|| 0.0, f64::max);
    GradientEstimate {
        max_gradient,
        g2: max_gradient + 2.0,
    }
}

fn cell_max_gradient(particles: &[MacroParticle], members: &[usize]) -> f64 {
    if members.len() <= NEIGHBOURS {
        return 0.0;
    }
    let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
    for &i in members {
        lo = lo.inf(&particles[i].p);
        hi = hi.sup(&particles[i].p);
    }
    let extent = hi - lo;
    let volume = extent.x.max(1e-12) * extent.y.max(1e-12) * extent.z.max(1e-12);
    let side = (volume * NEIGHBOURS as f64 / members.len() as f64).cbrt();
    let key = |p: &Vec3| {
        let k = (p - lo) / side;
        (k.x.floor() as i64, k.y.floor() as i64, k.z.floor() as i64)
    };
    let mut bins: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for &i in members {
        bins.entry(key(&particles[i].p)).or_default().push(i);
    }
    let mut best = 0.0f64;
    let mut candidates: Vec<(f64, usize)> = Vec::new();
    for &i in members {
        let qi = &particles[i];
        let (a, b, c) = key(&qi.p);
        candidates.clear();
        for da in -1..=1 {
            for db in -1..=1 {
                for dc in -1..=1 {
                    if let Some(list) = bins.get(&(a + da, b + db, c + dc)) {
                        candidates.extend(list.iter().filter(|&&j| j != i).map(|&j| (norm(&(particles[j].p - qi.p)), j)));
                    }
                }
            }
        }
        if candidates.len() < NEIGHBOURS {
            continue;
        }
        candidates.select_nth_unstable_by(NEIGHBOURS - 1, |u, v| u.0.total_cmp(&v.0));
        let fi = qi.f_value();
        let mut normal = Matrix4::zeros();
        let mut rhs = Vector4::zeros();
        for &(_, j) in &candidates[..NEIGHBOURS] {
            let qj = &particles[j];
            let dp = qj.p - qi.p;
            let row = Vector4::new(dp.x, dp.y, dp.z, qj.x - qi.x);
            normal += row * row.transpose();
            rhs += row * (qj.f_value() - fi);
        }
        if let Some(sol) = normal.cholesky().map(|ch| ch.solve(&rhs)) {
            let g = Vec3::new(sol[0], sol[1], sol[2]).norm();
            if g.is_finite() {
                best = best.max(g);
            }
        }
    }
    best
}

/// Both sides of the split `rho <= near + tail` with `R = G2^(-1/4)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityCell {
    pub rho: f64,
    /// Deposited density of particles with `|p| <= R`.
    pub near: f64,
    /// Deposited density of particles with `|p| > R`.
    pub tail: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityReport {
    pub g2: f64,
    pub radius: f64,
    /// `pi G2 R^4`.
    pub near_bound: f64,
    /// `4 pi C0 (log(1/R) + 1/A)`.
    pub tail_bound: f64,
    pub cells: Vec<DensityCell>,
}

impl DensityReport {
    pub fn bound(&self) -> f64 {
        self.near_bound + self.tail_bound
    }

    /// `max_cells rho / (near_bound + tail_bound)`.
    pub fn max_ratio(&self) -> f64 {
        self.cells.iter().map(|c| c.rho / self.bound()).fold(0.0, f64::max)
    }
}

pub fn density_log_diagnostic(
    particles: &[MacroParticle],
    grid: &GridSpec,
    env: &EnvelopeParams,
    g2: f64,
) -> Result<DensityReport> {
    if !(g2 >= 2.0) {
        return Err(Error::Domain(format!("G2 = {g2} must be at least 2")));
    }
    let radius = g2.powf(-0.25);
    let rho = deposit_scalar(particles, grid, |_| 1.0);
    let near = deposit_scalar(particles, grid, |q| if norm(&q.p) <= radius { 1.0 } else { 0.0 });
    let tail = deposit_scalar(particles, grid, |q| if norm(&q.p) > radius { 1.0 } else { 0.0 });
    let cells = (0..grid.nx)
        .map(|i| DensityCell {
            rho: rho[i],
            near: near[i],
            tail: tail[i],
        })
        .collect();
    Ok(DensityReport {
        g2,
        radius,
        near_bound: PI * g2 * radius.powi(4),
        tail_bound: 4.0 * PI * env.c0 * ((1.0 / radius).ln() + 1.0 / env.a),
        cells,
    })
}

/// Everything written to a moments snapshot.
#[derive(Debug, Clone)]
pub struct SnapshotTable {
    pub x: Vec<f64>,
    pub moments: Vec<MomentProfile>,
    pub fluxes: Vec<MomentProfile>,
    pub bounds: Vec<f64>,
    pub gradient: GradientEstimate,
    pub density: DensityReport,
}

impl SnapshotTable {
    /// `max_cells vm_n / M_n` for `n = 0..=3`.
    pub fn flux_ratios(&self) -> [f64; 4] {
        std::array::from_fn(|n| self.fluxes[n].max() / self.bounds[n])
    }

    pub fn density_ratio(&self) -> f64 {
        self.density.max_ratio()
    }

    pub fn write_csv(&self, w: &mut dyn Write) -> std::io::Result<()> {
        writeln!(
            w,
            "cell,x,m0,m1,m2,m3,vm0,vm1,vm2,vm3,M0,M1,M2,M3,rho,near,tail,near_bound,tail_bound,G2"
        )?;
        for (i, x) in self.x.iter().enumerate() {
            write!(w, "{i},{x:e}")?;
            for m in self.moments.iter().chain(&self.fluxes) {
                write!(w, ",{:e}", m.values[i])?;
            }
            for b in &self.bounds {
                write!(w, ",{b:e}")?;
            }
            let c = &self.density.cells[i];
            writeln!(
                w,
                ",{:e},{:e},{:e},{:e},{:e},{:e}",
                c.rho, c.near, c.tail, self.density.near_bound, self.density.tail_bound, self.density.g2
            )?;
        }
        Ok(())
    }
}

pub fn snapshot_table(particles: &[MacroParticle], grid: &GridSpec, env: &EnvelopeParams) -> Result<SnapshotTable> {
    let orders = 0..=3u32;
    let moments = orders.clone().map(|n| moment_profile(particles, grid, n)).collect::<Result<Vec<_>>>()?;
    let fluxes = orders.clone().map(|n| flux_moment_profile(particles, grid, n)).collect::<Result<Vec<_>>>()?;
    let bounds = orders.map(|n| envelope_flux_bound(n, env)).collect::<Result<Vec<_>>>()?;
    let gradient = estimate_g2(particles, grid);
    let density = density_log_diagnostic(particles, grid, env, gradient.g2)?;
    Ok(SnapshotTable {
        x: (0..grid.nx).map(|i| grid.node(i)).collect(),
        moments,
        fluxes,
        bounds,
        gradient,
        density,
    })
}
