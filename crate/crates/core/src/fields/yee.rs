//! Self-consistent 1D3V periodic Maxwell solver.
//!
//! Layout: nodes sit at `x_i = i dx`, half cells at `x_{i+1/2}`. `Ey`, `Ez`,
//! `rho` and `j` live on nodes; `Ex`, `By`, `Bz` live on half cells. All
//! components are synchronized at integer time levels; the magnetic update is
//! split into two half steps around the electric update, which is the
//! standard leapfrog written in velocity-Verlet form. `Ex` is recomputed each
//! step from Gauss's law against a uniform neutralizing background.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::force::FieldSample;
use crate::kinematics::{velocity, Vec3};
use crate::kinetic::MacroParticle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub length: f64,
    pub nx: usize,
    pub dt: f64,
}

impl GridSpec {
    pub fn new(length: f64, nx: usize, dt: f64) -> Result<Self> {
        let grid = GridSpec { length, nx, dt };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 8 {
            return Err(Error::InvalidParams(format!("nx = {} must be at least 8", self.nx)));
        }
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(Error::InvalidParams(format!("domain length {} must be positive", self.length)));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidParams(format!("dt = {} must be positive", self.dt)));
        }
        if self.dt > self.dx() {
            return Err(Error::InvalidParams(format!(
                "CFL violated: dt = {} exceeds dx = {}",
                self.dt,
                self.dx()
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.length / self.nx as f64
    }

    /// Position wrapped into `[0, L)`.
    #[inline]
    pub fn wrap(&self, x: f64) -> f64 {
        let w = x.rem_euclid(self.length);
        // rem_euclid can round up to exactly L
        if w >= self.length {
            0.0
        } else {
            w
        }
    }

    pub fn node(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    pub fn half_cell(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx()
    }

    /// Left node index and linear weight of the right neighbour for a
    /// position on a grid shifted by `offset` cells.
    #[inline]
    fn locate(&self, x: f64, offset: f64) -> (usize, usize, f64) {
        let s = (x / self.dx() - offset).rem_euclid(self.nx as f64);
        let i = (s.floor() as usize).min(self.nx - 1);
        let frac = s - i as f64;
        (i, (i + 1) % self.nx, frac)
    }
}

/// Gridded fields at one integer time level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldState {
    pub ex: Vec<f64>,
    pub ey: Vec<f64>,
    pub ez: Vec<f64>,
    pub bx: f64,
    pub by: Vec<f64>,
    pub bz: Vec<f64>,
    pub time: f64,
}

/// Charge and current densities on nodes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SourceArrays {
    pub rho: Vec<f64>,
    pub jx: Vec<f64>,
    pub jy: Vec<f64>,
    pub jz: Vec<f64>,
}

impl SourceArrays {
    pub fn zeros(nx: usize) -> Self {
        SourceArrays {
            rho: vec![0.0; nx],
            jx: vec![0.0; nx],
            jy: vec![0.0; nx],
            jz: vec![0.0; nx],
        }
    }

    pub fn total_charge(&self, grid: &GridSpec) -> f64 {
        self.rho.iter().sum::<f64>() * grid.dx()
    }

    fn add(&mut self, other: &SourceArrays) {
        for (a, b) in [
            (&mut self.rho, &other.rho),
            (&mut self.jx, &other.jx),
            (&mut self.jy, &other.jy),
            (&mut self.jz, &other.jz),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

const DEPOSIT_CHUNK: usize = 4096;

/// Cloud-in-cell deposition of `rho = sum w S / dx` and `j = sum w v S / dx`.
///
/// Chunks are deposited in parallel into private buffers and merged in chunk
/// order, so the result is bitwise independent of the worker count.
pub fn deposit(particles: &[MacroParticle], grid: &GridSpec) -> Result<SourceArrays> {
    if let Some(bad) = particles
        .iter()
        .position(|p| !(p.x.is_finite() && p.p.iter().all(|c| c.is_finite()) && p.weight.is_finite()))
    {
        return Err(Error::Domain(format!("particle {bad} has a nonfinite state")));
    }
    let partials: Vec<SourceArrays> = particles
        .par_chunks(DEPOSIT_CHUNK)
        .map(|chunk| {
            let mut buf = SourceArrays::zeros(grid.nx);
            for part in chunk {
                deposit_one(&mut buf, grid, part.x, &velocity(&part.p), part.weight);
            }
            buf
        })
        .collect();
    let mut total = SourceArrays::zeros(grid.nx);
    for part in &partials {
        total.add(part);
    }
    Ok(total)
}

#[inline]
pub(crate) fn deposit_one(buf: &mut SourceArrays, grid: &GridSpec, x: f64, v: &Vec3, weight: f64) {
    let (i, k, frac) = grid.locate(x, 0.0);
    let w = weight / grid.dx();
    let (wl, wr) = (w * (1.0 - frac), w * frac);
    buf.rho[i] += wl;
    buf.rho[k] += wr;
    buf.jx[i] += wl * v.x;
    buf.jx[k] += wr * v.x;
    buf.jy[i] += wl * v.y;
    buf.jy[k] += wr * v.y;
    buf.jz[i] += wl * v.z;
    buf.jz[k] += wr * v.z;
}

/// Linear interpolation of a node-centred array.
#[inline]
pub(crate) fn interp_nodes(values: &[f64], grid: &GridSpec, x: f64) -> f64 {
    let (i, k, frac) = grid.locate(x, 0.0);
    values[i] * (1.0 - frac) + values[k] * frac
}

/// Linear interpolation of a half-cell array.
#[inline]
pub(crate) fn interp_half(values: &[f64], grid: &GridSpec, x: f64) -> f64 {
    let (i, k, frac) = grid.locate(x, 0.5);
    values[i] * (1.0 - frac) + values[k] * frac
}

impl FieldState {
    pub fn zeros(nx: usize) -> Self {
        FieldState {
            ex: vec![0.0; nx],
            ey: vec![0.0; nx],
            ez: vec![0.0; nx],
            bx: 0.0,
            by: vec![0.0; nx],
            bz: vec![0.0; nx],
            time: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.bx.is_finite()
            && [&self.ex, &self.ey, &self.ez, &self.by, &self.bz]
                .iter()
                .all(|a| a.iter().all(|v| v.is_finite()))
    }

    /// Overwrites `Ex` with the zero-mean solution of `dEx/dx = rho - mean(rho)`.
    pub fn solve_gauss(&mut self, rho: &[f64], grid: &GridSpec) {
        let n = grid.nx;
        let mean = rho.iter().sum::<f64>() / n as f64;
        let dx = grid.dx();
        // Ex[i] sits at i + 1/2, so Ex[i] - Ex[i-1] = dx (rho[i] - mean).
        let mut acc = 0.0;
        for i in 0..n {
            acc += dx * (rho[i] - mean);
            self.ex[i] = acc;
        }
        let shift = self.ex.iter().sum::<f64>() / n as f64;
        self.ex.iter_mut().for_each(|e| *e -= shift);
    }

    /// `B <- B - (dt/2) curl E` on half cells.
    pub(crate) fn half_advance_b(&mut self, grid: &GridSpec) {
        let n = grid.nx;
        let c = 0.5 * grid.dt / grid.dx();
        for i in 0..n {
            let k = (i + 1) % n;
            self.by[i] += c * (self.ez[k] - self.ez[i]);
            self.bz[i] -= c * (self.ey[k] - self.ey[i]);
        }
    }

    /// `E <- E + dt (curl B - j)` for the transverse components, then the
    /// Gauss solve for `Ex`.
    pub(crate) fn advance_e(&mut self, sources: &SourceArrays, grid: &GridSpec) {
        let n = grid.nx;
        let c = grid.dt / grid.dx();
        for i in 0..n {
            let l = (i + n - 1) % n;
            self.ey[i] += -c * (self.bz[i] - self.bz[l]) - grid.dt * sources.jy[i];
            self.ez[i] += c * (self.by[i] - self.by[l]) - grid.dt * sources.jz[i];
        }
        self.solve_gauss(&sources.rho, grid);
    }

    /// Field at a position (wrapped), interpolated with the deposition shape.
    pub fn sample(&self, grid: &GridSpec, x: f64) -> FieldSample {
        let x = grid.wrap(x);
        FieldSample::new(
            Vec3::new(
                interp_half(&self.ex, grid, x),
                interp_nodes(&self.ey, grid, x),
                interp_nodes(&self.ez, grid, x),
            ),
            Vec3::new(
                self.bx,
                interp_half(&self.by, grid, x),
                interp_half(&self.bz, grid, x),
            ),
        )
    }

    /// Energy functional conserved exactly by the vacuum transverse update:
    /// `sum(Ey^2 + Ez^2 + By^2 + Bz^2) dx/2 - (dt^2/8) sum |curl_h E|^2 dx`.
    pub fn transverse_energy(&self, grid: &GridSpec) -> f64 {
        let n = grid.nx;
        let dx = grid.dx();
        let mut sq = 0.0;
        let mut curl = 0.0;
        for i in 0..n {
            let k = (i + 1) % n;
            sq += self.ey[i].powi(2) + self.ez[i].powi(2) + self.by[i].powi(2) + self.bz[i].powi(2);
            curl += ((self.ez[k] - self.ez[i]) / dx).powi(2) + ((self.ey[k] - self.ey[i]) / dx).powi(2);
        }
        0.5 * dx * sq - grid.dt * grid.dt / 8.0 * dx * curl
    }

    /// Maximum field strength `K` over nodes and half cells.
    pub fn max_strength(&self, grid: &GridSpec) -> f64 {
        (0..grid.nx)
            .flat_map(|i| [self.sample(grid, grid.node(i)), self.sample(grid, grid.half_cell(i))])
            .map(|s| s.strength())
            .fold(0.0, f64::max)
    }
}

/// Interpolates the field at `x` (wrapped into the domain).
pub fn sample_field(state: &FieldState, grid: &GridSpec, x: f64) -> FieldSample {
    state.sample(grid, x)
}

/// One field step with given sources: `j` at the half step, `rho` at the new level.
pub fn maxwell_step(state: &FieldState, sources: &SourceArrays, grid: &GridSpec) -> Result<FieldState> {
    grid.validate()?;
    let mut next = state.clone();
    next.half_advance_b(grid);
    next.advance_e(sources, grid);
    next.half_advance_b(grid);
    next.time += grid.dt;
    Ok(next)
}

/// Max-norm of the discrete `dEx/dx - (rho - mean(rho))` on nodes.
pub fn gauss_residual(state: &FieldState, rho: &[f64], grid: &GridSpec) -> f64 {
    let n = grid.nx;
    let mean = rho.iter().sum::<f64>() / n as f64;
    (0..n)
        .map(|i| {
            let l = (i + n - 1) % n;
            ((state.ex[i] - state.ex[l]) / grid.dx() - (rho[i] - mean)).abs()
        })
        .fold(0.0, f64::max)
}

/// Max-norm of `(rho_new - rho_old)/dt + d(jx)/dx` with a centred node difference.
pub fn continuity_residual(rho_old: &[f64], rho_new: &[f64], jx_mid: &[f64], grid: &GridSpec) -> f64 {
    let n = grid.nx;
    (0..n)
        .map(|i| {
            let (l, r) = ((i + n - 1) % n, (i + 1) % n);
            ((rho_new[i] - rho_old[i]) / grid.dt + (jx_mid[r] - jx_mid[l]) / (2.0 * grid.dx())).abs()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn particle(x: f64, p: Vec3, w: f64) -> MacroParticle {
        MacroParticle {
            x,
            p,
            log_f: 0.0,
            weight: w,
        }
    }

    fn grid() -> GridSpec {
        GridSpec::new(2.0 * PI, 32, 0.1).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(1.0, 4, 0.01).is_err());
        assert!(GridSpec::new(1.0, 10, 0.2).is_err());
        assert!(GridSpec::new(1.0, 10, 0.1).is_ok());
    }

    #[test]
    fn deposit_at_node_and_mid_cell() {
        let g = grid();
        let dx = g.dx();
        let s = deposit(&[particle(3.0 * dx, Vec3::zeros(), 2.0)], &g).unwrap();
        assert!((s.rho[3] - 2.0 / dx).abs() < 1e-12);
        assert_eq!(s.rho.iter().filter(|&&r| r != 0.0).count(), 1);

        let s = deposit(&[particle(5.5 * dx, Vec3::new(1.0, 0.0, 0.0), 2.0)], &g).unwrap();
        assert!((s.rho[5] - 1.0 / dx).abs() < 1e-12);
        assert!((s.rho[6] - 1.0 / dx).abs() < 1e-12);
        let v = velocity(&Vec3::new(1.0, 0.0, 0.0)).x;
        assert!((s.jx[5] - v / dx).abs() < 1e-12);
    }

    #[test]
    fn deposit_wraps_last_cell() {
        let g = grid();
        let s = deposit(&[particle(g.length - 0.25 * g.dx(), Vec3::zeros(), 1.0)], &g).unwrap();
        assert!((s.rho[g.nx - 1] - 0.25 / g.dx()).abs() < 1e-12);
        assert!((s.rho[0] - 0.75 / g.dx()).abs() < 1e-12);
    }

    #[test]
    fn deposit_rejects_nonfinite() {
        assert!(deposit(&[particle(f64::NAN, Vec3::zeros(), 1.0)], &grid()).is_err());
    }

    #[test]
    fn uniform_random_particles_deposit_flat_density() {
        use rand::{Rng, SeedableRng};
        let g = grid();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let w = g.length / n as f64;
        let parts: Vec<_> = (0..n)
            .map(|_| particle(rng.random_range(0.0..g.length), Vec3::zeros(), w))
            .collect();
        let s = deposit(&parts, &g).unwrap();
        assert!((s.total_charge(&g) - g.length).abs() < 1e-10);
        // per node: sum of n Bernoulli-like shape weights; variance <= n p (2/3) w^2 / dx^2
        let per_node = n as f64 / g.nx as f64;
        let sigma = (per_node * 2.0 / 3.0).sqrt() * w / g.dx();
        for &r in &s.rho {
            assert!((r - 1.0).abs() < 4.0 * sigma, "rho = {r}, sigma = {sigma}");
        }
    }

    #[test]
    fn interpolation_examples() {
        let g = grid();
        let mut f = FieldState::zeros(g.nx);
        for i in 0..g.nx {
            f.ey[i] = i as f64;
            f.bz[i] = 10.0 * i as f64;
        }
        let s = sample_field(&f, &g, g.node(4));
        assert_eq!(s.e.y, 4.0);
        let s = sample_field(&f, &g, 0.5 * (g.node(4) + g.node(5)));
        assert!((s.e.y - 4.5).abs() < 1e-12);
        let s = sample_field(&f, &g, g.half_cell(7));
        assert!((s.b.z - 70.0).abs() < 1e-12);
    }

    #[test]
    fn interpolation_second_order() {
        let err = |nx: usize| {
            let g = GridSpec::new(2.0 * PI, nx, 0.01).unwrap();
            let mut f = FieldState::zeros(nx);
            for i in 0..nx {
                f.ey[i] = g.node(i).sin();
            }
            (0..1000)
                .map(|k| {
                    let x = k as f64 * g.length / 1000.0 + 0.0123;
                    (sample_field(&f, &g, x).e.y - x.sin()).abs()
                })
                .fold(0.0, f64::max)
        };
        let order = (err(32) / err(64)).log2();
        assert!(order > 1.9, "order {order}");
    }

    #[test]
    fn zero_fields_stay_zero() {
        let g = grid();
        let f = FieldState::zeros(g.nx);
        let next = maxwell_step(&f, &SourceArrays::zeros(g.nx), &g).unwrap();
        assert_eq!(next.ey, f.ey);
        assert_eq!(next.bz, f.bz);
        assert!((next.time - g.dt).abs() < 1e-15);
    }

    #[test]
    fn static_charge_keeps_ex() {
        let g = grid();
        let mut src = SourceArrays::zeros(g.nx);
        for i in 0..g.nx {
            src.rho[i] = 1.0 + 0.3 * g.node(i).cos();
        }
        let mut f = FieldState::zeros(g.nx);
        f.solve_gauss(&src.rho, &g);
        let first = f.ex.clone();
        for _ in 0..20 {
            f = maxwell_step(&f, &src, &g).unwrap();
            assert!(gauss_residual(&f, &src.rho, &g) <= 1e-10);
        }
        for (a, b) in f.ex.iter().zip(&first) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn corrupted_ex_shows_in_residual() {
        let g = grid();
        let rho: Vec<f64> = (0..g.nx).map(|i| (g.node(i)).sin() + 2.0).collect();
        let mut f = FieldState::zeros(g.nx);
        f.solve_gauss(&rho, &g);
        assert!(gauss_residual(&f, &rho, &g) < 1e-12);
        let delta = 1e-3;
        f.ex[9] += delta;
        let r = gauss_residual(&f, &rho, &g);
        assert!((r - delta / g.dx()).abs() < 1e-9, "{r}");
    }

    #[test]
    fn vacuum_energy_conserved() {
        let g = GridSpec::new(2.0 * PI, 64, 0.05).unwrap();
        let mut f = FieldState::zeros(g.nx);
        for i in 0..g.nx {
            f.ey[i] = (2.0 * g.node(i)).cos();
            f.ez[i] = 0.5 * (3.0 * g.node(i)).sin();
        }
        let src = SourceArrays::zeros(g.nx);
        let e0 = f.transverse_energy(&g);
        for _ in 0..10_000 {
            f = maxwell_step(&f, &src, &g).unwrap();
        }
        let drift = (f.transverse_energy(&g) - e0).abs() / e0;
        assert!(drift <= 1e-8, "drift {drift}");
    }

    #[test]
    fn shift_equivariance() {
        let g = grid();
        let mut f = FieldState::zeros(g.nx);
        let mut src = SourceArrays::zeros(g.nx);
        for i in 0..g.nx {
            let x = g.node(i);
            f.ey[i] = (x + 0.3).sin();
            f.ez[i] = (2.0 * x).cos() * 0.1;
            f.by[i] = (x * 3.0).sin() * 0.2;
            f.bz[i] = x.cos();
            src.rho[i] = 1.0 + 0.2 * (x + 1.0).sin();
            src.jy[i] = 0.1 * x.cos();
            src.jz[i] = 0.05 * (2.0 * x).sin();
        }
        let rot = |v: &Vec<f64>| {
            let mut r = v.clone();
            r.rotate_right(1);
            r
        };
        let shifted_f = FieldState {
            ex: rot(&f.ex),
            ey: rot(&f.ey),
            ez: rot(&f.ez),
            by: rot(&f.by),
            bz: rot(&f.bz),
            ..f.clone()
        };
        let shifted_src = SourceArrays {
            rho: rot(&src.rho),
            jx: rot(&src.jx),
            jy: rot(&src.jy),
            jz: rot(&src.jz),
        };
        let a = maxwell_step(&f, &src, &g).unwrap();
        let b = maxwell_step(&shifted_f, &shifted_src, &g).unwrap();
        assert_eq!(rot(&a.ey), b.ey);
        assert_eq!(rot(&a.bz), b.bz);
        assert_eq!(rot(&a.by), b.by);
        for (x, y) in rot(&a.ex).iter().zip(&b.ex) {
            assert!((x - y).abs() < 1e-14);
        }
    }
}
