//! The retarded integral
//! `I[g](x, t) = int_{|x - y| <= t} g(y, t - |x - y|) / |x - y| dy`,
//! evaluated in spherical shells around `x`:
//! `I = int_0^t rho drho int_{S^2} g(x + rho omega, t - rho) dS(omega)`.
//! `I / (4 pi)` solves `u_tt - Laplace u = g` with zero initial data.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kinematics::Vec3;

/// Node counts: Gauss-Legendre in the radius and in `cos(theta)`, the
/// periodic trapezoid rule in the azimuth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ShellQuadrature {
    pub radial: usize,
    pub polar: usize,
    pub azimuthal: usize,
}

impl ShellQuadrature {
    pub const BASELINE: ShellQuadrature = ShellQuadrature {
        radial: 12,
        polar: 12,
        azimuthal: 24,
    };

    pub fn doubled(&self) -> Self {
        ShellQuadrature {
            radial: 2 * self.radial,
            polar: 2 * self.polar,
            azimuthal: 2 * self.azimuthal,
        }
    }

    fn check(&self) -> Result<()> {
        if self.radial == 0 || self.polar == 0 || self.azimuthal == 0 {
            return Err(Error::InvalidParams(format!("quadrature node counts must be positive, got {self:?}")));
        }
        Ok(())
    }
}

fn legendre(n: usize) -> GaussLegendre {
    GaussLegendre::new(NonZeroUsize::new(n).expect("node count checked positive"))
}

/// Shell quadrature of the retarded integral of `g` at `(x, t)`.
pub fn retarded_integral(g: &(impl Fn(&Vec3, f64) -> f64 + Sync), x: &Vec3, t: f64, quad: &ShellQuadrature) -> Result<f64> {
    quad.check()?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("retarded integral needs t >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let radial = legendre(quad.radial);
    let polar = legendre(quad.polar);
    let dphi = 2.0 * PI / quad.azimuthal as f64;
    let directions: Vec<(Vec3, f64)> = polar
        .as_node_weight_pairs()
        .iter()
        .flat_map(|&(mu, wmu)| {
            let sin = (1.0 - mu * mu).max(0.0).sqrt();
            (0..quad.azimuthal).map(move |j| {
                let phi = (j as f64 + 0.5) * dphi;
                (Vec3::new(sin * phi.cos(), sin * phi.sin(), mu), wmu * dphi)
            })
        })
        .collect();
    let shells: Vec<f64> = radial
        .as_node_weight_pairs()
        .par_iter()
        .map(|&(z, w)| {
            let rho = 0.5 * t * (z + 1.0);
            let sphere: f64 = directions.iter().map(|(omega, wd)| wd * g(&(x + omega * rho), t - rho)).sum();
            0.5 * t * w * rho * sphere
        })
        .collect();
    let total: f64 = shells.iter().sum();
    if !total.is_finite() {
        return Err(Error::Domain(format!("source is not finite inside the backward cone of t = {t}")));
    }
    Ok(total)
}

/// Result of a refinement sequence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinedIntegral {
    pub value: f64,
    pub levels: Vec<(ShellQuadrature, f64)>,
}

/// Doubles all node counts from `start` until two consecutive levels agree
/// to `rel_tol` (relative, with an absolute floor of `rel_tol`). Reports the
/// last two levels if `max_levels` is exhausted.
pub fn retarded_integral_refined(
    g: &(impl Fn(&Vec3, f64) -> f64 + Sync),
    x: &Vec3,
    t: f64,
    start: ShellQuadrature,
    rel_tol: f64,
    max_levels: usize,
) -> Result<RefinedIntegral> {
    if max_levels < 2 {
        return Err(Error::InvalidParams("refinement needs at least two levels".into()));
    }
    let mut quad = start;
    let mut levels = vec![(quad, retarded_integral(g, x, t, &quad)?)];
    for _ in 1..max_levels {
        quad = quad.doubled();
        let value = retarded_integral(g, x, t, &quad)?;
        let previous = levels.last().expect("nonempty").1;
        levels.push((quad, value));
        if (value - previous).abs() <= rel_tol * value.abs().max(1.0) {
            return Ok(RefinedIntegral { value, levels });
        }
    }
    let n = levels.len();
    Err(Error::Quadrature {
        previous: levels[n - 2].1,
        last: levels[n - 1].1,
    })
}

/// Retarded integral of a source `g(y, s) = radial(|y - x|, s)` that is
/// spherically symmetric about the evaluation point:
/// `4 pi int_0^t rho radial(rho, t - rho) drho`, by double-exponential
/// quadrature.
pub fn radial_retarded_integral(radial: impl Fn(f64, f64) -> f64, t: f64) -> Result<f64> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("retarded integral needs t >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let f = |rho: f64| rho * radial(rho, t - rho);
    let fine = quadrature::double_exponential::integrate(f, 0.0, t, 1e-14);
    if !fine.integral.is_finite() || fine.error_estimate > 1e-10 * fine.integral.abs().max(1e-300) + 1e-14 {
        let coarse = quadrature::double_exponential::integrate(f, 0.0, t, 1e-8);
        return Err(Error::Quadrature {
            previous: coarse.integral,
            last: fine.integral,
        });
    }
    Ok(4.0 * PI * fine.integral)
}

/// Manufactured solution `u(y, s) = s^2 phi(y)` with the compactly supported
/// bump `phi = (1 - |y|^2)^k` on the unit ball. Its initial data vanish, so
/// `u = I[g] / (4 pi)` for `g = u_ss - Laplace u = 2 phi - s^2 Laplace phi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BumpSolution {
    pub power: i32,
}

impl Default for BumpSolution {
    fn default() -> Self {
        BumpSolution { power: 4 }
    }
}

impl BumpSolution {
    fn phi_and_laplacian(&self, y: &Vec3) -> (f64, f64) {
        let r2 = y.norm_squared();
        if r2 >= 1.0 {
            return (0.0, 0.0);
        }
        let k = self.power as f64;
        let w = 1.0 - r2;
        let phi = w.powi(self.power);
        let lap = 4.0 * k * (k - 1.0) * r2 * w.powi(self.power - 2) - 6.0 * k * w.powi(self.power - 1);
        (phi, lap)
    }

    pub fn value(&self, y: &Vec3, s: f64) -> f64 {
        s * s * self.phi_and_laplacian(y).0
    }

    pub fn source(&self, y: &Vec3, s: f64) -> f64 {
        let (phi, lap) = self.phi_and_laplacian(y);
        2.0 * phi - s * s * lap
    }
}

/// Max-norm error of `I[g] / (4 pi)` against the manufactured solution over
/// a fixed set of evaluation points, relative to the solution's max there.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManufacturedLevel {
    pub quadrature: ShellQuadrature,
    pub max_error: f64,
    pub relative_error: f64,
}

/// Evaluation points: a small lattice in the support at times `0.5, 1, 1.5`.
pub fn manufactured_points() -> Vec<(Vec3, f64)> {
    let mut pts = Vec::new();
    for &t in &[0.5, 1.0, 1.5] {
        for &a in &[-0.5, 0.0, 0.5] {
            for &b in &[-0.5, 0.0, 0.5] {
                for &c in &[-0.25, 0.25] {
                    pts.push((Vec3::new(a, b, c), t));
                }
            }
        }
    }
    pts
}

pub fn manufactured_study(bump: &BumpSolution, start: ShellQuadrature, levels: usize) -> Result<Vec<ManufacturedLevel>> {
    let pts = manufactured_points();
    let scale = pts.iter().map(|(y, t)| bump.value(y, *t).abs()).fold(0.0, f64::max);
    let g = |y: &Vec3, s: f64| bump.source(y, s);
    let mut quad = start;
    let mut out = Vec::with_capacity(levels);
    for _ in 0..levels {
        let mut max_error = 0.0f64;
        for (y, t) in &pts {
            let approx = retarded_integral(&g, y, *t, &quad)? / (4.0 * PI);
            max_error = max_error.max((approx - bump.value(y, *t)).abs());
        }
        out.push(ManufacturedLevel {
            quadrature: quad,
            max_error,
            relative_error: max_error / scale,
        });
        quad = quad.doubled();
    }
    Ok(out)
}

/// Spherically symmetric test source about a point, `G(rho, s)`.
pub fn symmetric_source(rho: f64, s: f64) -> f64 {
    (-(rho * rho)).exp() * (1.0 + 0.5 * s) * (2.0 * rho + s).cos()
}
