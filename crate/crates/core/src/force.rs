//! Lorentz force, radiation reaction force and the quantities that control
//! the phase-space flow: the momentum divergence and the radial sign condition.
//!
//! The reaction force is `F_R = -chi(|p|) E - M p K` with `K = sqrt(|E|^2 + |B|^2)`.
//! `chi` is a quintic smoothstep cutoff equal to one below `R0` and zero above
//! `R1 = R0 + 1`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{direction, gamma, norm, root_sum_squares, velocity, Vec3};

/// Reaction-force constants `M`, `R0`, `R1 = R0 + 1` and the envelope rate `A`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceParams {
    pub m: f64,
    pub r0: f64,
    pub r1: f64,
    pub a: f64,
}

impl Default for ForceParams {
    fn default() -> Self {
        ForceParams {
            m: 3.0,
            r0: 1.0,
            r1: 2.0,
            a: 5.0,
        }
    }
}

/// Smallest envelope rate `A = (3 + 2 R0) / ((M - 2) R0^2)` for which the
/// weighted density decays along characteristics.
pub fn minimal_admissible_a(m: f64, r0: f64) -> f64 {
    (3.0 + 2.0 * r0) / ((m - 2.0) * r0 * r0)
}

impl ForceParams {
    /// Validated constructor: `M > 2`, `R0 >= 1/2` and `A` at or above
    /// [`minimal_admissible_a`].
    pub fn new(m: f64, r0: f64, a: f64) -> Result<Self> {
        let params = Self::with_unchecked_rate(m, r0, a)?;
        let a_min = minimal_admissible_a(m, r0);
        if !(a >= a_min) {
            return Err(Error::InvalidParams(format!(
                "A = {a} violates A >= (3 + 2 R0)/((M - 2) R0^2); minimal admissible A = {a_min}"
            )));
        }
        Ok(params)
    }

    /// Validates `M` and `R0` but accepts any finite positive `A`. Used to build
    /// deliberately inadmissible configurations for counterexample runs.
    pub fn with_unchecked_rate(m: f64, r0: f64, a: f64) -> Result<Self> {
        if !(m > 2.0) || !m.is_finite() {
            return Err(Error::InvalidParams(format!("M = {m} violates M>2")));
        }
        if !(r0 >= 0.5) || !r0.is_finite() {
            return Err(Error::InvalidParams(format!(
                "R0 = {r0} violates R0 >= 1/2 (needed for 1 - chi(r) <= 2r)"
            )));
        }
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::InvalidParams(format!("A = {a} must be finite and positive")));
        }
        Ok(ForceParams {
            m,
            r0,
            r1: r0 + 1.0,
            a,
        })
    }

    pub fn is_admissible(&self) -> bool {
        self.a >= minimal_admissible_a(self.m, self.r0)
    }

    /// Cutoff `chi(r)`; negative radii are a domain error.
    pub fn chi(&self, r: f64) -> Result<f64> {
        check_radius(r)?;
        Ok(self.cutoff(r))
    }

    /// Derivative `chi'(r)`; negative radii are a domain error.
    pub fn chi_prime(&self, r: f64) -> Result<f64> {
        check_radius(r)?;
        Ok(self.cutoff_prime(r))
    }

    #[inline]
    pub(crate) fn cutoff(&self, r: f64) -> f64 {
        if r <= self.r0 {
            1.0
        } else if r >= self.r1 {
            0.0
        } else {
            let u = (r - self.r0) / (self.r1 - self.r0);
            1.0 - u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
        }
    }

    #[inline]
    pub(crate) fn cutoff_prime(&self, r: f64) -> f64 {
        if r <= self.r0 || r >= self.r1 {
            0.0
        } else {
            let w = self.r1 - self.r0;
            let u = (r - self.r0) / w;
            -30.0 * u * u * (1.0 - u) * (1.0 - u) / w
        }
    }
}

fn check_radius(r: f64) -> Result<()> {
    if r >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("cutoff evaluated at negative radius {r}")))
    }
}

/// Electric and magnetic field at one space-time point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldSample {
    pub e: Vec3,
    pub b: Vec3,
}

impl FieldSample {
    pub fn new(e: Vec3, b: Vec3) -> Self {
        FieldSample { e, b }
    }

    /// Field strength `K = sqrt(|E|^2 + |B|^2)`.
    #[inline]
    pub fn strength(&self) -> f64 {
        root_sum_squares([self.e.x, self.e.y, self.e.z, self.b.x, self.b.y, self.b.z])
    }
}

/// `E + v x B`.
#[inline]
pub fn lorentz_force(fs: &FieldSample, p: &Vec3) -> Vec3 {
    fs.e + velocity(p).cross(&fs.b)
}

/// `-chi(|p|) E - M p K`.
#[inline]
pub fn radiation_force(fs: &FieldSample, p: &Vec3, params: &ForceParams) -> Vec3 {
    let chi = params.cutoff(norm(p));
    -chi * fs.e - params.m * fs.strength() * p
}

/// Force, momentum divergence and their shared ingredients at one phase
/// point, computed once for the characteristic right-hand side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct FlowTerms {
    pub force: Vec3,
    pub divergence: f64,
    /// `K`.
    pub strength: f64,
    /// `chi'(|p|)`.
    pub cutoff_slope: f64,
}

#[inline]
pub(crate) fn flow_terms(fs: &FieldSample, p: &Vec3, params: &ForceParams) -> FlowTerms {
    let r = norm(p);
    let k = fs.strength();
    let slope = params.cutoff_prime(r);
    // The electric terms are combined before summing: below R0 they cancel
    // exactly, and adding them separately would leave rounding noise of size
    // eps |E| on a force of size M |p| K.
    let force = (1.0 - params.cutoff(r)) * fs.e + velocity(p).cross(&fs.b) - params.m * k * p;
    let radial_e = if r > 0.0 { fs.e.dot(p) / r } else { 0.0 };
    FlowTerms {
        force,
        divergence: -3.0 * params.m * k - slope * radial_e,
        strength: k,
        cutoff_slope: slope,
    }
}

/// Lorentz plus radiation reaction force, `(1 - chi) E + v x B - M p K`.
/// Vanishes identically at `p = 0`.
#[inline]
pub fn total_force(fs: &FieldSample, p: &Vec3, params: &ForceParams) -> Vec3 {
    flow_terms(fs, p, params).force
}

/// `div_p F = -3 M K - chi'(|p|) E . p_hat`; the Lorentz part is divergence free.
#[inline]
pub fn div_p_force(fs: &FieldSample, p: &Vec3, params: &ForceParams) -> f64 {
    flow_terms(fs, p, params).divergence
}

/// Left side of the sign condition `(3/|p| + A) F . p_hat - div_p F <= 0`.
pub fn cond_a_residual(fs: &FieldSample, p: &Vec3, params: &ForceParams) -> Result<f64> {
    let r = norm(p);
    let u = direction(p)
        .ok_or_else(|| Error::Domain("sign condition is singular at p = 0".into()))?;
    // F . p_hat in closed form: (v x B) . p_hat vanishes and the E terms
    // combine to (1 - chi) E . p_hat, so nothing cancels near p = 0 where
    // the 3/|p| factor would amplify rounding.
    let radial = (1.0 - params.cutoff(r)) * fs.e.dot(&u) - params.m * r * fs.strength();
    Ok((3.0 / r + params.a) * radial - div_p_force(fs, p, params))
}

/// Bound on the radial force: `F . p_hat <= -K (M|p| - (1 - chi(|p|)))`.
pub fn radial_force_bound(fs: &FieldSample, p: &Vec3, params: &ForceParams) -> f64 {
    let r = norm(p);
    -fs.strength() * (params.m * r - (1.0 - params.cutoff(r)))
}

/// Physical reaction forces used for comparison: Landau-Lifshitz and inverse
/// Compton. Both grow quadratically with the fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AltForceKind {
    LandauLifshitz,
    InverseCompton,
}

impl FromStr for AltForceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ll" | "landau-lifshitz" => Ok(AltForceKind::LandauLifshitz),
            "ic" | "inverse-compton" => Ok(AltForceKind::InverseCompton),
            other => Err(Error::InvalidParams(format!("unknown reaction force kind {other:?}"))),
        }
    }
}

impl fmt::Display for AltForceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AltForceKind::LandauLifshitz => "LL",
            AltForceKind::InverseCompton => "IC",
        })
    }
}

/// Reaction intensity `h > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AltForceParams {
    h: f64,
}

impl AltForceParams {
    pub fn new(h: f64) -> Result<Self> {
        if h > 0.0 && h.is_finite() {
            Ok(AltForceParams { h })
        } else {
            Err(Error::InvalidParams(format!("reaction intensity h = {h} must be finite and positive")))
        }
    }

    pub fn h(&self) -> f64 {
        self.h
    }
}

/// `F_LL = -h v g^2 (|F_L|^2 - (v.E)^2)` or `F_IC = -h v g^2 K^2`.
pub fn alt_force(kind: AltForceKind, fs: &FieldSample, p: &Vec3, h: AltForceParams) -> Vec3 {
    let g = gamma(p);
    let v = p / g;
    let magnitude = match kind {
        AltForceKind::LandauLifshitz => {
            let fl = lorentz_force(fs, p);
            let ve = v.dot(&fs.e);
            fl.norm_squared() - ve * ve
        }
        AltForceKind::InverseCompton => fs.e.norm_squared() + fs.b.norm_squared(),
    };
    -h.h * g * g * magnitude * v
}
