//! Prescribed smooth space-time fields for characteristic tracing.
//!
//! Every catalog entry except the uniform ones is a superposition of vacuum
//! plane waves, so the fields solve the source-free Maxwell equations exactly.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::force::FieldSample;
use crate::kinematics::{Mat3, Vec3};

/// Anything that can be sampled as an electromagnetic field at `(x, t)`.
pub trait FieldSource: Sync {
    fn sample(&self, x: &Vec3, t: f64) -> FieldSample;
}

impl<F> FieldSource for F
where
    F: Fn(&Vec3, f64) -> FieldSample + Sync,
{
    fn sample(&self, x: &Vec3, t: f64) -> FieldSample {
        self(x, t)
    }
}

/// Spatial Jacobians `dE_i/dx_j` and `dB_i/dx_j` at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldGradient {
    pub de: Mat3,
    pub db: Mat3,
}

/// Linearly polarized vacuum plane wave `E = a e cos(k.x - |k| t + phase)`, `B = k_hat x E`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneWave {
    pub amplitude: f64,
    pub k: [f64; 3],
    pub polarization: [f64; 3],
    pub phase: f64,
}

impl PlaneWave {
    fn wave_vector(&self) -> Vec3 {
        Vec3::from(self.k)
    }

    #[inline]
    fn phase_at(&self, x: &Vec3, t: f64) -> f64 {
        let k = self.wave_vector();
        k.dot(x) - k.norm() * t + self.phase
    }

    #[inline]
    fn sample(&self, x: &Vec3, t: f64) -> FieldSample {
        let k = self.wave_vector();
        let kn = k.norm();
        let e = Vec3::from(self.polarization) * (self.amplitude * (k.dot(x) - kn * t + self.phase).cos());
        FieldSample::new(e, k.cross(&e) / kn)
    }

    fn gradient(&self, x: &Vec3, t: f64) -> FieldGradient {
        let k = self.wave_vector();
        let s = -self.amplitude * self.phase_at(x, t).sin();
        let pol = Vec3::from(self.polarization);
        let bpol = k.normalize().cross(&pol);
        FieldGradient {
            de: pol * k.transpose() * s,
            db: bpol * k.transpose() * s,
        }
    }
}

/// Wave packet `E = a e exp(-psi^2/w^2) cos(k0 psi)`, `psi = n.x - t`, `B = n x E`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPulse {
    pub amplitude: f64,
    pub direction: [f64; 3],
    pub polarization: [f64; 3],
    pub width: f64,
    pub carrier: f64,
}

impl GaussianPulse {
    fn profile(&self, psi: f64) -> (f64, f64) {
        let g = (-(psi * psi) / (self.width * self.width)).exp();
        let (s, c) = (self.carrier * psi).sin_cos();
        let value = g * c;
        let slope = g * (-2.0 * psi / (self.width * self.width) * c - self.carrier * s);
        (value, slope)
    }
}

/// Uniform background plus a few random vacuum plane waves. The background
/// magnetic field exceeds the summed wave amplitudes so `K > 0` everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomFourier {
    pub seed: u64,
    pub e0: [f64; 3],
    pub b0: [f64; 3],
    pub waves: Vec<PlaneWave>,
}

pub(crate) fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

impl RandomFourier {
    pub const MODES: usize = 3;

    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut waves = Vec::with_capacity(Self::MODES);
        let mut total = 0.0;
        for _ in 0..Self::MODES {
            let k = random_unit(&mut rng) * rng.random_range(0.5..2.0);
            let mut pol = random_unit(&mut rng);
            let khat = k.normalize();
            pol -= khat * pol.dot(&khat);
            let pol = pol.normalize();
            let amplitude = rng.random_range(0.1..0.5);
            total += amplitude;
            waves.push(PlaneWave {
                amplitude,
                k: k.into(),
                polarization: pol.into(),
                phase: rng.random_range(0.0..2.0 * PI),
            });
        }
        let b0 = random_unit(&mut rng) * (total + rng.random_range(0.2..1.0));
        let e0 = random_unit(&mut rng) * rng.random_range(0.0..1.0);
        RandomFourier {
            seed,
            e0: e0.into(),
            b0: b0.into(),
            waves,
        }
    }
}

/// Catalog identifiers accepted on the command line and in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    UniformB,
    UniformE,
    PlaneWave,
    GaussianPulse,
    RandomFourier,
}

impl FromStr for FieldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform-B" | "uniform-b" => Ok(FieldKind::UniformB),
            "uniform-E" | "uniform-e" => Ok(FieldKind::UniformE),
            "plane-wave" => Ok(FieldKind::PlaneWave),
            "gaussian-pulse" | "Gaussian-pulse" => Ok(FieldKind::GaussianPulse),
            "random-fourier" | "random-Fourier" => Ok(FieldKind::RandomFourier),
            other => Err(Error::InvalidParams(format!("unknown field kind {other:?}"))),
        }
    }
}

/// A concrete prescribed field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PrescribedField {
    UniformB { b: [f64; 3] },
    UniformE { e: [f64; 3] },
    PlaneWave(PlaneWave),
    GaussianPulse(GaussianPulse),
    RandomFourier(RandomFourier),
}

impl PrescribedField {
    /// Catalog entry with its standard parameters; `strength` scales the
    /// amplitude and `seed` only matters for the random entry.
    pub fn catalog(kind: FieldKind, strength: f64, seed: u64) -> Self {
        match kind {
            FieldKind::UniformB => PrescribedField::UniformB {
                b: [0.0, 0.0, strength],
            },
            FieldKind::UniformE => PrescribedField::UniformE {
                e: [strength, 0.0, 0.0],
            },
            FieldKind::PlaneWave => PrescribedField::PlaneWave(PlaneWave {
                amplitude: strength,
                k: [0.0, 0.0, 1.0],
                polarization: [1.0, 0.0, 0.0],
                phase: 0.0,
            }),
            FieldKind::GaussianPulse => PrescribedField::GaussianPulse(GaussianPulse {
                amplitude: strength,
                direction: [0.0, 0.0, 1.0],
                polarization: [1.0, 0.0, 0.0],
                width: 2.0,
                carrier: 2.0,
            }),
            FieldKind::RandomFourier => {
                let mut field = RandomFourier::new(seed);
                let scale = |a: [f64; 3]| (Vec3::from(a) * strength).into();
                field.e0 = scale(field.e0);
                field.b0 = scale(field.b0);
                for w in &mut field.waves {
                    w.amplitude *= strength;
                }
                PrescribedField::RandomFourier(field)
            }
        }
    }

    /// Spatial Jacobians of E and B, in closed form.
    pub fn gradient(&self, x: &Vec3, t: f64) -> FieldGradient {
        match self {
            PrescribedField::UniformB { .. } | PrescribedField::UniformE { .. } => FieldGradient {
                de: Mat3::zeros(),
                db: Mat3::zeros(),
            },
            PrescribedField::PlaneWave(w) => w.gradient(x, t),
            PrescribedField::GaussianPulse(g) => {
                let n = Vec3::from(g.direction).normalize();
                let pol = Vec3::from(g.polarization);
                let (_, slope) = g.profile(n.dot(x) - t);
                let de = pol * n.transpose() * (g.amplitude * slope);
                let db = n.cross(&pol) * n.transpose() * (g.amplitude * slope);
                FieldGradient { de, db }
            }
            PrescribedField::RandomFourier(r) => {
                r.waves.iter().fold(
                    FieldGradient {
                        de: Mat3::zeros(),
                        db: Mat3::zeros(),
                    },
                    |acc, w| {
                        let g = w.gradient(x, t);
                        FieldGradient {
                            de: acc.de + g.de,
                            db: acc.db + g.db,
                        }
                    },
                )
            }
        }
    }
}

impl FieldSource for PrescribedField {
    #[inline]
    fn sample(&self, x: &Vec3, t: f64) -> FieldSample {
        match self {
            PrescribedField::UniformB { b } => FieldSample::new(Vec3::zeros(), Vec3::from(*b)),
            PrescribedField::UniformE { e } => FieldSample::new(Vec3::from(*e), Vec3::zeros()),
            PrescribedField::PlaneWave(w) => w.sample(x, t),
            PrescribedField::GaussianPulse(g) => {
                let n = Vec3::from(g.direction).normalize();
                let (value, _) = g.profile(n.dot(x) - t);
                let e = Vec3::from(g.polarization) * (g.amplitude * value);
                FieldSample::new(e, n.cross(&e))
            }
            PrescribedField::RandomFourier(r) => {
                let mut fs = FieldSample::new(Vec3::from(r.e0), Vec3::from(r.b0));
                for w in &r.waves {
                    let s = w.sample(x, t);
                    fs.e += s.e;
                    fs.b += s.b;
                }
                fs
            }
        }
    }
}

impl fmt::Display for PrescribedField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrescribedField::UniformB { b } => write!(f, "uniform-B {b:?}"),
            PrescribedField::UniformE { e } => write!(f, "uniform-E {e:?}"),
            PrescribedField::PlaneWave(w) => write!(f, "plane-wave a={} k={:?}", w.amplitude, w.k),
            PrescribedField::GaussianPulse(g) => write!(f, "gaussian-pulse a={}", g.amplitude),
            PrescribedField::RandomFourier(r) => write!(f, "random-fourier seed={}", r.seed),
        }
    }
}
