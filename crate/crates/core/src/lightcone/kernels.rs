//! Explicit momentum kernels of the light-cone field representation and a
//! sampling certifier for their bounds.
//!
//! Every kernel carries the denominator `1 + omega . v`, which is evaluated as
//! `(1 - |v|) + |v| delta` with `delta = 1 + omega . p_hat = |omega + p_hat|^2 / 2`
//! so that it keeps full relative accuracy for `omega` near `-p_hat`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use twofloat::TwoFloat;

use crate::error::{Error, Result};
use crate::kinematics::{dv_dp, gamma, norm, one_minus_speed, velocity, Mat3, Vec3};

/// A direction `omega` on the unit sphere and a momentum `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelSample {
    pub omega: Vec3,
    pub p: Vec3,
}

impl KernelSample {
    /// Rejects `omega` whose norm differs from 1 by more than `1e-14`.
    pub fn new(omega: Vec3, p: Vec3) -> Result<Self> {
        if !((norm(&omega) - 1.0).abs() <= 1e-14) || !p.iter().all(|c| c.is_finite()) {
            return Err(Error::Domain(format!(
                "kernel sample needs a unit omega and finite p, got |omega| = {}",
                norm(&omega)
            )));
        }
        Ok(KernelSample { omega, p })
    }
}

/// Shared quantities of one sample.
struct Parts {
    g: f64,
    v: Vec3,
    /// `1 + omega . v`
    d: f64,
}

fn parts(s: &KernelSample) -> Parts {
    let g = gamma(&s.p);
    let v = velocity(&s.p);
    let r = norm(&s.p);
    let d = if r == 0.0 {
        1.0
    } else {
        let delta = 0.5 * (s.omega + s.p / r).norm_squared();
        one_minus_speed(&s.p) + (r / g) * delta
    };
    Parts { g, v, d }
}

/// `(omega + v) / (1 + omega . v)`.
pub fn symbol_es(s: &KernelSample) -> Vec3 {
    let q = parts(s);
    (s.omega + q.v) / q.d
}

/// `d/dp_j [1 / (1 + omega . v)] = v_j / ([p] d) - (omega_j + v_j) / ([p] d^2)`.
pub fn inverse_denominator_grad(s: &KernelSample) -> Vec3 {
    let q = parts(s);
    q.v / (q.g * q.d) - (s.omega + q.v) / (q.g * q.d * q.d)
}

/// `d/dp_j [(omega_i + v_i) / (1 + omega . v)]` in closed form,
/// `(delta_ij + v_j omega_i) / ([p] d) - (omega_i + v_i)(omega_j + v_j) / ([p] d^2)`.
pub fn kernel_es_grad(s: &KernelSample) -> Mat3 {
    let q = parts(s);
    let w = s.omega + q.v;
    (Mat3::identity() + s.omega * q.v.transpose()) / (q.g * q.d) - w * w.transpose() / (q.g * q.d * q.d)
}

/// `(omega + v) / ([p]^2 (1 + omega . v)^2)`.
pub fn kernel_et(s: &KernelSample) -> Vec3 {
    let q = parts(s);
    (s.omega + q.v) / (q.g * q.g * q.d * q.d)
}

/// `(omega x v) / (1 + omega . v)`.
pub fn symbol_bs(s: &KernelSample) -> Vec3 {
    let q = parts(s);
    s.omega.cross(&q.v) / q.d
}

/// `d/dp_j [(omega x v)_i / (1 + omega . v)]`; column `j` is the `p_j` derivative.
pub fn kernel_bs_grad(s: &KernelSample) -> Mat3 {
    let q = parts(s);
    let jac = dv_dp(&s.p);
    let inv_grad = inverse_denominator_grad(s);
    let cross = s.omega.cross(&q.v);
    let mut out = Mat3::zeros();
    for j in 0..3 {
        let col = s.omega.cross(&jac.column(j).into_owned()) / q.d + cross * inv_grad[j];
        out.set_column(j, &col);
    }
    out
}

/// `(omega x v) / ([p]^2 (1 + omega . v)^2)`.
pub fn kernel_bt(s: &KernelSample) -> Vec3 {
    let q = parts(s);
    s.omega.cross(&q.v) / (q.g * q.g * q.d * q.d)
}

/// Relative defect of `|omega + v|^2 / (1 + omega . v)^2 = N / D` with
/// `N = (1-|v|)^2 + 2|v| delta`, `D = (1-|v|)^2 + |v|^2 delta^2 + 2(1-|v|)|v| delta`.
///
/// Both sides are evaluated in double-double arithmetic after renormalizing
/// `omega`: the left side is ill conditioned near `omega = -v_hat` at large
/// `|p|`, so the identity is only testable with the extra precision.
pub fn cosine_identity_defect(s: &KernelSample) -> f64 {
    let tf = TwoFloat::from;
    let div = dd_div;
    let w = [tf(s.omega.x), tf(s.omega.y), tf(s.omega.z)];
    let wn = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    let w = w.map(|c| div(c, wn));
    let p = [tf(s.p.x), tf(s.p.y), tf(s.p.z)];
    let r2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
    let one = tf(1.0);
    let g = (one + r2).sqrt();
    let v = p.map(|c| div(c, g));
    let lhs_num = (0..3).map(|i| (w[i] + v[i]) * (w[i] + v[i])).fold(tf(0.0), |a, b| a + b);
    let dot = (0..3).map(|i| w[i] * v[i]).fold(tf(0.0), |a, b| a + b);
    let lhs = div(lhs_num, (one + dot) * (one + dot));
    let rhs = if s.p == Vec3::zeros() {
        one
    } else {
        let r = r2.sqrt();
        let speed = div(r, g);
        let om = div(one, g * (g + r));
        let cos = (0..3).map(|i| div(w[i] * p[i], r)).fold(tf(0.0), |a, b| a + b);
        let delta = one + cos;
        let num = om * om + tf(2.0) * speed * delta;
        let den = om * om + speed * speed * delta * delta + tf(2.0) * om * speed * delta;
        div(num, den)
    };
    f64::from(div(lhs - rhs, rhs)).abs()
}

/// Double-double quotient. The division of `twofloat` is only accurate to
/// about `1e-16` relative, so two Newton corrections restore full precision.
fn dd_div(a: TwoFloat, b: TwoFloat) -> TwoFloat {
    let mut q = TwoFloat::from(a.hi() / b.hi());
    for _ in 0..2 {
        let r = a - q * b;
        q += TwoFloat::from(r.hi() / b.hi());
    }
    q
}

/// Maximum ratio of one inequality over the sample set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundEntry {
    pub name: String,
    /// The inequality written out.
    pub anchor: String,
    pub max_ratio: f64,
    pub argmax: KernelSample,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub seed: u64,
    pub pmax: f64,
    pub samples: u64,
    pub adversarial_samples: u64,
    pub entries: Vec<BoundEntry>,
    /// Largest relative defect of the `delta` identity.
    pub identity_defect: f64,
    pub identity_argmax: KernelSample,
}

impl BoundReport {
    pub fn worst_ratio(&self) -> f64 {
        self.entries.iter().map(|e| e.max_ratio).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable") + "\n"
    }
}

/// Names and written-out forms of the certified inequalities, in report order.
pub const BOUNDS: [(&str, &str); 7] = [
    ("symbol_norm", "|omega + v| / (1 + omega.v) <= sqrt(2) [p]"),
    ("inverse_denominator", "0 <= 1 / (1 + omega.v) <= 2 [p]^2"),
    ("symbol_outer_product", "|(omega_i + v_i)(omega_j + v_j)| / ([p] (1 + omega.v)^2) <= 2 [p]"),
    ("symbol_gradient", "|d/dp_j ((omega_i + v_i) / (1 + omega.v))| <= 6 [p]"),
    ("magnetic_symbol_gradient", "|grad_p ((omega x v) / (1 + omega.v))| <= 10 [p]"),
    ("magnetic_kernel", "|omega x v| / ([p]^2 (1 + omega.v)^2) <= 2 sqrt(2) [p]"),
    ("electric_kernel", "|omega + v| / ([p]^2 (1 + omega.v)^2) <= 2 sqrt(2) [p]"),
];

/// Anchor of the identity check.
pub const IDENTITY_ANCHOR: &str =
    "|omega + v|^2 / (1 + omega.v)^2 = ((1-|v|)^2 + 2|v| delta) / ((1-|v|)^2 + |v|^2 delta^2 + 2(1-|v|)|v| delta), delta = 1 + cos theta";

/// Ratios value / bound for all entries of [`BOUNDS`].
pub fn bound_ratios(s: &KernelSample) -> [f64; 7] {
    let q = parts(s);
    let g = q.g;
    let w = s.omega + q.v;
    let es_grad = kernel_es_grad(s);
    let second = w * w.transpose() / (g * q.d * q.d);
    let entry_max = |m: &Mat3| m.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let rt2 = 2f64.sqrt();
    [
        w.norm() / q.d / (rt2 * g),
        (1.0 / q.d) / (2.0 * g * g),
        entry_max(&second) / (2.0 * g),
        entry_max(&es_grad) / (6.0 * g),
        kernel_bs_grad(s).norm() / (10.0 * g),
        kernel_bt(s).norm() / (2.0 * rt2 * g),
        kernel_et(s).norm() / (2.0 * rt2 * g),
    ]
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let s = (1.0 - z * z).max(0.0).sqrt();
    let u = Vec3::new(s * phi.cos(), s * phi.sin(), z);
    u / u.norm()
}

fn regular_sample(rng: &mut ChaCha8Rng, pmax: f64) -> KernelSample {
    let r = if rng.random::<bool>() {
        rng.random_range(0.0..=pmax)
    } else {
        let lo = (1e-6f64).ln();
        (rng.random_range(lo..=pmax.max(1e-6).ln())).exp()
    };
    KernelSample {
        omega: random_unit(rng),
        p: r * random_unit(rng),
    }
}

/// `omega` at an angle in `[1e-9, 1e-2]` (log-uniform) from `-p_hat`, `|p|`
/// log-uniform in `[1, pmax]`: the regime where `1 + omega . v` is smallest.
fn adversarial_sample(rng: &mut ChaCha8Rng, pmax: f64) -> KernelSample {
    let r = rng.random_range(0.0..=pmax.max(1.0).ln()).exp();
    let dir = random_unit(rng);
    let theta = rng.random_range((1e-9f64).ln()..=(1e-2f64).ln()).exp();
    let helper = if dir.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = dir.cross(&helper).normalize();
    let e2 = dir.cross(&e1);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let perp = e1 * phi.cos() + e2 * phi.sin();
    let omega = -dir * theta.cos() + perp * theta.sin();
    KernelSample {
        omega: omega / omega.norm(),
        p: r * dir,
    }
}

#[derive(Clone)]
struct Accumulator {
    best: Vec<(f64, KernelSample)>,
    identity: (f64, KernelSample),
}

impl Accumulator {
    fn new() -> Self {
        let zero = KernelSample {
            omega: Vec3::z(),
            p: Vec3::zeros(),
        };
        Accumulator {
            best: vec![(f64::NEG_INFINITY, zero); BOUNDS.len()],
            identity: (f64::NEG_INFINITY, zero),
        }
    }

    fn add(&mut self, s: KernelSample) {
        for (slot, ratio) in self.best.iter_mut().zip(bound_ratios(&s)) {
            // NaN ratios are reported as infinite so that they cannot hide.
            let ratio = if ratio.is_nan() { f64::INFINITY } else { ratio };
            if ratio > slot.0 {
                *slot = (ratio, s);
            }
        }
        let defect = cosine_identity_defect(&s);
        let defect = if defect.is_nan() { f64::INFINITY } else { defect };
        if defect > self.identity.0 {
            self.identity = (defect, s);
        }
    }

    /// Merge keeping the earlier block on ties.
    fn merge(mut self, other: Accumulator) -> Accumulator {
        for (a, b) in self.best.iter_mut().zip(other.best) {
            if b.0 > a.0 {
                *a = b;
            }
        }
        if other.identity.0 > self.identity.0 {
            self.identity = other.identity;
        }
        self
    }
}

const BLOCK: u64 = 8192;

/// Samples `count` regular and `adversarial` near-antipodal pairs
/// `(omega, p)` with `|p| <= pmax`, evaluates every inequality of [`BOUNDS`]
/// and the `delta` identity, and reports the maximal ratios.
///
/// Blocks of samples use independent ChaCha streams and are merged in block
/// order, so the report does not depend on the worker count. The first
/// regular sample is `p = 0`.
pub fn certify_bounds(count: u64, adversarial: u64, pmax: f64, seed: u64) -> Result<BoundReport> {
    if count == 0 {
        return Err(Error::InvalidParams("sample count must be at least 1".into()));
    }
    if !(pmax > 0.0 && pmax.is_finite()) {
        return Err(Error::InvalidParams(format!("pmax = {pmax} must be positive")));
    }
    let run = |total: u64, stream_base: u64, adv: bool| -> Accumulator {
        let blocks = total.div_ceil(BLOCK);
        (0..blocks)
            .into_par_iter()
            .map(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(stream_base + b);
                let mut acc = Accumulator::new();
                let n = BLOCK.min(total - b * BLOCK);
                for k in 0..n {
                    let s = if adv {
                        adversarial_sample(&mut rng, pmax)
                    } else if b == 0 && k == 0 {
                        KernelSample {
                            omega: random_unit(&mut rng),
                            p: Vec3::zeros(),
                        }
                    } else {
                        regular_sample(&mut rng, pmax)
                    };
                    acc.add(s);
                }
                acc
            })
            .reduce_with(Accumulator::merge)
            .unwrap_or_else(Accumulator::new)
    };
    let mut acc = run(count, 0, false);
    if adversarial > 0 {
        acc = acc.merge(run(adversarial, 1 << 40, true));
    }
    let total = count + adversarial;
    let entries = BOUNDS
        .iter()
        .zip(acc.best)
        .map(|((name, anchor), (ratio, argmax))| BoundEntry {
            name: name.to_string(),
            anchor: anchor.to_string(),
            max_ratio: ratio,
            argmax,
            count: total,
        })
        .collect();
    Ok(BoundReport {
        seed,
        pmax,
        samples: count,
        adversarial_samples: adversarial,
        entries,
        identity_defect: acc.identity.0,
        identity_argmax: acc.identity.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};

    fn sample(omega: Vec3, p: Vec3) -> KernelSample {
        KernelSample::new(omega.normalize(), p).unwrap()
    }

    #[test]
    fn rejects_non_unit_direction() {
        assert!(KernelSample::new(Vec3::new(1.0, 1.0, 0.0), Vec3::zeros()).is_err());
    }

    #[test]
    fn es_grad_at_rest_is_projector() {
        let w = Vec3::new(0.3, -0.4, 0.5).normalize();
        let g = kernel_es_grad(&sample(w, Vec3::zeros()));
        let expected = Mat3::identity() - w * w.transpose();
        // At p = 0: (delta_ij + 0)/1 - omega_i omega_j.
        assert!((g - expected).abs().max() < 1e-15);
    }

    #[test]
    fn bt_vanishes_at_rest() {
        let s = sample(Vec3::new(1.0, 2.0, 3.0), Vec3::zeros());
        assert_eq!(kernel_bt(&s), Vec3::zeros());
    }

    #[test]
    fn symbol_norm_example_ratio() {
        // v = 0.6 z means p = 0.75 z, [p] = 1.25.
        let s = sample(-Vec3::z(), Vec3::new(0.0, 0.0, 0.75));
        let value = symbol_es(&s).norm();
        assert!((value - 1.0).abs() < 1e-14);
        let ratio = bound_ratios(&s)[0];
        assert!((ratio - 1.0 / (2f64.sqrt() * 1.25)).abs() < 1e-14);
    }

    fn central_difference(f: impl Fn(&Vec3) -> Vec3, p: &Vec3, h: f64) -> Mat3 {
        let mut m = Mat3::zeros();
        for j in 0..3 {
            let mut e = Vec3::zeros();
            e[j] = h;
            m.set_column(j, &((f(&(p + e)) - f(&(p - e))) / (2.0 * h)));
        }
        m
    }

    #[test]
    fn closed_forms_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10_000 {
            let omega = random_unit(&mut rng);
            let p = rng.random_range(0.0..10.0) * random_unit(&mut rng);
            let s = KernelSample { omega, p };
            // Stay away from the near-antipodal corner where third derivatives explode.
            if parts(&s).d < 0.05 {
                continue;
            }
            let h = 1e-5;
            let es = |q: &Vec3| symbol_es(&KernelSample { omega, p: *q });
            let bs = |q: &Vec3| symbol_bs(&KernelSample { omega, p: *q });
            let inv = |q: &Vec3| {
                let d = 1.0 / parts(&KernelSample { omega, p: *q }).d;
                Vec3::repeat(d)
            };
            let fd_es = central_difference(es, &p, h);
            let fd_bs = central_difference(bs, &p, h);
            let fd_inv = central_difference(inv, &p, h).row(0).transpose();
            let scale = |m: f64| 1e-6 * m.max(1.0);
            assert!((kernel_es_grad(&s) - fd_es).abs().max() <= scale(fd_es.abs().max()));
            assert!((kernel_bs_grad(&s) - fd_bs).abs().max() <= scale(fd_bs.abs().max()));
            assert!((inverse_denominator_grad(&s) - fd_inv).abs().max() <= scale(fd_inv.abs().max()));
        }
    }

    #[test]
    fn identity_defect_tiny_even_near_antipode() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let s = adversarial_sample(&mut rng, 1e3);
            assert!(cosine_identity_defect(&s) <= 1e-12);
            assert!(bound_ratios(&s).iter().all(|r| *r <= 1.0));
        }
    }

    #[test]
    fn certification_is_deterministic_and_within_bounds() {
        let a = certify_bounds(20_000, 2_000, 1e3, 7).unwrap();
        let b = certify_bounds(20_000, 2_000, 1e3, 7).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert!(a.worst_ratio() <= 1.0, "{}", a.to_json());
        assert!(a.identity_defect <= 1e-12);
        // The inverse denominator bound is approached in the adversarial regime.
        assert!(a.entries[1].max_ratio > 0.99);
        assert!(certify_bounds(0, 0, 1.0, 1).is_err());
    }

    proptest! {
        #[test]
        fn inequalities_hold(
            z in -1.0f64..1.0, phi in 0.0f64..6.283, r in 0.0f64..1e3,
            pz in -1.0f64..1.0, pphi in 0.0f64..6.283,
        ) {
            let unit = |z: f64, phi: f64| {
                let s = (1.0 - z * z).sqrt();
                Vec3::new(s * phi.cos(), s * phi.sin(), z).normalize()
            };
            let s = KernelSample { omega: unit(z, phi), p: r * unit(pz, pphi) };
            for ratio in bound_ratios(&s) {
                prop_assert!(ratio <= 1.0);
            }
            prop_assert!(cosine_identity_defect(&s) <= 1e-12);
        }
    }
}
