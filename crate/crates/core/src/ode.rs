//! Envelope ODEs: the doubly logarithmic `(W, Z)` system with its
//! double-exponential bounds, the finite-time blow-up contrast
//! `Y' = Y (log Y)^2`, and the running-maximum envelope.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of `W' = C (W log W + log W log Z Z)`, `Z' = C (Z log Z + W)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogSysParams {
    pub c: f64,
    pub w0: f64,
    pub z0: f64,
    pub t_end: f64,
}

impl LogSysParams {
    pub fn new(c: f64, w0: f64, z0: f64, t_end: f64) -> Result<Self> {
        let p = LogSysParams { c, w0, z0, t_end };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidParams(format!("C = {} must be finite and >= 0", self.c)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidParams(format!("t_end = {} must be >= 0", self.t_end)));
        }
        // One ulp of slack so that W0 = e is accepted.
        let low = self.w0.ln().min(self.z0.ln());
        if !(low >= 1.0 - 4.0 * f64::EPSILON) {
            return Err(Error::InvalidParams(format!(
                "min(log W0, log Z0) = {low} must be at least 1"
            )));
        }
        Ok(())
    }

    /// `log(W0 + Z0 log Z0)`.
    pub fn log_wbar0(&self) -> f64 {
        (self.w0 + self.z0 * self.z0.ln()).ln()
    }
}

/// Sample of the system in log variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogWz {
    pub t: f64,
    pub log_w: f64,
    pub log_z: f64,
}

impl LogWz {
    /// `log(W + Z)`.
    pub fn log_sum(&self) -> f64 {
        log_add_exp(self.log_w, self.log_z)
    }

    /// `log(W + Z log Z)`.
    pub fn log_wbar(&self) -> f64 {
        log_add_exp(self.log_w, self.log_z + self.log_z.ln())
    }
}

/// Sample of the system in linear variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Wz {
    pub t: f64,
    pub w: f64,
    pub z: f64,
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Right-hand side for `a = log W`, `b = log Z`.
fn log_rhs(c: f64, a: f64, b: f64) -> (f64, f64) {
    (c * (a + a * b * (b - a).exp()), c * (b + (a - b).exp()))
}

/// Size of the Jacobian of [`log_rhs`], which bounds the usable step.
fn stiffness(c: f64, a: f64, b: f64) -> f64 {
    c * (1.0 + (a - b).exp() + (1.0 + a) * (1.0 + b) * (b - a).exp())
}

fn rk4_log(c: f64, a: f64, b: f64, h: f64) -> (f64, f64) {
    let k1 = log_rhs(c, a, b);
    let k2 = log_rhs(c, a + 0.5 * h * k1.0, b + 0.5 * h * k1.1);
    let k3 = log_rhs(c, a + 0.5 * h * k2.0, b + 0.5 * h * k2.1);
    let k4 = log_rhs(c, a + h * k3.0, b + h * k3.1);
    (
        a + h / 6.0 * (k1.0 + 2.0 * (k2.0 + k3.0) + k4.0),
        b + h / 6.0 * (k1.1 + 2.0 * (k2.1 + k3.1) + k4.1),
    )
}

/// Classical RK4 on `(log W, log Z)` with output every `dt`.
///
/// Each output step is split into substeps with `stiffness * h <= 1/2`, which
/// leaves the method unchanged where `dt` is already stable.
pub fn integrate_wz_log(params: &LogSysParams, dt: f64) -> Result<Vec<LogWz>> {
    params.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParams(format!("dt = {dt} must be positive")));
    }
    let steps = (params.t_end / dt - 1e-9).ceil().max(0.0) as usize;
    let (mut a, mut b) = (params.w0.ln(), params.z0.ln());
    let mut out = Vec::with_capacity(steps + 1);
    out.push(LogWz { t: 0.0, log_w: a, log_z: b });
    for k in 0..steps {
        let t0 = k as f64 * dt;
        let h_total = dt.min(params.t_end - t0);
        let sub = ((stiffness(params.c, a, b) * h_total / 0.5).ceil() as usize).max(1);
        let h = h_total / sub as f64;
        for _ in 0..sub {
            (a, b) = rk4_log(params.c, a, b, h);
        }
        let t = t0 + h_total;
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::IntegrationFailure {
                t,
                what: "log-space state became nonfinite".into(),
            });
        }
        out.push(LogWz { t, log_w: a, log_z: b });
    }
    Ok(out)
}

/// The same trajectory in linear variables; fails with the reach time once
/// `W` or `Z` exceeds the double range.
pub fn integrate_wz(params: &LogSysParams, dt: f64) -> Result<Vec<Wz>> {
    integrate_wz_log(params, dt)?
        .into_iter()
        .map(|s| {
            let (w, z) = (s.log_w.exp(), s.log_z.exp());
            if w.is_finite() && z.is_finite() {
                Ok(Wz { t: s.t, w, z })
            } else {
                Err(Error::Overflow { t: s.t })
            }
        })
        .collect()
}

/// `log` of `exp((1 + log Wbar0) e^{C t} - 1)`, the solution of
/// `Wbar' = C (log Wbar + 1) Wbar`.
pub fn log_double_exp_envelope(params: &LogSysParams, t: f64) -> f64 {
    (1.0 + params.log_wbar0()) * (params.c * t).exp() - 1.0
}

/// `exp((1 + log Wbar0) e^{C t} - 1)` with `Wbar0 = W0 + Z0 log Z0`; `inf`
/// once it leaves the double range (use [`log_double_exp_envelope`]).
pub fn double_exp_envelope(params: &LogSysParams, t: f64) -> f64 {
    log_double_exp_envelope(params, t).exp()
}

/// `log` of `exp((1/2 + log Wbar0) e^{2 C t} - 1/2)`, the solution of
/// `Wbar' = C (2 log Wbar + 1) Wbar`.
///
/// Summing the two equations with `Wbar = W + Z log Z` and using
/// `W, Z <= Wbar` gives exactly that differential inequality, so this
/// envelope dominates `W + Z <= Wbar` whenever `log Z >= 1`.
pub fn log_companion_envelope(params: &LogSysParams, t: f64) -> f64 {
    (0.5 + params.log_wbar0()) * (2.0 * params.c * t).exp() - 0.5
}

/// RK4 solution of `u' = C (u + 1)`, `u = log Wbar`, sampled every `dt`.
pub fn integrate_wbar_log(params: &LogSysParams, dt: f64) -> Result<Vec<(f64, f64)>> {
    params.validate()?;
    let c = params.c;
    let steps = (params.t_end / dt - 1e-9).ceil().max(0.0) as usize;
    let f = |u: f64| c * (u + 1.0);
    let mut u = params.log_wbar0();
    let mut out = vec![(0.0, u)];
    for k in 0..steps {
        let t0 = k as f64 * dt;
        let h = dt.min(params.t_end - t0);
        let k1 = f(u);
        let k2 = f(u + 0.5 * h * k1);
        let k3 = f(u + 0.5 * h * k2);
        let k4 = f(u + h * k3);
        u += h / 6.0 * (k1 + 2.0 * (k2 + k3) + k4);
        out.push((t0 + h, u));
    }
    Ok(out)
}

/// Result of [`blowup_ode`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Blowup {
    pub series: Vec<(f64, f64)>,
    /// Time at which `Y` crossed [`BLOWUP_CEILING`].
    pub blowup_time: f64,
}

pub const BLOWUP_CEILING: f64 = 1e300;

/// Integrates `Y' = Y (log Y)^2` from `Y0 > e` with step-doubling RK4
/// (relative tolerance `1e-10`), starting at step `dt`, until `Y` exceeds
/// [`BLOWUP_CEILING`].
pub fn blowup_ode(y0: f64, dt: f64) -> Result<Blowup> {
    if !(y0 > std::f64::consts::E && y0.is_finite()) && (y0.ln() - 1.0).abs() > 4.0 * f64::EPSILON {
        return Err(Error::InvalidParams(format!("Y0 = {y0} must exceed e")));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidParams(format!("dt = {dt} must be positive")));
    }
    let f = |y: f64| y * y.ln().powi(2);
    let rk4 = |y: f64, h: f64| {
        let k1 = f(y);
        let k2 = f(y + 0.5 * h * k1);
        let k3 = f(y + 0.5 * h * k2);
        let k4 = f(y + h * k3);
        y + h / 6.0 * (k1 + 2.0 * (k2 + k3) + k4)
    };
    let tol = 1e-10;
    let (mut t, mut y, mut h) = (0.0, y0, dt);
    let mut series = vec![(t, y)];
    while y < BLOWUP_CEILING {
        let full = rk4(y, h);
        let half = rk4(rk4(y, 0.5 * h), 0.5 * h);
        let err = if full.is_finite() && half.is_finite() {
            (half - full).abs() / half.abs()
        } else {
            f64::INFINITY
        };
        if err <= tol {
            t += h;
            y = half + (half - full) / 15.0;
            series.push((t, y));
            h *= (0.9 * (tol / err.max(1e-300)).powf(0.2)).min(2.0);
        } else {
            h *= (0.9 * (tol / err).powf(0.2)).clamp(0.1, 0.5);
        }
        if h < 1e-15 * t.max(1.0) {
            return Err(Error::IntegrationFailure {
                t,
                what: "step size underflow before reaching the ceiling".into(),
            });
        }
    }
    Ok(Blowup {
        series,
        blowup_time: t,
    })
}

/// Running maximum `G_k = max_{j <= k} g_j`.
pub fn sup_envelope(samples: &[f64]) -> Vec<f64> {
    samples
        .iter()
        .scan(f64::NEG_INFINITY, |m, &g| {
            *m = m.max(g);
            Some(*m)
        })
        .collect()
}

/// `max_k |g_{k+1} - g_k| / dt` on a uniform grid.
pub fn discrete_lipschitz(samples: &[f64], dt: f64) -> f64 {
    samples
        .windows(2)
        .map(|w| (w[1] - w[0]).abs() / dt)
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::E;

    #[test]
    fn rejects_small_initial_values() {
        assert!(LogSysParams::new(1.0, 2.0, E, 1.0).is_err());
        assert!(LogSysParams::new(1.0, E, E, 1.0).is_ok());
        assert!(LogSysParams::new(-1.0, E, E, 1.0).is_err());
    }

    #[test]
    fn zero_rate_keeps_state() {
        let p = LogSysParams::new(0.0, 3.0, 4.0, 1.0).unwrap();
        let s = integrate_wz(&p, 0.1).unwrap();
        assert_eq!(s.len(), 11);
        assert!(s.iter().all(|x| x.w == 3.0f64.ln().exp() && x.z == 4.0f64.ln().exp()));
    }

    #[test]
    fn unit_rate_finite_at_one() {
        let p = LogSysParams::new(1.0, E, E, 1.0).unwrap();
        let s = integrate_wz(&p, 1e-3).unwrap();
        let last = s.last().unwrap();
        assert!(last.w.is_finite() && last.z.is_finite());
        assert!((last.t - 1.0).abs() < 1e-12);
        // The rigorous companion bound holds.
        assert!((last.w + last.z).ln() <= log_companion_envelope(&p, 1.0));
    }

    #[test]
    fn step_halving_shows_fourth_order() {
        // Without forced substepping the comparison is between plain RK4 runs.
        let p = LogSysParams::new(0.5, E, E, 1.0).unwrap();
        let reference = integrate_wz_log(&p, 1e-4).unwrap().last().unwrap().log_w;
        let e1 = (integrate_wz_log(&p, 0.02).unwrap().last().unwrap().log_w - reference).abs();
        let e2 = (integrate_wz_log(&p, 0.01).unwrap().last().unwrap().log_w - reference).abs();
        assert!(e1 / e2 >= 14.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn linear_integration_overflows_with_reach_time() {
        let p = LogSysParams::new(2.0, E, E, 3.0).unwrap();
        match integrate_wz(&p, 1e-3) {
            Err(Error::Overflow { t }) => assert!(t > 0.0 && t < 3.0),
            other => panic!("expected overflow, got {other:?}"),
        }
        assert!(integrate_wz_log(&p, 1e-3).is_ok());
    }

    #[test]
    fn envelope_at_zero_is_initial_wbar() {
        let p = LogSysParams::new(1.3, E, 5.0, 1.0).unwrap();
        let w = double_exp_envelope(&p, 0.0);
        assert!((w - (E + 5.0 * 5.0f64.ln())).abs() < 1e-12 * w);
    }

    #[test]
    fn envelope_solves_comparison_equation() {
        for c in [0.5, 1.0, 2.0] {
            let p = LogSysParams::new(c, E, E, 3.0).unwrap();
            for (t, u) in integrate_wbar_log(&p, 1e-3).unwrap() {
                let exact = log_double_exp_envelope(&p, t);
                assert!((u - exact).abs() <= 1e-8 * exact.abs().max(1.0), "C={c} t={t}");
            }
        }
    }

    #[test]
    fn envelope_monotone_in_time_and_rate() {
        let mut prev_c = f64::NEG_INFINITY;
        for c in [0.1, 0.5, 1.0, 2.0] {
            let p = LogSysParams::new(c, E, E, 3.0).unwrap();
            let vals: Vec<f64> = (0..=30).map(|k| log_double_exp_envelope(&p, 0.1 * k as f64)).collect();
            assert!(vals.windows(2).all(|w| w[1] >= w[0]));
            assert!(vals[30] >= prev_c);
            prev_c = vals[30];
        }
    }

    #[test]
    fn companion_envelope_dominates_trajectory() {
        for c in [0.5, 1.0, 2.0] {
            let p = LogSysParams::new(c, E, E, 3.0).unwrap();
            for s in integrate_wz_log(&p, 1e-3).unwrap() {
                assert!(s.log_sum() <= log_companion_envelope(&p, s.t) + 1e-9, "C={c} t={}", s.t);
                assert!(s.log_wbar() <= log_companion_envelope(&p, s.t) + 1e-9);
            }
        }
    }

    #[test]
    fn blowup_times_match_closed_form() {
        let mut prev = f64::INFINITY;
        for k in [1.0, 2.0, 4.0] {
            let y0 = (k as f64).exp();
            let b = blowup_ode(y0, 1e-3).unwrap();
            let exact = 1.0 / k;
            assert!((b.blowup_time - exact).abs() <= 0.02 * exact, "Y0=e^{k}: {}", b.blowup_time);
            assert!(b.blowup_time < prev);
            prev = b.blowup_time;
        }
        assert!(blowup_ode(2.0, 1e-3).is_err());
    }

    #[test]
    fn sup_envelope_examples() {
        let up = [1.0, 2.0, 2.5, 7.0];
        assert_eq!(sup_envelope(&up), up.to_vec());
        let n = 1000;
        let dt = 2.0 * std::f64::consts::PI / n as f64;
        let g: Vec<f64> = (0..=n).map(|k| (k as f64 * dt).sin()).collect();
        let gm = sup_envelope(&g);
        for (k, v) in gm.iter().enumerate() {
            if k as f64 * dt >= std::f64::consts::FRAC_PI_2 + dt {
                assert!((v - 1.0).abs() < 1e-5);
            }
        }
    }

    proptest! {
        #[test]
        fn sup_envelope_idempotent_and_lipschitz(steps in prop::collection::vec(-1.0f64..1.0, 2..300)) {
            let dt = 0.01;
            let mut g = vec![0.0];
            for s in &steps {
                let next = g.last().unwrap() + s * dt;
                g.push(next);
            }
            let gm = sup_envelope(&g);
            prop_assert_eq!(sup_envelope(&gm), gm.clone());
            prop_assert!(discrete_lipschitz(&gm, dt) <= discrete_lipschitz(&g, dt));
            prop_assert!(gm.iter().zip(&g).all(|(a, b)| a >= b));
        }
    }
}
