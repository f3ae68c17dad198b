//! Light-cone derivatives `T_i = d_i - omega_i d_t`, `V = d_t - omega . grad`
//! and the streaming derivative `S = d_t + v . grad`, with
//! `omega = (y - x) / |y - x|` for a fixed apex position `x`.
//!
//! Two independent discretizations are provided:
//!
//! * the axis route combines central differences along the coordinate axes
//!   of a space-time grid. It is exact on affine data, but the identity
//!   `omega . T + V = 0` holds for it algebraically, so it cannot exhibit a
//!   convergence order for that identity;
//! * the cone route differentiates along the curves that define each
//!   operator: `T_i` along the cone surface through `(y, s)`, `V` along the
//!   backward generator `(-omega, 1)` and `S` along `(v, 1)`. Its residuals
//!   carry a genuine `O(h^2)` truncation error.
//!
//! The decompositions
//! `d_i = T_i + omega_i (S - v . T) / (1 + omega . v)` and
//! `d_t = (S - v . T) / (1 + omega . v)` are checked on both routes against
//! analytic derivatives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kinematics::{norm, velocity, Vec3};

/// Uniform space-time grid: `nodes[0..3]` points with spacing `h` in space
/// starting at `origin`, `nodes[3]` points with spacing `k` in time from `t0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpaceTimeBox {
    pub origin: Vec3,
    pub t0: f64,
    pub h: f64,
    pub k: f64,
    pub nodes: [usize; 4],
}

impl SpaceTimeBox {
    pub fn new(origin: Vec3, t0: f64, h: f64, k: f64, nodes: [usize; 4]) -> Result<Self> {
        if !(h > 0.0 && k > 0.0 && h.is_finite() && k.is_finite()) {
            return Err(Error::InvalidParams(format!("grid spacings must be positive, got h = {h}, k = {k}")));
        }
        if nodes.iter().any(|&n| n < 3) {
            return Err(Error::InvalidParams(format!(
                "every axis needs at least 3 nodes for central differences, got {nodes:?}"
            )));
        }
        Ok(SpaceTimeBox { origin, t0, h, k, nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Linear index of `[ix, iy, iz, it]`, x fastest.
    pub fn index(&self, idx: [usize; 4]) -> usize {
        let [nx, ny, nz, _] = self.nodes;
        ((idx[3] * nz + idx[2]) * ny + idx[1]) * nx + idx[0]
    }

    pub fn multi_index(&self, mut flat: usize) -> [usize; 4] {
        let mut out = [0; 4];
        for (a, n) in self.nodes.iter().enumerate() {
            out[a] = flat % n;
            flat /= n;
        }
        out
    }

    pub fn point(&self, idx: [usize; 4]) -> (Vec3, f64) {
        let y = self.origin + Vec3::new(idx[0] as f64, idx[1] as f64, idx[2] as f64) * self.h;
        (y, self.t0 + idx[3] as f64 * self.k)
    }

    fn interior(&self, idx: [usize; 4]) -> bool {
        idx.iter().zip(&self.nodes).all(|(&i, &n)| i > 0 && i + 1 < n)
    }
}

/// Values of `u(y, s)` on a space-time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: SpaceTimeBox,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn sample(grid: SpaceTimeBox, u: impl Fn(&Vec3, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|flat| {
                let (y, s) = grid.point(grid.multi_index(flat));
                u(&y, s)
            })
            .collect();
        GridFunction { grid, values }
    }

    fn at(&self, idx: [usize; 4]) -> f64 {
        self.values[self.grid.index(idx)]
    }

    /// Central differences `(grad u, d_t u)` at an interior node.
    fn central(&self, idx: [usize; 4]) -> (Vec3, f64) {
        let mut d = [0.0; 4];
        for (axis, slot) in d.iter_mut().enumerate() {
            let (mut lo, mut hi) = (idx, idx);
            lo[axis] -= 1;
            hi[axis] += 1;
            let step = if axis == 3 { self.grid.k } else { self.grid.h };
            *slot = (self.at(hi) - self.at(lo)) / (2.0 * step);
        }
        (Vec3::new(d[0], d[1], d[2]), d[3])
    }
}

/// Operator output on the grid; `None` on boundary nodes and where the
/// direction to the apex is undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorValues {
    pub grid: SpaceTimeBox,
    pub values: Vec<Option<f64>>,
}

impl OperatorValues {
    pub fn defined(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v)))
    }
}

/// Unit direction from the apex to `y`, if `y` is not the apex itself.
pub fn cone_direction(apex: &Vec3, y: &Vec3) -> Option<Vec3> {
    let d = y - apex;
    let r = norm(&d);
    (r > 0.0).then(|| d / r)
}

fn apply_axis(
    u: &GridFunction,
    apex: &Vec3,
    op: impl Fn(&Vec3, &Vec3, f64) -> f64,
) -> OperatorValues {
    let grid = u.grid;
    let values = (0..grid.len())
        .map(|flat| {
            let idx = grid.multi_index(flat);
            if !grid.interior(idx) {
                return None;
            }
            let (y, _) = grid.point(idx);
            let omega = cone_direction(apex, &y)?;
            let (grad, dt) = u.central(idx);
            Some(op(&omega, &grad, dt))
        })
        .collect();
    OperatorValues { grid, values }
}

/// Axis route for `T_i u = d_i u - omega_i d_t u`.
pub fn apply_t(u: &GridFunction, apex: &Vec3, i: usize) -> Result<OperatorValues> {
    if i > 2 {
        return Err(Error::Domain(format!("spatial index {i} out of range")));
    }
    Ok(apply_axis(u, apex, |w, g, dt| g[i] - w[i] * dt))
}

/// Axis route for `V u = d_t u - omega . grad u`.
pub fn apply_v(u: &GridFunction, apex: &Vec3) -> OperatorValues {
    apply_axis(u, apex, |w, g, dt| dt - w.dot(g))
}

/// Axis route for `S u = d_t u + v . grad u`.
pub fn apply_s(u: &GridFunction, apex: &Vec3, v: &Vec3) -> OperatorValues {
    apply_axis(u, apex, |_, g, dt| dt + v.dot(g))
}

/// Light-cone derivatives of one function at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeDerivatives {
    pub omega: Vec3,
    pub t: Vec3,
    pub v: f64,
    pub s: f64,
}

impl ConeDerivatives {
    /// `|omega . T + V|`.
    pub fn identity_residual(&self) -> f64 {
        (self.omega.dot(&self.t) + self.v).abs()
    }

    /// `(grad u, d_t u)` recovered from `T` and `S` for the velocity `vel`.
    pub fn recombine(&self, vel: &Vec3) -> (Vec3, f64) {
        let dt = (self.s - vel.dot(&self.t)) / (1.0 + self.omega.dot(vel));
        (self.t + self.omega * dt, dt)
    }
}

/// Axis route at a single point, with spacing `h` in space and time.
pub fn axis_derivatives(
    u: &impl Fn(&Vec3, f64) -> f64,
    apex: &Vec3,
    y: &Vec3,
    s: f64,
    vel: &Vec3,
    h: f64,
) -> Option<ConeDerivatives> {
    let omega = cone_direction(apex, y)?;
    let mut grad = Vec3::zeros();
    for i in 0..3 {
        let mut e = Vec3::zeros();
        e[i] = h;
        grad[i] = (u(&(y + e), s) - u(&(y - e), s)) / (2.0 * h);
    }
    let dt = (u(y, s + h) - u(y, s - h)) / (2.0 * h);
    Some(ConeDerivatives {
        omega,
        t: grad - omega * dt,
        v: dt - omega.dot(&grad),
        s: dt + vel.dot(&grad),
    })
}

/// Cone route at a single point. `T_i` differentiates
/// `y' -> u(y', s + |y - x| - |y' - x|)`, `V` differentiates along
/// `(-omega, 1)` and `S` along `(vel, 1)`. The stencil must stay clear of
/// the apex, so `|y - x| > 2h` is required.
pub fn cone_derivatives(
    u: &impl Fn(&Vec3, f64) -> f64,
    apex: &Vec3,
    y: &Vec3,
    s: f64,
    vel: &Vec3,
    h: f64,
) -> Option<ConeDerivatives> {
    let dist = norm(&(y - apex));
    if dist <= 2.0 * h {
        return None;
    }
    let omega = (y - apex) / dist;
    let on_cone = |q: Vec3| u(&q, s + dist - norm(&(q - apex)));
    let mut t = Vec3::zeros();
    for i in 0..3 {
        let mut e = Vec3::zeros();
        e[i] = h;
        t[i] = (on_cone(y + e) - on_cone(y - e)) / (2.0 * h);
    }
    let v = (u(&(y - omega * h), s + h) - u(&(y + omega * h), s - h)) / (2.0 * h);
    let sd = (u(&(y + vel * h), s + h) - u(&(y - vel * h), s - h)) / (2.0 * h);
    Some(ConeDerivatives { omega, t, v, s: sd })
}

/// Smooth manufactured function with closed-form derivatives:
/// `u = exp(-|y - c|^2 / 2) cos(k . y - w s) + b s^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmoothProbe {
    pub center: Vec3,
    pub wavevector: Vec3,
    pub frequency: f64,
    pub drift: f64,
}

impl Default for SmoothProbe {
    fn default() -> Self {
        SmoothProbe {
            center: Vec3::new(0.2, -0.1, 0.3),
            wavevector: Vec3::new(1.3, -0.7, 0.9),
            frequency: 1.1,
            drift: 0.4,
        }
    }
}

impl SmoothProbe {
    pub fn value(&self, y: &Vec3, s: f64) -> f64 {
        let env = (-0.5 * (y - self.center).norm_squared()).exp();
        env * (self.wavevector.dot(y) - self.frequency * s).cos() + self.drift * s * s
    }

    /// `(grad u, d_t u)`.
    pub fn derivatives(&self, y: &Vec3, s: f64) -> (Vec3, f64) {
        let env = (-0.5 * (y - self.center).norm_squared()).exp();
        let (sn, cs) = (self.wavevector.dot(y) - self.frequency * s).sin_cos();
        let grad = -(y - self.center) * (env * cs) - self.wavevector * (env * sn);
        let dt = env * sn * self.frequency + 2.0 * self.drift * s;
        (grad, dt)
    }
}

/// Residuals of one refinement level, maximized over the probe points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatorLevel {
    pub h: f64,
    /// `max |omega . T + V|`, cone route.
    pub identity_cone: f64,
    /// `max |omega . T + V|`, axis route (rounding only).
    pub identity_axis: f64,
    /// `max_i |d_i u - recombined_i|`, cone route.
    pub space_cone: f64,
    /// `max |d_t u - recombined_t|`, cone route.
    pub time_cone: f64,
    pub space_axis: f64,
    pub time_axis: f64,
}

/// Refinement study of the operator identities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorStudy {
    pub points: usize,
    pub levels: Vec<OperatorLevel>,
}

impl OperatorStudy {
    fn orders(&self, pick: impl Fn(&OperatorLevel) -> f64) -> Vec<f64> {
        self.levels.windows(2).map(|w| (pick(&w[0]) / pick(&w[1])).log2()).collect()
    }

    pub fn identity_orders(&self) -> Vec<f64> {
        self.orders(|l| l.identity_cone)
    }

    pub fn space_orders_cone(&self) -> Vec<f64> {
        self.orders(|l| l.space_cone)
    }

    pub fn time_orders_cone(&self) -> Vec<f64> {
        self.orders(|l| l.time_cone)
    }

    pub fn space_orders_axis(&self) -> Vec<f64> {
        self.orders(|l| l.space_axis)
    }

    pub fn time_orders_axis(&self) -> Vec<f64> {
        self.orders(|l| l.time_axis)
    }

    /// Smallest order over all refinements of every converging residual.
    pub fn min_order(&self) -> f64 {
        [
            self.identity_orders(),
            self.space_orders_cone(),
            self.time_orders_cone(),
            self.space_orders_axis(),
            self.time_orders_axis(),
        ]
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min)
    }
}

/// Evaluates both routes on `points` seeded probe points of `[-1, 1]^3 x [0, 1]`
/// kept at least `0.3` from the apex, each with its own subluminal velocity,
/// for `levels` stencil widths `h0, h0/2, ...`.
pub fn operator_study(probe: &SmoothProbe, apex: &Vec3, points: usize, h0: f64, levels: usize, seed: u64) -> Result<OperatorStudy> {
    if points == 0 || levels < 2 || !(h0 > 0.0 && h0 < 0.1) {
        return Err(Error::InvalidParams(format!(
            "operator study needs points >= 1, levels >= 2 and 0 < h0 < 0.1, got {points}, {levels}, {h0}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(points);
    while samples.len() < points {
        let y = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if norm(&(y - apex)) < 0.3 {
            continue;
        }
        let s = rng.random_range(0.0..1.0);
        let p = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        samples.push((y, s, velocity(&p)));
    }
    let u = |y: &Vec3, s: f64| probe.value(y, s);
    let mut out = Vec::with_capacity(levels);
    for level in 0..levels {
        let h = h0 / 2f64.powi(level as i32);
        let mut lvl = OperatorLevel {
            h,
            identity_cone: 0.0,
            identity_axis: 0.0,
            space_cone: 0.0,
            time_cone: 0.0,
            space_axis: 0.0,
            time_axis: 0.0,
        };
        for (y, s, vel) in &samples {
            let (grad, dt) = probe.derivatives(y, *s);
            let cone = cone_derivatives(&u, apex, y, *s, vel, h).expect("probe points avoid the apex");
            let axis = axis_derivatives(&u, apex, y, *s, vel, h).expect("probe points avoid the apex");
            lvl.identity_cone = lvl.identity_cone.max(cone.identity_residual());
            lvl.identity_axis = lvl.identity_axis.max(axis.identity_residual());
            let (gc, tc) = cone.recombine(vel);
            let (ga, ta) = axis.recombine(vel);
            lvl.space_cone = lvl.space_cone.max((gc - grad).amax());
            lvl.time_cone = lvl.time_cone.max((tc - dt).abs());
            lvl.space_axis = lvl.space_axis.max((ga - grad).amax());
            lvl.time_axis = lvl.time_axis.max((ta - dt).abs());
        }
        out.push(lvl);
    }
    Ok(OperatorStudy { points, levels: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_box() -> SpaceTimeBox {
        SpaceTimeBox::new(Vec3::new(-0.5, -0.5, -0.5), 0.0, 0.125, 0.1, [9, 9, 9, 5]).unwrap()
    }

    #[test]
    fn box_validation() {
        assert!(SpaceTimeBox::new(Vec3::zeros(), 0.0, 0.0, 0.1, [5; 4]).is_err());
        assert!(SpaceTimeBox::new(Vec3::zeros(), 0.0, 0.1, 0.1, [5, 5, 2, 5]).is_err());
        let b = small_box();
        for flat in [0, 17, b.len() - 1] {
            assert_eq!(b.index(b.multi_index(flat)), flat);
        }
    }

    #[test]
    fn time_independent_v_is_minus_omega_gradient() {
        let apex = Vec3::new(0.05, 0.02, -0.01);
        let u = GridFunction::sample(small_box(), |y, _| 2.0 * y.x - y.y + 0.5 * y.z);
        let v = apply_v(&u, &apex);
        let grad = Vec3::new(2.0, -1.0, 0.5);
        let mut count = 0;
        for (flat, value) in v.defined() {
            let (y, _) = v.grid.point(v.grid.multi_index(flat));
            let w = cone_direction(&apex, &y).unwrap();
            assert!((value + w.dot(&grad)).abs() < 1e-13);
            count += 1;
        }
        assert_eq!(count, 7 * 7 * 7 * 3);
    }

    #[test]
    fn apex_on_a_node_is_excluded() {
        let b = small_box();
        let apex = b.point([4, 4, 4, 0]).0;
        let u = GridFunction::sample(b, |y, s| y.x + s);
        let t = apply_t(&u, &apex, 0).unwrap();
        for it in 1..4 {
            assert_eq!(t.values[b.index([4, 4, 4, it])], None);
        }
        assert!(apply_t(&u, &apex, 3).is_err());
    }

    #[test]
    fn axis_route_is_exact_on_affine_data() {
        let apex = Vec3::new(0.03, -0.04, 0.01);
        let a = Vec3::new(0.7, -1.2, 0.4);
        let c = -0.9;
        let u = GridFunction::sample(small_box(), |y, s| 1.5 + a.dot(y) + c * s);
        let vel = Vec3::new(0.3, -0.5, 0.6);
        let t: Vec<_> = (0..3).map(|i| apply_t(&u, &apex, i).unwrap()).collect();
        let s = apply_s(&u, &apex, &vel);
        for (flat, sv) in s.defined() {
            let (y, _) = u.grid.point(u.grid.multi_index(flat));
            let w = cone_direction(&apex, &y).unwrap();
            let tv = Vec3::new(t[0].values[flat].unwrap(), t[1].values[flat].unwrap(), t[2].values[flat].unwrap());
            let dt = (sv - vel.dot(&tv)) / (1.0 + w.dot(&vel));
            let grad = tv + w * dt;
            assert!((dt - c).abs() < 1e-13, "{dt}");
            assert!((grad - a).amax() < 1e-13);
        }
    }

    #[test]
    fn probe_derivatives_match_finite_differences() {
        let probe = SmoothProbe::default();
        let y = Vec3::new(0.3, 0.5, -0.2);
        let (grad, dt) = probe.derivatives(&y, 0.7);
        let h = 1e-5;
        for i in 0..3 {
            let mut e = Vec3::zeros();
            e[i] = h;
            let fd = (probe.value(&(y + e), 0.7) - probe.value(&(y - e), 0.7)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-8);
        }
        let fd = (probe.value(&y, 0.7 + h) - probe.value(&y, 0.7 - h)) / (2.0 * h);
        assert!((fd - dt).abs() < 1e-8);
    }

    #[test]
    fn cone_route_converges_at_second_order() {
        let study = operator_study(&SmoothProbe::default(), &Vec3::new(0.1, -0.2, 0.15), 24, 0.04, 3, 7).unwrap();
        for l in &study.levels {
            assert!(l.identity_axis < 1e-12, "{l:?}");
            assert!(l.identity_cone > 1e-9);
        }
        assert!(study.min_order() > 1.9, "{study:?}");
    }

    #[test]
    fn cone_route_refuses_points_near_apex() {
        let u = |y: &Vec3, s: f64| y.x + s;
        assert!(cone_derivatives(&u, &Vec3::zeros(), &Vec3::new(0.01, 0.0, 0.0), 0.0, &Vec3::zeros(), 0.01).is_none());
    }

    proptest! {
        #[test]
        fn cone_route_is_exact_on_affine_data_up_to_curvature(
            ax in -2.0..2.0f64, ay in -2.0..2.0f64, az in -2.0..2.0f64, c in -2.0..2.0f64,
            px in -5.0..5.0f64, py in -5.0..5.0f64, pz in -5.0..5.0f64,
        ) {
            // S and V follow straight lines, so they are exact on affine data;
            // T follows the curved cone surface and carries O(h^2) error
            // proportional to the curvature 1/|y - x|.
            let a = Vec3::new(ax, ay, az);
            let u = |y: &Vec3, s: f64| 0.3 + a.dot(y) + c * s;
            let apex = Vec3::zeros();
            let y = Vec3::new(0.6, -0.4, 0.5);
            let vel = velocity(&Vec3::new(px, py, pz));
            let d = cone_derivatives(&u, &apex, &y, 0.2, &vel, 1e-3).unwrap();
            let w = cone_direction(&apex, &y).unwrap();
            prop_assert!((d.v - (c - w.dot(&a))).abs() < 1e-10);
            prop_assert!((d.s - (c + vel.dot(&a))).abs() < 1e-10);
            prop_assert!((d.t - (a - w * c)).amax() < 1e-5 * (c.abs() + 1.0));
        }
    }
}
