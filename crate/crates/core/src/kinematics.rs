//! Relativistic momentum/velocity algebra in units with c = 1 and unit mass.

use nalgebra::{Matrix3, Vector3};

/// Momentum, velocity, field or direction vector.
pub type Vec3 = Vector3<f64>;

/// 3x3 Jacobian or kernel gradient, row index = component, column index = derivative.
pub type Mat3 = Matrix3<f64>;

/// `sqrt(sum of squares)`, falling back to `hypot` when the squares
/// overflow or underflow, so components near 1e154 and beyond are safe.
#[inline]
pub(crate) fn root_sum_squares(values: [f64; 6]) -> f64 {
    let s: f64 = values.iter().map(|v| v * v).sum();
    if s.is_finite() && s >= f64::MIN_POSITIVE {
        s.sqrt()
    } else {
        values.iter().fold(0.0, |acc, v| acc.hypot(*v))
    }
}

/// Euclidean norm that does not overflow for components near 1e154 and beyond.
#[inline]
pub fn norm(a: &Vec3) -> f64 {
    root_sum_squares([a.x, a.y, a.z, 0.0, 0.0, 0.0])
}

/// Lorentz factor `sqrt(1 + |p|^2)`.
#[inline]
pub fn gamma(p: &Vec3) -> f64 {
    root_sum_squares([1.0, p.x, p.y, p.z, 0.0, 0.0])
}

/// Velocity `p / [p]`; strictly shorter than one for finite `p`.
#[inline]
pub fn velocity(p: &Vec3) -> Vec3 {
    p / gamma(p)
}

/// `1 - |v|`, computed without cancellation as `1 / ([p] ([p] + |p|))`.
#[inline]
pub fn one_minus_speed(p: &Vec3) -> f64 {
    let r = norm(p);
    let g = gamma(p);
    1.0 / (g * (g + r))
}

/// Jacobian `dv_k / dp_i = [p]^-1 (I - v v^T)`.
///
/// Symmetric positive definite; its eigenvalue along `p` is `[p]^-3` and
/// `[p]^-1` on the orthogonal plane.
pub fn dv_dp(p: &Vec3) -> Mat3 {
    let g = gamma(p);
    let v = p / g;
    (Mat3::identity() - v * v.transpose()) / g
}

/// Unit vector along `p`, or `None` at the origin.
#[inline]
pub fn direction(p: &Vec3) -> Option<Vec3> {
    let r = norm(p);
    (r > 0.0).then(|| p / r)
}
