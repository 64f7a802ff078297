//! Speed read-outs of the factorized time field.

use crate::autodiff::Scalar;

/// Floor applied to the Eikonal radicand before the square root.
pub const RADICAND_FLOOR: f64 = 1e-12;
/// Floor applied to the viscous speed denominator.
pub const DENOMINATOR_FLOOR: f64 = 1e-8;

/// `τ² − 2τ (q − q') · ∇τ + |q − q'|² |∇τ|²`, where `diff = q − q'` and the
/// gradient is taken at `q`.
pub fn eikonal_radicand<S: Scalar>(tau: S, grad: &[S], diff: &[f64]) -> S {
    let mut dot = tau.lift(0.0);
    let mut g2 = tau.lift(0.0);
    for (&g, &d) in grad.iter().zip(diff) {
        dot = dot + g * d;
        g2 = g2 + g * g;
    }
    let r2: f64 = diff.iter().map(|d| d * d).sum();
    tau * tau - tau * dot * 2.0 + g2 * r2
}

/// Speed implied by `|∇T| = 1/S` for `T = |diff| / τ`.
pub fn eikonal_speed<S: Scalar>(tau: S, grad: &[S], diff: &[f64]) -> S {
    let rad = eikonal_radicand(tau, grad, diff).floor_at(RADICAND_FLOOR);
    tau * tau / rad.sqrt()
}

/// Speed implied by `1/S = |∇T| + ε Δτ`, with the Laplacian of τ standing in
/// for that of `T`.
pub fn viscous_speed<S: Scalar>(tau: S, grad: &[S], laplacian: S, diff: &[f64], epsilon: f64) -> S {
    let rad = eikonal_radicand(tau, grad, diff).floor_at(RADICAND_FLOOR);
    let t2 = tau * tau;
    let denom = laplacian * epsilon + (rad / (t2 * t2)).sqrt();
    denom.floor_at(DENOMINATOR_FLOOR).recip()
}
