//! Robust penalizer `Psi(s^2) = sqrt(s^2 + eps^2)` and its derivative with
//! respect to `s^2`, which is the reweighting factor of each fixed-point
//! iteration.

#[inline]
pub fn psi(s2: f64, eps: f64) -> f64 {
    (s2 + eps * eps).sqrt()
}

#[inline]
pub fn psi_deriv(s2: f64, eps: f64) -> f64 {
    0.5 / (s2 + eps * eps).sqrt()
}
