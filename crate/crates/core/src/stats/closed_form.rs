//! Closed-form reference constants for the driver statistics.
//!
//! Every estimator in this crate compares against values produced here and
//! only here; the formulas are never inlined into estimator code. The unit
//! tests check each formula against independent numerical quadrature.

/// Diffusion coefficient delta = 2 / (lambda d).
pub fn delta_coefficient(lambda: f64, d: usize) -> f64 {
    2.0 / (lambda * d as f64)
}

/// Stationary second moment of one driver component: 1/d.
pub fn psi_second_moment(d: usize) -> f64 {
    1.0 / d as f64
}

/// Stationary autocovariance of one driver component at lag s:
/// d^{-1} e^{-lambda |s|}; zero off the diagonal.
pub fn psi_autocov_diag(lambda: f64, d: usize, s: f64) -> f64 {
    (-lambda * s.abs()).exp() / d as f64
}

/// Conditional mean decay factor e^{-lambda t}.
pub fn conditional_decay(lambda: f64, t: f64) -> f64 {
    (-lambda * t).exp()
}

/// Same-component correlation of unit-window integrals at lag k:
/// 2 (e^{-lambda} + lambda - 1) / (lambda^2 d) at k = 0 and
/// (e^{lambda} - 1)^2 e^{-lambda (k+1)} / (lambda^2 d) for k >= 1.
/// Cross components vanish.
pub fn v_corr_same(lambda: f64, d: usize, k: usize) -> f64 {
    let l2d = lambda * lambda * d as f64;
    if k == 0 {
        2.0 * ((-lambda).exp() + lambda - 1.0) / l2d
    } else {
        let g = lambda.exp() - 1.0;
        g * g * (-lambda * (k as f64 + 1.0)).exp() / l2d
    }
}

/// Green-Kubo sum: Sigma-tilde = (2 / (lambda d)) I (diagonal value).
pub fn sigma_tilde_diag(lambda: f64, d: usize) -> f64 {
    2.0 / (lambda * d as f64)
}

/// One-sided tail sum: E-tilde = (1 - e^{-lambda}) / (lambda^2 d) I.
pub fn e_tilde_diag(lambda: f64, d: usize) -> f64 {
    (1.0 - (-lambda).exp()) / (lambda * lambda * d as f64)
}

/// Within-window correction integral: (e^{-lambda} + lambda - 1) / (lambda^2 d) I.
pub fn e_correction_diag(lambda: f64, d: usize) -> f64 {
    ((-lambda).exp() + lambda - 1.0) / (lambda * lambda * d as f64)
}

/// Level-2 drift constant: E = (1 / (lambda d)) I.
pub fn e_diag(lambda: f64, d: usize) -> f64 {
    1.0 / (lambda * d as f64)
}

/// Stationary variance of dX = dB - X/2 dt.
pub fn ou_stationary_variance() -> f64 {
    1.0
}

/// Stationary autocorrelation of the same OU process at lag s.
pub fn ou_autocorr(s: f64) -> f64 {
    (-0.5 * s.abs()).exp()
}

/// Mean of the OU process at time t from a deterministic start x0.
pub fn ou_mean(x0: f64, t: f64) -> f64 {
    x0 * (-0.5 * t).exp()
}

/// Variance of the OU process at time t from a deterministic start.
pub fn ou_variance(t: f64) -> f64 {
    -(-t).exp_m1()
}
