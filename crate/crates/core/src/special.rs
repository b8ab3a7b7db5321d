//! Standard normal helpers: density, tail probability, Mills ratio and the
//! integrated tail `theta(u) = E[(N - u)^+]`.
//!
//! `theta` is the quantity behind the one-step regulator increment of the
//! reflected chain. For large `u` the direct form `phi(u) - u * sf(u)` cancels
//! catastrophically, so the tail branch goes through a continued fraction
//! that never subtracts nearly equal numbers.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// `1 / sqrt(2 pi)`.
pub const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Below this argument `theta` is evaluated directly; above, by continued fraction.
const THETA_DIRECT_LIMIT: f64 = 5.0;

/// Standard normal density.
#[inline]
pub fn normal_pdf(u: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * u * u).exp()
}

/// Gaussian density with variance `var`, evaluated at `w`.
#[inline]
pub fn gauss_density(w: f64, var: f64) -> f64 {
    (-0.5 * w * w / var).exp() / (2.0 * PI * var).sqrt()
}

/// Upper tail `P(N > u)`.
#[inline]
pub fn normal_sf(u: f64) -> f64 {
    0.5 * libm::erfc(u * FRAC_1_SQRT_2)
}

/// `P(N <= u)`.
#[inline]
pub fn normal_cdf(u: f64) -> f64 {
    0.5 * libm::erfc(-u * FRAC_1_SQRT_2)
}

/// Number of continued-fraction levels needed for full double precision at `u >= 5`.
fn cf_depth(u: f64) -> usize {
    match u {
        u if u >= 20.0 => 10,
        u if u >= 12.0 => 13,
        u if u >= 8.0 => 18,
        u if u >= 6.0 => 24,
        u if u >= 5.0 => 30,
        _ => 72,
    }
}

/// Convergent `(A, B)` of `t = u + 2 / (u + 3 / (u + ...))` with `t = A / B`.
///
/// Forward three-term recurrence: all terms are positive, so nothing cancels,
/// and only the caller's final division remains.
#[inline]
fn cf_convergent(u: f64) -> (f64, f64) {
    let depth = cf_depth(u);
    let (mut a_prev, mut a) = (1.0, u);
    let (mut b_prev, mut b) = (0.0, 1.0);
    for j in 2..=depth {
        let k = j as f64;
        (a_prev, a) = (a, u * a + k * a_prev);
        (b_prev, b) = (b, u * b + k * b_prev);
    }
    (a, b)
}

/// `s(u) = 1 / (u + 2 / (u + 3 / (u + ...)))`.
fn mills_tail(u: f64) -> f64 {
    let (a, b) = cf_convergent(u);
    b / a
}

/// Mills ratio `sf(u) / pdf(u)` for `u >= 0`.
pub fn mills_ratio(u: f64) -> f64 {
    if u < THETA_DIRECT_LIMIT {
        normal_sf(u) / normal_pdf(u)
    } else {
        1.0 / (u + mills_tail(u))
    }
}

/// `ln P(N > u)`, finite far beyond the range where `normal_sf` underflows.
pub fn ln_normal_sf(u: f64) -> f64 {
    if u < 8.0 {
        normal_sf(u).ln()
    } else {
        -0.5 * u * u - 0.5 * (2.0 * PI).ln() + mills_ratio(u).ln()
    }
}

/// Integrated normal tail `theta(u) = phi(u) - u * sf(u) = int_u^inf sf(t) dt`.
///
/// Defined for `u >= 0`; satisfies `0 <= theta(u) <= phi(u)` and decreases to 0.
pub fn theta(u: f64) -> f64 {
    debug_assert!(u >= 0.0, "theta needs a nonnegative argument, got {u}");
    if u < THETA_DIRECT_LIMIT {
        return normal_pdf(u) - u * normal_sf(u);
    }
    let pdf = normal_pdf(u);
    if pdf == 0.0 {
        return 0.0;
    }
    // 1 - u R(u) = s / (u + s) with R(u) = 1 / (u + s) and s = B / A
    let (a, b) = cf_convergent(u);
    pdf * b / (u * a + b)
}
