//! Closed-form kernels for constant coefficients and quadrature references.
//!
//! With `dX = mu dt + sigma dW` and `v = sigma^2 t`, the reflection principle
//! plus a Girsanov change of drift give the killed transition density
//!
//! ```text
//! q(x, y) = g_v(y - x - mu t) - exp(-2 mu (x - L) / sigma^2) g_v(y + x - 2L - mu t)
//! ```
//!
//! which equals `exp(mu (y - x) / sigma^2 - mu^2 t / (2 sigma^2))` times the
//! driftless kernel and vanishes at `y = L`.

use thiserror::Error;

use crate::model::CoefficientModel;
use crate::payoff::TestFunction;
use crate::quadrature::{integrate_with_breaks, QuadError};
use crate::sampling::crossing_prob;
use crate::special::gauss_density;

/// Absolute tolerance of the reference quadratures.
pub const ORACLE_TOL: f64 = 1e-10;
/// Half-width of the integration window in units of `sigma sqrt(T)`.
pub const TRUNCATION_SDS: f64 = 12.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("the closed-form oracle needs constant coefficients, `{0}` has none")]
    NotConstant(String),
    #[error("x = {x} lies below L = {level}")]
    OutsideDomain { x: f64, level: f64 },
    #[error("the payoff has no derivative")]
    NoDerivative,
    #[error(transparent)]
    Quadrature(#[from] QuadError),
    #[error("invalid PDE setup: {0}")]
    Pde(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussKernelParams {
    pub mu: f64,
    pub sigma: f64,
    pub level: f64,
    pub t: f64,
}

impl GaussKernelParams {
    pub fn brownian(t: f64) -> Self {
        Self { mu: 0.0, sigma: 1.0, level: 0.0, t }
    }

    pub fn from_model(model: &dyn CoefficientModel, t: f64) -> Result<Self, OracleError> {
        let (mu, sigma) = model
            .constant_coefficients()
            .ok_or_else(|| OracleError::NotConstant(model.id().to_string()))?;
        Ok(Self { mu, sigma, level: model.boundary(), t })
    }

    fn var(&self) -> f64 {
        self.sigma * self.sigma * self.t
    }

    fn reflection_factor(&self, x: f64) -> f64 {
        (-2.0 * self.mu * (x - self.level) / (self.sigma * self.sigma)).exp()
    }
}

/// A reference number with its declared accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub value: f64,
    pub tolerance: f64,
    pub method: &'static str,
    /// Second route to the same number, when one exists.
    pub cross_check: Option<f64>,
}

/// Killed transition density on `y > L`.
pub fn killed_kernel(x: f64, y: f64, p: &GaussKernelParams) -> f64 {
    let v = p.var();
    let drift = p.mu * p.t;
    gauss_density(y - x - drift, v) - p.reflection_factor(x) * gauss_density(y + x - 2.0 * p.level - drift, v)
}

/// `d/dx` of [`killed_kernel`].
pub fn killed_kernel_dx(x: f64, y: f64, p: &GaussKernelParams) -> f64 {
    let v = p.var();
    let drift = p.mu * p.t;
    let w1 = y - x - drift;
    let w2 = y + x - 2.0 * p.level - drift;
    let direct = gauss_density(w1, v) * (w1 / v);
    let mirrored = p.reflection_factor(x) * gauss_density(w2, v) * (-2.0 * p.mu / (p.sigma * p.sigma) - w2 / v);
    direct - mirrored
}

/// Reflected transition density of the driftless process.
pub fn reflected_kernel(x: f64, y: f64, p: &GaussKernelParams) -> f64 {
    let v = p.var();
    gauss_density(y - x, v) + gauss_density(y + x - 2.0 * p.level, v)
}

/// `d/dy` of [`reflected_kernel`].
pub fn reflected_kernel_dy(x: f64, y: f64, p: &GaussKernelParams) -> f64 {
    let v = p.var();
    let (w1, w2) = (y - x, y + x - 2.0 * p.level);
    -gauss_density(w1, v) * (w1 / v) - gauss_density(w2, v) * (w2 / v)
}

/// Bridge crossing probability over a time span `t`; the one-step formula with `a = sigma^2`, `dt = t`.
pub fn bridge_crossing_prob_cont(x: f64, y: f64, p: &GaussKernelParams) -> f64 {
    crossing_prob(x, y, p.level, p.sigma * p.sigma, p.t)
}

/// Integration nodes covering the kernel mass, with the payoff's kinks inserted.
fn window(f: &dyn TestFunction, x: f64, p: &GaussKernelParams, sds: f64) -> Vec<f64> {
    let center = x + p.mu * p.t;
    let half = sds * p.sigma * p.t.sqrt();
    let lo = (center - half).max(p.level);
    let hi = (center + half).max(lo);
    let mut pts = vec![lo, hi];
    pts.extend(f.breakpoints().into_iter().filter(|&k| k > lo && k < hi));
    pts.sort_by(f64::total_cmp);
    pts
}

fn check_domain(x: f64, p: &GaussKernelParams) -> Result<(), OracleError> {
    if x < p.level {
        return Err(OracleError::OutsideDomain { x, level: p.level });
    }
    Ok(())
}

/// `int f(y) q(x, y) dy` with the window scaled by `sds`.
pub fn oracle_value_with(f: &dyn TestFunction, x: f64, p: &GaussKernelParams, sds: f64) -> Result<OracleResult, OracleError> {
    check_domain(x, p)?;
    let q = integrate_with_breaks(|y| f.value(y) * killed_kernel(x, y, p), &window(f, x, p, sds), ORACLE_TOL)?;
    Ok(OracleResult { value: q.value, tolerance: ORACLE_TOL, method: "kernel quadrature", cross_check: None })
}

/// `P_T f(x)` by quadrature of the killed kernel.
pub fn oracle_value(f: &dyn TestFunction, x: f64, p: &GaussKernelParams) -> Result<OracleResult, OracleError> {
    oracle_value_with(f, x, p, TRUNCATION_SDS)
}

/// `d/dx P_T f(x)` by quadrature of the differentiated kernel.
///
/// Without drift and with `f'` available, the reflected-kernel route
/// `int f'(y) q+(x, y) dy` is computed as a cross-check.
pub fn oracle_deriv(f: &dyn TestFunction, x: f64, p: &GaussKernelParams) -> Result<OracleResult, OracleError> {
    check_domain(x, p)?;
    let pts = window(f, x, p, TRUNCATION_SDS);
    let q = integrate_with_breaks(|y| f.value(y) * killed_kernel_dx(x, y, p), &pts, ORACLE_TOL)?;
    let cross_check = if p.mu == 0.0 && f.derivative(x).is_some() {
        let r = integrate_with_breaks(
            |y| f.derivative(y).unwrap_or(f64::NAN) * reflected_kernel(x, y, p),
            &pts,
            ORACLE_TOL,
        )?;
        Some(r.value)
    } else {
        None
    };
    Ok(OracleResult { value: q.value, tolerance: ORACLE_TOL, method: "differentiated kernel quadrature", cross_check })
}

/// Oracle for a model, failing unless its coefficients are constant.
pub fn oracle_for_model(
    model: &dyn CoefficientModel,
    f: &dyn TestFunction,
    x: f64,
    t: f64,
    derivative: bool,
) -> Result<OracleResult, OracleError> {
    let p = GaussKernelParams::from_model(model, t)?;
    if derivative {
        oracle_deriv(f, x, &p)
    } else {
        oracle_value(f, x, &p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParamTable;
    use crate::payoff::build_payoff;
    use crate::quadrature::integrate;

    // 30-digit references.
    const BM_BOUNDARY_DERIV: f64 = 0.523_156_583_730_246_743_36;
    const BM_INDICATOR_DERIV: f64 = 0.481_582_922_430_191_205_39;
    const BM_SURVIVAL: f64 = 0.382_924_922_548_026_207_28;
    const BM_EXPM_VALUE: f64 = 0.255_988_185_041_382_261_47;

    fn payoff(id: &str) -> Box<dyn TestFunction> {
        build_payoff(id, &ParamTable::new(), 0.0).unwrap()
    }

    #[test]
    fn kernel_vanishes_at_boundary() {
        for mu in [-1.0, 0.0, 0.5, 1.0] {
            let p = GaussKernelParams { mu, sigma: 1.3, level: 0.2, t: 0.7 };
            for x in [0.2, 0.5, 2.0] {
                assert!(killed_kernel(x, 0.2, &p).abs() < 1e-16);
            }
        }
    }

    #[test]
    fn driftless_kernel_is_symmetric() {
        let p = GaussKernelParams::brownian(0.8);
        for (x, y) in [(0.1, 0.9), (1.5, 0.3), (2.0, 2.2)] {
            assert!((killed_kernel(x, y, &p) - killed_kernel(y, x, &p)).abs() < 1e-16);
        }
    }

    #[test]
    fn drifted_kernel_is_a_girsanov_reweighting() {
        let p = GaussKernelParams { mu: 0.5, sigma: 1.0, level: 0.0, t: 1.0 };
        let p0 = GaussKernelParams { mu: 0.0, ..p };
        for x in [0.0, 0.5, 1.0, 3.0] {
            for y in [0.01, 0.4, 1.1, 2.5, 5.0] {
                let rw = (p.mu * (y - x) - 0.5 * p.mu * p.mu * p.t).exp() * killed_kernel(x, y, &p0);
                assert!((killed_kernel(x, y, &p) - rw).abs() <= 1e-12, "({x},{y})");
            }
        }
    }

    #[test]
    fn drifted_kernel_is_positive() {
        for mu in [-1.0, -0.3, 0.0, 0.4, 1.0] {
            let p = GaussKernelParams { mu, sigma: 1.0, level: 0.0, t: 1.0 };
            for i in 1..=20 {
                for j in 1..=20 {
                    let (x, y) = (i as f64 * 0.25, j as f64 * 0.3);
                    assert!(killed_kernel(x, y, &p) > 0.0, "mu={mu} x={x} y={y}");
                }
            }
        }
    }

    #[test]
    fn kernel_derivative_matches_differences() {
        let p = GaussKernelParams { mu: -0.4, sigma: 1.2, level: 0.0, t: 0.9 };
        let h = 1e-5;
        for (x, y) in [(0.3, 0.8), (1.0, 0.2), (2.5, 3.0)] {
            let fd = (killed_kernel(x + h, y, &p) - killed_kernel(x - h, y, &p)) / (2.0 * h);
            assert!((killed_kernel_dx(x, y, &p) - fd).abs() < 1e-9);
        }
    }

    #[test]
    fn chapman_kolmogorov() {
        for mu in [0.0, 0.5] {
            let p = GaussKernelParams { mu, sigma: 1.0, level: 0.0, t: 1.0 };
            let half = GaussKernelParams { t: 0.5, ..p };
            for (x, y) in [(0.3, 0.7), (1.0, 2.0), (0.05, 1.5)] {
                let q = integrate(|z| killed_kernel(x, z, &half) * killed_kernel(z, y, &half), 0.0, 14.0, 1e-13).unwrap();
                assert!((q.value - killed_kernel(x, y, &p)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn reflected_kernel_has_unit_mass() {
        let p = GaussKernelParams::brownian(1.0);
        for x in [0.0, 0.5, 3.0] {
            let q = integrate(|y| reflected_kernel(x, y, &p), 0.0, x + 14.0, 1e-14).unwrap();
            assert!((q.value - 1.0).abs() < 1e-12);
        }
        assert_eq!(reflected_kernel(0.0, 0.7, &p), 2.0 * gauss_density(0.7, 1.0));
    }

    #[test]
    fn continuous_crossing_probability() {
        let p = GaussKernelParams { mu: 0.0, sigma: 1.5, level: 0.0, t: 0.8 };
        assert_eq!(bridge_crossing_prob_cont(0.0, 1.0, &p), 1.0);
        let half = 0.5 * 1.5 * 1.5 * 0.8;
        let e1 = bridge_crossing_prob_cont(1.0, half, &p);
        assert!((e1 - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(e1, crossing_prob(1.0, half, 0.0, 2.25, 0.8));
    }

    #[test]
    fn value_references() {
        let p = GaussKernelParams::brownian(1.0);
        assert_eq!(oracle_value(payoff("zero").as_ref(), 0.5, &p).unwrap().value, 0.0);
        let s = oracle_value(payoff("unit").as_ref(), 0.5, &p).unwrap().value;
        assert!((s - BM_SURVIVAL).abs() < 1e-10);
        let v = oracle_value(payoff("expm").as_ref(), 0.5, &p).unwrap().value;
        assert!((v - BM_EXPM_VALUE).abs() < 1e-10);
        let wide = oracle_value_with(payoff("expm").as_ref(), 0.5, &p, 2.0 * TRUNCATION_SDS).unwrap().value;
        assert!((wide - v).abs() < 1e-12);
    }

    #[test]
    fn derivative_references() {
        let p = GaussKernelParams::brownian(1.0);
        let d = oracle_deriv(payoff("expm").as_ref(), 0.0, &p).unwrap();
        assert!((d.value - BM_BOUNDARY_DERIV).abs() < 1e-10);
        assert!((d.cross_check.unwrap() - d.value).abs() < 1e-9);
        let ind = oracle_deriv(payoff("indicator").as_ref(), 0.5, &p).unwrap();
        assert!((ind.value - BM_INDICATOR_DERIV).abs() < 1e-10);
        assert!(ind.cross_check.is_none());
        for x in [0.3, 1.0, 2.0] {
            let r = oracle_deriv(payoff("smoothstep").as_ref(), x, &p).unwrap();
            assert!((r.cross_check.unwrap() - r.value).abs() < 1e-9);
        }
    }

    #[test]
    fn harmonic_payoff_under_half_drift() {
        // with mu = 1/2, sigma = 1 the payoff 1 - exp(-y) is harmonic and vanishes at 0
        let p = GaussKernelParams { mu: 0.5, sigma: 1.0, level: 0.0, t: 1.0 };
        let f = payoff("expm");
        for x in [0.0, 0.5, 1.5] {
            let v = oracle_value(f.as_ref(), x, &p).unwrap().value;
            let d = oracle_deriv(f.as_ref(), x, &p).unwrap().value;
            assert!((v - (1.0 - (-x).exp())).abs() < 1e-10);
            assert!((d - (-x).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_non_constant_models() {
        let m = crate::model::build_model("tanh-drift", &ParamTable::new()).unwrap();
        let f = payoff("expm");
        assert!(matches!(oracle_for_model(m.as_ref(), f.as_ref(), 0.5, 1.0, true), Err(OracleError::NotConstant(_))));
    }
}
