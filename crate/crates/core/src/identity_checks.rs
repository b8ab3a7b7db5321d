//! One-step identities of the killed Euler scheme, certified by quadrature.
//!
//! The crossing uniform is integrated out analytically (weights `1 - p`, `p`
//! and `2p`), so each side is a one-dimensional integral over the standard
//! normal `z` driving the step `x1 = x + b dt + sigma sqrt(dt) z`.

use std::fmt;

use crate::model::{build_model, CoefficientModel, DerivedCoeffs, ParamTable};
use crate::oracle_analytic::{killed_kernel_dx, reflected_kernel_dy, GaussKernelParams};
use crate::payoff::{build_payoff, TestFunction};
use crate::quadrature::integrate_panels;
use crate::sampling::crossing_prob;
use crate::special::theta;

pub const PUSHFORWARD_TOL: f64 = 1e-6;
pub const MOMENTS_TOL: f64 = 1e-10;
pub const IBP_TOL: f64 = 1e-8;
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Gaussian tail cut for the `z` integrals.
const Z_MAX: f64 = 12.0;
/// Kronrod panels per unit of `z`.
const PANELS_PER_UNIT: f64 = 16.0;

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityReport {
    pub identity: String,
    pub model: String,
    pub x: f64,
    pub dt: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl IdentityReport {
    fn new(identity: &str, model: &str, x: f64, dt: f64, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        let residual = lhs - rhs;
        Self {
            identity: identity.to_string(),
            model: model.to_string(),
            x,
            dt,
            lhs,
            rhs,
            residual,
            tolerance,
            pass: residual.abs() <= tolerance,
        }
    }
}

impl fmt::Display for IdentityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<22} {:<17} x={:<10.6} dt={:<7} residual={:+.3e} (tol {:.0e}) {}",
            self.identity,
            self.model,
            self.x,
            self.dt,
            self.residual,
            self.tolerance,
            if self.pass { "ok" } else { "FAIL" }
        )
    }
}

/// Panel quadrature of `f` over `[lo, hi]` split at `breaks`.
///
/// Fixed panels keep the result a smooth function of the parameters, which
/// the finite differences of the push-forward check rely on.
fn zquad<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, breaks: &[f64], refine: usize) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let mut pts = vec![lo, hi];
    pts.extend(breaks.iter().copied().filter(|&b| b > lo && b < hi));
    pts.sort_by(f64::total_cmp);
    pts.windows(2)
        .map(|w| {
            let panels = ((w[1] - w[0]) * PANELS_PER_UNIT).ceil().max(1.0) as usize * refine;
            integrate_panels(&f, w[0], w[1], panels)
        })
        .sum()
}

/// Bridge crossing probability without the clamp at `x1 < L`.
fn raw_crossing_prob(x: f64, x1: f64, level: f64, a: f64, dt: f64) -> f64 {
    (-2.0 * (x - level) * (x1 - level) / (a * dt)).exp()
}

struct Step {
    x: f64,
    level: f64,
    dt: f64,
    sdt: f64,
    c: DerivedCoeffs,
}

impl Step {
    fn new(model: &dyn CoefficientModel, x: f64, dt: f64) -> Self {
        Self { x, level: model.boundary(), dt, sdt: dt.sqrt(), c: model.coeffs(x).derived() }
    }

    #[inline]
    fn x1(&self, z: f64) -> f64 {
        self.x + self.c.b * self.dt + self.c.sigma * self.sdt * z
    }

    /// `z` at which `x1` reaches `L`.
    fn z_boundary(&self) -> f64 {
        (self.level - self.x - self.c.b * self.dt) / (self.c.sigma * self.sdt)
    }

    fn z_of(&self, y: f64) -> f64 {
        (y - self.x - self.c.b * self.dt) / (self.c.sigma * self.sdt)
    }

    fn survive_range(&self) -> (f64, f64) {
        (self.z_boundary().max(-Z_MAX), Z_MAX)
    }
}

/// `E[F(X1) 1{X1 > L} 1{U > p}]` as a function of the starting point.
fn killed_expectation(model: &dyn CoefficientModel, f: &dyn TestFunction, x: f64, dt: f64) -> f64 {
    let s = Step::new(model, x, dt);
    let (lo, hi) = s.survive_range();
    let breaks: Vec<f64> = f.breakpoints().iter().map(|&y| s.z_of(y)).collect();
    zquad(
        |z| {
            let x1 = s.x1(z);
            f.value(x1) * (1.0 - crossing_prob(x, x1, s.level, s.c.a, dt)) * crate::special::normal_pdf(z)
        },
        lo,
        hi,
        &breaks,
        1,
    )
}

/// Push-forward derivative identity for one step:
/// `d/dx E[F(X1) m] = E[(F'(X1) e + F(X1) h) mbar]`.
pub fn check_pushforward_one_step(
    model: &dyn CoefficientModel,
    f: &dyn TestFunction,
    x: f64,
    dt: f64,
) -> IdentityReport {
    let level = model.boundary();
    let g = |y: f64| killed_expectation(model, f, y, dt);
    let h = 1e-4 * (x - level).max(1.0);
    let diff = |h: f64| {
        if x - h < level {
            (-3.0 * g(x) + 4.0 * g(x + h) - g(x + 2.0 * h)) / (2.0 * h)
        } else {
            (g(x + h) - g(x - h)) / (2.0 * h)
        }
    };
    let lhs = (4.0 * diff(0.5 * h) - diff(h)) / 3.0;

    let s = Step::new(model, x, dt);
    let c = s.c;
    let (lo, hi) = s.survive_range();
    let e_cross = 1.0 - c.dsigma * (x - level) / c.sigma;
    let h_cross = c.boa + (x - level) * c.dboa;
    let breaks: Vec<f64> = f.breakpoints().iter().map(|&y| s.z_of(y)).collect();
    let rhs = zquad(
        |z| {
            let x1 = s.x1(z);
            let p = crossing_prob(x, x1, level, c.a, dt);
            let d = f.derivative(x1).unwrap_or(f64::NAN);
            let e_free = 1.0 + c.db * dt + c.dsigma * s.sdt * z;
            (d * e_free * (1.0 - p) + (d * e_cross + f.value(x1) * h_cross) * 2.0 * p)
                * crate::special::normal_pdf(z)
        },
        lo,
        hi,
        &breaks,
        1,
    );
    IdentityReport::new("pushforward", model.id(), x, dt, lhs, rhs, PUSHFORWARD_TOL)
}

/// Moments of the driftless reflected step, `Z = sqrt(dt) g` with weight
/// `mbar = 1{X1 > L}(1 + 1{U <= p})`, against their closed forms, plus the
/// regulator identity `2 E[(X1 - L) 1{U <= p} 1{X1 > L}] = 2 sigma sqrt(dt) theta(u)`.
pub fn check_moments(level: f64, x: f64, sigma: f64, dt: f64) -> Vec<IdentityReport> {
    let sdt = dt.sqrt();
    let u = (x - level) / (sigma * sdt);
    let th = theta(u);
    let lo = (-u).max(-Z_MAX);
    let x1 = |g: f64| x + sigma * sdt * g;
    let p = |g: f64| crossing_prob(x, x1(g), level, sigma * sigma, dt);
    let pdf = crate::special::normal_pdf;
    let moment = |k: i32| {
        let plain = zquad(|g| (sdt * g).powi(k) * pdf(g), lo, Z_MAX, &[], 1);
        let crossed = zquad(|g| (sdt * g).powi(k) * p(g) * pdf(g), lo, Z_MAX, &[], 1);
        plain + crossed
    };
    let closed = [1.0, 2.0 * sdt * th, dt - 4.0 * dt * u * th];
    let mut out: Vec<IdentityReport> = (0..3)
        .map(|k| IdentityReport::new(&format!("moment-{k}"), "driftless", x, dt, moment(k), closed[k as usize], MOMENTS_TOL))
        .collect();
    let pushed = 2.0 * zquad(|g| (x1(g) - level) * p(g) * pdf(g), lo, Z_MAX, &[], 1);
    out.push(IdentityReport::new("regulator", "driftless", x, dt, pushed, 2.0 * sigma * sdt * th, MOMENTS_TOL));
    out
}

/// A test functional `G(x, w)` of the start point and the Brownian increment.
pub trait StepFunctional: Sync {
    fn name(&self) -> &'static str;
    fn value(&self, x: f64, w: f64) -> f64;
    /// `dG/dw`
    fn dw(&self, x: f64, w: f64) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub struct Unit;
impl StepFunctional for Unit {
    fn name(&self) -> &'static str {
        "G=1"
    }
    fn value(&self, _x: f64, _w: f64) -> f64 {
        1.0
    }
    fn dw(&self, _x: f64, _w: f64) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear;
impl StepFunctional for Linear {
    fn name(&self) -> &'static str {
        "G=w"
    }
    fn value(&self, _x: f64, w: f64) -> f64 {
        w
    }
    fn dw(&self, _x: f64, _w: f64) -> f64 {
        1.0
    }
}

/// `G = x sin(3 w) + cos(w)`, bounded and Lipschitz in `w`.
#[derive(Debug, Clone, Copy)]
pub struct Wave;
impl StepFunctional for Wave {
    fn name(&self) -> &'static str {
        "G=x sin3w+cos w"
    }
    fn value(&self, x: f64, w: f64) -> f64 {
        x * (3.0 * w).sin() + w.cos()
    }
    fn dw(&self, x: f64, w: f64) -> f64 {
        3.0 * x * (3.0 * w).cos() - w.sin()
    }
}

/// Gaussian integration by parts that moves `d/dx` off the crossing probability:
/// `E[G dp/dx] = -2 E[G_w p (1/sigma - (x-L) sigma'/sigma^2)] - 2 E[G p ((b/a) + (x-L)(b/a)')]`.
pub fn check_ibp(model: &dyn CoefficientModel, g: &dyn StepFunctional, x: f64, dt: f64) -> IdentityReport {
    let s = Step::new(model, x, dt);
    let c = s.c;
    let level = s.level;
    let xl = x - level;
    let pdf = crate::special::normal_pdf;
    // p phi(z) is a Gaussian centred near -2u; widen the window to cover it
    let u = xl / (c.sigma * s.sdt);
    let (lo, hi) = (-Z_MAX - 2.0 * u, Z_MAX);
    let lhs = zquad(
        |z| {
            let w = s.sdt * z;
            let x1 = s.x1(z);
            let p = raw_crossing_prob(x, x1, level, c.a, dt);
            let flow = 1.0 + c.db * dt + c.dsigma * w;
            let a_term = ((x1 - level) + xl * flow) / (c.a * dt) - c.da * xl * (x1 - level) / (c.a * c.a * dt);
            g.value(x, w) * (-2.0 * p * a_term) * pdf(z)
        },
        lo,
        hi,
        &[],
        1,
    );
    let rhs = zquad(
        |z| {
            let w = s.sdt * z;
            let p = raw_crossing_prob(x, s.x1(z), level, c.a, dt);
            let vol_term = 1.0 / c.sigma - xl * c.dsigma / (c.sigma * c.sigma);
            let drift_term = c.boa + xl * c.dboa;
            -2.0 * p * (g.dw(x, w) * vol_term + g.value(x, w) * drift_term) * pdf(z)
        },
        lo,
        hi,
        &[],
        1,
    );
    IdentityReport::new(&format!("ibp {}", g.name()), model.id(), x, dt, lhs, rhs, IBP_TOL)
}

/// Largest `|d/dx q-(x, y) + d/dy q+(x, y)|` over an `n x n` grid on `[L, L + width]^2`.
pub fn check_kernel_symmetry(sigma: f64, t: f64, level: f64, width: f64, n: usize) -> IdentityReport {
    let p = GaussKernelParams { mu: 0.0, sigma, level, t };
    let mut worst = (0.0f64, 0.0f64, level, level);
    for i in 0..n {
        for j in 0..n {
            let x = level + width * i as f64 / (n - 1) as f64;
            let y = level + width * j as f64 / (n - 1) as f64;
            let dx = killed_kernel_dx(x, y, &p);
            let dy = -reflected_kernel_dy(x, y, &p);
            if (dx - dy).abs() >= (worst.0 - worst.1).abs() {
                worst = (dx, dy, x, y);
            }
        }
    }
    let mut r = IdentityReport::new("kernel-symmetry", &format!("sigma={sigma}"), worst.2, t, worst.0, worst.1, SYMMETRY_TOL);
    r.identity = format!("kernel-symmetry y={:.3}", worst.3);
    r
}

/// Models of the default suite.
pub const SUITE_MODELS: [&str; 2] = ["tanh-drift", "bounded-rational"];
/// Step sizes of the default suite.
pub const SUITE_STEPS: [f64; 2] = [1e-2, 1e-3];
/// Start points as distances from `L` in units of `sigma(L) sqrt(dt)`; the last is a fixed 0.5.
pub const SUITE_SCALED_POINTS: [f64; 5] = [0.0, 0.1, 1.0, 3.0, 10.0];

/// Start points for one model and step size.
pub fn suite_points(model: &dyn CoefficientModel, dt: f64) -> Vec<f64> {
    let level = model.boundary();
    let unit = model.coeffs(level).sigma * dt.sqrt();
    let mut pts: Vec<f64> = SUITE_SCALED_POINTS.iter().map(|k| level + k * unit).collect();
    pts.push(level + 0.5);
    pts
}

/// The full default identity suite.
pub fn default_suite() -> Vec<IdentityReport> {
    let mut out = Vec::new();
    let functionals: [&dyn StepFunctional; 3] = [&Unit, &Linear, &Wave];
    for id in SUITE_MODELS {
        let model = build_model(id, &ParamTable::new()).expect("registry model");
        let level = model.boundary();
        let payoffs = ["expm", "smoothstep"].map(|p| build_payoff(p, &ParamTable::new(), level).expect("registry payoff"));
        for dt in SUITE_STEPS {
            for x in suite_points(model.as_ref(), dt) {
                for f in &payoffs {
                    let mut r = check_pushforward_one_step(model.as_ref(), f.as_ref(), x, dt);
                    r.identity = format!("pushforward {}", f.id());
                    out.push(r);
                }
                let sigma = model.coeffs(x).sigma;
                for mut r in check_moments(level, x, sigma, dt) {
                    r.model = id.to_string();
                    out.push(r);
                }
                for g in functionals {
                    out.push(check_ibp(model.as_ref(), g, x, dt));
                }
            }
        }
    }
    for sigma in [1.0, 2.0] {
        out.push(check_kernel_symmetry(sigma, 1.0, 0.0, 5.0 * sigma, 100));
    }
    out
}
