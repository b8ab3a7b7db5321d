//! Finite-difference reference for general coefficients.
//!
//! Solves `u_t = a(x)/2 u_xx + b(x) u_x` on `(L, R)` with `u(t, L) = 0`,
//! `u(0, .) = f` and a zero-flux ghost node at `R`, using a theta-scheme on a
//! uniform grid. The first Crank-Nicolson step is replaced by two backward
//! Euler half steps to damp the start-up oscillations of rough data.

use crate::model::CoefficientModel;
use crate::oracle_analytic::{OracleError, OracleResult};
use crate::payoff::TestFunction;

/// Number of Crank-Nicolson steps replaced by pairs of implicit half steps.
const STARTUP_STEPS: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeGrid {
    pub right: f64,
    pub nx: usize,
    pub nt: usize,
    /// Implicitness; 0.5 is Crank-Nicolson, 1 is backward Euler.
    pub theta: f64,
}

impl PdeGrid {
    /// Crank-Nicolson grid with `R = x + max(8 sigma_max sqrt(T), 10)`.
    pub fn for_point(model: &dyn CoefficientModel, x: f64, t: f64, nx: usize, nt: usize) -> Self {
        let reach = 8.0 * model.bounds().sigma_max * t.sqrt();
        Self { right: x + reach.max(10.0), nx, nt, theta: 0.5 }
    }

    pub fn refined(&self) -> Self {
        Self { nx: 2 * self.nx, nt: 2 * self.nt, ..*self }
    }
}

/// `u(T, .)` on the nodes `L + j dx`, `j = 0..=nx`.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub level: f64,
    pub dx: f64,
    pub values: Vec<f64>,
}

impl Profile {
    pub fn node(&self, j: usize) -> f64 {
        self.level + j as f64 * self.dx
    }

    /// Five consecutive nodes around `x`, shifted inwards near either end.
    fn stencil(&self, x: f64) -> Result<usize, OracleError> {
        let last = self.values.len() - 1;
        let s = (x - self.level) / self.dx;
        if !(s >= 0.0 && s <= (last - 2) as f64) || last < 4 {
            return Err(OracleError::Pde(format!(
                "x = {x} outside [L, R - 2 dx] = [{}, {}]",
                self.level,
                self.node(last.saturating_sub(2))
            )));
        }
        let j = s.round() as usize;
        Ok(j.saturating_sub(2).min(last - 4))
    }

    /// Value of the quartic interpolant at `x`.
    pub fn value_at(&self, x: f64) -> Result<f64, OracleError> {
        let start = self.stencil(x)?;
        let s = (x - self.node(start)) / self.dx;
        let mut acc = 0.0;
        for k in 0..5 {
            let mut w = 1.0;
            for m in (0..5).filter(|&m| m != k) {
                w *= (s - m as f64) / (k as f64 - m as f64);
            }
            acc += w * self.values[start + k];
        }
        Ok(acc)
    }
}

/// Step `u(0, .) = f` to time `t`.
pub fn solve_dirichlet(
    model: &dyn CoefficientModel,
    f: &dyn TestFunction,
    t: f64,
    grid: &PdeGrid,
) -> Result<Profile, OracleError> {
    let level = model.boundary();
    if !(grid.right > level && grid.nx >= 4 && grid.nt >= 1 && (0.5..=1.0).contains(&grid.theta) && t > 0.0) {
        return Err(OracleError::Pde(format!("degenerate grid {grid:?} for T = {t}")));
    }
    let nx = grid.nx;
    let dx = (grid.right - level) / nx as f64;
    let bounds = model.bounds();
    let peclet = bounds.b_max * dx / (bounds.c_min * bounds.c_min);
    if peclet >= 1.0 {
        return Err(OracleError::Pde(format!("cell Peclet number {} too large; refine the grid", 2.0 * peclet)));
    }
    // row j of the generator: lo u_{j-1} + mid u_j + hi u_{j+1}, j = 1..=nx
    let mut lo = vec![0.0; nx + 1];
    let mut mid = vec![0.0; nx + 1];
    let mut hi = vec![0.0; nx + 1];
    for j in 1..=nx {
        let c = model.coeffs(level + j as f64 * dx);
        let alpha = 0.5 * c.sigma * c.sigma / (dx * dx);
        let beta = c.b / (2.0 * dx);
        if j == nx {
            // ghost node u_{nx+1} = u_{nx-1}
            lo[j] = 2.0 * alpha;
            mid[j] = -2.0 * alpha;
        } else {
            lo[j] = alpha - beta;
            mid[j] = -2.0 * alpha;
            hi[j] = alpha + beta;
        }
    }
    let mut u: Vec<f64> = (0..=nx).map(|j| if j == 0 { 0.0 } else { f.value(level + j as f64 * dx) }).collect();
    let dt = t / grid.nt as f64;
    let mut stepper = ThetaStepper::new(nx);
    for k in 0..grid.nt {
        if k < STARTUP_STEPS && grid.theta < 1.0 {
            stepper.step(&mut u, &lo, &mid, &hi, 0.5 * dt, 1.0);
            stepper.step(&mut u, &lo, &mid, &hi, 0.5 * dt, 1.0);
        } else {
            stepper.step(&mut u, &lo, &mid, &hi, dt, grid.theta);
        }
    }
    Ok(Profile { level, dx, values: u })
}

struct ThetaStepper {
    rhs: Vec<f64>,
    c_prime: Vec<f64>,
}

impl ThetaStepper {
    fn new(nx: usize) -> Self {
        Self { rhs: vec![0.0; nx + 1], c_prime: vec![0.0; nx + 1] }
    }

    /// `(I - th dt A) u' = (I + (1 - th) dt A) u` with `u'_0 = 0`, by the Thomas algorithm.
    fn step(&mut self, u: &mut [f64], lo: &[f64], mid: &[f64], hi: &[f64], dt: f64, th: f64) {
        let nx = u.len() - 1;
        let ex = (1.0 - th) * dt;
        for j in 1..=nx {
            let right = if j < nx { hi[j] * u[j + 1] } else { 0.0 };
            self.rhs[j] = u[j] + ex * (lo[j] * u[j - 1] + mid[j] * u[j] + right);
        }
        let im = th * dt;
        // forward sweep; u_0 = 0 drops the first sub-diagonal entry
        let mut denom = 1.0 - im * mid[1];
        self.c_prime[1] = -im * hi[1] / denom;
        self.rhs[1] /= denom;
        for j in 2..=nx {
            let a = -im * lo[j];
            denom = 1.0 - im * mid[j] - a * self.c_prime[j - 1];
            self.c_prime[j] = if j < nx { -im * hi[j] / denom } else { 0.0 };
            self.rhs[j] = (self.rhs[j] - a * self.rhs[j - 1]) / denom;
        }
        u[nx] = self.rhs[nx];
        for j in (1..nx).rev() {
            u[j] = self.rhs[j] - self.c_prime[j] * u[j + 1];
        }
        u[0] = 0.0;
    }
}

/// `u_x` at `x` by differentiating the quartic through five neighbouring nodes.
///
/// Central in the interior, one-sided next to `L` where `u(L) = 0` is pinned.
pub fn pde_deriv(profile: &Profile, x: f64) -> Result<f64, OracleError> {
    let start = profile.stencil(x)?;
    let s = (x - profile.node(start)) / profile.dx;
    let mut acc = 0.0;
    for k in 0..5 {
        // derivative of the k-th Lagrange basis polynomial at s
        let mut dw = 0.0;
        for skip in (0..5).filter(|&m| m != k) {
            let mut term = 1.0 / (k as f64 - skip as f64);
            for m in (0..5).filter(|&m| m != k && m != skip) {
                term *= (s - m as f64) / (k as f64 - m as f64);
            }
            dw += term;
        }
        acc += dw * profile.values[start + k];
    }
    Ok(acc / profile.dx)
}

/// Reference value or derivative at `x` with its self-convergence gap.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeReference {
    pub coarse: f64,
    pub fine: f64,
    pub grid: PdeGrid,
}

impl PdeReference {
    pub fn gap(&self) -> f64 {
        (self.fine - self.coarse).abs()
    }

    pub fn result(&self) -> OracleResult {
        OracleResult { value: self.fine, tolerance: self.gap(), method: "crank-nicolson", cross_check: Some(self.coarse) }
    }
}

/// Solve on `(nx, nt)` and on the doubled grid, reporting the finer answer.
pub fn pde_oracle(
    model: &dyn CoefficientModel,
    f: &dyn TestFunction,
    x: f64,
    t: f64,
    nx: usize,
    nt: usize,
    derivative: bool,
) -> Result<PdeReference, OracleError> {
    let level = model.boundary();
    if x < level {
        return Err(OracleError::OutsideDomain { x, level });
    }
    let grid = PdeGrid::for_point(model, x, t, nx, nt);
    let eval = |g: &PdeGrid| -> Result<f64, OracleError> {
        let profile = solve_dirichlet(model, f, t, g)?;
        if derivative {
            pde_deriv(&profile, x)
        } else {
            profile.value_at(x)
        }
    };
    let coarse = eval(&grid)?;
    let fine = eval(&grid.refined())?;
    Ok(PdeReference { coarse, fine, grid })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ParamTable};
    use crate::oracle_analytic::{oracle_deriv, oracle_value, GaussKernelParams};
    use crate::payoff::build_payoff;

    fn brownian() -> Box<dyn CoefficientModel> {
        build_model("constant", &ParamTable::new()).unwrap()
    }

    #[test]
    fn zero_payoff_stays_zero() {
        let m = brownian();
        let f = build_payoff("zero", &ParamTable::new(), 0.0).unwrap();
        let g = PdeGrid::for_point(m.as_ref(), 0.5, 1.0, 200, 100);
        let p = solve_dirichlet(m.as_ref(), f.as_ref(), 1.0, &g).unwrap();
        assert!(p.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_profile_derivative_is_exact() {
        let p = Profile { level: 0.3, dx: 0.01, values: (0..100).map(|j| 2.5 * j as f64 * 0.01).collect() };
        for x in [0.3, 0.3004, 0.55, 1.2] {
            assert!((pde_deriv(&p, x).unwrap() - 2.5).abs() < 1e-12);
        }
        assert!(pde_deriv(&p, 1.28).is_err());
    }

    #[test]
    fn matches_brownian_kernel() {
        let m = brownian();
        let f = build_payoff("expm", &ParamTable::new(), 0.0).unwrap();
        let g = PdeGrid::for_point(m.as_ref(), 0.5, 1.0, 4000, 4000);
        let prof = solve_dirichlet(m.as_ref(), f.as_ref(), 1.0, &g).unwrap();
        let bm = GaussKernelParams::brownian(1.0);
        let exact = oracle_value(f.as_ref(), 0.5, &bm).unwrap().value;
        assert!((prof.value_at(0.5).unwrap() - exact).abs() < 1e-6);
        for x in [0.0, 0.5] {
            let exact_d = oracle_deriv(f.as_ref(), x, &bm).unwrap().value;
            assert!((pde_deriv(&prof, x).unwrap() - exact_d).abs() < 1e-5, "x = {x}");
        }
        assert_eq!(prof.values[0], 0.0);
    }

    #[test]
    fn positivity_and_mass_bound() {
        let m = build_model("tanh-drift", &ParamTable::new()).unwrap();
        let f = build_payoff("smoothstep", &ParamTable::new(), 0.0).unwrap();
        let g = PdeGrid::for_point(m.as_ref(), 0.5, 1.0, 800, 800);
        let prof = solve_dirichlet(m.as_ref(), f.as_ref(), 1.0, &g).unwrap();
        assert!(prof.values.iter().all(|&v| (-1e-14..=1.0 + 1e-12).contains(&v)));
    }

    #[test]
    fn self_convergence_is_second_order() {
        let m = build_model("tanh-drift", &ParamTable::new()).unwrap();
        let f = build_payoff("expm", &ParamTable::new(), 0.0).unwrap();
        let vals: Vec<f64> = [250, 500, 1000, 2000]
            .iter()
            .map(|&n| {
                let g = PdeGrid::for_point(m.as_ref(), 0.5, 1.0, n, n);
                solve_dirichlet(m.as_ref(), f.as_ref(), 1.0, &g).unwrap().value_at(0.5).unwrap()
            })
            .collect();
        let gaps: Vec<f64> = vals.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        for w in gaps.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 1.8, "order {order} from gaps {gaps:?}");
        }
    }

    #[test]
    fn derivative_stencil_is_fourth_order_in_space() {
        // exact profile sin on a grid; halving dx shrinks the error about 16x
        let err = |dx: f64| {
            let n = (2.0 / dx) as usize;
            let p = Profile { level: 0.0, dx, values: (0..=n).map(|j| (j as f64 * dx).sin()).collect() };
            (pde_deriv(&p, 0.7).unwrap() - 0.7f64.cos()).abs()
        };
        let ratio = err(0.02) / err(0.01);
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
    }

    #[test]
    fn truncation_guard() {
        let m = brownian();
        let f = build_payoff("expm", &ParamTable::new(), 0.0).unwrap();
        let g = PdeGrid { right: 0.0, nx: 10, nt: 10, theta: 0.5 };
        assert!(solve_dirichlet(m.as_ref(), f.as_ref(), 1.0, &g).is_err());
    }
}
