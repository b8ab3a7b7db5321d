//! Per-step weight recursions folded along a simulated path.
//!
//! Multiplicative weights that are always positive (`K`, `Psi`) are kept in
//! log space. `E` and `Ehat` can change sign for large increments and are
//! accumulated as plain products.

use crate::model::{CoefficientModel, DerivedCoeffs};
use crate::sampling::{Measure, PathRecord, PathStep};

pub use crate::sampling::regulator_increment;
pub use crate::special::theta;

/// `(b / a)(L)` and twice that.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryConstants {
    pub boa_l: f64,
    pub two_boa_l: f64,
}

impl BoundaryConstants {
    pub fn new(model: &dyn CoefficientModel) -> Self {
        let d = model.coeffs(model.boundary()).derived();
        Self { boa_l: d.boa, two_boa_l: 2.0 * d.boa }
    }
}

/// Flow-derivative factor written in the sampling increment `z`.
///
/// `u` is the scaled distance `(x_prev - L) / (sigma sqrt(dt))`.
#[inline]
pub fn step_e(c: &DerivedCoeffs, z: f64, flag: bool, u: f64, dt: f64) -> f64 {
    if flag {
        // sigma' z - sigma' (z + sqrt(dt) u) with the z terms cancelled
        1.0 - c.dsigma * dt.sqrt() * u
    } else {
        1.0 + c.bbar * dt + c.dsigma * z
    }
}

/// Girsanov log-increment `(b / sigma) z - (b / sigma)^2 dt / 2`.
#[inline]
pub fn step_kappa(c: &DerivedCoeffs, z: f64, dt: f64) -> f64 {
    let r = c.b / c.sigma;
    r * z - 0.5 * r * r * dt
}

/// Drift-boundary weight `1{flag} [(b / a) + (x_prev - L)(b / a)']`.
#[inline]
pub fn step_h(c: &DerivedCoeffs, flag: bool, x_prev_minus_level: f64) -> f64 {
    if flag {
        c.boa + x_prev_minus_level * c.dboa
    } else {
        0.0
    }
}

/// Log-increment of the discrete `Psi`.
#[inline]
pub fn step_psi(c: &DerivedCoeffs, dw: f64, db: f64, consts: &BoundaryConstants, dt: f64) -> f64 {
    (c.db - 0.5 * c.dsigma * c.dsigma) * dt + c.dsigma * dw + consts.two_boa_l * db
}

/// BEL flow factor; on a flagged step only the boundary push `(b / a)(L)(x_next - L)` survives.
#[inline]
pub fn step_ehat(
    c: &DerivedCoeffs,
    dw: f64,
    flag: bool,
    x_next_minus_level: f64,
    dt: f64,
    consts: &BoundaryConstants,
) -> f64 {
    if flag {
        1.0 + consts.boa_l * x_next_minus_level
    } else {
        1.0 + c.db * dt + c.dsigma * dw
    }
}

/// Switches for [`fold_weights`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FoldOptions {
    /// On a flagged step, start the BEL integral from the part of the step spent
    /// above `L`, `(x_next - L) / sigma`, instead of from zero.
    pub entry_correction: bool,
}

impl Default for FoldOptions {
    fn default() -> Self {
        Self { entry_correction: true }
    }
}

/// Running weight functionals of one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightState {
    pub e: f64,
    pub log_k: f64,
    pub b: f64,
    pub log_psi: f64,
    pub ehat: f64,
    /// `E` just before the last flagged step; 0 when nothing was flagged.
    pub e_before_last_cross: f64,
    /// Stochastic integral `sum sigma^{-1} dw * W` over the last excursion.
    pub bel_sum: f64,
    pub step: usize,
    pub first_cross: Option<usize>,
    pub last_cross: Option<usize>,
}

impl Default for WeightState {
    fn default() -> Self {
        Self::new()
    }
}

impl WeightState {
    pub fn new() -> Self {
        Self {
            e: 1.0,
            log_k: 0.0,
            b: 0.0,
            log_psi: 0.0,
            ehat: 1.0,
            e_before_last_cross: 0.0,
            bel_sum: 0.0,
            step: 0,
            first_cross: None,
            last_cross: None,
        }
    }

    pub fn k(&self) -> f64 {
        self.log_k.exp()
    }

    pub fn psi(&self) -> f64 {
        self.log_psi.exp()
    }

    /// Advance by one step of a path simulated under `measure`.
    #[inline]
    pub fn update(
        &mut self,
        s: &PathStep,
        measure: Measure,
        level: f64,
        dt: f64,
        consts: &BoundaryConstants,
        opts: FoldOptions,
    ) {
        let c = &s.coeffs;
        self.step += 1;
        // the BEL integrand is the weight before this step
        let integrand_weight = match measure {
            Measure::Driftless => self.ehat,
            Measure::Drifted => self.psi(),
        };
        if s.flag {
            self.e_before_last_cross = self.e;
            self.first_cross.get_or_insert(self.step);
            self.last_cross = Some(self.step);
            self.bel_sum = if opts.entry_correction {
                (s.x_next - level) / c.sigma * integrand_weight
            } else {
                0.0
            };
        } else {
            self.bel_sum += s.dw / c.sigma * integrand_weight;
        }
        self.b += s.db;
        self.log_psi += step_psi(c, s.dw, s.db, consts, dt);
        if measure == Measure::Driftless {
            let u = (s.x_prev - level) / (c.sigma * dt.sqrt());
            self.e *= step_e(c, s.z, s.flag, u, dt);
            self.log_k += step_kappa(c, s.z, dt);
            self.ehat *= step_ehat(c, s.dw, s.flag, s.x_next - level, dt, consts);
        }
    }
}

/// Fold every step of `path` into a terminal [`WeightState`].
pub fn fold_weights(path: &PathRecord, consts: &BoundaryConstants, opts: FoldOptions) -> WeightState {
    let mut w = WeightState::new();
    for s in &path.steps {
        w.update(s, path.measure, path.level, path.dt, consts, opts);
    }
    w
}

/// `E` before the last flag, recomputed from scratch by a second pass.
pub fn recompute_snapshot(path: &PathRecord) -> f64 {
    let Some(last) = path.last_cross else {
        return 0.0;
    };
    let sdt = path.dt.sqrt();
    path.steps[..last - 1].iter().fold(1.0, |e, s| {
        let u = (s.x_prev - path.level) / (s.coeffs.sigma * sdt);
        e * step_e(&s.coeffs, s.z, s.flag, u, path.dt)
    })
}
