//! Coefficient models, the time grid and admissibility diagnostics.
//!
//! Models form a closed registry of parametrized families selected by name,
//! so a run configuration never carries formulas, only an id and numbers.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::payoff::TestFunction;

/// Named numeric parameters of a registry entry.
pub type ParamTable = BTreeMap<String, f64>;

/// Step used for finite-difference consistency probes.
pub const FD_PROBE_STEP: f64 = 1e-5;
/// Accepted gap between a declared derivative and its central difference.
pub const FD_PROBE_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown model family `{0}`")]
    UnknownModel(String),
    #[error("unknown payoff `{0}`")]
    UnknownPayoff(String),
    #[error("`{family}` has no parameter `{key}`")]
    UnknownParam { family: String, key: String },
    #[error("parameter `{key}` of `{family}` is invalid: {reason}")]
    InvalidParam {
        family: String,
        key: String,
        reason: String,
    },
    #[error("invalid time grid: {0}")]
    Grid(String),
}

/// Drift and diffusion with their first derivatives at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coeffs {
    pub b: f64,
    pub db: f64,
    pub sigma: f64,
    pub dsigma: f64,
}

/// Quantities derived from [`Coeffs`] that the weight recursions consume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedCoeffs {
    pub b: f64,
    pub db: f64,
    pub sigma: f64,
    pub dsigma: f64,
    /// `sigma^2`
    pub a: f64,
    /// `2 sigma sigma'`
    pub da: f64,
    /// `b' - sigma' b / sigma`
    pub bbar: f64,
    /// `b / a`
    pub boa: f64,
    /// `(b / a)' = (b' a - b a') / a^2`
    pub dboa: f64,
}

impl Coeffs {
    #[inline]
    pub fn derived(&self) -> DerivedCoeffs {
        let a = self.sigma * self.sigma;
        let da = 2.0 * self.sigma * self.dsigma;
        DerivedCoeffs {
            b: self.b,
            db: self.db,
            sigma: self.sigma,
            dsigma: self.dsigma,
            a,
            da,
            bbar: self.db - self.dsigma * self.b / self.sigma,
            boa: self.b / a,
            dboa: (self.db * a - self.b * da) / (a * a),
        }
    }

    /// `b / sigma`, the Girsanov kernel.
    #[inline]
    pub fn drift_ratio(&self) -> f64 {
        self.b / self.sigma
    }
}

/// Declared bounds a model promises on `[L, inf)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub b_max: f64,
    pub db_max: f64,
    pub dsigma_max: f64,
    pub sigma_max: f64,
    /// Ellipticity floor: `sigma(x) >= c_min > 0`.
    pub c_min: f64,
}

/// A time-homogeneous diffusion `dX = b(X) dt + sigma(X) dW` on `(L, inf)`.
pub trait CoefficientModel: Send + Sync + fmt::Debug {
    fn id(&self) -> &'static str;
    fn boundary(&self) -> f64;
    fn coeffs(&self, x: f64) -> Coeffs;
    fn bounds(&self) -> Bounds;
    /// Resolved parameters, defaults included.
    fn params(&self) -> ParamTable;
    /// `(drift, volatility)` when both are constant; enables the closed-form oracles.
    fn constant_coefficients(&self) -> Option<(f64, f64)> {
        None
    }
}

/// Derived coefficient bundle of `model` at `x`.
pub fn derived_coeffs(model: &dyn CoefficientModel, x: f64) -> DerivedCoeffs {
    model.coeffs(x).derived()
}

// d/du [1 / (1 + u^2)] peaks in magnitude at u = 1/sqrt(3) with value 3 sqrt(3) / 8.
const RATIONAL_BUMP_SLOPE: f64 = 0.649_519_052_838_329;

/// Constant drift and volatility: `b(x) = b`, `sigma(x) = sigma`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantModel {
    pub b: f64,
    pub sigma: f64,
    pub level: f64,
}

impl CoefficientModel for ConstantModel {
    fn id(&self) -> &'static str {
        "constant"
    }
    fn boundary(&self) -> f64 {
        self.level
    }
    #[inline]
    fn coeffs(&self, _x: f64) -> Coeffs {
        Coeffs { b: self.b, db: 0.0, sigma: self.sigma, dsigma: 0.0 }
    }
    fn bounds(&self) -> Bounds {
        Bounds {
            b_max: self.b.abs(),
            db_max: 0.0,
            dsigma_max: 0.0,
            sigma_max: self.sigma,
            c_min: self.sigma,
        }
    }
    fn params(&self) -> ParamTable {
        table(&[("b", self.b), ("sigma", self.sigma), ("L", self.level)])
    }
    fn constant_coefficients(&self) -> Option<(f64, f64)> {
        Some((self.b, self.sigma))
    }
}

/// `b(x) = beta tanh(x - L)`, `sigma(x) = s0 + s1 / (1 + (x - L)^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TanhDriftModel {
    pub beta: f64,
    pub s0: f64,
    pub s1: f64,
    pub level: f64,
}

impl CoefficientModel for TanhDriftModel {
    fn id(&self) -> &'static str {
        "tanh-drift"
    }
    fn boundary(&self) -> f64 {
        self.level
    }
    #[inline]
    fn coeffs(&self, x: f64) -> Coeffs {
        let u = x - self.level;
        let th = u.tanh();
        let r = 1.0 / (1.0 + u * u);
        Coeffs {
            b: self.beta * th,
            db: self.beta * (1.0 - th * th),
            sigma: self.s0 + self.s1 * r,
            dsigma: -2.0 * self.s1 * u * r * r,
        }
    }
    fn bounds(&self) -> Bounds {
        Bounds {
            b_max: self.beta.abs(),
            db_max: self.beta.abs(),
            dsigma_max: self.s1.abs() * RATIONAL_BUMP_SLOPE,
            sigma_max: self.s0 + self.s1.max(0.0),
            c_min: self.s0 + self.s1.min(0.0),
        }
    }
    fn params(&self) -> ParamTable {
        table(&[("beta", self.beta), ("s0", self.s0), ("s1", self.s1), ("L", self.level)])
    }
}

/// `b(x) = b0 + b1 / (1 + u^2)`, `sigma(x) = s0 + s1 u / (1 + u^2)` with `u = x - L`.
///
/// Unlike the tanh family this one has `b(L) != 0` and `sigma'(L) = s1 != 0`,
/// so every boundary term of the weights is active.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalModel {
    pub b0: f64,
    pub b1: f64,
    pub s0: f64,
    pub s1: f64,
    pub level: f64,
}

impl CoefficientModel for RationalModel {
    fn id(&self) -> &'static str {
        "bounded-rational"
    }
    fn boundary(&self) -> f64 {
        self.level
    }
    #[inline]
    fn coeffs(&self, x: f64) -> Coeffs {
        let u = x - self.level;
        let r = 1.0 / (1.0 + u * u);
        Coeffs {
            b: self.b0 + self.b1 * r,
            db: -2.0 * self.b1 * u * r * r,
            sigma: self.s0 + self.s1 * u * r,
            dsigma: self.s1 * (1.0 - u * u) * r * r,
        }
    }
    fn bounds(&self) -> Bounds {
        Bounds {
            b_max: self.b0.abs() + self.b1.abs(),
            db_max: self.b1.abs() * RATIONAL_BUMP_SLOPE,
            dsigma_max: self.s1.abs(),
            sigma_max: self.s0 + 0.5 * self.s1.max(0.0),
            c_min: self.s0 + 0.5 * self.s1.min(0.0),
        }
    }
    fn params(&self) -> ParamTable {
        table(&[
            ("b0", self.b0),
            ("b1", self.b1),
            ("s0", self.s0),
            ("s1", self.s1),
            ("L", self.level),
        ])
    }
}

fn table(entries: &[(&str, f64)]) -> ParamTable {
    entries.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Looks up parameters against a family's defaults, rejecting unknown keys.
pub(crate) struct Resolved<'a> {
    family: &'a str,
    values: ParamTable,
}

impl<'a> Resolved<'a> {
    pub(crate) fn new(
        family: &'a str,
        defaults: &[(&str, f64)],
        given: &ParamTable,
    ) -> Result<Self, ModelError> {
        let mut values = table(defaults);
        for (key, v) in given {
            if !values.contains_key(key) {
                return Err(ModelError::UnknownParam { family: family.into(), key: key.clone() });
            }
            if !v.is_finite() {
                return Err(ModelError::InvalidParam {
                    family: family.into(),
                    key: key.clone(),
                    reason: "not finite".into(),
                });
            }
            values.insert(key.clone(), *v);
        }
        Ok(Self { family, values })
    }

    pub(crate) fn get(&self, key: &str) -> f64 {
        self.values[key]
    }

    pub(crate) fn require(&self, key: &str, ok: bool, reason: &str) -> Result<(), ModelError> {
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidParam {
                family: self.family.into(),
                key: key.into(),
                reason: reason.into(),
            })
        }
    }
}

type ModelFactory = fn(&ParamTable) -> Result<Box<dyn CoefficientModel>, ModelError>;

/// One registry entry: id, parameter defaults and constructor.
pub struct ModelEntry {
    pub id: &'static str,
    pub defaults: &'static [(&'static str, f64)],
    build: ModelFactory,
}

pub static MODELS: &[ModelEntry] = &[
    ModelEntry {
        id: "constant",
        defaults: &[("b", 0.0), ("sigma", 1.0), ("L", 0.0)],
        build: |p| {
            let r = Resolved::new("constant", MODELS[0].defaults, p)?;
            r.require("sigma", r.get("sigma") > 0.0, "must be positive")?;
            Ok(Box::new(ConstantModel { b: r.get("b"), sigma: r.get("sigma"), level: r.get("L") }))
        },
    },
    ModelEntry {
        id: "tanh-drift",
        defaults: &[("beta", 0.5), ("s0", 1.0), ("s1", 0.5), ("L", 0.0)],
        build: |p| {
            let r = Resolved::new("tanh-drift", MODELS[1].defaults, p)?;
            let floor = r.get("s0") + r.get("s1").min(0.0);
            r.require("s0", floor > 0.0, "s0 + min(s1, 0) must be positive")?;
            Ok(Box::new(TanhDriftModel {
                beta: r.get("beta"),
                s0: r.get("s0"),
                s1: r.get("s1"),
                level: r.get("L"),
            }))
        },
    },
    ModelEntry {
        id: "bounded-rational",
        defaults: &[("b0", 0.3), ("b1", 0.2), ("s0", 1.0), ("s1", 0.4), ("L", 0.0)],
        build: |p| {
            let r = Resolved::new("bounded-rational", MODELS[2].defaults, p)?;
            let floor = r.get("s0") + 0.5 * r.get("s1").min(0.0);
            r.require("s0", floor > 0.0, "s0 + min(s1, 0) / 2 must be positive")?;
            Ok(Box::new(RationalModel {
                b0: r.get("b0"),
                b1: r.get("b1"),
                s0: r.get("s0"),
                s1: r.get("s1"),
                level: r.get("L"),
            }))
        },
    },
];

/// Build a registry model by id.
pub fn build_model(id: &str, params: &ParamTable) -> Result<Box<dyn CoefficientModel>, ModelError> {
    MODELS
        .iter()
        .find(|e| e.id == id)
        .ok_or_else(|| ModelError::UnknownModel(id.to_string()))
        .and_then(|e| (e.build)(params))
}

/// Uniform partition of `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    /// `n >= 1` steps with `T / n <= 1`.
    pub fn new(horizon: f64, steps: usize) -> Result<Self, ModelError> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(ModelError::Grid(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(ModelError::Grid("need at least one step".into()));
        }
        if horizon / steps as f64 > 1.0 {
            return Err(ModelError::Grid(format!(
                "step {} exceeds 1; raise the step count",
                horizon / steps as f64
            )));
        }
        Ok(Self { horizon, steps })
    }

    /// A grid with no steps; simulations on it return the initial state.
    pub fn empty(horizon: f64) -> Self {
        Self { horizon, steps: 0 }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn steps(&self) -> usize {
        self.steps
    }
    /// `T / n`; zero on an empty grid.
    pub fn dt(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.horizon / self.steps as f64
        }
    }
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt()
    }
}

/// One failed admissibility check.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    PayoffNotZeroAtBoundary { value: f64 },
    Ellipticity { x: f64, sigma: f64, floor: f64 },
    Bound { what: &'static str, x: f64, value: f64, bound: f64 },
    FiniteDifference { what: &'static str, x: f64, declared: f64, numeric: f64 },
    ProbeBelowBoundary { x: f64 },
    EmptyProbeGrid,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::PayoffNotZeroAtBoundary { value } => {
                write!(f, "f(L)=0 violated: f(L) = {value}")
            }
            Violation::Ellipticity { x, sigma, floor } => {
                write!(f, "ellipticity violated at x={x}: sigma={sigma} below floor {floor}")
            }
            Violation::Bound { what, x, value, bound } => {
                write!(f, "|{what}| bound violated at x={x}: {value} > {bound}")
            }
            Violation::FiniteDifference { what, x, declared, numeric } => {
                write!(f, "{what} inconsistent at x={x}: declared {declared}, central difference {numeric}")
            }
            Violation::ProbeBelowBoundary { x } => write!(f, "probe point {x} lies below L"),
            Violation::EmptyProbeGrid => write!(f, "probe grid is empty"),
        }
    }
}

/// Outcome of [`validate`]; empty iff model and payoff are admissible.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub violations: Vec<Violation>,
}

impl Diagnostics {
    pub fn is_admissible(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// `n` equally spaced probe points on `[L, L + width]`.
pub fn probe_grid(level: f64, width: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|k| level + width * k as f64 / (n - 1) as f64).collect()
}

/// Check ellipticity, declared bounds, derivative consistency and `f(L) = 0`.
pub fn validate(model: &dyn CoefficientModel, f: &dyn TestFunction, probes: &[f64]) -> Diagnostics {
    let mut out = Vec::new();
    let level = model.boundary();
    let fl = f.value(level);
    if fl != 0.0 {
        out.push(Violation::PayoffNotZeroAtBoundary { value: fl });
    }
    validate_model_into(model, probes, &mut out);
    let h = FD_PROBE_STEP;
    for &x in probes.iter().filter(|&&x| x >= level) {
        if let Some(d) = f.derivative(x) {
            // one-sided at L where f is only defined on [L, inf)
            let numeric = if x - h < level {
                (-3.0 * f.value(x) + 4.0 * f.value(x + h) - f.value(x + 2.0 * h)) / (2.0 * h)
            } else {
                (f.value(x + h) - f.value(x - h)) / (2.0 * h)
            };
            if (numeric - d).abs() > FD_PROBE_TOL && !f.breakpoints().iter().any(|k| (k - x).abs() < 2.0 * h) {
                out.push(Violation::FiniteDifference { what: "f'", x, declared: d, numeric });
            }
        }
    }
    Diagnostics { violations: out }
}

/// Model-only part of [`validate`].
pub fn validate_model(model: &dyn CoefficientModel, probes: &[f64]) -> Diagnostics {
    let mut out = Vec::new();
    validate_model_into(model, probes, &mut out);
    Diagnostics { violations: out }
}

fn validate_model_into(model: &dyn CoefficientModel, probes: &[f64], out: &mut Vec<Violation>) {
    if probes.is_empty() {
        out.push(Violation::EmptyProbeGrid);
        return;
    }
    let bounds = model.bounds();
    let level = model.boundary();
    let slack = 1e-12;
    let h = FD_PROBE_STEP;
    for &x in probes {
        if x < level {
            out.push(Violation::ProbeBelowBoundary { x });
            continue;
        }
        let c = model.coeffs(x);
        if !(c.sigma >= bounds.c_min && bounds.c_min > 0.0) {
            out.push(Violation::Ellipticity { x, sigma: c.sigma, floor: bounds.c_min });
        }
        let checks = [
            ("b", c.b, bounds.b_max),
            ("b'", c.db, bounds.db_max),
            ("sigma'", c.dsigma, bounds.dsigma_max),
            ("sigma", c.sigma, bounds.sigma_max),
        ];
        for (what, value, bound) in checks {
            if value.abs() > bound + slack {
                out.push(Violation::Bound { what, x, value: value.abs(), bound });
            }
        }
        let (lo, hi) = (model.coeffs(x - h), model.coeffs(x + h));
        let fd_b = (hi.b - lo.b) / (2.0 * h);
        let fd_s = (hi.sigma - lo.sigma) / (2.0 * h);
        if (fd_b - c.db).abs() > FD_PROBE_TOL {
            out.push(Violation::FiniteDifference { what: "b'", x, declared: c.db, numeric: fd_b });
        }
        if (fd_s - c.dsigma).abs() > FD_PROBE_TOL {
            out.push(Violation::FiniteDifference { what: "sigma'", x, declared: c.dsigma, numeric: fd_s });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::payoff::build_payoff;

    fn params(kv: &[(&str, f64)]) -> ParamTable {
        table(kv)
    }

    #[test]
    fn constant_model_derived_values() {
        let m = build_model("constant", &params(&[("b", 0.5)])).unwrap();
        let d = derived_coeffs(m.as_ref(), 3.0);
        assert_eq!((d.b, d.db, d.sigma, d.dsigma), (0.5, 0.0, 1.0, 0.0));
        assert_eq!((d.a, d.da, d.bbar, d.boa, d.dboa), (1.0, 0.0, 0.0, 0.5, 0.0));
    }

    #[test]
    fn zero_drift_has_no_drift_terms() {
        for id in ["constant", "tanh-drift"] {
            let key = if id == "constant" { "b" } else { "beta" };
            let m = build_model(id, &params(&[(key, 0.0)])).unwrap();
            for x in [0.0, 0.3, 2.0] {
                let d = derived_coeffs(m.as_ref(), x);
                assert_eq!((d.bbar, d.boa, d.dboa), (0.0, 0.0, 0.0));
            }
        }
    }

    #[test]
    fn tanh_model_matches_central_differences() {
        let m = build_model("tanh-drift", &ParamTable::new()).unwrap();
        let x = m.boundary() + 1.0;
        let h = 1e-5;
        let d = derived_coeffs(m.as_ref(), x);
        let (lo, hi) = (derived_coeffs(m.as_ref(), x - h), derived_coeffs(m.as_ref(), x + h));
        for (declared, numeric) in [
            (d.db, (hi.b - lo.b) / (2.0 * h)),
            (d.dsigma, (hi.sigma - lo.sigma) / (2.0 * h)),
            (d.da, (hi.a - lo.a) / (2.0 * h)),
            (d.dboa, (hi.boa - lo.boa) / (2.0 * h)),
        ] {
            assert!((declared - numeric).abs() <= 1e-8, "{declared} vs {numeric}");
        }
    }

    #[test]
    fn derived_identities_hold() {
        for e in MODELS {
            let m = build_model(e.id, &ParamTable::new()).unwrap();
            for x in probe_grid(m.boundary(), 6.0, 61) {
                let d = derived_coeffs(m.as_ref(), x);
                assert_eq!(d.a, d.sigma * d.sigma);
                assert_eq!(d.da, 2.0 * d.sigma * d.dsigma);
                let want = (d.db * d.a - d.b * d.da) / (d.a * d.a);
                assert!((d.dboa - want).abs() <= 1e-15 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn registry_models_respect_bounds_on_probe_grid() {
        for e in MODELS {
            let m = build_model(e.id, &ParamTable::new()).unwrap();
            let probes = probe_grid(m.boundary(), 20.0, 1000);
            let report = validate_model(m.as_ref(), &probes);
            assert!(report.is_admissible(), "{}: {report}", e.id);
        }
    }

    #[test]
    fn derived_coeffs_is_pure() {
        let m = build_model("bounded-rational", &ParamTable::new()).unwrap();
        let a = derived_coeffs(m.as_ref(), 0.731);
        let b = derived_coeffs(m.as_ref(), 0.731);
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn unknown_parameter_is_named() {
        let err = build_model("constant", &params(&[("sigma_typo", 1.0)])).unwrap_err();
        assert_eq!(
            err,
            ModelError::UnknownParam { family: "constant".into(), key: "sigma_typo".into() }
        );
        assert!(err.to_string().contains("sigma_typo"));
    }

    #[test]
    fn degenerate_volatility_rejected() {
        assert!(build_model("constant", &params(&[("sigma", 0.0)])).is_err());
        assert!(build_model("tanh-drift", &params(&[("s0", 0.2), ("s1", -0.3)])).is_err());
        assert!(matches!(build_model("heston", &ParamTable::new()), Err(ModelError::UnknownModel(_))));
    }

    #[test]
    fn payoff_checks_in_validate() {
        let m = build_model("constant", &ParamTable::new()).unwrap();
        let probes = probe_grid(0.0, 5.0, 50);
        let good = build_payoff("expm", &ParamTable::new(), 0.0).unwrap();
        assert!(validate(m.as_ref(), good.as_ref(), &probes).is_admissible());
        let bad = build_payoff("unit", &ParamTable::new(), 0.0).unwrap();
        let report = validate(m.as_ref(), bad.as_ref(), &probes);
        assert_eq!(report.violations.len(), 1);
        assert!(report.to_string().contains("f(L)=0 violated"));
    }

    #[derive(Debug)]
    struct Degenerate;
    impl CoefficientModel for Degenerate {
        fn id(&self) -> &'static str {
            "degenerate"
        }
        fn boundary(&self) -> f64 {
            0.0
        }
        fn coeffs(&self, x: f64) -> Coeffs {
            Coeffs { b: 0.0, db: 0.0, sigma: x, dsigma: 1.0 }
        }
        fn bounds(&self) -> Bounds {
            Bounds { b_max: 0.0, db_max: 0.0, dsigma_max: 1.0, sigma_max: 100.0, c_min: 0.0 }
        }
        fn params(&self) -> ParamTable {
            ParamTable::new()
        }
    }

    #[test]
    fn vanishing_volatility_flags_ellipticity() {
        let report = validate_model(&Degenerate, &probe_grid(0.0, 1.0, 11));
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::Ellipticity { x, .. } if *x == 0.0)));
    }

    #[test]
    fn grid_invariants() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        assert_eq!(g.dt(), 0.25);
        assert_eq!(g.time(3), 0.75);
        assert!(TimeGrid::new(2.0, 1).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
        assert_eq!(TimeGrid::empty(1.0).steps(), 0);
    }
}
