//! Path engines.
//!
//! * `engine1`: the driftless reflected chain with crossing flags. Each step
//!   draws from the reflected kernel and flags a bridge crossing with
//!   probability `2p / (1 + p)`; drift enters later through Girsanov weights.
//! * `engine1-importance`: the same chain realized as plain driftless Euler
//!   steps with flags `U <= p` and multiplicative weight `1{X > L} (1 + flag)`.
//! * `engine2`: the symmetrized reflected Euler scheme with drift.
//!
//! A killed Euler chain for value estimation lives alongside.

use std::fmt;

use crate::model::{CoefficientModel, DerivedCoeffs, TimeGrid};
use crate::rng::{RngStream, Substream};
use crate::special::theta;

/// Exponent below which the crossing probability is reported as exactly 0.
///
/// `exp(-44) < 2^-63`, finer than the 2^-53 lattice of the flag uniforms, so
/// the clamp changes no flag decision except on the single lattice point 0.
pub const MIN_EXPONENT: f64 = -44.0;

/// Brownian-bridge probability that a step from `x_prev` to `x_next` touched `level`.
///
/// `exp(-2 (x_prev - L)(x_next - L) / (a_prev dt))`, and 1 once `x_next` is below `L`.
#[inline]
pub fn crossing_prob(x_prev: f64, x_next: f64, level: f64, a_prev: f64, dt: f64) -> f64 {
    if x_next < level {
        return 1.0;
    }
    let e = (-2.0 * (x_prev - level) * (x_next - level) / (a_prev * dt)).min(0.0);
    if e < MIN_EXPONENT {
        0.0
    } else {
        e.exp()
    }
}

/// One draw from the reflected kernel: `y = L + |x - L + sigma sqrt(dt) g|`, `z = (y - x) / sigma`.
#[inline]
pub fn reflected_step(x: f64, level: f64, sigma_x: f64, dt: f64, gauss: f64) -> (f64, f64) {
    let y = level + (x - level + sigma_x * dt.sqrt() * gauss).abs();
    (y, (y - x) / sigma_x)
}

/// How the reflected chain's crossing flags are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    /// Reflected draws with flag probability `2p / (1 + p)`; unit weights.
    Direct,
    /// Unreflected draws with flag probability `p`; weight `1{X > L}(1 + flag)`.
    Importance,
}

#[inline]
pub fn crossing_flag(p: f64, u: f64, backend: Backend) -> bool {
    match backend {
        Backend::Importance => u <= p,
        Backend::Direct => u <= 2.0 * p / (1.0 + p),
    }
}

/// Expected one-step regulator increment of the reflected chain, `2 sigma sqrt(dt) theta(u)`.
#[inline]
pub fn regulator_increment(x_prev: f64, level: f64, sigma_prev: f64, dt: f64) -> f64 {
    let s = sigma_prev * dt.sqrt();
    2.0 * s * theta((x_prev - level) / s)
}

/// Which measure the stored increments live under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    /// Driftless chain; drift is restored by the Girsanov weight.
    Driftless,
    /// Chain simulated with its drift.
    Drifted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathStep {
    pub x_prev: f64,
    pub x_next: f64,
    /// Increment with variance `dt` under the sampling measure, `x_next = x_prev + sigma z` for engine 1.
    pub z: f64,
    /// Brownian increment under the drifted measure.
    pub dw: f64,
    pub flag: bool,
    pub p: f64,
    pub db: f64,
    /// Coefficients at `x_prev`.
    pub coeffs: DerivedCoeffs,
}

/// A simulated trajectory. Buffers are reused across paths.
#[derive(Debug, Clone)]
pub struct PathRecord {
    pub engine: &'static str,
    pub measure: Measure,
    pub level: f64,
    pub dt: f64,
    pub x0: f64,
    pub steps: Vec<PathStep>,
    pub terminal: f64,
    /// 1-based index of the first flagged step.
    pub first_cross: Option<usize>,
    /// 1-based index of the last flagged step.
    pub last_cross: Option<usize>,
    /// Importance weight of the path; 1 for the direct engines, 0 for a killed importance path.
    pub weight: f64,
}

impl PathRecord {
    pub fn new() -> Self {
        Self {
            engine: "",
            measure: Measure::Driftless,
            level: 0.0,
            dt: 0.0,
            x0: 0.0,
            steps: Vec::new(),
            terminal: 0.0,
            first_cross: None,
            last_cross: None,
            weight: 1.0,
        }
    }

    fn reset(&mut self, engine: &'static str, measure: Measure, level: f64, dt: f64, x0: f64, n: usize) {
        self.engine = engine;
        self.measure = measure;
        self.level = level;
        self.dt = dt;
        self.x0 = x0;
        self.steps.clear();
        self.steps.reserve(n);
        self.terminal = x0;
        self.first_cross = None;
        self.last_cross = None;
        self.weight = 1.0;
    }

    #[inline]
    fn push(&mut self, step: PathStep) {
        self.terminal = step.x_next;
        if step.flag {
            let i = self.steps.len() + 1;
            self.first_cross.get_or_insert(i);
            self.last_cross = Some(i);
        }
        self.steps.push(step);
    }

    pub fn any_flag(&self) -> bool {
        self.last_cross.is_some()
    }
}

impl Default for PathRecord {
    fn default() -> Self {
        Self::new()
    }
}

/// A path-generation strategy selectable by name.
pub trait PathEngine: Send + Sync + fmt::Debug {
    fn id(&self) -> &'static str;
    fn measure(&self) -> Measure;
    /// Simulate the path of `stream` from `x0` into `rec`.
    fn simulate(&self, model: &dyn CoefficientModel, grid: &TimeGrid, stream: &RngStream, x0: f64, rec: &mut PathRecord);
}

/// The driftless reflected chain with crossing flags.
#[derive(Debug, Clone, Copy)]
pub struct ReflectedChain {
    pub backend: Backend,
}

impl PathEngine for ReflectedChain {
    fn id(&self) -> &'static str {
        match self.backend {
            Backend::Direct => "engine1",
            Backend::Importance => "engine1-importance",
        }
    }

    fn measure(&self) -> Measure {
        Measure::Driftless
    }

    fn simulate(&self, model: &dyn CoefficientModel, grid: &TimeGrid, stream: &RngStream, x0: f64, rec: &mut PathRecord) {
        let level = model.boundary();
        let dt = grid.dt();
        let sdt = dt.sqrt();
        rec.reset(self.id(), Measure::Driftless, level, dt, x0, grid.steps());
        let mut x = x0;
        for i in 1..=grid.steps() {
            let c = model.coeffs(x).derived();
            let g = stream.gaussian(i as u64);
            let (y, z) = match self.backend {
                Backend::Direct => reflected_step(x, level, c.sigma, dt, g),
                Backend::Importance => (x + c.sigma * sdt * g, sdt * g),
            };
            let p = crossing_prob(x, y, level, c.a, dt);
            let flag = p > 0.0 && crossing_flag(p, stream.uniform(i as u64, Substream::FlagUniform), self.backend);
            rec.push(PathStep {
                x_prev: x,
                x_next: y,
                z,
                dw: z - c.b / c.sigma * dt,
                flag,
                p,
                db: regulator_increment(x, level, c.sigma, dt),
                coeffs: c,
            });
            if self.backend == Backend::Importance {
                if y <= level {
                    rec.weight = 0.0;
                    return;
                }
                if flag {
                    rec.weight *= 2.0;
                }
            }
            x = y;
        }
    }
}

/// Symmetrized reflected Euler scheme with drift.
#[derive(Debug, Clone, Copy)]
pub struct SymmetrizedEuler;

impl PathEngine for SymmetrizedEuler {
    fn id(&self) -> &'static str {
        "engine2"
    }

    fn measure(&self) -> Measure {
        Measure::Drifted
    }

    fn simulate(&self, model: &dyn CoefficientModel, grid: &TimeGrid, stream: &RngStream, x0: f64, rec: &mut PathRecord) {
        let level = model.boundary();
        let dt = grid.dt();
        let sdt = dt.sqrt();
        rec.reset(self.id(), Measure::Drifted, level, dt, x0, grid.steps());
        let mut y = x0;
        for i in 1..=grid.steps() {
            let c = model.coeffs(y).derived();
            let dw = sdt * stream.gaussian(i as u64);
            let proposal = y + c.b * dt + c.sigma * dw;
            let next = level + (proposal - level).abs();
            let db = 2.0 * (level - proposal).max(0.0);
            let p = crossing_prob(y, next, level, c.a, dt);
            let flag = proposal < level
                || (p > 0.0 && stream.uniform(i as u64, Substream::Auxiliary) <= p);
            rec.push(PathStep {
                x_prev: y,
                x_next: next,
                z: dw + c.b / c.sigma * dt,
                dw,
                flag,
                p,
                db,
                coeffs: c,
            });
            y = next;
        }
    }
}

pub static ENGINE1: ReflectedChain = ReflectedChain { backend: Backend::Direct };
pub static ENGINE1_IMPORTANCE: ReflectedChain = ReflectedChain { backend: Backend::Importance };
pub static ENGINE2: SymmetrizedEuler = SymmetrizedEuler;

/// Every registered path engine.
pub static ENGINES: &[&dyn PathEngine] = &[&ENGINE1, &ENGINE1_IMPORTANCE, &ENGINE2];

pub fn engine_by_id(id: &str) -> Option<&'static dyn PathEngine> {
    ENGINES.iter().copied().find(|e| e.id() == id)
}

/// How the killing of the Euler chain is accounted for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurvivalMode {
    /// Kill when a step ends below `L` or a uniform falls below the bridge probability.
    Bernoulli,
    /// Multiply the bridge non-crossing probabilities instead of sampling them.
    Conditional,
    /// Kill only when a step ends at or below `L`; no bridge correction.
    Discrete,
}

impl SurvivalMode {
    pub fn id(&self) -> &'static str {
        match self {
            SurvivalMode::Bernoulli => "bernoulli",
            SurvivalMode::Conditional => "conditional",
            SurvivalMode::Discrete => "discrete",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        [SurvivalMode::Bernoulli, SurvivalMode::Conditional, SurvivalMode::Discrete]
            .into_iter()
            .find(|m| m.id() == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KilledOutcome {
    pub terminal: f64,
    pub survival: f64,
}

/// Euler chain with drift, killed at `L`.
pub fn simulate_killed(
    model: &dyn CoefficientModel,
    grid: &TimeGrid,
    stream: &RngStream,
    x0: f64,
    mode: SurvivalMode,
) -> KilledOutcome {
    let level = model.boundary();
    if x0 <= level {
        return KilledOutcome { terminal: x0, survival: 0.0 };
    }
    let dt = grid.dt();
    let sdt = dt.sqrt();
    let mut x = x0;
    let mut survival = 1.0;
    for i in 1..=grid.steps() {
        let c = model.coeffs(x);
        let y = x + c.b * dt + c.sigma * sdt * stream.gaussian(i as u64);
        if y <= level {
            return KilledOutcome { terminal: y, survival: 0.0 };
        }
        match mode {
            SurvivalMode::Discrete => {}
            SurvivalMode::Conditional => {
                survival *= 1.0 - crossing_prob(x, y, level, c.sigma * c.sigma, dt);
            }
            SurvivalMode::Bernoulli => {
                let p = crossing_prob(x, y, level, c.sigma * c.sigma, dt);
                if p > 0.0 && stream.uniform(i as u64, Substream::FlagUniform) <= p {
                    return KilledOutcome { terminal: y, survival: 0.0 };
                }
            }
        }
        x = y;
    }
    KilledOutcome { terminal: x, survival }
}

/// Plain Euler chain with no boundary at all.
pub fn simulate_free(model: &dyn CoefficientModel, grid: &TimeGrid, stream: &RngStream, x0: f64) -> f64 {
    let sdt = grid.dt().sqrt();
    let dt = grid.dt();
    (1..=grid.steps()).fold(x0, |x, i| {
        let c = model.coeffs(x);
        x + c.b * dt + c.sigma * sdt * stream.gaussian(i as u64)
    })
}
