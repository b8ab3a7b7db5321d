//! Monte Carlo estimators of `P_T f(x)` and `d/dx P_T f(x)`.
//!
//! Each estimator maps one path index to one sample; [`run`] spreads path
//! indices over a fixed chunk plan and merges per-chunk Welford accumulators.
//! With `strict` the chunks are merged sequentially in index order, which
//! makes the result bitwise reproducible independent of the thread count.

use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{build_model, CoefficientModel, ModelError, ParamTable, TimeGrid};
use crate::payoff::{build_payoff, Smoothness, TestFunction};
use crate::rng::RngStream;
use crate::sampling::{engine_by_id, simulate_killed, Measure, PathEngine, PathRecord, SurvivalMode};
use crate::weights::{fold_weights, BoundaryConstants, FoldOptions, WeightState};

/// Paths per accumulation chunk.
pub const CHUNK_PATHS: u64 = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("unknown estimator `{0}`")]
    UnknownEstimator(String),
    #[error("unknown engine `{0}`")]
    UnknownEngine(String),
    #[error("x0 = {x0} lies below the boundary L = {level}")]
    OutsideDomain { x0: f64, level: f64 },
    #[error("need at least one path")]
    NoPaths,
    #[error("estimator `{estimator}` needs a differentiable payoff, `{payoff}` is only measurable")]
    NeedsDerivative { estimator: &'static str, payoff: String },
    #[error("estimator `{estimator}` does not support engine `{engine}`")]
    UnsupportedEngine { estimator: &'static str, engine: String },
    #[error("finite-difference step must be positive and finite, got {0}")]
    BadFdStep(f64),
    #[error("failed to start worker pool: {0}")]
    Pool(String),
}

/// Everything that determines the numbers of an estimation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub model: String,
    pub model_params: ParamTable,
    pub payoff: String,
    pub payoff_params: ParamTable,
    pub x0: f64,
    pub horizon: f64,
    pub steps: usize,
    pub paths: u64,
    pub seed: u64,
    pub engine: String,
    pub survival: String,
    /// Finite-difference half-width; `None` picks `0.05 max(1, |x0 - L|)`.
    pub fd_step: Option<f64>,
    pub bel_entry_correction: bool,
}

impl RunSpec {
    /// A Brownian run on `(0, inf)` with the `expm` payoff.
    pub fn brownian(x0: f64, steps: usize, paths: u64) -> Self {
        Self {
            model: "constant".into(),
            model_params: ParamTable::new(),
            payoff: "expm".into(),
            payoff_params: ParamTable::new(),
            x0,
            horizon: 1.0,
            steps,
            paths,
            seed: 0,
            engine: "engine1".into(),
            survival: "conditional".into(),
            fd_step: None,
            bel_entry_correction: true,
        }
    }

    /// Resolve registry ids into a ready-to-simulate [`Problem`].
    pub fn build(&self) -> Result<Problem, EstimatorError> {
        let model = build_model(&self.model, &self.model_params)?;
        let level = model.boundary();
        let payoff = build_payoff(&self.payoff, &self.payoff_params, level)?;
        let grid = TimeGrid::new(self.horizon, self.steps)?;
        if self.x0.is_nan() || self.x0 < level {
            return Err(EstimatorError::OutsideDomain { x0: self.x0, level });
        }
        if self.paths == 0 {
            return Err(EstimatorError::NoPaths);
        }
        let engine = engine_by_id(&self.engine).ok_or_else(|| EstimatorError::UnknownEngine(self.engine.clone()))?;
        let survival = SurvivalMode::from_id(&self.survival)
            .ok_or_else(|| EstimatorError::UnknownEngine(format!("killed-{}", self.survival)))?;
        let consts = BoundaryConstants::new(model.as_ref());
        Ok(Problem {
            model,
            payoff,
            grid,
            x0: self.x0,
            paths: self.paths,
            seed: self.seed,
            engine,
            survival,
            fd_step: self.fd_step.unwrap_or(0.05 * (self.x0 - level).abs().max(1.0)),
            fold: FoldOptions { entry_correction: self.bel_entry_correction },
            consts,
        })
    }
}

/// A [`RunSpec`] with its registry entries resolved.
#[derive(Debug)]
pub struct Problem {
    pub model: Box<dyn CoefficientModel>,
    pub payoff: Box<dyn TestFunction>,
    pub grid: TimeGrid,
    pub x0: f64,
    pub paths: u64,
    pub seed: u64,
    pub engine: &'static dyn PathEngine,
    pub survival: SurvivalMode,
    pub fd_step: f64,
    pub fold: FoldOptions,
    pub consts: BoundaryConstants,
}

impl Problem {
    pub fn level(&self) -> f64 {
        self.model.boundary()
    }
}

/// Per-worker reusable buffers.
#[derive(Debug, Default)]
pub struct Scratch {
    pub path: PathRecord,
}

/// One Monte Carlo estimator, selectable by name.
pub trait Estimator: Send + Sync + fmt::Debug {
    /// Registry name (`value`, `reflected`, `mixed`, `bel`, `fd`).
    fn id(&self) -> &'static str;
    /// Engine label reported with the result.
    fn engine_label(&self, problem: &Problem) -> String {
        problem.engine.id().to_string()
    }
    /// Reject problems the estimator cannot handle.
    fn check(&self, problem: &Problem) -> Result<(), EstimatorError>;
    /// The sample contributed by path `index`.
    fn sample(&self, problem: &Problem, index: u64, scratch: &mut Scratch) -> f64;
}

fn require_c1(id: &'static str, problem: &Problem) -> Result<(), EstimatorError> {
    if problem.payoff.smoothness() == Smoothness::Measurable {
        return Err(EstimatorError::NeedsDerivative { estimator: id, payoff: problem.payoff.id().into() });
    }
    Ok(())
}

fn simulate_and_fold(problem: &Problem, index: u64, scratch: &mut Scratch) -> Option<WeightState> {
    let stream = RngStream::new(problem.seed, index);
    problem
        .engine
        .simulate(problem.model.as_ref(), &problem.grid, &stream, problem.x0, &mut scratch.path);
    if scratch.path.weight == 0.0 {
        return None;
    }
    Some(fold_weights(&scratch.path, &problem.consts, problem.fold))
}

fn fprime(problem: &Problem, y: f64) -> f64 {
    problem.payoff.derivative(y).unwrap_or(f64::NAN)
}

/// Killed value `E[f(X_n) * survival]`.
#[derive(Debug, Clone, Copy)]
pub struct ValueEstimator;

impl Estimator for ValueEstimator {
    fn id(&self) -> &'static str {
        "value"
    }
    fn engine_label(&self, problem: &Problem) -> String {
        format!("killed-{}", problem.survival.id())
    }
    fn check(&self, _problem: &Problem) -> Result<(), EstimatorError> {
        Ok(())
    }
    fn sample(&self, problem: &Problem, index: u64, _scratch: &mut Scratch) -> f64 {
        killed_sample(problem, problem.x0, index, problem.survival)
    }
}

fn killed_sample(problem: &Problem, x0: f64, index: u64, mode: SurvivalMode) -> f64 {
    let out = simulate_killed(problem.model.as_ref(), &problem.grid, &RngStream::new(problem.seed, index), x0, mode);
    if out.survival == 0.0 {
        0.0
    } else {
        problem.payoff.value(out.terminal) * out.survival
    }
}

/// `f'(terminal) * Psi`: engine 2 uses the discrete `Psi` directly, engine 1
/// the product `E K exp((b/a)(L) B)`.
#[derive(Debug, Clone, Copy)]
pub struct ReflectedEstimator;

impl Estimator for ReflectedEstimator {
    fn id(&self) -> &'static str {
        "reflected"
    }
    fn check(&self, problem: &Problem) -> Result<(), EstimatorError> {
        require_c1(self.id(), problem)
    }
    fn sample(&self, problem: &Problem, index: u64, scratch: &mut Scratch) -> f64 {
        let Some(w) = simulate_and_fold(problem, index, scratch) else {
            return 0.0;
        };
        let rec = &scratch.path;
        let d = fprime(problem, rec.terminal);
        match rec.measure {
            Measure::Drifted => d * w.psi(),
            Measure::Driftless => {
                d * w.e * (w.log_k + problem.consts.boa_l * w.b).exp() * rec.weight
            }
        }
    }
}

/// Flow term plus the boundary term carried by the last crossing.
#[derive(Debug, Clone, Copy)]
pub struct MixedEstimator;

impl Estimator for MixedEstimator {
    fn id(&self) -> &'static str {
        "mixed"
    }
    fn check(&self, problem: &Problem) -> Result<(), EstimatorError> {
        require_c1(self.id(), problem)?;
        if problem.engine.measure() != Measure::Driftless {
            return Err(EstimatorError::UnsupportedEngine { estimator: "mixed", engine: problem.engine.id().into() });
        }
        Ok(())
    }
    fn sample(&self, problem: &Problem, index: u64, scratch: &mut Scratch) -> f64 {
        let Some(w) = simulate_and_fold(problem, index, scratch) else {
            return 0.0;
        };
        let rec = &scratch.path;
        let k = w.k();
        let mut s = fprime(problem, rec.terminal) * w.e * k;
        if rec.any_flag() {
            s += problem.consts.boa_l * problem.payoff.value(rec.terminal) * k * w.e_before_last_cross;
        }
        s * rec.weight
    }
}

/// Bismut-Elworthy-Li weight integrated over the last excursion; needs only `f`.
#[derive(Debug, Clone, Copy)]
pub struct BelEstimator;

impl Estimator for BelEstimator {
    fn id(&self) -> &'static str {
        "bel"
    }
    fn check(&self, _problem: &Problem) -> Result<(), EstimatorError> {
        Ok(())
    }
    fn sample(&self, problem: &Problem, index: u64, scratch: &mut Scratch) -> f64 {
        let Some(w) = simulate_and_fold(problem, index, scratch) else {
            return 0.0;
        };
        let rec = &scratch.path;
        let f = problem.payoff.value(rec.terminal);
        if f == 0.0 {
            return 0.0;
        }
        let t = problem.grid.horizon();
        match rec.measure {
            Measure::Drifted => f * w.bel_sum / t,
            Measure::Driftless => f * w.k() * w.bel_sum / t * rec.weight,
        }
    }
}

/// Difference quotient of the killed value with common random numbers.
///
/// Central when `x0 - h` stays in the domain, otherwise the second-order
/// forward stencil `(-3 P(x0) + 4 P(x0 + h) - P(x0 + 2h)) / 2h`.
#[derive(Debug, Clone, Copy)]
pub struct FdEstimator;

impl Estimator for FdEstimator {
    fn id(&self) -> &'static str {
        "fd"
    }
    fn engine_label(&self, _problem: &Problem) -> String {
        "killed-conditional".into()
    }
    fn check(&self, problem: &Problem) -> Result<(), EstimatorError> {
        let h = problem.fd_step;
        if !(h > 0.0 && h.is_finite()) {
            return Err(EstimatorError::BadFdStep(h));
        }
        Ok(())
    }
    fn sample(&self, problem: &Problem, index: u64, _scratch: &mut Scratch) -> f64 {
        let (h, x0) = (problem.fd_step, problem.x0);
        let at = |x: f64| killed_sample(problem, x, index, SurvivalMode::Conditional);
        if x0 - h >= problem.level() {
            (at(x0 + h) - at(x0 - h)) / (2.0 * h)
        } else {
            (4.0 * at(x0 + h) - 3.0 * at(x0) - at(x0 + 2.0 * h)) / (2.0 * h)
        }
    }
}

pub static VALUE: ValueEstimator = ValueEstimator;
pub static REFLECTED: ReflectedEstimator = ReflectedEstimator;
pub static MIXED: MixedEstimator = MixedEstimator;
pub static BEL: BelEstimator = BelEstimator;
pub static FD: FdEstimator = FdEstimator;

/// Every registered estimator.
pub static ESTIMATORS: &[&dyn Estimator] = &[&VALUE, &REFLECTED, &MIXED, &BEL, &FD];

/// The derivative estimators in reporting order.
pub const DERIVATIVE_IDS: [&str; 4] = ["reflected", "mixed", "bel", "fd"];

pub fn estimator_by_id(id: &str) -> Result<&'static dyn Estimator, EstimatorError> {
    ESTIMATORS
        .iter()
        .copied()
        .find(|e| e.id() == id)
        .ok_or_else(|| EstimatorError::UnknownEstimator(id.to_string()))
}

/// Streaming mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Welford {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Combine two disjoint sample sets.
    pub fn merge(self, other: Self) -> Self {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let count = self.count + other.count;
        let (na, nb) = (self.count as f64, other.count as f64);
        let delta = other.mean - self.mean;
        Self {
            count,
            mean: self.mean + delta * nb / count as f64,
            m2: self.m2 + other.m2 + delta * delta * na * nb / count as f64,
        }
    }

    /// Standard error of the mean from the unbiased sample variance.
    pub fn stderr(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        (self.m2.max(0.0) / (n - 1.0) / n).sqrt()
    }
}

/// Mean and standard error of a sample stream.
pub fn aggregate<I: IntoIterator<Item = f64>>(samples: I) -> (f64, f64) {
    let mut w = Welford::default();
    for x in samples {
        w.push(x);
    }
    (w.mean, w.stderr())
}

/// How chunks are scheduled and merged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Execution {
    /// One thread, chunks merged in index order.
    pub strict: bool,
    /// Worker count; `None` uses the ambient pool.
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorResult {
    pub estimator: String,
    pub engine: String,
    pub mean: f64,
    pub stderr: f64,
    pub paths: u64,
    pub steps: usize,
    pub seconds: f64,
}

fn chunk_stats(est: &dyn Estimator, problem: &Problem, chunk: u64) -> Welford {
    let start = chunk * CHUNK_PATHS;
    let end = (start + CHUNK_PATHS).min(problem.paths);
    let mut scratch = Scratch::default();
    let mut w = Welford::default();
    for i in start..end {
        w.push(est.sample(problem, i, &mut scratch));
    }
    w
}

/// Run `est` on `problem`.
pub fn run(est: &dyn Estimator, problem: &Problem, exec: Execution) -> Result<EstimatorResult, EstimatorError> {
    est.check(problem)?;
    let started = Instant::now();
    let chunks = problem.paths.div_ceil(CHUNK_PATHS);
    let stats = if exec.strict {
        (0..chunks).map(|c| chunk_stats(est, problem, c)).fold(Welford::default(), Welford::merge)
    } else {
        let work = || {
            (0..chunks)
                .into_par_iter()
                .map(|c| chunk_stats(est, problem, c))
                .reduce(Welford::default, Welford::merge)
        };
        match exec.threads {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| EstimatorError::Pool(e.to_string()))?
                .install(work),
            None => work(),
        }
    };
    Ok(EstimatorResult {
        estimator: est.id().to_string(),
        engine: est.engine_label(problem),
        mean: stats.mean,
        stderr: stats.stderr(),
        paths: stats.count,
        steps: problem.grid.steps(),
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Build `spec` and run the estimator named `id`.
pub fn estimate(id: &str, spec: &RunSpec, exec: Execution) -> Result<EstimatorResult, EstimatorError> {
    let problem = spec.build()?;
    run(estimator_by_id(id)?, &problem, exec)
}

/// Weak-order estimate: least-squares slope of `-log|bias|` against `log n`.
pub fn fitted_order(points: &[(usize, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, b)| -b.abs().ln()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// `log2` ratios of successive biases when `n` doubles.
pub fn successive_orders(points: &[(usize, f64)]) -> Vec<f64> {
    points
        .windows(2)
        .map(|w| (w[0].1.abs() / w[1].1.abs()).ln() / (w[1].0 as f64 / w[0].0 as f64).ln())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate([1.0, 1.0, 1.0]), (1.0, 0.0));
        assert_eq!(aggregate([0.0, 2.0]), (1.0, 1.0));
    }

    #[test]
    fn alternating_signs_cancel() {
        let (m, _) = aggregate((0..10_000_000u64).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }));
        assert!(m.abs() < 1e-12);
    }

    #[test]
    fn merge_matches_single_pass() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.3 - 7.0).collect();
        let mut whole = Welford::default();
        xs.iter().for_each(|&x| whole.push(x));
        let mut a = Welford::default();
        let mut b = Welford::default();
        xs[..313].iter().for_each(|&x| a.push(x));
        xs[313..].iter().for_each(|&x| b.push(x));
        let merged = a.merge(b);
        assert!((merged.mean - whole.mean).abs() < 1e-12);
        assert!((merged.m2 - whole.m2).abs() < 1e-9 * whole.m2);
    }

    #[test]
    fn zero_payoff_gives_exact_zero() {
        let mut spec = RunSpec::brownian(0.5, 32, 5000);
        spec.payoff = "zero".into();
        for id in ["value", "reflected", "mixed", "bel", "fd"] {
            let r = estimate(id, &spec, Execution { strict: true, threads: None }).unwrap();
            assert_eq!((r.mean, r.stderr), (0.0, 0.0), "{id}");
        }
    }

    #[test]
    fn config_errors() {
        let mut spec = RunSpec::brownian(-0.1, 32, 10);
        assert!(matches!(spec.build(), Err(EstimatorError::OutsideDomain { .. })));
        spec.x0 = 0.0;
        spec.fd_step = Some(-0.1);
        assert!(matches!(estimate("fd", &spec, Execution::default()), Err(EstimatorError::BadFdStep(_))));
        spec.fd_step = None;
        spec.payoff = "indicator".into();
        assert!(matches!(
            estimate("reflected", &spec, Execution::default()),
            Err(EstimatorError::NeedsDerivative { .. })
        ));
        spec.payoff = "expm".into();
        spec.engine = "engine2".into();
        assert!(matches!(estimate("mixed", &spec, Execution::default()), Err(EstimatorError::UnsupportedEngine { .. })));
        assert!(matches!(estimate("greeks", &spec, Execution::default()), Err(EstimatorError::UnknownEstimator(_))));
    }

    #[test]
    fn orders_of_exact_power_law() {
        let pts: Vec<(usize, f64)> = [64usize, 128, 256, 512].iter().map(|&n| (n, 3.0 / (n as f64).sqrt())).collect();
        assert!((fitted_order(&pts) - 0.5).abs() < 1e-12);
        assert!(successive_orders(&pts).iter().all(|o| (o - 0.5).abs() < 1e-12));
    }
}
