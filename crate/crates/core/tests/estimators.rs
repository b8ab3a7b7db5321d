use killsens::estimators::{estimate, run, estimator_by_id, Execution, Welford};
use killsens::model::MODELS;
use killsens::oracle_analytic::{oracle_value, GaussKernelParams};
use killsens::payoff::build_payoff;
use killsens::rng::RngStream;
use killsens::sampling::{PathEngine, PathRecord, ENGINE1};
use killsens::special::normal_cdf;
use killsens::{build_model, ParamTable, RunSpec, TimeGrid};

const STRICT: Execution = Execution { strict: true, threads: None };

#[test]
fn driftless_weights_reduce_to_plain_derivative() {
    let spec = RunSpec { seed: 5, ..RunSpec::brownian(0.2, 128, 10_000) };
    let r = estimate("reflected", &spec, STRICT).unwrap();
    let model = build_model("constant", &ParamTable::new()).unwrap();
    let f = build_payoff("expm", &ParamTable::new(), 0.0).unwrap();
    let grid = TimeGrid::new(1.0, 128).unwrap();
    let mut rec = PathRecord::new();
    let mut w = Welford::default();
    for i in 0..10_000 {
        ENGINE1.simulate(model.as_ref(), &grid, &RngStream::new(5, i), 0.2, &mut rec);
        w.push(f.derivative(rec.terminal).unwrap());
    }
    // the chunked merge reorders the sum, so agreement is to rounding
    assert!((r.mean - w.mean).abs() <= 1e-14, "{} vs {}", r.mean, w.mean);
    assert!((r.stderr - w.stderr()).abs() <= 1e-14);
}

/// Kolmogorov-Smirnov distance of the engine-1 terminal law from reflected Brownian motion.
#[test]
fn reflected_chain_has_the_reflected_brownian_law() {
    let model = build_model("constant", &ParamTable::new()).unwrap();
    let grid = TimeGrid::new(1.0, 64).unwrap();
    let x0 = 0.3;
    let n = 20_000;
    let mut rec = PathRecord::new();
    let mut ys: Vec<f64> = (0..n)
        .map(|i| {
            ENGINE1.simulate(model.as_ref(), &grid, &RngStream::new(9, i), x0, &mut rec);
            rec.terminal
        })
        .collect();
    ys.sort_by(f64::total_cmp);
    let cdf = |y: f64| normal_cdf(y - x0) - normal_cdf(-y - x0);
    let d = ys
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let c = cdf(y);
            (c - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - c).abs())
        })
        .fold(0.0, f64::max);
    // 1% critical value 1.63 / sqrt(n)
    assert!(d < 1.63 / (n as f64).sqrt(), "KS distance {d}");
}

#[test]
fn strict_runs_repeat_bitwise_and_workers_agree() {
    let mut spec = RunSpec::brownian(0.4, 32, 20_000);
    spec.model = "tanh-drift".into();
    for (id, engine) in [("value", "engine1"), ("reflected", "engine1"), ("mixed", "engine1"), ("bel", "engine2"), ("fd", "engine1")] {
        spec.engine = engine.into();
        let a = estimate(id, &spec, STRICT).unwrap();
        let b = estimate(id, &spec, STRICT).unwrap();
        assert_eq!((a.mean.to_bits(), a.stderr.to_bits()), (b.mean.to_bits(), b.stderr.to_bits()), "{id}");
        for threads in [1, 2, 5] {
            let c = estimate(id, &spec, Execution { strict: false, threads: Some(threads) }).unwrap();
            assert!((c.mean - a.mean).abs() <= 1e-12 * a.mean.abs().max(1e-300), "{id} {threads}");
            assert!((c.stderr - a.stderr).abs() <= 1e-12 * a.stderr);
        }
    }
}

#[test]
fn discrete_killing_bias_decays_monotonically() {
    let f = build_payoff("expm", &ParamTable::new(), 0.0).unwrap();
    let oracle = oracle_value(f.as_ref(), 0.5, &GaussKernelParams::brownian(1.0)).unwrap().value;
    let mut spec = RunSpec::brownian(0.5, 64, 200_000);
    spec.survival = "discrete".into();
    spec.seed = 17;
    let mut prev: Option<(f64, f64)> = None;
    for n in [64, 128, 256, 512] {
        spec.steps = n;
        let r = estimate("value", &spec, Execution::default()).unwrap();
        let bias = (r.mean - oracle).abs();
        if let Some((b, se)) = prev {
            assert!(bias <= b + 2.0 * (se * se + r.stderr * r.stderr).sqrt(), "n={n}: {bias} after {b}");
        }
        prev = Some((bias, r.stderr));
    }
}

#[test]
fn conditional_survival_is_unbiased_for_brownian_motion() {
    let f = build_payoff("expm", &ParamTable::new(), 0.0).unwrap();
    let oracle = oracle_value(f.as_ref(), 0.5, &GaussKernelParams::brownian(1.0)).unwrap().value;
    let spec = RunSpec { seed: 19, ..RunSpec::brownian(0.5, 16, 400_000) };
    let r = estimate("value", &spec, Execution::default()).unwrap();
    assert!((r.mean - oracle).abs() <= 4.0 * r.stderr, "{} vs {oracle}", r.mean);
}

/// Every estimator agrees with `est_A` on every registry model at n = 512.
#[test]
fn estimators_are_mutually_consistent() {
    for entry in MODELS {
        let mut spec = RunSpec::brownian(0.5, 512, 20_000);
        spec.model = entry.id.into();
        spec.seed = 23;
        let problem = spec.build().unwrap();
        let a = run(estimator_by_id("reflected").unwrap(), &problem, Execution::default()).unwrap();
        let allowance = 0.05 * a.mean.abs().max(0.1);
        for (id, engine) in [("mixed", "engine1"), ("bel", "engine2"), ("fd", "engine1")] {
            spec.engine = engine.into();
            spec.seed += 1;
            let r = estimate(id, &spec, Execution::default()).unwrap();
            let gap = (r.mean - a.mean).abs();
            let bound = 4.0 * (r.stderr.powi(2) + a.stderr.powi(2)).sqrt() + allowance;
            assert!(gap <= bound, "{} {id}: {} vs {} (bound {bound})", entry.id, r.mean, a.mean);
        }
    }
}

#[test]
fn fd_one_sided_stencil_at_the_boundary() {
    let spec = RunSpec { seed: 29, ..RunSpec::brownian(0.0, 128, 50_000) };
    let r = estimate("fd", &spec, Execution::default()).unwrap();
    assert!((r.mean - 0.523_156_583_730_246_7).abs() <= 4.0 * r.stderr + 0.01, "{} ± {}", r.mean, r.stderr);
}
