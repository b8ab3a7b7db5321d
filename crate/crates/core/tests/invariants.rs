use approx::assert_relative_eq;
use proptest::prelude::*;

use killsens::estimators::{aggregate, Welford};
use killsens::model::{build_model, validate_model, probe_grid, ParamTable, MODELS};
use killsens::rng::{RngStream, Substream};
use killsens::sampling::{crossing_prob, reflected_step, regulator_increment};
use killsens::special::{normal_pdf, normal_sf, theta};
use killsens::weights::step_e;

proptest! {
    #[test]
    fn crossing_prob_is_a_probability(
        xp in 0.0f64..5.0, xn in -1.0f64..5.0, a in 0.1f64..4.0, dt in 1e-4f64..1.0
    ) {
        let p = crossing_prob(xp, xn, 0.0, a, dt);
        prop_assert!((0.0..=1.0).contains(&p));
        if xn >= 0.0 {
            prop_assert_eq!(p, crossing_prob(xn, xp, 0.0, a, dt));
        }
    }

    #[test]
    fn reflected_step_stays_in_domain(x in 0.0f64..3.0, g in -8.0f64..8.0, sigma in 0.1f64..3.0, level in -2.0f64..2.0) {
        let (y, z) = reflected_step(level + x, level, sigma, 0.01, g);
        prop_assert!(y >= level);
        assert_relative_eq!(level + x + sigma * z, y, epsilon = 1e-12);
    }

    #[test]
    fn theta_bounds_and_monotonicity(u in 0.0f64..40.0, du in 1e-6f64..1.0) {
        let t = theta(u);
        // theta(u) = pdf(u) - u sf(u) lies in (0, pdf(u)) and decreases in u
        prop_assert!(t > 0.0 || u > 37.0);
        prop_assert!(t <= normal_pdf(u));
        prop_assert!(theta(u + du) <= t);
        if u < 5.0 {
            assert_relative_eq!(t, normal_pdf(u) - u * normal_sf(u), max_relative = 1e-13);
        }
    }

    #[test]
    fn regulator_increment_is_nonnegative(x in 0.0f64..5.0, sigma in 0.1f64..3.0, dt in 1e-5f64..1.0) {
        let db = regulator_increment(x, 0.0, sigma, dt);
        prop_assert!(db >= 0.0);
        prop_assert!(db <= regulator_increment(0.0, 0.0, sigma, dt));
    }

    #[test]
    fn streams_are_pure_functions_of_their_coordinates(seed in any::<u64>(), path in any::<u64>(), step in 0u64..1 << 20) {
        let a = RngStream::new(seed, path);
        let b = RngStream::new(seed, path);
        prop_assert_eq!(a.gaussian(step).to_bits(), b.gaussian(step).to_bits());
        let u = a.uniform(step, Substream::FlagUniform);
        prop_assert!((0.0..1.0).contains(&u));
        prop_assert_ne!(u.to_bits(), a.uniform(step, Substream::Auxiliary).to_bits());
        prop_assert_ne!(a.gaussian(step).to_bits(), RngStream::new(seed, path ^ 1).gaussian(step).to_bits());
    }

    #[test]
    fn welford_merge_matches_single_pass(xs in prop::collection::vec(-1e3f64..1e3, 2..200), cut in 0usize..200) {
        let cut = cut.min(xs.len());
        let mut left = Welford::default();
        let mut right = Welford::default();
        xs[..cut].iter().for_each(|&x| left.push(x));
        xs[cut..].iter().for_each(|&x| right.push(x));
        let merged = left.merge(right);
        let (mean, se) = aggregate(xs.iter().copied());
        assert_relative_eq!(merged.mean, mean, epsilon = 1e-9);
        assert_relative_eq!(merged.stderr(), se, epsilon = 1e-9, max_relative = 1e-9);
    }

    #[test]
    fn flagged_flow_weight_is_one_at_the_boundary(x in -1.0f64..3.0, z in -1.0f64..1.0) {
        let m = build_model("bounded-rational", &ParamTable::new()).unwrap();
        let c = m.coeffs(x).derived();
        prop_assert_eq!(step_e(&c, z, true, 0.0, 0.01), 1.0);
    }
}

#[test]
fn registry_models_are_admissible() {
    for entry in MODELS {
        let m = build_model(entry.id, &ParamTable::new()).unwrap();
        let d = validate_model(m.as_ref(), &probe_grid(m.boundary(), 10.0, 400));
        assert!(d.is_admissible(), "{}: {:?}", entry.id, d.violations);
    }
}
