//! Adaptive Gauss–Kronrod (7/15) quadrature on finite intervals.
//!
//! Every oracle in the crate reduces to one-dimensional integrals of smooth
//! Gaussian-type integrands, possibly with a few known kinks. Callers pass
//! those kinks as breakpoints; infinite ranges are truncated by the caller
//! where the integrand is below double precision.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

/// Hard cap on the number of subintervals.
pub const MAX_INTERVALS: usize = 1 << 15;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("quadrature did not reach tolerance {tol:e} within {intervals} intervals (estimate {value}, error {error:e})")]
    NotConverged {
        value: f64,
        error: f64,
        tol: f64,
        intervals: usize,
    },
    #[error("integrand returned a non-finite value at x = {0}")]
    NonFinite(f64),
    #[error("invalid integration range [{0}, {1}]")]
    BadRange(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// One 15-point Kronrod evaluation with the embedded 7-point Gauss error estimate.
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<Segment, QuadError> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    if !fc.is_finite() {
        return Err(QuadError::NonFinite(center));
    }
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let (x1, x2) = (center - dx, center + dx);
        let (f1, f2) = (f(x1), f(x2));
        if !f1.is_finite() {
            return Err(QuadError::NonFinite(x1));
        }
        if !f2.is_finite() {
            return Err(QuadError::NonFinite(x2));
        }
        kronrod += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    Ok(Segment {
        a,
        b,
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    })
}

/// Integrate `f` over `[a, b]` to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<Quadrature, QuadError> {
    integrate_with_breaks(f, &[a, b], tol)
}

/// Integrate over the union of consecutive intervals `points[k]..points[k+1]`.
///
/// `points` must be nondecreasing; zero-length pieces are skipped.
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(
    f: F,
    points: &[f64],
    tol: f64,
) -> Result<Quadrature, QuadError> {
    if points.len() < 2 {
        return Ok(Quadrature { value: 0.0, error: 0.0, intervals: 0 });
    }
    let mut heap = BinaryHeap::new();
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if !(a.is_finite() && b.is_finite()) || b < a {
            return Err(QuadError::BadRange(a, b));
        }
        if b > a {
            heap.push(gk15(&f, a, b)?);
        }
    }
    let totals = |heap: &BinaryHeap<Segment>| {
        let mut v = 0.0;
        let mut e = 0.0;
        for s in heap.iter() {
            v += s.value;
            e += s.error;
        }
        (v, e)
    };
    let (mut value, mut error) = totals(&heap);
    while error > tol {
        if heap.len() >= MAX_INTERVALS {
            return Err(QuadError::NotConverged { value, error, tol, intervals: heap.len() });
        }
        let worst = match heap.pop() {
            Some(s) => s,
            None => break,
        };
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // cannot split further in floating point
            heap.push(worst);
            return Err(QuadError::NotConverged { value, error, tol, intervals: heap.len() });
        }
        let left = gk15(&f, worst.a, mid)?;
        let right = gk15(&f, mid, worst.b)?;
        value += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        // refresh the running sums now and then to shed accumulated rounding
        if heap.len() % 256 == 0 {
            (value, error) = totals(&heap);
        }
    }
    let (value, error) = totals(&heap);
    Ok(Quadrature { value, error, intervals: heap.len() })
}

/// Composite 15-point Kronrod rule on `panels` equal panels (no adaptivity).
pub fn integrate_panels<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|k| {
            let lo = a + k as f64 * h;
            let hi = if k + 1 == panels { b } else { lo + h };
            gk15(&f, lo, hi).map(|s| s.value).unwrap_or(f64::NAN)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::normal_pdf;

    #[test]
    fn polynomial_is_exact() {
        let q = integrate(|x| x.powi(5) - 3.0 * x * x + 1.0, -1.0, 2.0, 1e-14).unwrap();
        let exact = (64.0 - 1.0) / 6.0 - (8.0 + 1.0) + 3.0;
        assert!((q.value - exact).abs() < 1e-13);
        assert_eq!(q.intervals, 1);
    }

    #[test]
    fn gaussian_mass_on_truncated_line() {
        let q = integrate(normal_pdf, -40.0, 40.0, 1e-14).unwrap();
        assert!((q.value - 1.0).abs() < 1e-13, "{}", q.value);
    }

    #[test]
    fn breakpoints_handle_a_jump() {
        let step = |x: f64| if x > 0.3 { 1.0 } else { 0.0 };
        let q = integrate_with_breaks(step, &[0.0, 0.3, 1.0], 1e-14).unwrap();
        assert!((q.value - 0.7).abs() < 1e-14);
    }

    #[test]
    fn non_finite_integrand_is_reported() {
        let err = integrate(|x| 1.0 / x, -1.0, 1.0, 1e-10).unwrap_err();
        assert!(matches!(err, QuadError::NonFinite(_)));
    }

    #[test]
    fn panel_doubling_converges() {
        let f = |x: f64| (x * x).cos() * (-x).exp();
        let a = integrate_panels(f, 0.0, 5.0, 64);
        let b = integrate_panels(f, 0.0, 5.0, 128);
        assert!((a - b).abs() < 1e-13);
    }
}
