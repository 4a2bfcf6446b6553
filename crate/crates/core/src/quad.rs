//! Real and complex quadrature on finite and half-infinite intervals:
//! double-exponential rules from the `quadrature` crate, with interval
//! bisection wherever a panel misses its share of the tolerance.

use num_complex::Complex64;

use crate::error::{Error, Result};

const MAX_PANELS: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadResult {
    pub value: Complex64,
    pub error: f64,
    pub evaluations: usize,
    pub converged: bool,
}

fn panel(f: &impl Fn(f64) -> Complex64, a: f64, b: f64, tol: f64) -> (Complex64, f64, usize) {
    let re = quadrature::double_exponential::integrate(|x| f(x).re, a, b, tol);
    let im = quadrature::double_exponential::integrate(|x| f(x).im, a, b, tol);
    (
        Complex64::new(re.integral, im.integral),
        re.error_estimate.hypot(im.error_estimate),
        (re.num_function_evaluations + im.num_function_evaluations) as usize,
    )
}

/// ∫_a^b f to within max(abs_tol, rel_tol·|I|); the relative target is set
/// from a first pass over the whole interval.
pub fn integrate_complex(
    f: impl Fn(f64) -> Complex64,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> QuadResult {
    let (guess, err, n) = panel(&f, a, b, abs_tol);
    let tol = abs_tol.max(rel_tol * guess.norm()).max(4.0 * f64::EPSILON * guess.norm());
    let mut panels = vec![(a, b, guess, err)];
    let mut evaluations = n;
    loop {
        let error: f64 = panels.iter().map(|p| p.3).sum();
        if error <= tol || panels.len() >= MAX_PANELS {
            return QuadResult {
                value: panels.iter().map(|p| p.2).sum(),
                error,
                evaluations,
                converged: error <= tol,
            };
        }
        let worst = (0..panels.len())
            .max_by(|&i, &j| panels[i].3.total_cmp(&panels[j].3))
            .unwrap_or(0);
        let (pa, pb, _, _) = panels.swap_remove(worst);
        let mid = 0.5 * (pa + pb);
        let share = tol * 0.5 * (pb - pa) / (b - a);
        for (lo, hi) in [(pa, mid), (mid, pb)] {
            let (v, e, k) = panel(&f, lo, hi, share);
            evaluations += k;
            panels.push((lo, hi, v, e));
        }
    }
}

pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> QuadResult {
    integrate_complex(|x| Complex64::new(f(x), 0.0), a, b, abs_tol, rel_tol)
}

/// ∫_a^∞ f via t = a + s/(1−s).
pub fn integrate_to_infinity_complex(
    f: impl Fn(f64) -> Complex64,
    a: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> QuadResult {
    integrate_complex(
        |s| {
            if s >= 1.0 {
                return Complex64::new(0.0, 0.0);
            }
            let one_minus = 1.0 - s;
            let v = f(a + s / one_minus) / (one_minus * one_minus);
            if v.is_finite() { v } else { Complex64::new(0.0, 0.0) }
        },
        0.0,
        1.0,
        abs_tol,
        rel_tol,
    )
}

pub fn integrate_to_infinity(f: impl Fn(f64) -> f64, a: f64, abs_tol: f64, rel_tol: f64) -> QuadResult {
    integrate_to_infinity_complex(|x| Complex64::new(f(x), 0.0), a, abs_tol, rel_tol)
}

/// Require convergence or report the achieved error.
pub fn require(result: QuadResult, what: &str) -> Result<Complex64> {
    if result.converged {
        Ok(result.value)
    } else {
        Err(Error::Domain(format!(
            "{what}: quadrature error {:.3e} above tolerance",
            result.error
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial() {
        let r = integrate(|x| x.powi(5) - 3.0 * x * x, 0.0, 2.0, 1e-13, 0.0);
        assert!((r.value.re - (64.0 / 6.0 - 8.0)).abs() < 1e-12);
    }

    #[test]
    fn semi_infinite_exponential() {
        let r = integrate_to_infinity(|t| (-2.0 * t).exp(), 0.0, 1e-13, 1e-13);
        assert!((r.value.re - 0.5).abs() < 1e-12, "{:?}", r);
    }

    #[test]
    fn peaked_integrand_refines() {
        let r = integrate(|x| 1.0 / (1e-4 + x * x), -1.0, 1.0, 1e-10, 1e-12);
        let exact = 2.0 * (1.0f64 / 1e-2).atan() / 1e-2;
        assert!((r.value.re - exact).abs() < 1e-8 * exact);
        assert!(r.converged);
    }

    #[test]
    fn complex_oscillatory() {
        // ∫_0^∞ e^{−t}e^{it} dt = 1/(1 − i)
        let r = integrate_to_infinity_complex(|t| Complex64::from_polar((-t).exp(), t), 0.0, 1e-13, 1e-13);
        let exact = Complex64::new(1.0, 0.0) / Complex64::new(1.0, -1.0);
        assert!((r.value - exact).norm() < 1e-12);
    }
}
