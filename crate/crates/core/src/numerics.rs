//! Scalar special functions and one-dimensional solvers.
//!
//! The Gaussian tail comes from `libm::erfc`. The regularized lower
//! incomplete gamma function is specialised to integer shape, which is all
//! the channel model needs, and keeps full relative accuracy in both tails.

use crate::error::{Error, Result};

/// Stopping rule shared by the iterative routines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToleranceConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self { abs_tol: 1e-12, rel_tol: 1e-10, max_iter: 200 }
    }
}

impl ToleranceConfig {
    /// Loosest relative tolerance a caller may request.
    pub const LOOSEST_REL_TOL: f64 = 1e-6;

    pub fn new(abs_tol: f64, rel_tol: f64, max_iter: usize) -> Result<Self> {
        let cfg = Self { abs_tol, rel_tol, max_iter };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) || !(self.rel_tol > 0.0) {
            return Err(Error::InvalidParameter("tolerances must be positive".into()));
        }
        if self.rel_tol > Self::LOOSEST_REL_TOL {
            return Err(Error::InvalidParameter(format!(
                "rel_tol {} is looser than {}",
                self.rel_tol,
                Self::LOOSEST_REL_TOL
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
        }
        Ok(())
    }

    /// Near machine precision, used by the probability inversions.
    pub fn tight() -> Self {
        Self { abs_tol: 1e-15, rel_tol: 4e-16, max_iter: 400 }
    }
}

/// Gaussian tail probability Q(x).
pub fn gaussian_q(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Rational approximation of the standard normal quantile (relative error ~1e-9).
fn normal_quantile_guess(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.38357751867269e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] =
        [-5.447609879822406e1, 1.615858368580409e2, -1.556989798598866e2, 6.680131188771972e1, -1.328068155288572e1];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996, 3.754408661907416];
    const P_LOW: f64 = 0.02425;

    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - P_LOW {
        -tail((-2.0 * (-p).ln_1p()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Inverse Gaussian tail: the `x` with `Q(x) = p`.
pub fn inverse_gaussian_q(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("inverse Q needs 0 < p < 1, got {p}")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let mut x = -normal_quantile_guess(p);
    for _ in 0..8 {
        let step = (gaussian_q(x) - p) / std_normal_pdf(x);
        if !step.is_finite() {
            break;
        }
        x += step;
        if step.abs() <= 1e-15 * x.abs().max(1.0) {
            return Ok(x);
        }
    }
    // Newton stalled; fall back to bisection on the log tail.
    let lnp = p.ln();
    find_root_monotone(|x| lnp - gaussian_q(x).ln(), -40.0, 40.0, &ToleranceConfig::tight())
}

/// `ln(n!)`, exact products for small `n`.
pub fn ln_factorial(n: u32) -> f64 {
    if n <= 30 {
        (2..=n).map(f64::from).product::<f64>().ln()
    } else {
        libm::lgamma(f64::from(n) + 1.0)
    }
}

/// `e^{-x} x^n / n!`, the Poisson probability mass at `n`.
fn poisson_mass(n: u32, x: f64) -> f64 {
    if n == 0 {
        return (-x).exp();
    }
    if n <= 30 && x <= 700.0 {
        let fact: f64 = (2..=n).map(f64::from).product();
        x.powi(n as i32) * (-x).exp() / fact
    } else {
        (f64::from(n) * x.ln() - x - ln_factorial(n)).exp()
    }
}

/// `ln(e^{-x} x^n / n!)`.
fn ln_poisson_mass(n: u32, x: f64) -> f64 {
    f64::from(n) * x.ln() - x - ln_factorial(n)
}

/// `sum_{i>=0} x^i / ((n+1)...(n+i))` paired with a per-term weight.
fn lower_series(n: u32, x: f64, weight: impl Fn(u32) -> f64) -> f64 {
    let nf = f64::from(n);
    let mut term = 1.0;
    let mut sum = weight(0);
    for i in 1..100_000u32 {
        term *= x / (nf + f64::from(i));
        let t = term * weight(i);
        sum += t;
        if t <= sum * 1e-17 {
            break;
        }
    }
    sum
}

/// `e^{-x} sum_{k<n} x^k/k!` for `x >= n`, accumulated from the largest term down.
fn upper_sum(n: u32, x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for j in 1..n {
        term *= f64::from(n - j) / x;
        sum += term;
        if term <= sum * 1e-17 {
            break;
        }
    }
    poisson_mass(n - 1, x) * sum
}

/// Regularized lower incomplete gamma `P(n, x)` for integer `n`.
///
/// `P(0, x) = 1`; `x = 0` gives 0 and negative or NaN `x` gives NaN.
pub fn regularized_gamma_p(n: u32, x: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    if x.is_nan() || x < 0.0 {
        return f64::NAN;
    }
    if x == 0.0 {
        return 0.0;
    }
    if x < f64::from(n) + 1.0 {
        poisson_mass(n, x) * lower_series(n, x, |_| 1.0)
    } else {
        1.0 - upper_sum(n, x)
    }
}

/// Regularized upper incomplete gamma `Q(n, x) = 1 - P(n, x)`.
pub fn regularized_gamma_q(n: u32, x: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    if x.is_nan() || x < 0.0 {
        return f64::NAN;
    }
    if x == 0.0 {
        return 1.0;
    }
    if x < f64::from(n) + 1.0 {
        1.0 - poisson_mass(n, x) * lower_series(n, x, |_| 1.0)
    } else {
        upper_sum(n, x)
    }
}

/// `ln P(n, x)` without underflow in the lower tail.
pub fn ln_regularized_gamma_p(n: u32, x: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    if x.is_nan() || x < 0.0 {
        return f64::NAN;
    }
    if x == 0.0 {
        return f64::NEG_INFINITY;
    }
    if x < f64::from(n) + 1.0 {
        ln_poisson_mass(n, x) + lower_series(n, x, |_| 1.0).ln()
    } else {
        (-upper_sum(n, x)).ln_1p()
    }
}

/// `e^{-x} sum_{k>=n} x^k/k! * w(k-n)` with all-positive terms, for `x < n + 1`.
pub(crate) fn weighted_lower_tail(n: u32, x: f64, weight: impl Fn(u32) -> f64) -> (f64, f64) {
    let s = lower_series(n, x, weight);
    (poisson_mass(n, x) * s, ln_poisson_mass(n, x) + s.ln())
}

pub(crate) fn poisson_pmf(n: u32, x: f64) -> f64 {
    poisson_mass(n, x)
}

/// Bisection root of a monotone function on `[lo, hi]`.
///
/// Stops when `|f| <= abs_tol` or the bracket is narrower than
/// `rel_tol * |x|`, returning the bracket midpoint.
pub fn find_root_monotone(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, cfg: &ToleranceConfig) -> Result<f64> {
    let (mut lo, mut hi) = (lo, hi);
    let flo = f(lo);
    if flo == 0.0 {
        return Ok(lo);
    }
    let fhi = f(hi);
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.is_nan() || fhi.is_nan() || (flo < 0.0) == (fhi < 0.0) {
        return Err(Error::Bracket { lo, hi });
    }
    let lo_negative = flo < 0.0;
    for _ in 0..cfg.max_iter {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi || (hi - lo) <= cfg.rel_tol * mid.abs() {
            return Ok(mid);
        }
        let fm = f(mid);
        if fm.abs() <= cfg.abs_tol {
            return Ok(mid);
        }
        if (fm < 0.0) == lo_negative {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Convergence { what: "bisection", iterations: cfg.max_iter })
}

/// Golden-section minimum of a unimodal function on `[lo, hi]`.
///
/// Returns `(argmin, min)`. Ties move the bracket to the right, so a
/// function that is flat or infinite near `lo` still converges to the
/// interior minimum or to `hi`.
pub fn minimize_unimodal(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, cfg: &ToleranceConfig) -> Result<(f64, f64)> {
    if !(lo < hi) {
        return Err(Error::Domain(format!("empty interval [{lo}, {hi}]")));
    }
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let width = hi - lo;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..cfg.max_iter {
        if b - a <= cfg.rel_tol * width {
            let candidates = [(c, fc), (d, fd), (b, f(b))];
            let best =
                candidates.into_iter().fold((f64::NAN, f64::INFINITY), |acc, p| if p.1 <= acc.1 { p } else { acc });
            return Ok(best);
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    Err(Error::Convergence { what: "golden-section search", iterations: cfg.max_iter })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn q_and_inverse_reference_points() {
        assert_relative_eq!(inverse_gaussian_q(1e-5).unwrap(), 4.264890793922825, max_relative = 1e-10);
        assert_eq!(inverse_gaussian_q(0.5).unwrap(), 0.0);
        assert!(inverse_gaussian_q(0.0).is_err());
        assert!(inverse_gaussian_q(1.0).is_err());
        assert_relative_eq!(gaussian_q(0.0), 0.5);
    }

    #[test]
    fn inverse_round_trips_in_tail() {
        for k in 1..=300 {
            let p = 10f64.powf(-(k as f64) / 10.0);
            if p >= 1.0 {
                continue;
            }
            let x = inverse_gaussian_q(p).unwrap();
            assert_relative_eq!(gaussian_q(x), p, max_relative = 1e-12);
        }
    }

    #[test]
    fn gamma_small_cases() {
        assert_relative_eq!(regularized_gamma_p(1, 1.0), 1.0 - (-1f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(regularized_gamma_p(2, 1.0), 1.0 - 2.0 * (-1f64).exp(), max_relative = 1e-14);
        assert_eq!(regularized_gamma_p(3, 0.0), 0.0);
        assert_relative_eq!(
            regularized_gamma_p(5, 1e-3),
            1e-15 / 120.0 * (1.0 - 5.0 / 6.0 * 1e-3),
            max_relative = 1e-6
        );
    }

    #[test]
    fn gamma_p_plus_q_is_one() {
        for n in [1u32, 2, 7, 40, 300] {
            for x in [0.1, 1.0, 5.0, 41.0, 250.0, 310.0, 1000.0] {
                let s = regularized_gamma_p(n, x) + regularized_gamma_q(n, x);
                assert_relative_eq!(s, 1.0, max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn ln_gamma_matches_direct() {
        for n in [1u32, 3, 64] {
            for x in [0.01, 2.0, 70.0] {
                assert_relative_eq!(
                    ln_regularized_gamma_p(n, x).exp(),
                    regularized_gamma_p(n, x),
                    max_relative = 1e-13
                );
            }
        }
    }

    #[test]
    fn bisection_finds_sqrt_two() {
        let r = find_root_monotone(|x| x * x - 2.0, 0.0, 2.0, &ToleranceConfig::default()).unwrap();
        assert_relative_eq!(r, 2f64.sqrt(), max_relative = 1e-10);
    }

    #[test]
    fn bisection_rejects_unbracketed() {
        let r = find_root_monotone(|x| x * x + 1.0, 0.0, 2.0, &ToleranceConfig::default());
        assert!(matches!(r, Err(Error::Bracket { .. })));
    }

    #[test]
    fn bisection_reports_iteration_cap() {
        let cfg = ToleranceConfig { abs_tol: 1e-300, rel_tol: 1e-16, max_iter: 3 };
        let r = find_root_monotone(|x| x - 1.0 / 3.0, 0.0, 1.0, &cfg);
        assert!(matches!(r, Err(Error::Convergence { .. })));
    }

    #[test]
    fn golden_section_interior_and_boundary() {
        let cfg = ToleranceConfig::default();
        let (x, fx) = minimize_unimodal(|x| (x - 0.3).powi(2), 0.0, 1.0, &cfg).unwrap();
        assert!((x - 0.3).abs() < 1e-9);
        assert!(fx < 1e-18);
        let (x, _) = minimize_unimodal(|x| -x, 0.0, 1.0, &cfg).unwrap();
        assert!((x - 1.0).abs() < 1e-9);
    }

    #[test]
    fn tolerance_cannot_be_loosened() {
        assert!(ToleranceConfig::new(1e-12, 1e-3, 10).is_err());
        assert!(ToleranceConfig::new(1e-12, 1e-8, 0).is_err());
        assert!(ToleranceConfig::new(1e-12, 1e-8, 10).is_ok());
    }
}
