//! Drop probabilities of the two diversity schemes and their inverses.
//!
//! With `n_t` receive antennas and maximum-ratio combining, the normalized
//! channel gain `g` is Gamma(`n_t`, 1). Frequency hopping over `n_a`
//! subchannels drops an uplink packet only when every subchannel falls below
//! the threshold, and proactive dropping in the downlink discards the part of
//! a batch the channel cannot carry, bounded by the fraction `1 - g/g_th`.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    find_root_monotone, ln_regularized_gamma_p, poisson_pmf, regularized_gamma_p, weighted_lower_tail, ToleranceConfig,
};

/// Antenna count and number of hopping subchannels.
///
/// Fields are public so test oracles can build the `n_t = 1` relaxation;
/// [`DiversityConfig::new`] enforces the operating domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiversityConfig {
    pub n_t: u32,
    pub n_a: u32,
}

impl DiversityConfig {
    pub fn new(n_t: u32, n_a: u32, n_a_max: u32) -> Result<Self> {
        if n_t < 2 {
            return Err(Error::InvalidParameter(format!("n_t must be at least 2, got {n_t}")));
        }
        if n_a < 1 || n_a > n_a_max {
            return Err(Error::InvalidParameter(format!("n_a must be in 1..={n_a_max}, got {n_a}")));
        }
        Ok(Self { n_t, n_a })
    }
}

/// Uplink drop probability `P(n_t, g_th)^n_a`.
pub fn ul_drop_prob(g_th: f64, d: DiversityConfig) -> f64 {
    regularized_gamma_p(d.n_t, g_th).powi(d.n_a as i32)
}

/// Upper bound on the downlink proactive-drop probability,
/// `E[(1 - g/g_th)^+]` for `g ~ Gamma(n_t, 1)`.
pub fn dl_drop_prob(g_th: f64, n_t: u32) -> f64 {
    dl_drop_terms(g_th, n_t).0
}

/// `(value, ln value)` of the downlink bound.
fn dl_drop_terms(g_th: f64, n_t: u32) -> (f64, f64) {
    if !(g_th > 1e-300) || n_t == 0 {
        return (0.0, f64::NEG_INFINITY);
    }
    let n = f64::from(n_t);
    if g_th < n + 1.0 {
        // e^{-g} sum_{k>=n} g^k/k! (k+1-n)/(k+1)
        weighted_lower_tail(n_t, g_th, |i| f64::from(i + 1) / (n + f64::from(i) + 1.0))
    } else {
        // (1 - n/g) P(n, g) + e^{-g} g^{n-1}/(n-1)!, both terms positive here
        let v = (1.0 - n / g_th) * regularized_gamma_p(n_t, g_th) + poisson_pmf(n_t - 1, g_th);
        (v, v.ln())
    }
}

/// Bracket `[lo, hi]` on the gain axis for an increasing function crossing zero.
fn bracket_gain(f: &mut impl FnMut(f64) -> f64) -> Result<(f64, f64)> {
    let mut hi = 1.0;
    while f(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e7 {
            return Err(Error::Convergence { what: "gain bracketing", iterations: 24 });
        }
    }
    let mut lo = hi / 2.0;
    while f(lo) > 0.0 {
        lo /= 2.0;
        if lo < 1e-300 {
            return Ok((0.0, hi));
        }
    }
    Ok((lo, hi))
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("drop probability must be in (0, 1), got {eps}")))
    }
}

/// Threshold `g_th` with `ul_drop_prob(g_th, d) = eps`.
pub fn invert_ul_drop(eps: f64, d: DiversityConfig) -> Result<f64> {
    check_eps(eps)?;
    if d.n_t == 0 || d.n_a == 0 {
        return Err(Error::Domain("n_t and n_a must be positive".into()));
    }
    let target = eps.ln() / f64::from(d.n_a);
    let mut f = |g: f64| ln_regularized_gamma_p(d.n_t, g) - target;
    let (lo, hi) = bracket_gain(&mut f)?;
    find_root_monotone(f, lo, hi, &ToleranceConfig::tight())
}

/// Threshold `g_th` with `dl_drop_prob(g_th, n_t) = eps`.
pub fn invert_dl_drop(eps: f64, n_t: u32) -> Result<f64> {
    check_eps(eps)?;
    if n_t == 0 {
        return Err(Error::Domain("n_t must be positive".into()));
    }
    let target = eps.ln();
    let mut f = |g: f64| dl_drop_terms(g, n_t).1 - target;
    let (lo, hi) = bracket_gain(&mut f)?;
    find_root_monotone(f, lo, hi, &ToleranceConfig::tight())
}

/// Sampler for the normalized gain `g ~ Gamma(n_t, 1)`.
#[derive(Debug, Clone, Copy)]
pub struct GainSampler {
    dist: Gamma<f64>,
}

impl GainSampler {
    pub fn new(n_t: u32) -> Result<Self> {
        let dist =
            Gamma::new(f64::from(n_t), 1.0).map_err(|e| Error::InvalidParameter(format!("gain distribution: {e}")))?;
        Ok(Self { dist })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.dist.sample(rng)
    }
}

/// One draw of the normalized gain.
pub fn sample_channel_gain<R: Rng + ?Sized>(n_t: u32, rng: &mut R) -> Result<f64> {
    Ok(GainSampler::new(n_t)?.sample(rng))
}
