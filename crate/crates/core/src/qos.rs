//! Latency and reliability budgets, effective bandwidth, and the
//! finite-blocklength cost of carrying one packet.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{find_root_monotone, inverse_gaussian_q, minimize_unimodal, ToleranceConfig};

/// End-to-end delay and reliability budget. Times in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QosBudget {
    pub d_max: f64,
    pub d_backhaul: f64,
    pub t_frame: f64,
    pub eps_max: f64,
    /// Uplink decoding error.
    pub eps_cu: f64,
    /// Uplink hopping drop.
    pub eps_pu: f64,
    /// Downlink decoding error.
    pub eps_cd: f64,
    /// Downlink proactive drop.
    pub eps_pd: f64,
    /// Queueing delay violation.
    pub eps_q: f64,
}

impl QosBudget {
    /// Splits `eps_max` evenly over the five components.
    pub fn equal_split(d_max: f64, d_backhaul: f64, t_frame: f64, eps_max: f64) -> Result<Self> {
        let e = eps_max / 5.0;
        let b = Self { d_max, d_backhaul, t_frame, eps_max, eps_cu: e, eps_pu: e, eps_cd: e, eps_pd: e, eps_q: e };
        b.validate()?;
        Ok(b)
    }

    fn components(&self) -> [f64; 5] {
        [self.eps_cu, self.eps_pu, self.eps_cd, self.eps_pd, self.eps_q]
    }

    pub fn validate(&self) -> Result<()> {
        for e in self.components().into_iter().chain([self.eps_max]) {
            if !(e > 0.0 && e < 1.0) {
                return Err(Error::InvalidParameter(format!("probability {e} outside (0, 1)")));
            }
        }
        let sum: f64 = self.components().iter().sum();
        if sum > self.eps_max * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "reliability components sum to {sum:e}, above eps_max {:e}",
                self.eps_max
            )));
        }
        if !(self.t_frame > 0.0) || !(self.d_backhaul >= 0.0) {
            return Err(Error::InvalidParameter("frame and backhaul times must be positive".into()));
        }
        if self.d_max <= self.d_backhaul + 2.0 * self.t_frame {
            return Err(Error::InvalidParameter("d_max must exceed backhaul delay plus two frames".into()));
        }
        Ok(())
    }
}

/// Physical parameters of one link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// Large-scale gain (linear).
    pub mu: f64,
    /// Coherence bandwidth in Hz, the largest bandwidth one link may use.
    pub bandwidth_cap: f64,
    /// Transmission duration in seconds.
    pub tau: f64,
    pub packet_bits: f64,
    /// SNR loss factor of the finite-blocklength approximation.
    pub phi: f64,
    /// Noise spectral density in W/Hz.
    pub n0: f64,
}

impl LinkParams {
    pub fn validate(&self, t_frame: f64) -> Result<()> {
        let positive = [self.mu, self.bandwidth_cap, self.tau, self.packet_bits, self.phi, self.n0];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter("link parameters must be positive".into()));
        }
        if self.tau > t_frame {
            return Err(Error::InvalidParameter("tau exceeds the frame duration".into()));
        }
        Ok(())
    }
}

/// Queueing delay left after the uplink hops, the backhaul and the downlink frame.
pub fn queueing_delay_bound(budget: &QosBudget, n_a: u32) -> Result<f64> {
    let bound = budget.d_max - f64::from(n_a + 2) * budget.t_frame;
    if bound > 0.0 {
        Ok(bound)
    } else {
        Err(Error::InfeasibleLatency { n_a, bound })
    }
}

/// Effective bandwidth (packets per frame) of a Poisson source with `lambda`
/// packets per frame under delay bound `d_q` and violation probability `eps_q`.
pub fn effective_bandwidth(lambda: f64, t_frame: f64, d_q: f64, eps_q: f64) -> Result<f64> {
    if !(lambda > 0.0) || !(t_frame > 0.0) || !(d_q > 0.0) || !(eps_q > 0.0 && eps_q < 1.0) {
        return Err(Error::Domain(format!(
            "effective bandwidth needs positive rate and delay, got lambda={lambda}, d_q={d_q}"
        )));
    }
    let a = t_frame * (1.0 / eps_q).ln();
    Ok(a / (d_q * (a / (lambda * d_q)).ln_1p()))
}

/// SNR needed to carry `e_b` packets over bandwidth `b` at decoding error `eps_c`.
pub fn snr_threshold(b: f64, e_b: f64, link: &LinkParams, eps_c: f64) -> Result<f64> {
    Ok(PowerCost::new(link, e_b, eps_c)?.snr(b))
}

pub fn ul_snr_threshold(b: f64, link: &LinkParams, eps_c: f64) -> Result<f64> {
    snr_threshold(b, 1.0, link, eps_c)
}

pub fn dl_snr_threshold(b: f64, e_b: f64, link: &LinkParams, eps_c: f64) -> Result<f64> {
    snr_threshold(b, e_b, link, eps_c)
}

/// Transmit power at unit normalized gain, as a function of bandwidth.
pub fn ul_power_cost(b: f64, link: &LinkParams, eps_c: f64) -> Result<f64> {
    Ok(PowerCost::new(link, 1.0, eps_c)?.value(b))
}

pub fn dl_power_cost(b: f64, e_b: f64, link: &LinkParams, eps_c: f64) -> Result<f64> {
    Ok(PowerCost::new(link, e_b, eps_c)?.value(b))
}

/// Bandwidth in `(0, w_c]` minimizing a unimodal cost.
pub fn stationary_bandwidth(cost: impl FnMut(f64) -> f64, w_c: f64) -> Result<f64> {
    let cfg = ToleranceConfig { abs_tol: 1e-12, rel_tol: 1e-12, max_iter: 400 };
    let (b, _) = minimize_unimodal(cost, w_c * 1e-9, w_c, &cfg)?;
    Ok(b.min(w_c))
}

/// Exponent above which `e^h` is treated as overflow.
const H_OVERFLOW: f64 = 700.0;

/// `Y(b) = c b (e^{h(b)} - 1)` with `h(b) = a/b + q/sqrt(b)`.
///
/// Convex and decreasing on `(0, W_th]`, where `W_th` is its stationary point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerCost {
    c: f64,
    a: f64,
    q: f64,
}

impl PowerCost {
    pub fn new(link: &LinkParams, e_b: f64, eps_c: f64) -> Result<Self> {
        let qinv = inverse_gaussian_q(eps_c)?;
        Ok(Self {
            c: link.phi * link.n0 / link.mu,
            a: e_b * link.packet_bits * std::f64::consts::LN_2 / link.tau,
            q: qinv / link.tau.sqrt(),
        })
    }

    pub fn exponent(&self, b: f64) -> f64 {
        self.a / b + self.q / b.sqrt()
    }

    /// SNR threshold at bandwidth `b`.
    pub fn snr(&self, b: f64) -> f64 {
        self.exponent(b).exp_m1()
    }

    pub fn value(&self, b: f64) -> f64 {
        let h = self.exponent(b);
        if h > H_OVERFLOW {
            return f64::INFINITY;
        }
        self.c * b * h.exp_m1()
    }

    pub fn derivative(&self, b: f64) -> f64 {
        let h = self.exponent(b);
        if h > H_OVERFLOW {
            return f64::NEG_INFINITY;
        }
        let k = self.a / b + 0.5 * self.q / b.sqrt();
        self.c * (h.exp_m1() - h.exp() * k)
    }

    pub fn second_derivative(&self, b: f64) -> f64 {
        let h = self.exponent(b);
        if h > H_OVERFLOW {
            return f64::INFINITY;
        }
        let s = b.sqrt();
        let k = self.a / b + 0.5 * self.q / s;
        let dk = self.a / (b * b) + 0.5 * self.q / (b * s);
        self.c * h.exp() * (dk * k - 0.25 * self.q / (b * s))
    }

    /// Stationary point clipped to `w_c`: the usable bandwidth cap.
    pub fn stationary_point(&self, w_c: f64) -> f64 {
        if self.derivative(w_c) <= 0.0 {
            return w_c;
        }
        let cfg = ToleranceConfig { abs_tol: 0.0, rel_tol: 1e-14, max_iter: 400 };
        find_root_monotone(|b| self.derivative(b), w_c * 1e-9, w_c, &cfg).unwrap_or(w_c)
    }

    /// Smallest `b` in `(0, hi]` with `value(b) <= level`, or `None` if even `hi` fails.
    pub fn min_bandwidth_for(&self, level: f64, hi: f64) -> Option<f64> {
        if !(level > 0.0) || self.value(hi) > level {
            return None;
        }
        let ln_level = level.ln();
        let mut lo = hi;
        while self.value(lo) <= level {
            lo *= 0.5;
            if lo < hi * 1e-15 {
                return Some(lo);
            }
        }
        let cfg = ToleranceConfig { abs_tol: 1e-15, rel_tol: 1e-14, max_iter: 400 };
        // The upper end of the final bracket always satisfies the level.
        let mut upper = hi;
        let f = |b: f64| {
            let v = self.value(b);
            let r = ln_level - v.ln();
            if r >= 0.0 && b < upper {
                upper = b;
            }
            r
        };
        find_root_monotone(f, lo, hi, &cfg).ok()?;
        Some(upper)
    }
}
