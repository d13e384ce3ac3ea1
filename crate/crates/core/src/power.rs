//! Power control policies and the average-power upper bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qos::{LinkParams, PowerCost};
use crate::scenario::Scenario;
use crate::solver::Allocation;

/// Amplifier efficiencies, circuit powers and objective weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerCircuitParams {
    pub rho_u: f64,
    pub rho_d: f64,
    pub p_c_u: f64,
    pub p_c_nt: f64,
    pub p_c_na: f64,
    pub omega_u: f64,
    pub omega_d: f64,
}

impl PowerCircuitParams {
    pub fn validate(&self) -> Result<()> {
        for rho in [self.rho_u, self.rho_d] {
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(Error::InvalidParameter(format!("efficiency {rho} outside (0, 1]")));
            }
        }
        let nonneg = [self.p_c_u, self.p_c_nt, self.p_c_na, self.omega_u, self.omega_d];
        if nonneg.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidParameter("circuit powers and weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// Weighted parts of the total-power upper bound, in W, plus energy efficiency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub ul_tx: f64,
    pub dl_tx: f64,
    pub circuit_antenna: f64,
    pub circuit_carrier: f64,
    pub circuit_sensor: f64,
    pub total_ub: f64,
    /// Bits per joule.
    pub ee: f64,
}

/// `sum_{j<n_a} eps^{j/n_a}`: expected number of hops per packet, to first order.
pub fn hop_factor(eps_pu: f64, n_a: u32) -> f64 {
    (0..n_a).map(|j| eps_pu.powf(f64::from(j) / f64::from(n_a))).sum()
}

pub fn ul_power_threshold(b: f64, link: &LinkParams, g_th: f64, eps_c: f64) -> Result<f64> {
    Ok(PowerCost::new(link, 1.0, eps_c)?.value(b) / g_th)
}

pub fn dl_power_threshold(b: f64, e_b: f64, link: &LinkParams, g_th: f64, eps_c: f64) -> Result<f64> {
    Ok(PowerCost::new(link, e_b, eps_c)?.value(b) / g_th)
}

/// Outcome of one uplink packet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UlTransmission {
    pub power: f64,
    pub frames_waited: u32,
    pub dropped: bool,
}

/// Transmit once, by channel inversion, on the first subchannel whose gain
/// reaches the threshold; drop if none does.
pub fn first_hit_transmission(gains: &[f64], g_th: f64, cost_at_b: f64) -> UlTransmission {
    match gains.iter().position(|&g| g >= g_th) {
        Some(j) => UlTransmission { power: cost_at_b / gains[j], frames_waited: j as u32, dropped: false },
        None => UlTransmission { power: 0.0, frames_waited: gains.len() as u32, dropped: true },
    }
}

/// [`first_hit_transmission`] with the cost built from link parameters.
pub fn ul_instant_power(gains: &[f64], g_th: f64, b: f64, link: &LinkParams, eps_c: f64) -> Result<UlTransmission> {
    Ok(first_hit_transmission(gains, g_th, PowerCost::new(link, 1.0, eps_c)?.value(b)))
}

/// Downlink service in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DlService {
    pub power: f64,
    /// Packets carried this frame.
    pub served: f64,
    /// Packets of the batch proactively dropped.
    pub dropped_rate: f64,
}

/// Precomputed downlink policy for one user.
#[derive(Debug, Clone, Copy)]
pub struct DlPolicy {
    cost: PowerCost,
    b: f64,
    e_b: f64,
    g_th: f64,
    /// Packets per frame carried per nat of `ln(1 + snr)`.
    packets_per_nat: f64,
    /// Dispersion penalty in nats.
    penalty: f64,
    snr_th: f64,
}

impl DlPolicy {
    pub fn new(b: f64, e_b: f64, link: &LinkParams, g_th: f64, eps_c: f64) -> Result<Self> {
        let cost = PowerCost::new(link, e_b, eps_c)?;
        let qinv = crate::numerics::inverse_gaussian_q(eps_c)?;
        Ok(Self {
            cost,
            b,
            e_b,
            g_th,
            packets_per_nat: link.tau * b / (link.packet_bits * std::f64::consts::LN_2),
            penalty: qinv / (link.tau * b).sqrt(),
            snr_th: cost.snr(b),
        })
    }

    pub fn threshold_power(&self) -> f64 {
        self.cost.value(self.b) / self.g_th
    }

    pub fn serve(&self, gain: f64) -> DlService {
        let cost = self.cost.value(self.b);
        if gain >= self.g_th {
            return DlService { power: cost / gain, served: self.e_b, dropped_rate: 0.0 };
        }
        let snr = self.snr_th * gain / self.g_th;
        let served = (self.packets_per_nat * (snr.ln_1p() - self.penalty)).max(0.0).min(self.e_b);
        DlService { power: cost / self.g_th, served, dropped_rate: (self.e_b - served).max(0.0) }
    }
}

pub fn dl_instant_power(gain: f64, g_th: f64, b: f64, e_b: f64, link: &LinkParams, eps_c: f64) -> Result<DlService> {
    Ok(DlPolicy::new(b, e_b, link, g_th, eps_c)?.serve(gain))
}

/// Upper bound on the average total power of an allocation.
pub fn total_power_upper_bound(
    alloc: &Allocation,
    scenario: &Scenario,
    circ: &PowerCircuitParams,
    budget: &crate::qos::QosBudget,
) -> Result<CostBreakdown> {
    if alloc.n_t < 2 {
        return Err(Error::InvalidParameter("n_t must be at least 2".into()));
    }
    let p = &scenario.params;
    let denom = f64::from(alloc.n_t - 1);
    let hops = hop_factor(budget.eps_pu, alloc.n_a);
    let mut ul = 0.0;
    for (s, &b) in scenario.sensors.iter().zip(&alloc.b_ul) {
        let y = PowerCost::new(&p.link(s.mu), 1.0, budget.eps_cu)?.value(b);
        ul += p.kappa * hops * y / (circ.rho_u * denom);
    }
    let mut dl = 0.0;
    for ((u, &b), &e_b) in scenario.users.iter().zip(&alloc.b_dl).zip(&alloc.e_b_dl) {
        let y = PowerCost::new(&p.link(u.mu), e_b, budget.eps_cd)?.value(b);
        dl += (u.lambda / e_b) * y / (circ.rho_d * denom);
    }
    Ok(assemble(
        circ,
        ul,
        dl,
        alloc.n_t,
        alloc.n_a,
        scenario.sensors.len(),
        scenario.users.iter().map(|u| u.lambda).sum(),
        p.packet_bits,
        p.t_frame,
        budget.eps_max,
    ))
}

/// Combines unweighted transmit terms with circuit terms.
#[allow(clippy::too_many_arguments)]
pub(crate) fn assemble(
    circ: &PowerCircuitParams,
    ul_tx: f64,
    dl_tx: f64,
    n_t: u32,
    n_a: u32,
    n_sensors: usize,
    total_lambda: f64,
    packet_bits: f64,
    t_frame: f64,
    eps_max: f64,
) -> CostBreakdown {
    let ul_tx = circ.omega_u * ul_tx;
    let circuit_sensor = circ.omega_u * circ.p_c_u * n_sensors as f64;
    let dl_tx = circ.omega_d * dl_tx;
    let circuit_antenna = circ.omega_d * f64::from(n_t) * circ.p_c_nt;
    let circuit_carrier = circ.omega_d * circ.p_c_na / f64::from(n_a);
    let total_ub = ul_tx + circuit_sensor + dl_tx + circuit_antenna + circuit_carrier;
    let ee = packet_bits * total_lambda / t_frame * (1.0 - eps_max) / total_ub;
    CostBreakdown { ul_tx, dl_tx, circuit_antenna, circuit_carrier, circuit_sensor, total_ub, ee }
}
