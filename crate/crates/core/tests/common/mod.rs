//! Shared fixtures for the integration tests.

#![allow(dead_code)]

use std::ops::RangeInclusive;
use std::path::PathBuf;

use serde::Deserialize;
use urllc_core::qos::{effective_bandwidth, queueing_delay_bound, LinkParams, PowerCost, QosBudget};
use urllc_core::reliability::{invert_dl_drop, invert_ul_drop, DiversityConfig};
use urllc_core::scenario::{Scenario, SystemParams};

#[derive(Debug, Deserialize)]
pub struct InverseQ {
    pub p: f64,
    pub x: f64,
}

#[derive(Debug, Deserialize)]
pub struct GammaP {
    pub n: u32,
    pub x: f64,
    pub p: f64,
}

#[derive(Debug, Deserialize)]
pub struct UlDrop {
    pub g: f64,
    pub n_t: u32,
    pub n_a: u32,
    pub value: f64,
}

#[derive(Debug, Deserialize)]
pub struct DlDrop {
    pub g: f64,
    pub n_t: u32,
    pub value: f64,
}

#[derive(Debug, Deserialize)]
pub struct EffBw {
    pub lambda: f64,
    pub t_frame: f64,
    pub d_q: f64,
    pub eps_q: f64,
    pub value: f64,
}

#[derive(Debug, Deserialize)]
pub struct Snr {
    pub b: f64,
    pub e_b: f64,
    pub packet_bits: f64,
    pub tau: f64,
    pub eps_c: f64,
    pub value: f64,
}

#[derive(Debug, Deserialize)]
pub struct Cost {
    pub b: f64,
    pub e_b: f64,
    pub mu: f64,
    pub phi: f64,
    pub n0: f64,
    pub packet_bits: f64,
    pub tau: f64,
    pub eps_c: f64,
    pub value: f64,
}

impl Cost {
    pub fn link(&self) -> LinkParams {
        LinkParams {
            mu: self.mu,
            bandwidth_cap: 5e5,
            tau: self.tau,
            packet_bits: self.packet_bits,
            phi: self.phi,
            n0: self.n0,
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct InverseDrop {
    pub ul_64_2: f64,
    pub dl_64: f64,
}

#[derive(Debug, Deserialize)]
pub struct Composition {
    pub distance: f64,
    pub mu: f64,
    pub e_b: f64,
    pub snr_ul_200k: f64,
    pub snr_dl_300k: f64,
    pub cost_ul_200k: f64,
    pub cost_dl_300k: f64,
    pub p_th_ul: f64,
    pub p_th_dl: f64,
}

#[derive(Debug, Deserialize)]
pub struct Fixtures {
    pub inverse_q: Vec<InverseQ>,
    pub gamma_p: Vec<GammaP>,
    pub root_p4_half: f64,
    pub ul_drop: Vec<UlDrop>,
    pub dl_drop: Vec<DlDrop>,
    pub effective_bandwidth: Vec<EffBw>,
    pub snr: Vec<Snr>,
    pub power_cost: Vec<Cost>,
    pub inverse_drop: InverseDrop,
    pub path_loss_250: f64,
    pub composition: Composition,
    pub expected_active_set_300: f64,
}

pub fn fixtures() -> Fixtures {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/formulas.json");
    serde_json::from_str(&std::fs::read_to_string(path).expect("fixture file")).expect("fixture schema")
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    if want == 0.0 {
        got.abs()
    } else {
        ((got - want) / want).abs()
    }
}

/// Default link to a device at `mu`.
pub fn table_link(mu: f64) -> LinkParams {
    SystemParams::default().link(mu)
}

/// Best point of an exhaustive search over `(n_a, n_t)` and per-device
/// bandwidth lattices of `points` values on `(0, cap]`.
#[derive(Debug, Clone)]
pub struct LatticeOptimum {
    pub total: f64,
    /// Largest objective change from moving one device one lattice step.
    pub resolution: f64,
    pub n_t: u32,
    pub n_a: u32,
    pub b: Vec<f64>,
}

/// Exhaustive oracle built from the scalar formulas only, over antenna counts in `n_ts`.
pub fn lattice_optimum(
    sc: &Scenario,
    budget: &QosBudget,
    n_ts: RangeInclusive<u32>,
    points: usize,
) -> Option<LatticeOptimum> {
    let p = &sc.params;
    let circ = p.circuit();
    let ul: Vec<PowerCost> =
        sc.sensors.iter().map(|s| PowerCost::new(&p.link(s.mu), 1.0, budget.eps_cu).unwrap()).collect();
    let mut best: Option<LatticeOptimum> = None;
    for n_a in 1..=p.n_a_max {
        let Ok(d_q) = queueing_delay_bound(budget, n_a) else { continue };
        let e_b: Vec<f64> = sc
            .users
            .iter()
            .map(|u| effective_bandwidth(u.lambda, budget.t_frame, d_q, budget.eps_q).unwrap())
            .collect();
        let dl: Vec<PowerCost> =
            sc.users.iter().zip(&e_b).map(|(u, &e)| PowerCost::new(&p.link(u.mu), e, budget.eps_cd).unwrap()).collect();
        let costs: Vec<&PowerCost> = ul.iter().chain(&dl).collect();
        let grids: Vec<Vec<f64>> = costs
            .iter()
            .map(|c| {
                let cap = c.stationary_point(p.w_c);
                (1..=points).map(|i| cap * i as f64 / points as f64).collect()
            })
            .collect();
        let values: Vec<Vec<f64>> =
            costs.iter().zip(&grids).map(|(c, g)| g.iter().map(|&b| c.value(b)).collect()).collect();
        let hops: f64 = (0..n_a).map(|j| budget.eps_pu.powf(f64::from(j) / f64::from(n_a))).sum();
        let m = ul.len();
        for n_t in n_ts.clone() {
            let g_u = invert_ul_drop(budget.eps_pu, DiversityConfig { n_t, n_a }).unwrap();
            let g_d = invert_dl_drop(budget.eps_pd, n_t).unwrap();
            let denom = f64::from(n_t - 1);
            let weight: Vec<f64> = (0..costs.len())
                .map(|i| {
                    if i < m {
                        circ.omega_u * p.kappa * hops / (circ.rho_u * denom)
                    } else {
                        let u = &sc.users[i - m];
                        circ.omega_d * (u.lambda / e_b[i - m]) / (circ.rho_d * denom)
                    }
                })
                .collect();
            let circuit = circ.omega_u * circ.p_c_u * m as f64
                + circ.omega_d * f64::from(n_t) * circ.p_c_nt
                + circ.omega_d * circ.p_c_na / f64::from(n_a);
            // Lattice indices allowed by the per-sensor power limits.
            let allowed: Vec<Vec<usize>> = (0..costs.len())
                .map(|i| (0..points).filter(|&j| i >= m || values[i][j] / g_u <= p.p_max_u).collect())
                .collect();
            if allowed.iter().any(Vec::is_empty) {
                continue;
            }
            let mut idx = vec![0usize; costs.len()];
            loop {
                let mut bw = 0.0;
                let mut obj = circuit;
                let mut dl_y = 0.0;
                for (i, &k) in idx.iter().enumerate() {
                    let j = allowed[i][k];
                    bw += grids[i][j];
                    obj += weight[i] * values[i][j];
                    if i >= m {
                        dl_y += values[i][j];
                    }
                }
                if bw <= p.w_max && dl_y / g_d <= p.p_max_d && best.as_ref().is_none_or(|b| obj < b.total) {
                    let resolution = idx
                        .iter()
                        .enumerate()
                        .map(|(i, &k)| {
                            let j = allowed[i][k];
                            let here = values[i][j];
                            let lo = if j > 0 { values[i][j - 1] } else { here };
                            let hi = if j + 1 < points { values[i][j + 1] } else { here };
                            weight[i] * (lo - here).abs().max((hi - here).abs())
                        })
                        .fold(0.0, f64::max);
                    let b = idx.iter().enumerate().map(|(i, &k)| grids[i][allowed[i][k]]).collect();
                    best = Some(LatticeOptimum { total: obj, resolution, n_t, n_a, b });
                }
                let mut pos = 0;
                while pos < idx.len() {
                    idx[pos] += 1;
                    if idx[pos] < allowed[pos].len() {
                        break;
                    }
                    idx[pos] = 0;
                    pos += 1;
                }
                if pos == idx.len() {
                    break;
                }
            }
        }
    }
    best
}

/// Tiny instance: two sensors and one user, two subchannels at most.
pub fn tiny_scenario(w_max: f64) -> Scenario {
    let params = SystemParams { n_a_max: 2, psi: 16, w_max, ..SystemParams::default() };
    Scenario::from_distances(params, &[60.0, 90.0], &[80.0]).unwrap()
}
