//! Bandwidth, antenna and subchannel optimization.
//!
//! A [`Planner`] holds the per-device cost functions of one scenario. On top
//! of it sit the convex bandwidth subproblem, the minimax feasibility margin
//! `z*`, the antenna searches and the three-step joint optimizer.
//!
//! The bandwidth subproblem is solved through its dual. The total-bandwidth
//! multiplier `nu_b` is found by bisection; for each `nu_b` the downlink
//! sum-power multiplier is found by a nested bisection; each bandwidth then
//! solves a scalar convex problem by safeguarded Newton iteration.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::{BindingConstraint, Error, Result};
use crate::power::{assemble, hop_factor, CostBreakdown, PowerCircuitParams};
use crate::qos::{effective_bandwidth, queueing_delay_bound, PowerCost, QosBudget};
use crate::reliability::{invert_dl_drop, invert_ul_drop, DiversityConfig};
use crate::scenario::Scenario;

/// Value reported for `z*` when both power budgets are unbounded.
pub const Z_UNBOUNDED: f64 = -1e300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub b_ul: Vec<f64>,
    pub b_dl: Vec<f64>,
    pub p_th_ul: Vec<f64>,
    pub p_th_dl: Vec<f64>,
    /// Effective bandwidth of each user, packets per frame.
    pub e_b_dl: Vec<f64>,
    pub n_t: u32,
    pub n_a: u32,
    pub g_th_ul: f64,
    pub g_th_dl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Joint,
    EqBw,
    FixedNa,
    FixedNt,
    OptBw,
    OptNa,
    OptNt,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Joint,
        Strategy::EqBw,
        Strategy::FixedNa,
        Strategy::FixedNt,
        Strategy::OptBw,
        Strategy::OptNa,
        Strategy::OptNt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Joint => "joint",
            Strategy::EqBw => "eq-bw",
            Strategy::FixedNa => "fixed-na",
            Strategy::FixedNt => "fixed-nt",
            Strategy::OptBw => "opt-bw",
            Strategy::OptNa => "opt-na",
            Strategy::OptNt => "opt-nt",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown strategy {s}")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageIterations {
    pub feasibility_solves: usize,
    pub bandwidth_solves: usize,
    pub search_probes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub strategy: Strategy,
    pub allocation: Allocation,
    pub cost: CostBreakdown,
    pub z_star: f64,
    pub n_t_min: u32,
    /// Indexed by `n_a - 1`; zero where that `n_a` is unusable.
    pub n_t_in_per_na: Vec<u32>,
    pub iterations: StageIterations,
    pub status: SolveStatus,
    pub warnings: Vec<String>,
}

/// Optimum of the bandwidth subproblem at fixed `(n_t, n_a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSolution {
    pub n_t: u32,
    pub n_a: u32,
    pub b_ul: Vec<f64>,
    pub b_dl: Vec<f64>,
    /// Weighted transmit-power bound at this `n_t`, W.
    pub objective: f64,
    /// `objective * (n_t - 1)`, the part independent of `n_t`.
    pub omega: f64,
    pub nu_bandwidth: f64,
    pub nu_power: f64,
    /// Sensors whose power constraint is active.
    pub ul_binding: usize,
    pub duality_gap: f64,
    /// `max(max_m Y_m/g_u - P_u, sum_k Y_k/g_d - P_d)` at the solution.
    pub z: f64,
}

impl BandwidthSolution {
    pub fn constraints_active(&self) -> bool {
        self.ul_binding > 0 || self.nu_power > 0.0
    }
}

/// Downlink quantities that depend on `n_a` through the queueing delay.
#[derive(Debug, Clone)]
struct DownlinkSet {
    e_b: Vec<f64>,
    /// `lambda / E^B`: probability that the queue is nonempty.
    xi: Vec<f64>,
    cost: Vec<PowerCost>,
    cap: Vec<f64>,
}

/// Scalar minimization of `w Y(b) + nu b` on `[lo, hi]` for convex decreasing `Y`.
///
/// Returns the minimizer and whether it sits at `lo` with the lower bound active.
fn scalar_argmin(cost: &PowerCost, w: f64, nu: f64, lo: f64, hi: f64, warm: f64) -> (f64, bool) {
    let g = |b: f64| w * cost.derivative(b) + nu;
    if g(hi) <= 0.0 {
        return (hi, false);
    }
    if g(lo) >= 0.0 {
        return (lo, true);
    }
    let (mut a, mut c) = (lo, hi);
    let mut x = if warm > lo && warm < hi { warm } else { (lo * hi).sqrt() };
    for _ in 0..400 {
        let gx = g(x);
        if gx.abs() <= 1e-12 * nu {
            return (x, false);
        }
        if gx < 0.0 {
            a = x;
        } else {
            c = x;
        }
        if c - a <= 1e-14 * c {
            return (0.5 * (a + c), false);
        }
        let step = gx / (w * cost.second_derivative(x));
        let mut next = x - step;
        // Reject steps that leave the bracket or stall far from the root.
        if !next.is_finite() || next <= a || next >= c || step.abs() <= 1e-15 * x {
            next = if c / a > 4.0 { (a * c).sqrt() } else { 0.5 * (a + c) };
        }
        x = next;
    }
    (x, false)
}

/// Shared per-scenario state of the optimizer.
#[derive(Debug, Clone)]
pub struct Planner<'a> {
    scenario: &'a Scenario,
    budget: QosBudget,
    circ: PowerCircuitParams,
    ul_cost: Vec<PowerCost>,
    ul_cap: Vec<f64>,
    /// Indexed by `n_a - 1`; `None` when the latency budget excludes that `n_a`.
    dl: Vec<Option<DownlinkSet>>,
    warnings: Vec<String>,
}

impl<'a> Planner<'a> {
    pub fn new(scenario: &'a Scenario, budget: &QosBudget, circ: &PowerCircuitParams) -> Result<Self> {
        let p = &scenario.params;
        budget.validate()?;
        circ.validate()?;
        if scenario.sensors.is_empty() && scenario.users.is_empty() {
            return Err(Error::InvalidParameter("scenario has no devices".into()));
        }
        let mut ul_cost = Vec::with_capacity(scenario.sensors.len());
        let mut ul_cap = Vec::with_capacity(scenario.sensors.len());
        for s in &scenario.sensors {
            let c = PowerCost::new(&p.link(s.mu), 1.0, budget.eps_cu)?;
            ul_cap.push(c.stationary_point(p.w_c));
            ul_cost.push(c);
        }
        let mut dl = Vec::new();
        let mut warnings = Vec::new();
        for n_a in 1..=p.n_a_max {
            let d_q = match queueing_delay_bound(budget, n_a) {
                Ok(d) => d,
                Err(_) => {
                    warnings.push(format!("n_a = {n_a} leaves no queueing delay budget; skipped"));
                    dl.push(None);
                    continue;
                }
            };
            let mut set = DownlinkSet { e_b: vec![], xi: vec![], cost: vec![], cap: vec![] };
            for u in &scenario.users {
                let e_b = effective_bandwidth(u.lambda, budget.t_frame, d_q, budget.eps_q)?;
                let c = PowerCost::new(&p.link(u.mu), e_b, budget.eps_cd)?;
                set.cap.push(c.stationary_point(p.w_c));
                set.cost.push(c);
                set.xi.push(u.lambda / e_b);
                set.e_b.push(e_b);
            }
            dl.push(Some(set));
        }
        Ok(Self { scenario, budget: *budget, circ: *circ, ul_cost, ul_cap, dl, warnings })
    }

    pub fn scenario(&self) -> &Scenario {
        self.scenario
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Subchannel counts allowed by the latency budget.
    pub fn subchannel_options(&self) -> Vec<u32> {
        (1..=self.scenario.params.n_a_max).filter(|&n| self.dl[n as usize - 1].is_some()).collect()
    }

    fn downlink(&self, n_a: u32) -> Result<&DownlinkSet> {
        self.dl
            .get(n_a as usize - 1)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::InvalidParameter(format!("n_a = {n_a} is not available")))
    }

    pub fn ul_caps(&self) -> &[f64] {
        &self.ul_cap
    }

    pub fn dl_caps(&self, n_a: u32) -> Result<&[f64]> {
        Ok(&self.downlink(n_a)?.cap)
    }

    pub fn ul_cost(&self, m: usize) -> &PowerCost {
        &self.ul_cost[m]
    }

    pub fn dl_cost(&self, n_a: u32, k: usize) -> Result<&PowerCost> {
        Ok(&self.downlink(n_a)?.cost[k])
    }

    /// Gain thresholds `(g_ul, g_dl)` meeting the drop budgets.
    pub fn thresholds(&self, n_t: u32, n_a: u32) -> Result<(f64, f64)> {
        let d = DiversityConfig::new(n_t, n_a, self.scenario.params.n_a_max)?;
        Ok((invert_ul_drop(self.budget.eps_pu, d)?, invert_dl_drop(self.budget.eps_pd, n_t)?))
    }

    /// Per-sensor and per-user weights of the transmit-power bound at `n_t`.
    fn weights(&self, n_t: u32, n_a: u32) -> Result<(f64, Vec<f64>)> {
        let p = &self.scenario.params;
        let denom = f64::from(n_t - 1);
        let a = self.circ.omega_u * p.kappa * hop_factor(self.budget.eps_pu, n_a) / (self.circ.rho_u * denom);
        let dl = self.downlink(n_a)?;
        let c = dl.xi.iter().map(|xi| self.circ.omega_d * xi / (self.circ.rho_d * denom)).collect();
        Ok((a, c))
    }

    /// Cost breakdown of given bandwidths at `(n_t, n_a)`.
    pub fn evaluate(&self, b_ul: &[f64], b_dl: &[f64], n_t: u32, n_a: u32) -> Result<CostBreakdown> {
        let p = &self.scenario.params;
        let denom = f64::from(n_t - 1);
        let hops = hop_factor(self.budget.eps_pu, n_a);
        let ul: f64 =
            self.ul_cost.iter().zip(b_ul).map(|(c, &b)| p.kappa * hops * c.value(b) / (self.circ.rho_u * denom)).sum();
        let set = self.downlink(n_a)?;
        let dl: f64 = set
            .cost
            .iter()
            .zip(&set.xi)
            .zip(b_dl)
            .map(|((c, xi), &b)| xi * c.value(b) / (self.circ.rho_d * denom))
            .sum();
        Ok(assemble(
            &self.circ,
            ul,
            dl,
            n_t,
            n_a,
            self.scenario.sensors.len(),
            self.scenario.users.iter().map(|u| u.lambda).sum(),
            p.packet_bits,
            p.t_frame,
            self.budget.eps_max,
        ))
    }

    /// Power margin `z` of given bandwidths.
    pub fn margin(&self, b_ul: &[f64], b_dl: &[f64], n_t: u32, n_a: u32) -> Result<f64> {
        let (g_u, g_d) = self.thresholds(n_t, n_a)?;
        self.margin_at(b_ul, b_dl, n_a, g_u, g_d)
    }

    fn margin_at(&self, b_ul: &[f64], b_dl: &[f64], n_a: u32, g_u: f64, g_d: f64) -> Result<f64> {
        let p = &self.scenario.params;
        let ul =
            self.ul_cost.iter().zip(b_ul).map(|(c, &b)| c.value(b) / g_u - p.p_max_u).fold(f64::NEG_INFINITY, f64::max);
        let set = self.downlink(n_a)?;
        let dl = if set.cost.is_empty() {
            f64::NEG_INFINITY
        } else {
            set.cost.iter().zip(b_dl).map(|(c, &b)| c.value(b)).sum::<f64>() / g_d - p.p_max_d
        };
        Ok(ul.max(dl))
    }

    /// Constraint that blocks feasibility when bandwidth is unlimited, else bandwidth.
    fn diagnose(&self, n_t: u32, n_a: u32) -> Result<BindingConstraint> {
        let p = &self.scenario.params;
        let (g_u, g_d) = self.thresholds(n_t, n_a)?;
        for (m, (c, &cap)) in self.ul_cost.iter().zip(&self.ul_cap).enumerate() {
            if c.value(cap) / g_u > p.p_max_u {
                return Ok(BindingConstraint::UplinkPower { sensor: m });
            }
        }
        let set = self.downlink(n_a)?;
        let dl: f64 = set.cost.iter().zip(&set.cap).map(|(c, &b)| c.value(b)).sum();
        if dl / g_d > p.p_max_d {
            return Ok(BindingConstraint::DownlinkPower);
        }
        Ok(BindingConstraint::Bandwidth)
    }

    /// Downlink bandwidths and sum of costs for multipliers `(nu_b, mu)`.
    fn dl_response(&self, set: &DownlinkSet, c: &[f64], nu_b: f64, mu: f64, b: &mut [f64]) -> (f64, f64) {
        let mut total_b = 0.0;
        let mut total_y = 0.0;
        for k in 0..b.len() {
            let lo = set.cap[k] * 1e-12;
            let (bk, _) = scalar_argmin(&set.cost[k], c[k] + mu, nu_b, lo, set.cap[k], b[k]);
            b[k] = bk;
            total_b += bk;
            total_y += set.cost[k].value(bk);
        }
        (total_b, total_y)
    }

    /// Solves the downlink part for fixed `nu_b`: returns `(sum b, sum Y, mu)`.
    fn dl_with_power(
        &self,
        set: &DownlinkSet,
        c: &[f64],
        nu_b: f64,
        target: f64,
        b: &mut [f64],
    ) -> Result<(f64, f64, f64)> {
        let (tb, ty) = self.dl_response(set, c, nu_b, 0.0, b);
        if ty <= target {
            return Ok((tb, ty, 0.0));
        }
        let c_max = c.iter().cloned().fold(0.0, f64::max).max(1e-300);
        let mut hi = c_max;
        let mut at_hi = self.dl_response(set, c, nu_b, hi, b);
        let mut lo = 0.0;
        let mut guard = 0;
        while at_hi.1 > target {
            lo = hi;
            hi *= 8.0;
            at_hi = self.dl_response(set, c, nu_b, hi, b);
            guard += 1;
            if guard > 400 {
                return Err(Error::Convergence { what: "downlink power multiplier", iterations: guard });
            }
        }
        for _ in 0..200 {
            if at_hi.1 >= target * (1.0 - 1e-12) || hi - lo <= 1e-15 * hi {
                break;
            }
            let mid = if lo > 0.0 && hi / lo > 4.0 { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
            let r = self.dl_response(set, c, nu_b, mid, b);
            if r.1 > target {
                lo = mid;
            } else {
                hi = mid;
                at_hi = r;
            }
        }
        // Recompute at hi so `b` matches the returned multiplier.
        let r = self.dl_response(set, c, nu_b, hi, b);
        Ok((r.0, r.1, hi))
    }

    /// Optimal bandwidths at fixed `(n_t, n_a)`.
    pub fn solve_bandwidth(&self, n_t: u32, n_a: u32) -> Result<BandwidthSolution> {
        let p = &self.scenario.params;
        let (g_u, g_d) = self.thresholds(n_t, n_a)?;
        let (a, c) = self.weights(n_t, n_a)?;
        let set = self.downlink(n_a)?;
        let infeasible = |binding| Error::Infeasible { binding, n_t, n_a };

        let mut b_min = Vec::with_capacity(self.ul_cost.len());
        for (m, (cost, &cap)) in self.ul_cost.iter().zip(&self.ul_cap).enumerate() {
            match cost.min_bandwidth_for(g_u * p.p_max_u, cap) {
                Some(b) => b_min.push(b),
                None => return Err(infeasible(BindingConstraint::UplinkPower { sensor: m })),
            }
        }
        let target = g_d * p.p_max_d;
        let y_cap: f64 = set.cost.iter().zip(&set.cap).map(|(c, &b)| c.value(b)).sum();
        if y_cap > target {
            return Err(infeasible(BindingConstraint::DownlinkPower));
        }

        let mut b_ul = self.ul_cap.clone();
        let mut b_dl = set.cap.clone();
        let eval = |nu_b: f64, b_ul: &mut [f64], b_dl: &mut [f64]| -> Result<(f64, f64, f64, usize)> {
            let mut tb = 0.0;
            let mut binding = 0;
            for m in 0..b_ul.len() {
                let (bm, at_lo) = scalar_argmin(&self.ul_cost[m], a, nu_b, b_min[m], self.ul_cap[m], b_ul[m]);
                b_ul[m] = bm;
                tb += bm;
                binding += usize::from(at_lo);
            }
            let (db, dy, mu) = self.dl_with_power(set, &c, nu_b, target, b_dl)?;
            Ok((tb + db, dy, mu, binding))
        };

        let w = p.w_max;
        let mut nu_hi = 0.0;
        let mut iters = 0;
        let mut state = eval(0.0, &mut b_ul, &mut b_dl)?;
        if state.0 > w {
            let mut nu_lo = 0.0;
            nu_hi = 1e-20;
            state = eval(nu_hi, &mut b_ul, &mut b_dl)?;
            while state.0 > w {
                nu_lo = nu_hi;
                nu_hi *= 16.0;
                if nu_hi > 1e250 {
                    return Err(infeasible(BindingConstraint::Bandwidth));
                }
                state = eval(nu_hi, &mut b_ul, &mut b_dl)?;
            }
            while state.0 < w * (1.0 - 1e-11) && nu_hi - nu_lo > 1e-14 * nu_hi {
                let mid =
                    if nu_lo > 0.0 && nu_hi / nu_lo > 4.0 { (nu_lo * nu_hi).sqrt() } else { 0.5 * (nu_lo + nu_hi) };
                let mut tu = b_ul.clone();
                let mut td = b_dl.clone();
                let r = eval(mid, &mut tu, &mut td)?;
                if r.0 > w {
                    nu_lo = mid;
                } else {
                    nu_hi = mid;
                    state = r;
                    b_ul = tu;
                    b_dl = td;
                }
                iters += 1;
                if iters > 400 {
                    return Err(Error::Convergence { what: "bandwidth multiplier", iterations: iters });
                }
            }
        }
        let (total_b, total_y, mu, binding) = state;
        let objective: f64 = self.ul_cost.iter().zip(&b_ul).map(|(cost, &b)| a * cost.value(b)).sum::<f64>()
            + set.cost.iter().zip(&c).zip(&b_dl).map(|((cost, ck), &b)| ck * cost.value(b)).sum::<f64>();
        let gap = nu_hi * (w - total_b) + mu * (target - total_y);
        let z = self.margin_at(&b_ul, &b_dl, n_a, g_u, g_d)?;
        debug!(
            "bandwidth n_t={n_t} n_a={n_a} obj={objective:.6e} nu_b={nu_hi:.3e} mu={mu:.3e} gap={gap:.3e} \
             z={z:.3e} iters={iters}"
        );
        Ok(BandwidthSolution {
            n_t,
            n_a,
            b_ul,
            b_dl,
            objective,
            omega: objective * f64::from(n_t - 1),
            nu_bandwidth: nu_hi,
            nu_power: mu * g_d,
            ul_binding: binding,
            duality_gap: gap.max(0.0),
            z,
        })
    }

    /// Smallest downlink cost sum reachable with total downlink bandwidth `r`.
    fn dl_min_cost(&self, set: &DownlinkSet, r: f64, b: &mut [f64]) -> f64 {
        let cap_total: f64 = set.cap.iter().sum();
        if cap_total <= r {
            b.copy_from_slice(&set.cap);
            return set.cost.iter().zip(&set.cap).map(|(c, &x)| c.value(x)).sum();
        }
        let ones = vec![1.0; b.len()];
        let mut hi = 1e-20;
        let mut at_hi = self.dl_response(set, &ones, hi, 0.0, b);
        let mut lo = 0.0;
        while at_hi.0 > r {
            lo = hi;
            hi *= 16.0;
            if hi > 1e250 {
                return f64::INFINITY;
            }
            at_hi = self.dl_response(set, &ones, hi, 0.0, b);
        }
        for _ in 0..300 {
            if at_hi.0 >= r * (1.0 - 1e-12) || hi - lo <= 1e-15 * hi {
                break;
            }
            let mid = if lo > 0.0 && hi / lo > 4.0 { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
            let res = self.dl_response(set, &ones, mid, 0.0, b);
            if res.0 > r {
                lo = mid;
            } else {
                hi = mid;
                at_hi = res;
            }
        }
        at_hi.1
    }

    /// Whether every power constraint can be met with slack `t` added to both budgets.
    fn level_feasible(&self, set: &DownlinkSet, g_u: f64, g_d: f64, t: f64, b: &mut [f64]) -> bool {
        let p = &self.scenario.params;
        let level = g_u * (p.p_max_u + t);
        let mut used = 0.0;
        for (c, &cap) in self.ul_cost.iter().zip(&self.ul_cap) {
            match c.min_bandwidth_for(level, cap) {
                Some(x) => used += x,
                None => return false,
            }
        }
        let rest = p.w_max - used;
        if rest < 0.0 {
            return false;
        }
        if set.cost.is_empty() {
            return true;
        }
        let y = self.dl_min_cost(set, rest, b);
        y <= g_d * (p.p_max_d + t)
    }

    /// Minimax power margin `z*`; the bandwidth subproblem is feasible iff `z* <= 0`.
    pub fn feasibility_z(&self, n_t: u32, n_a: u32) -> Result<f64> {
        let p = &self.scenario.params;
        if p.p_max_u.is_infinite() && p.p_max_d.is_infinite() {
            return Ok(Z_UNBOUNDED);
        }
        let (g_u, g_d) = self.thresholds(n_t, n_a)?;
        let set = self.downlink(n_a)?;
        let t_lo = self.margin_at(&self.ul_cap, &set.cap, n_a, g_u, g_d)?;
        let cap_total: f64 = self.ul_cap.iter().sum::<f64>() + set.cap.iter().sum::<f64>();
        if cap_total <= p.w_max {
            return Ok(t_lo);
        }
        let mut scratch = set.cap.clone();
        let mut feasible = |t: f64| self.level_feasible(set, g_u, g_d, t, &mut scratch);
        let scale = p.p_max_u + p.p_max_d;
        let (mut lo, mut hi) = if feasible(0.0) {
            (t_lo.min(0.0), 0.0)
        } else {
            let lo = t_lo.max(0.0);
            let mut step = scale;
            while !feasible(lo + step) {
                step *= 4.0;
                if step > 1e300 {
                    return Err(Error::Convergence { what: "feasibility bracket", iterations: 500 });
                }
            }
            (lo, lo + step)
        };
        for _ in 0..300 {
            if hi - lo <= 1e-13 * hi.abs().max(scale) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if feasible(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }
}

/// Outcome of one probe of the antenna search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Probe {
    Pass,
    /// Margin exactly zero.
    Boundary,
    Fail,
}

/// Handling of a [`Probe::Boundary`] result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryRule {
    /// Treat as failing and keep bisecting; equals a linear scan on monotone probes.
    #[default]
    Bisect,
    /// Stop and return the current upper bracket.
    BreakToUpper,
}

/// Binary search for the smallest passing `n_t` in `(lb, ub]`, never below 2.
///
/// `ub` itself is probed only if nothing inside passed. Returns `None`
/// when no value passes.
pub fn antenna_binary_search(
    lb: u32,
    ub: u32,
    rule: BoundaryRule,
    mut probe: impl FnMut(u32) -> Result<Probe>,
) -> Result<Option<u32>> {
    let (mut lb, mut ub) = (lb, ub);
    let mut found = None;
    let mut bs = (lb + ub).div_ceil(2);
    while ub - lb > 1 && bs >= 2 {
        match probe(bs)? {
            Probe::Pass => {
                found = Some(bs);
                ub = bs;
            }
            Probe::Boundary if rule == BoundaryRule::BreakToUpper => {
                return Ok(Some(ub));
            }
            Probe::Boundary | Probe::Fail => lb = bs,
        }
        bs = (lb + ub).div_ceil(2);
    }
    if found.is_none() && ub >= 2 && probe(ub)? == Probe::Pass {
        found = Some(ub);
    }
    Ok(found)
}

/// Antenna count minimizing `omega/(n_t - 1) + n_t p_c_nt`, never below `n_t_in`.
pub fn antenna_closed_form(omega: f64, p_c_nt: f64, n_t_in: u32, psi_cap: u32) -> u32 {
    let x = 1.0 + (omega / p_c_nt).sqrt();
    let cand = if x.is_finite() { x.ceil().min(f64::from(u32::MAX)) as u32 } else { psi_cap };
    cand.max(n_t_in).min(psi_cap.max(n_t_in))
}

/// Best integer `n_t` in `[floor, cap]` for `omega/(n_t-1) + n_t p_c_nt`.
fn best_convex_antennas(omega: f64, p_c_nt: f64, floor: u32, cap: u32) -> u32 {
    let f = |n: u32| omega / f64::from(n - 1) + f64::from(n) * p_c_nt;
    let x = if p_c_nt > 0.0 { 1.0 + (omega / p_c_nt).sqrt() } else { f64::INFINITY };
    let mut best = floor;
    for cand in [x.floor(), x.ceil()] {
        if cand.is_finite() && cand >= f64::from(floor) && cand <= f64::from(cap) {
            let n = cand as u32;
            if f(n) < f(best) {
                best = n;
            }
        }
    }
    if !x.is_finite() || x > f64::from(cap) {
        best = cap;
    }
    best
}

/// Minimum and inactive-constraint antenna counts for each subchannel count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AntennaLandscape {
    pub psi: u32,
    pub n_t_min: u32,
    /// Indexed by `n_a - 1`.
    pub min_per_na: Vec<Option<u32>>,
    pub inactive_per_na: Vec<Option<u32>>,
    pub iterations: StageIterations,
    pub warnings: Vec<String>,
}

impl AntennaLandscape {
    /// Usable subchannel counts.
    pub fn feasible_na(&self) -> Vec<u32> {
        (1..=self.min_per_na.len() as u32).filter(|&n| self.min_per_na[n as usize - 1].is_some()).collect()
    }

    /// Inactive-constraint count for `n_a`, capped at `psi` and at least `n_t_min`.
    pub fn n_t_in(&self, n_a: u32) -> u32 {
        self.inactive_per_na[n_a as usize - 1].unwrap_or(self.psi).max(self.n_t_min)
    }
}

impl Planner<'_> {
    /// Smallest feasible `n_t` per `n_a`, and their maximum.
    pub fn find_min_antennas(&self, psi: u32, iters: &mut StageIterations) -> Result<(u32, Vec<Option<u32>>)> {
        let n_a_max = self.scenario.params.n_a_max;
        let mut per_na = vec![None; n_a_max as usize];
        let mut last_failure = None;
        for n_a in self.subchannel_options() {
            let found = antenna_binary_search(0, psi, BoundaryRule::Bisect, |n_t| {
                iters.feasibility_solves += 1;
                iters.search_probes += 1;
                let z = self.feasibility_z(n_t, n_a)?;
                Ok(if z <= 0.0 { Probe::Pass } else { Probe::Fail })
            })?;
            if found.is_none() {
                last_failure = Some(n_a);
            }
            per_na[n_a as usize - 1] = found;
        }
        match per_na.iter().flatten().max() {
            Some(&m) => Ok((m, per_na)),
            None => {
                let n_a = last_failure.unwrap_or(1);
                let binding = if self.dl.iter().all(Option::is_none) {
                    BindingConstraint::AntennaCap
                } else {
                    self.diagnose(psi, n_a)?
                };
                Err(Error::Infeasible { binding, n_t: psi, n_a })
            }
        }
    }

    /// Smallest `n_t >= n_t_min` whose bandwidth optimum leaves both power
    /// constraints slack, per `n_a`; `None` if constraints stay active up to `psi`.
    pub fn find_inactive_antennas(
        &self,
        n_t_min: u32,
        psi: u32,
        rule: BoundaryRule,
        feasible_na: &[u32],
        iters: &mut StageIterations,
    ) -> Result<Vec<Option<u32>>> {
        let mut out = vec![None; self.scenario.params.n_a_max as usize];
        for &n_a in feasible_na {
            let mut probe = |n_t: u32| -> Result<Probe> {
                iters.bandwidth_solves += 1;
                iters.search_probes += 1;
                let sol = self.solve_bandwidth(n_t, n_a)?;
                Ok(if sol.constraints_active() {
                    if sol.z == 0.0 {
                        Probe::Boundary
                    } else {
                        Probe::Fail
                    }
                } else {
                    Probe::Pass
                })
            };
            out[n_a as usize - 1] = if probe(n_t_min)? == Probe::Pass {
                Some(n_t_min)
            } else {
                antenna_binary_search(n_t_min, psi, rule, probe)?
            };
        }
        Ok(out)
    }

    pub fn landscape(&self, psi: u32) -> Result<AntennaLandscape> {
        let mut iterations = StageIterations::default();
        let (n_t_min, min_per_na) = self.find_min_antennas(psi, &mut iterations)?;
        let feasible: Vec<u32> =
            (1..=min_per_na.len() as u32).filter(|&n| min_per_na[n as usize - 1].is_some()).collect();
        let inactive_per_na =
            self.find_inactive_antennas(n_t_min, psi, BoundaryRule::Bisect, &feasible, &mut iterations)?;
        let mut warnings = self.warnings.clone();
        for n_a in 1..=min_per_na.len() as u32 {
            let i = n_a as usize - 1;
            if self.dl[i].is_some() && min_per_na[i].is_none() {
                warnings.push(format!("n_a = {n_a} is infeasible up to psi = {psi}"));
            }
            if min_per_na[i].is_some() && inactive_per_na[i].is_none() {
                warnings.push(format!("n_a = {n_a}: power constraints still active at psi = {psi}"));
            }
            if inactive_per_na[i] == Some(n_t_min) {
                warnings.push(format!("n_a = {n_a}: constraints already inactive at n_t_min"));
            }
        }
        debug!(
            "antennas n_t_min={n_t_min} min={min_per_na:?} inactive={inactive_per_na:?} \
             z_solves={} bw_solves={} probes={}",
            iterations.feasibility_solves, iterations.bandwidth_solves, iterations.search_probes
        );
        Ok(AntennaLandscape { psi, n_t_min, min_per_na, inactive_per_na, iterations, warnings })
    }

    fn allocation(&self, b_ul: Vec<f64>, b_dl: Vec<f64>, n_t: u32, n_a: u32) -> Result<Allocation> {
        let (g_u, g_d) = self.thresholds(n_t, n_a)?;
        let set = self.downlink(n_a)?;
        let p_th_ul = self.ul_cost.iter().zip(&b_ul).map(|(c, &b)| c.value(b) / g_u).collect();
        let p_th_dl = set.cost.iter().zip(&b_dl).map(|(c, &b)| c.value(b) / g_d).collect();
        Ok(Allocation { b_ul, b_dl, p_th_ul, p_th_dl, e_b_dl: set.e_b.clone(), n_t, n_a, g_th_ul: g_u, g_th_dl: g_d })
    }

    fn report(
        &self,
        strategy: Strategy,
        best: Candidate,
        land: &AntennaLandscape,
        mut iterations: StageIterations,
    ) -> Result<SolverReport> {
        let cost = self.evaluate(&best.b_ul, &best.b_dl, best.n_t, best.n_a)?;
        let z_star = self.margin(&best.b_ul, &best.b_dl, best.n_t, best.n_a)?;
        iterations.feasibility_solves += land.iterations.feasibility_solves;
        iterations.bandwidth_solves += land.iterations.bandwidth_solves;
        iterations.search_probes += land.iterations.search_probes;
        let allocation = self.allocation(best.b_ul, best.b_dl, best.n_t, best.n_a)?;
        Ok(SolverReport {
            strategy,
            allocation,
            cost,
            z_star,
            n_t_min: land.n_t_min,
            n_t_in_per_na: land
                .inactive_per_na
                .iter()
                .enumerate()
                .map(|(i, v)| match v {
                    Some(n) => *n,
                    None if land.min_per_na[i].is_some() => land.psi,
                    None => 0,
                })
                .collect(),
            iterations,
            status: SolveStatus::Optimal,
            warnings: land.warnings.clone(),
        })
    }

    /// Best `(n_t, bandwidths)` for one `n_a`, scanning from `n_t_min`.
    fn best_for_na(&self, n_a: u32, land: &AntennaLandscape, iters: &mut StageIterations) -> Result<Candidate> {
        let n_t_in = land.n_t_in(n_a);
        let p_c = self.circ.omega_d * self.circ.p_c_nt;
        let mut best: Option<Candidate> = None;
        let mut last = None;
        for n_t in land.n_t_min..=n_t_in {
            iters.bandwidth_solves += 1;
            let sol = self.solve_bandwidth(n_t, n_a)?;
            let total = self.evaluate(&sol.b_ul, &sol.b_dl, n_t, n_a)?.total_ub;
            let cand = Candidate { n_t, n_a, total, b_ul: sol.b_ul.clone(), b_dl: sol.b_dl.clone() };
            if best.as_ref().is_none_or(|b| total < b.total) {
                best = Some(cand);
            }
            last = Some(sol);
        }
        let last = last.expect("scan range is never empty");
        // Beyond n_t_in the bandwidths no longer change with n_t.
        let n_star = best_convex_antennas(last.omega, p_c, n_t_in, land.psi.max(n_t_in));
        if n_star > n_t_in {
            let total = self.evaluate(&last.b_ul, &last.b_dl, n_star, n_a)?.total_ub;
            if best.as_ref().is_none_or(|b| total < b.total) {
                best = Some(Candidate { n_t: n_star, n_a, total, b_ul: last.b_ul, b_dl: last.b_dl });
            }
        }
        Ok(best.expect("at least one candidate"))
    }

    /// Three-step joint optimum over bandwidths, `n_t` and `n_a`.
    pub fn three_step(&self, land: &AntennaLandscape) -> Result<SolverReport> {
        let mut iters = StageIterations::default();
        let mut best: Option<Candidate> = None;
        for n_a in land.feasible_na() {
            let cand = self.best_for_na(n_a, land, &mut iters)?;
            if best.as_ref().is_none_or(|b| cand.total < b.total) {
                best = Some(cand);
            }
        }
        let best = best.ok_or(Error::Infeasible {
            binding: BindingConstraint::AntennaCap,
            n_t: land.psi,
            n_a: self.scenario.params.n_a_max,
        })?;
        self.report(Strategy::Joint, best, land, iters)
    }

    /// Optimum with `n_a` fixed; bandwidths and `n_t` optimized.
    pub fn optimum_at_subchannels(&self, n_a: u32, land: &AntennaLandscape) -> Result<SolverReport> {
        if !land.feasible_na().contains(&n_a) {
            return Err(Error::Infeasible { binding: BindingConstraint::AntennaCap, n_t: land.psi, n_a });
        }
        let mut iters = StageIterations::default();
        let best = self.best_for_na(n_a, land, &mut iters)?;
        self.report(Strategy::Joint, best, land, iters)
    }

    /// Equal split of the total bandwidth, each share capped at the device's usable maximum.
    pub fn equal_bandwidth(&self, n_a: u32) -> Result<(Vec<f64>, Vec<f64>)> {
        let p = &self.scenario.params;
        let share = p.w_max / (self.ul_cost.len() + self.scenario.users.len()) as f64;
        let ul = self.ul_cap.iter().map(|&c| share.min(c)).collect();
        let dl = self.downlink(n_a)?.cap.iter().map(|&c| share.min(c)).collect();
        Ok((ul, dl))
    }

    /// Best `n_t` in `[floor, psi]` for fixed bandwidths, if any is feasible.
    fn best_fixed_bandwidth(
        &self,
        b_ul: &[f64],
        b_dl: &[f64],
        n_a: u32,
        floor: u32,
        psi: u32,
        iters: &mut StageIterations,
    ) -> Result<Option<Candidate>> {
        let mut probe = |n_t: u32| -> Result<Probe> {
            iters.search_probes += 1;
            Ok(if self.margin(b_ul, b_dl, n_t, n_a)? <= 0.0 { Probe::Pass } else { Probe::Fail })
        };
        let first = if probe(floor)? == Probe::Pass {
            Some(floor)
        } else {
            antenna_binary_search(floor, psi, BoundaryRule::Bisect, &mut probe)?
        };
        let Some(n_feas) = first else { return Ok(None) };
        let omega = self.evaluate(b_ul, b_dl, 2, n_a)?;
        let omega = omega.ul_tx + omega.dl_tx;
        let n_t = best_convex_antennas(omega, self.circ.omega_d * self.circ.p_c_nt, n_feas, psi.max(n_feas));
        let total = self.evaluate(b_ul, b_dl, n_t, n_a)?.total_ub;
        Ok(Some(Candidate { n_t, n_a, total, b_ul: b_ul.to_vec(), b_dl: b_dl.to_vec() }))
    }

    fn solved_candidate(&self, n_t: u32, n_a: u32, iters: &mut StageIterations) -> Result<Candidate> {
        iters.bandwidth_solves += 1;
        let sol = self.solve_bandwidth(n_t, n_a)?;
        let total = self.evaluate(&sol.b_ul, &sol.b_dl, n_t, n_a)?.total_ub;
        Ok(Candidate { n_t, n_a, total, b_ul: sol.b_ul, b_dl: sol.b_dl })
    }

    /// Baseline with some of the variables frozen.
    pub fn baseline(&self, strategy: Strategy, land: &AntennaLandscape) -> Result<SolverReport> {
        let n_a_max = self.scenario.params.n_a_max;
        let mut iters = StageIterations::default();
        let max_na_usable = land.feasible_na().contains(&n_a_max);
        let unusable = || Error::Infeasible { binding: BindingConstraint::AntennaCap, n_t: land.psi, n_a: n_a_max };
        let pick = |cands: Vec<Candidate>| -> Option<Candidate> {
            cands.into_iter().fold(None, |acc: Option<Candidate>, c| match acc {
                Some(a) if a.total <= c.total => Some(a),
                _ => Some(c),
            })
        };
        let best = match strategy {
            Strategy::Joint => return self.three_step(land),
            Strategy::FixedNa => {
                if !max_na_usable {
                    return Err(unusable());
                }
                Some(self.best_for_na(n_a_max, land, &mut iters)?)
            }
            Strategy::FixedNt => {
                let mut c = Vec::new();
                for n_a in land.feasible_na() {
                    c.push(self.solved_candidate(land.n_t_in(n_a), n_a, &mut iters)?);
                }
                pick(c)
            }
            Strategy::OptBw => {
                if !max_na_usable {
                    return Err(unusable());
                }
                Some(self.solved_candidate(land.n_t_in(n_a_max), n_a_max, &mut iters)?)
            }
            Strategy::EqBw => {
                let mut c = Vec::new();
                for n_a in land.feasible_na() {
                    let (u, d) = self.equal_bandwidth(n_a)?;
                    c.extend(self.best_fixed_bandwidth(&u, &d, n_a, land.n_t_min, land.psi, &mut iters)?);
                }
                pick(c)
            }
            Strategy::OptNa => {
                let mut c = Vec::new();
                for n_a in land.feasible_na() {
                    let (u, d) = self.equal_bandwidth(n_a)?;
                    let n_t = land.n_t_in(n_a);
                    if self.margin(&u, &d, n_t, n_a)? <= 0.0 {
                        let total = self.evaluate(&u, &d, n_t, n_a)?.total_ub;
                        c.push(Candidate { n_t, n_a, total, b_ul: u, b_dl: d });
                    }
                }
                pick(c)
            }
            Strategy::OptNt => {
                if !max_na_usable {
                    return Err(unusable());
                }
                let (u, d) = self.equal_bandwidth(n_a_max)?;
                self.best_fixed_bandwidth(&u, &d, n_a_max, land.n_t_min, land.psi, &mut iters)?
            }
        };
        let best = match best {
            Some(b) => b,
            None => {
                let n_a = if strategy == Strategy::OptNa { 1 } else { n_a_max };
                return Err(Error::Infeasible {
                    binding: self.equal_split_binding(n_a, land.psi)?,
                    n_t: land.psi,
                    n_a,
                });
            }
        };
        self.report(strategy, best, land, iters)
    }

    fn equal_split_binding(&self, n_a: u32, n_t: u32) -> Result<BindingConstraint> {
        let p = &self.scenario.params;
        let (u, _) = self.equal_bandwidth(n_a)?;
        let (g_u, _) = self.thresholds(n_t, n_a)?;
        for (m, (c, &b)) in self.ul_cost.iter().zip(&u).enumerate() {
            if c.value(b) / g_u > p.p_max_u {
                return Ok(BindingConstraint::UplinkPower { sensor: m });
            }
        }
        Ok(BindingConstraint::DownlinkPower)
    }

    /// Joint optimum and every baseline, sharing the antenna searches.
    pub fn compare(&self, psi: u32) -> Result<Vec<(Strategy, Result<SolverReport>)>> {
        let land = self.landscape(psi)?;
        Ok(Strategy::ALL.into_iter().map(|s| (s, self.baseline(s, &land))).collect())
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    n_t: u32,
    n_a: u32,
    total: f64,
    b_ul: Vec<f64>,
    b_dl: Vec<f64>,
}

/// Optimal bandwidths at `(n_t, n_a)`; see [`Planner::solve_bandwidth`].
pub fn solve_bandwidth(
    scenario: &Scenario,
    n_t: u32,
    n_a: u32,
    budget: &QosBudget,
    circ: &PowerCircuitParams,
) -> Result<BandwidthSolution> {
    Planner::new(scenario, budget, circ)?.solve_bandwidth(n_t, n_a)
}

pub fn feasibility_z(scenario: &Scenario, n_t: u32, n_a: u32, budget: &QosBudget) -> Result<f64> {
    Planner::new(scenario, budget, &scenario.params.circuit())?.feasibility_z(n_t, n_a)
}

pub fn find_min_antennas(scenario: &Scenario, budget: &QosBudget, psi: u32) -> Result<(u32, Vec<Option<u32>>)> {
    Planner::new(scenario, budget, &scenario.params.circuit())?.find_min_antennas(psi, &mut StageIterations::default())
}

pub fn find_inactive_antennas(
    scenario: &Scenario,
    budget: &QosBudget,
    n_t_min: u32,
    psi: u32,
) -> Result<Vec<Option<u32>>> {
    let planner = Planner::new(scenario, budget, &scenario.params.circuit())?;
    let feasible = planner.subchannel_options();
    planner.find_inactive_antennas(n_t_min, psi, BoundaryRule::Bisect, &feasible, &mut StageIterations::default())
}

pub fn three_step_allocate(
    scenario: &Scenario,
    budget: &QosBudget,
    circ: &PowerCircuitParams,
    psi: u32,
) -> Result<SolverReport> {
    let planner = Planner::new(scenario, budget, circ)?;
    let land = planner.landscape(psi)?;
    planner.three_step(&land)
}

pub fn baseline_allocate(
    scenario: &Scenario,
    budget: &QosBudget,
    circ: &PowerCircuitParams,
    strategy: Strategy,
    psi: u32,
) -> Result<SolverReport> {
    let planner = Planner::new(scenario, budget, circ)?;
    let land = planner.landscape(psi)?;
    planner.baseline(strategy, &land)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimax_margin_never_exceeds_solution_margin_large_network() {
        let p = crate::scenario::SystemParams::default();
        let sc = crate::scenario::generate_scenario(300, 100, 1, &p).unwrap();
        let budget = p.budget().unwrap();
        let pl = Planner::new(&sc, &budget, &p.circuit()).unwrap();
        let set = pl.downlink(2).unwrap();
        let sol = pl.solve_bandwidth(910, 2).unwrap();
        let dl_b: f64 = sol.b_dl.iter().sum();
        let dl_y: f64 = set.cost.iter().zip(&sol.b_dl).map(|(c, &b)| c.value(b)).sum();
        let mut scratch = set.cap.clone();
        let best = pl.dl_min_cost(set, dl_b, &mut scratch);
        assert!(best <= dl_y * (1.0 + 1e-9));
        let z = pl.feasibility_z(910, 2).unwrap();
        assert!(z <= sol.z + 1e-9, "{z} vs {}", sol.z);
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(antenna_closed_form(2.0, 2.0, 2, 1024), 2);
        assert_eq!(antenna_closed_form(200.0, 2.0, 5, 1024), 11);
        assert_eq!(antenna_closed_form(200.0, 2.0, 20, 1024), 20);
    }

    #[test]
    fn convex_antenna_choice_matches_scan() {
        for (omega, pc, floor) in [(50.0, 2.0, 2), (733.0, 1.3, 3), (5.0, 2.0, 9), (1e4, 0.5, 40)] {
            let f = |n: u32| omega / f64::from(n - 1) + f64::from(n) * pc;
            let scan = (floor..=1024).min_by(|&a, &b| f(a).partial_cmp(&f(b)).unwrap()).unwrap();
            assert_eq!(best_convex_antennas(omega, pc, floor, 1024), scan);
        }
    }

    #[test]
    fn binary_search_first_pass() {
        for threshold in 2..40u32 {
            let r = antenna_binary_search(0, 64, BoundaryRule::Bisect, |n| {
                Ok(if n >= threshold { Probe::Pass } else { Probe::Fail })
            })
            .unwrap();
            assert_eq!(r, Some(threshold));
        }
        let none = antenna_binary_search(0, 16, BoundaryRule::Bisect, |_| Ok(Probe::Fail)).unwrap();
        assert_eq!(none, None);
    }

    #[test]
    fn break_rule_returns_upper_bracket() {
        // bs sequence from (4, 64]: 34 passes, then 19 is a boundary
        let r = antenna_binary_search(4, 64, BoundaryRule::BreakToUpper, |n| {
            Ok(match n {
                19 => Probe::Boundary,
                n if n >= 20 => Probe::Pass,
                _ => Probe::Fail,
            })
        })
        .unwrap();
        assert_eq!(r, Some(34));
        let r = antenna_binary_search(4, 64, BoundaryRule::Bisect, |n| {
            Ok(match n {
                19 => Probe::Boundary,
                n if n >= 20 => Probe::Pass,
                _ => Probe::Fail,
            })
        })
        .unwrap();
        assert_eq!(r, Some(20));
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("best".parse::<Strategy>().is_err());
    }
}
