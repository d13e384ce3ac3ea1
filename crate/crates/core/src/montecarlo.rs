//! Monte Carlo simulation of the delivery mechanism.
//!
//! Uplink trials are active packets: each draws `n_a` independent subchannel
//! gains and transmits on the first one above threshold. The downlink is a
//! per-user fluid queue. Poisson arrivals join at the end of a frame. In
//! every busy frame the base station serves the head of the queue at the
//! policy's rate, then drops the remainder of the effective-bandwidth batch.
//! A packet violates the delay bound when its service starts more than the
//! queueing budget after its arrival.
//!
//! Target probabilities of order `1e-8` are out of reach by direct sampling,
//! so [`relax`] rebuilds an allocation at a larger drop and queueing budget
//! with the same bandwidths.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{regularized_gamma_p, regularized_gamma_q};
use crate::power::{first_hit_transmission, hop_factor, DlPolicy};
use crate::qos::{effective_bandwidth, queueing_delay_bound, LinkParams, PowerCost, QosBudget};
use crate::reliability::{dl_drop_prob, invert_dl_drop, invert_ul_drop, ul_drop_prob, DiversityConfig, GainSampler};
use crate::scenario::Scenario;
use crate::solver::Allocation;

/// Batches used for standard errors of time-correlated queue statistics.
const BATCHES: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Uplink packets per sensor.
    pub trials: u64,
    /// Downlink frames per user.
    pub frames: u64,
    pub seed: u64,
    pub relaxed_eps: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { trials: 100_000, frames: 100_000, seed: 0, relaxed_eps: Some(1e-3) }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.frames == 0 {
            return Err(Error::InvalidParameter("trials and frames must be at least 1".into()));
        }
        if let Some(e) = self.relaxed_eps {
            if !(e > 0.0 && e < 0.5) {
                return Err(Error::InvalidParameter(format!("relaxed eps {e} outside (0, 0.5)")));
            }
        }
        Ok(())
    }
}

/// An estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    fn from_moments(sum: f64, sum_sq: f64, n: u64) -> Self {
        if n == 0 {
            return Self { mean: 0.0, stderr: 0.0 };
        }
        let n = n as f64;
        let mean = sum / n;
        let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
        Self { mean, stderr: (var / n).sqrt() }
    }

    /// Ratio estimate with batch-means standard error.
    fn from_batches(num: &[f64], den: &[f64]) -> Self {
        let total: f64 = den.iter().sum();
        if total <= 0.0 {
            return Self { mean: 0.0, stderr: 0.0 };
        }
        let mean = num.iter().sum::<f64>() / total;
        let used: Vec<f64> = num.iter().zip(den).filter(|(_, &d)| d > 0.0).map(|(&x, &d)| x / d).collect();
        let n = used.len() as f64;
        let stderr = if used.len() > 1 {
            let m = used.iter().sum::<f64>() / n;
            (used.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    /// Pass iff `|empirical - target| <= 3 stderr`.
    Equal,
    /// Pass iff `empirical <= target + 3 stderr`.
    UpperBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub empirical: f64,
    pub stderr: f64,
    pub target: f64,
    pub kind: TargetKind,
    pub pass: bool,
}

impl Metric {
    fn new(est: Estimate, target: f64, kind: TargetKind) -> Self {
        let slack = 3.0 * est.stderr;
        let pass = match kind {
            TargetKind::Equal => (est.mean - target).abs() <= slack,
            TargetKind::UpperBound => est.mean <= target + slack,
        };
        Self { empirical: est.mean, stderr: est.stderr, target, kind, pass }
    }
}

/// Uplink statistics of one sensor. Powers are transmit powers per active packet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UlStats {
    pub sensor: usize,
    pub trials: u64,
    pub drops: u64,
    /// `frames_waited[j]` counts packets sent in hop `j`; the last bin counts drops.
    pub frames_waited: Vec<u64>,
    pub drop_rate: Estimate,
    pub drop_target: f64,
    pub power: Estimate,
    pub max_power: f64,
    pub p_th: f64,
    /// Exact mean power per active packet.
    pub power_exact: f64,
    /// Upper bound on the mean power per active packet.
    pub power_bound: f64,
}

/// Downlink statistics of one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DlStats {
    pub user: usize,
    pub frames: u64,
    pub arrived: f64,
    pub dropped: f64,
    pub late: f64,
    /// Dropped mass over arrived mass.
    pub drop_fraction: Estimate,
    pub drop_bound: f64,
    /// Fraction of arrived packets whose service starts after the deadline.
    pub violation_rate: Estimate,
    pub eps_q: f64,
    pub deadline_frames: u64,
    pub busy_fraction: f64,
    /// `lambda / E^B`.
    pub xi: f64,
    /// Mean power over busy frames.
    pub busy_power: Estimate,
    pub max_power: f64,
    pub p_th: f64,
    /// Exact mean power over busy frames.
    pub busy_power_exact: f64,
    /// Upper bound on the mean power over busy frames.
    pub busy_power_bound: f64,
}

/// Pooled simulation results against analytical targets.
///
/// Average powers are system-wide transmit powers in W, before amplifier
/// efficiency: uplink weighted by the activity `kappa`, downlink by `xi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub config: SimConfig,
    pub budget: QosBudget,
    pub ul_drop_rate: Metric,
    pub dl_drop_rate: Metric,
    pub delay_violation_rate: Metric,
    pub avg_ul_power: Metric,
    pub avg_dl_power: Metric,
    /// Decoding errors plus simulated drop and delay rates, against `eps_max`.
    pub overall_loss: Metric,
    pub ul_power_exact: f64,
    pub dl_power_exact: f64,
    pub pass: bool,
    pub ul: Vec<UlStats>,
    pub dl: Vec<DlStats>,
}

/// A queued downlink packet. Arrivals join at the end of frame `arrival`.
struct Packet {
    arrival: u64,
    batch: usize,
    remaining: f64,
    started: bool,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Rebuilds thresholds, effective bandwidths and power caps of `alloc` with
/// drop and queueing budgets set to `eps`. Bandwidths are kept.
pub fn relax(scenario: &Scenario, alloc: &Allocation, budget: &QosBudget, eps: f64) -> Result<(Allocation, QosBudget)> {
    let mut b = *budget;
    b.eps_pu = eps;
    b.eps_pd = eps;
    b.eps_q = eps;
    b.eps_max = b.eps_cu + b.eps_cd + 3.0 * eps;
    b.validate()?;
    let p = &scenario.params;
    let g_u = invert_ul_drop(eps, DiversityConfig { n_t: alloc.n_t, n_a: alloc.n_a })?;
    let g_d = invert_dl_drop(eps, alloc.n_t)?;
    let d_q = queueing_delay_bound(&b, alloc.n_a)?;
    let mut out = alloc.clone();
    out.g_th_ul = g_u;
    out.g_th_dl = g_d;
    out.p_th_ul = scenario
        .sensors
        .iter()
        .zip(&alloc.b_ul)
        .map(|(s, &bw)| Ok(PowerCost::new(&p.link(s.mu), 1.0, b.eps_cu)?.value(bw) / g_u))
        .collect::<Result<_>>()?;
    out.e_b_dl =
        scenario.users.iter().map(|u| effective_bandwidth(u.lambda, b.t_frame, d_q, eps)).collect::<Result<_>>()?;
    out.p_th_dl = scenario
        .users
        .iter()
        .zip(&alloc.b_dl)
        .zip(&out.e_b_dl)
        .map(|((u, &bw), &e_b)| Ok(PowerCost::new(&p.link(u.mu), e_b, b.eps_cd)?.value(bw) / g_d))
        .collect::<Result<_>>()?;
    Ok((out, b))
}

/// Simulates `cfg.trials` active packets of `sensor`.
pub fn simulate_ul(
    link: &LinkParams,
    alloc: &Allocation,
    sensor: usize,
    budget: &QosBudget,
    cfg: &SimConfig,
) -> Result<UlStats> {
    let b = *alloc.b_ul.get(sensor).ok_or_else(|| Error::InvalidParameter(format!("no sensor {sensor}")))?;
    let (n_t, n_a) = (alloc.n_t, alloc.n_a);
    if n_t < 2 {
        return Err(Error::InvalidParameter("n_t must be at least 2".into()));
    }
    let cost = PowerCost::new(link, 1.0, budget.eps_cu)?.value(b);
    let g_th = alloc.g_th_ul;
    let sampler = GainSampler::new(n_t)?;
    let mut rng = stream_rng(cfg.seed, 2 * sensor as u64);
    let mut gains = vec![0.0; n_a as usize];
    let mut hist = vec![0u64; n_a as usize + 1];
    let (mut sum, mut sum_sq, mut max_power) = (0.0, 0.0, 0.0f64);
    for _ in 0..cfg.trials {
        for g in gains.iter_mut() {
            *g = sampler.sample(&mut rng);
        }
        let tx = first_hit_transmission(&gains, g_th, cost);
        hist[tx.frames_waited as usize] += 1;
        sum += tx.power;
        sum_sq += tx.power * tx.power;
        max_power = max_power.max(tx.power);
    }
    let drops = hist[n_a as usize];
    let drop_target = ul_drop_prob(g_th, DiversityConfig { n_t, n_a });
    let n = cfg.trials as f64;
    let p_hit = regularized_gamma_p(n_t, g_th);
    let inv_tail = regularized_gamma_q(n_t - 1, g_th) / f64::from(n_t - 1);
    let power_exact = cost * inv_tail * (0..n_a).map(|j| p_hit.powi(j as i32)).sum::<f64>();
    Ok(UlStats {
        sensor,
        trials: cfg.trials,
        drops,
        frames_waited: hist,
        drop_rate: Estimate { mean: drops as f64 / n, stderr: (drop_target * (1.0 - drop_target) / n).sqrt() },
        drop_target,
        power: Estimate::from_moments(sum, sum_sq, cfg.trials),
        max_power,
        p_th: if g_th > 0.0 { cost / g_th } else { f64::INFINITY },
        power_exact,
        power_bound: hop_factor(budget.eps_pu, n_a) * cost / f64::from(n_t - 1),
    })
}

/// Simulates the queue of `user` for `cfg.frames` frames.
pub fn simulate_dl_queue(
    link: &LinkParams,
    alloc: &Allocation,
    user: usize,
    lambda: f64,
    budget: &QosBudget,
    cfg: &SimConfig,
) -> Result<DlStats> {
    let (b, e_b) = match (alloc.b_dl.get(user), alloc.e_b_dl.get(user)) {
        (Some(&b), Some(&e)) => (b, e),
        _ => return Err(Error::InvalidParameter(format!("no user {user}"))),
    };
    let n_t = alloc.n_t;
    if n_t < 2 {
        return Err(Error::InvalidParameter("n_t must be at least 2".into()));
    }
    let g_th = alloc.g_th_dl;
    let policy = DlPolicy::new(b, e_b, link, g_th, budget.eps_cd)?;
    let cost = PowerCost::new(link, e_b, budget.eps_cd)?.value(b);
    let d_q = queueing_delay_bound(budget, alloc.n_a)?;
    let deadline = (d_q / budget.t_frame * (1.0 + 1e-9)).floor() as u64;
    let sampler = GainSampler::new(n_t)?;
    let arrivals =
        if lambda > 0.0 { Some(Poisson::new(lambda).map_err(|e| Error::Domain(e.to_string()))?) } else { None };
    let mut rng = stream_rng(cfg.seed, 2 * user as u64 + 1);

    let batch_len = cfg.frames.div_ceil(BATCHES).max(1);
    let n_batches = cfg.frames.div_ceil(batch_len) as usize;
    let mut arrived = vec![0.0; n_batches];
    let mut dropped = vec![0.0; n_batches];
    let mut late = vec![0.0; n_batches];

    let mut queue: VecDeque<Packet> = VecDeque::new();
    let (mut busy, mut sum, mut sum_sq, mut max_power) = (0u64, 0.0, 0.0, 0.0f64);
    for t in 0..cfg.frames {
        let batch = (t / batch_len) as usize;
        if !queue.is_empty() {
            let svc = policy.serve(sampler.sample(&mut rng));
            busy += 1;
            sum += svc.power;
            sum_sq += svc.power * svc.power;
            max_power = max_power.max(svc.power);
            let mut serve = svc.served;
            while serve > 0.0 {
                let Some(front) = queue.front_mut() else { break };
                if !front.started {
                    front.started = true;
                    if t - front.arrival > deadline {
                        late[front.batch] += 1.0;
                    }
                }
                let take = front.remaining.min(serve);
                front.remaining -= take;
                serve -= take;
                if front.remaining <= 1e-12 {
                    queue.pop_front();
                }
            }
            let mut drop = svc.dropped_rate;
            while drop > 0.0 {
                let Some(front) = queue.front_mut() else { break };
                let take = front.remaining.min(drop);
                front.remaining -= take;
                drop -= take;
                dropped[front.batch] += take;
                if front.remaining <= 1e-12 {
                    queue.pop_front();
                }
            }
        }
        if let Some(pois) = &arrivals {
            let n = pois.sample(&mut rng) as u64;
            for _ in 0..n {
                queue.push_back(Packet { arrival: t, batch, remaining: 1.0, started: false });
            }
            arrived[batch] += n as f64;
        }
    }
    let xi = lambda / e_b;
    let inv_tail = regularized_gamma_q(n_t - 1, g_th) / f64::from(n_t - 1);
    let busy_power_exact = cost * (regularized_gamma_p(n_t, g_th) / g_th + inv_tail);
    Ok(DlStats {
        user,
        frames: cfg.frames,
        arrived: arrived.iter().sum(),
        dropped: dropped.iter().sum(),
        late: late.iter().sum(),
        drop_fraction: Estimate::from_batches(&dropped, &arrived),
        drop_bound: dl_drop_prob(g_th, n_t),
        violation_rate: Estimate::from_batches(&late, &arrived),
        eps_q: budget.eps_q,
        deadline_frames: deadline,
        busy_fraction: busy as f64 / cfg.frames as f64,
        xi,
        busy_power: Estimate::from_moments(sum, sum_sq, busy),
        max_power,
        p_th: policy.threshold_power(),
        busy_power_exact: if g_th > 0.0 { busy_power_exact } else { cost * inv_tail },
        busy_power_bound: cost / f64::from(n_t - 1),
    })
}

/// Simulates every sensor and user of `scenario` under `alloc`.
///
/// With `cfg.relaxed_eps` set, the allocation and budget are first passed
/// through [`relax`].
pub fn validate_allocation(
    scenario: &Scenario,
    alloc: &Allocation,
    budget: &QosBudget,
    cfg: &SimConfig,
) -> Result<ValidationReport> {
    cfg.validate()?;
    let (alloc, budget) = match cfg.relaxed_eps {
        Some(eps) => relax(scenario, alloc, budget, eps)?,
        None => (alloc.clone(), *budget),
    };
    let p = &scenario.params;
    let ul = scenario
        .sensors
        .iter()
        .enumerate()
        .map(|(m, s)| simulate_ul(&p.link(s.mu), &alloc, m, &budget, cfg))
        .collect::<Result<Vec<_>>>()?;
    let dl = scenario
        .users
        .iter()
        .enumerate()
        .map(|(k, u)| simulate_dl_queue(&p.link(u.mu), &alloc, k, u.lambda, &budget, cfg))
        .collect::<Result<Vec<_>>>()?;

    let trials: u64 = ul.iter().map(|s| s.trials).sum();
    let drops: u64 = ul.iter().map(|s| s.drops).sum();
    // Targets are the budget, so a mis-set threshold fails the verdict.
    let ul_target = budget.eps_pu;
    let ul_rate = Estimate {
        mean: if trials > 0 { drops as f64 / trials as f64 } else { 0.0 },
        stderr: if trials > 0 { (ul_target * (1.0 - ul_target) / trials as f64).sqrt() } else { 0.0 },
    };

    let pooled = |num: fn(&DlStats) -> f64, est: fn(&DlStats) -> Estimate| {
        let arrived: f64 = dl.iter().map(|s| s.arrived).sum();
        if arrived <= 0.0 {
            return Estimate { mean: 0.0, stderr: 0.0 };
        }
        let mean = dl.iter().map(num).sum::<f64>() / arrived;
        let var: f64 = dl.iter().map(|s| (s.arrived / arrived * est(s).stderr).powi(2)).sum();
        Estimate { mean, stderr: var.sqrt() }
    };
    let dl_rate = pooled(|s| s.dropped, |s| s.drop_fraction);
    let late_rate = pooled(|s| s.late, |s| s.violation_rate);
    let dl_bound = budget.eps_pd;

    let kappa = p.kappa;
    let ul_power = Estimate {
        mean: ul.iter().map(|s| kappa * s.power.mean).sum(),
        stderr: ul.iter().map(|s| (kappa * s.power.stderr).powi(2)).sum::<f64>().sqrt(),
    };
    let ul_bound: f64 = ul.iter().map(|s| kappa * s.power_bound).sum();
    let dl_power = Estimate {
        mean: dl.iter().map(|s| s.xi * s.busy_power.mean).sum(),
        stderr: dl.iter().map(|s| (s.xi * s.busy_power.stderr).powi(2)).sum::<f64>().sqrt(),
    };
    let dl_bound_power: f64 = dl.iter().map(|s| s.xi * s.busy_power_bound).sum();

    let loss = Estimate {
        mean: budget.eps_cu + budget.eps_cd + ul_rate.mean + dl_rate.mean + late_rate.mean,
        stderr: (ul_rate.stderr.powi(2) + dl_rate.stderr.powi(2) + late_rate.stderr.powi(2)).sqrt(),
    };

    let ul_target = if trials > 0 { ul_target } else { 0.0 };
    let ul_drop_rate = Metric::new(ul_rate, ul_target, TargetKind::Equal);
    let dl_drop_rate = Metric::new(dl_rate, dl_bound, TargetKind::UpperBound);
    let delay_violation_rate = Metric::new(late_rate, budget.eps_q, TargetKind::UpperBound);
    let avg_ul_power = Metric::new(ul_power, ul_bound, TargetKind::UpperBound);
    let avg_dl_power = Metric::new(dl_power, dl_bound_power, TargetKind::UpperBound);
    let overall_loss = Metric::new(loss, budget.eps_max, TargetKind::UpperBound);
    let pass = [ul_drop_rate, dl_drop_rate, delay_violation_rate, avg_ul_power, avg_dl_power, overall_loss]
        .iter()
        .all(|m| m.pass);
    Ok(ValidationReport {
        config: *cfg,
        budget,
        ul_drop_rate,
        dl_drop_rate,
        delay_violation_rate,
        avg_ul_power,
        avg_dl_power,
        overall_loss,
        ul_power_exact: ul.iter().map(|s| kappa * s.power_exact).sum(),
        dl_power_exact: dl.iter().map(|s| s.xi * s.busy_power_exact).sum(),
        pass,
        ul,
        dl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::SystemParams;

    fn setup(eps: f64) -> (Scenario, Allocation, QosBudget) {
        let p = SystemParams::default();
        let sc = Scenario::from_distances(p.clone(), &[120.0], &[80.0]).unwrap();
        let budget = p.budget().unwrap();
        let alloc = Allocation {
            b_ul: vec![2e5],
            b_dl: vec![3e5],
            p_th_ul: vec![0.0],
            p_th_dl: vec![0.0],
            e_b_dl: vec![1.0],
            n_t: 8,
            n_a: 2,
            g_th_ul: 1.0,
            g_th_dl: 1.0,
        };
        let (alloc, budget) = relax(&sc, &alloc, &budget, eps).unwrap();
        (sc, alloc, budget)
    }

    fn cfg(n: u64) -> SimConfig {
        SimConfig { trials: n, frames: n, seed: 7, relaxed_eps: None }
    }

    #[test]
    fn zero_threshold_never_drops_uplink() {
        let (sc, mut alloc, budget) = setup(1e-2);
        alloc.g_th_ul = 0.0;
        let s = simulate_ul(&sc.params.link(sc.sensors[0].mu), &alloc, 0, &budget, &cfg(10_000)).unwrap();
        assert_eq!(s.drops, 0);
        assert_eq!(s.frames_waited[0], 10_000);
    }

    #[test]
    fn uplink_power_capped_by_threshold() {
        let (sc, alloc, budget) = setup(1e-2);
        let s = simulate_ul(&sc.params.link(sc.sensors[0].mu), &alloc, 0, &budget, &cfg(50_000)).unwrap();
        assert!(s.max_power <= s.p_th * (1.0 + 1e-12));
        assert!((s.drop_rate.mean - 1e-2).abs() <= 3.0 * s.drop_rate.stderr);
    }

    #[test]
    fn downlink_power_capped_by_threshold() {
        let (sc, alloc, budget) = setup(1e-2);
        let u = &sc.users[0];
        let s = simulate_dl_queue(&sc.params.link(u.mu), &alloc, 0, u.lambda, &budget, &cfg(50_000)).unwrap();
        assert!(s.max_power <= s.p_th * (1.0 + 1e-12));
        assert!(s.busy_power_exact <= s.busy_power_bound);
    }

    #[test]
    fn idle_queue_is_silent() {
        let (sc, alloc, budget) = setup(1e-2);
        let s = simulate_dl_queue(&sc.params.link(sc.users[0].mu), &alloc, 0, 0.0, &budget, &cfg(1000)).unwrap();
        assert_eq!((s.arrived, s.busy_fraction, s.late), (0.0, 0.0, 0.0));
    }

    #[test]
    fn reports_are_deterministic() {
        let (sc, alloc, budget) = setup(1e-2);
        let a = validate_allocation(&sc, &alloc, &budget, &cfg(2000)).unwrap();
        let b = validate_allocation(&sc, &alloc, &budget, &cfg(2000)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_scenario_passes() {
        let p = SystemParams::default();
        let sc = Scenario::from_distances(p.clone(), &[], &[]).unwrap();
        let alloc = Allocation {
            b_ul: vec![],
            b_dl: vec![],
            p_th_ul: vec![],
            p_th_dl: vec![],
            e_b_dl: vec![],
            n_t: 8,
            n_a: 1,
            g_th_ul: 1.0,
            g_th_dl: 1.0,
        };
        let r = validate_allocation(&sc, &alloc, &p.budget().unwrap(), &SimConfig::default()).unwrap();
        assert!(r.pass && r.ul.is_empty() && r.dl.is_empty());
    }
}
