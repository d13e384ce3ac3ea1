//! System parameters, unit conversions and random device placement.
//!
//! All quantities are SI and linear inside the crate. Decibel values appear
//! only in [`SystemParams::default`] and at output boundaries.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::power::PowerCircuitParams;
use crate::qos::{LinkParams, QosBudget};

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Large-scale gain at distance `d` metres: `-35.3 - 37.6 log10(d)` dB.
pub fn path_loss(d: f64) -> Result<f64> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::Domain(format!("distance must be positive, got {d}")));
    }
    Ok(db_to_linear(-35.3 - 37.6 * d.log10()))
}

/// Every tunable of the system model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemParams {
    pub eps_max: f64,
    /// End-to-end delay budget in seconds, backhaul included.
    pub d_max: f64,
    pub d_backhaul: f64,
    pub t_frame: f64,
    pub tau: f64,
    /// Total bandwidth in Hz.
    pub w_max: f64,
    /// Coherence bandwidth in Hz.
    pub w_c: f64,
    pub packet_bits: f64,
    pub phi: f64,
    /// Noise spectral density in W/Hz.
    pub n0: f64,
    /// Per-sensor uplink power budget in W.
    pub p_max_u: f64,
    /// Aggregate downlink power budget in W.
    pub p_max_d: f64,
    pub n_a_max: u32,
    /// Antenna cap.
    pub psi: u32,
    /// Probability that a sensor has a packet in a frame.
    pub kappa: f64,
    pub rho_u: f64,
    pub rho_d: f64,
    /// Circuit power per sensor, W.
    pub p_c_u: f64,
    /// Circuit power per BS antenna, W.
    pub p_c_nt: f64,
    /// Circuit power of the carrier chain, W; shared over the subchannels.
    pub p_c_na: f64,
    pub omega_u: f64,
    pub omega_d: f64,
    pub r_min: f64,
    pub r_max: f64,
    /// A user listens to the sensors within this distance.
    pub proximity: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            eps_max: 1e-7,
            d_max: 1.1e-3,
            d_backhaul: 1e-4,
            t_frame: 1e-4,
            tau: 5e-5,
            w_max: 100e6,
            w_c: 0.5e6,
            packet_bits: 160.0,
            phi: 1.5,
            n0: dbm_to_watts(-173.0),
            p_max_u: dbm_to_watts(23.0),
            p_max_d: dbm_to_watts(40.0),
            n_a_max: 6,
            psi: 1024,
            kappa: 0.01,
            rho_u: 0.5,
            rho_d: 0.5,
            p_c_u: dbm_to_watts(18.0),
            p_c_nt: dbm_to_watts(33.0),
            p_c_na: dbm_to_watts(21.0),
            omega_u: 1.0,
            omega_d: 1.0,
            r_min: 50.0,
            r_max: 250.0,
            proximity: 50.0,
        }
    }
}

impl SystemParams {
    pub fn budget(&self) -> Result<QosBudget> {
        QosBudget::equal_split(self.d_max, self.d_backhaul, self.t_frame, self.eps_max)
    }

    pub fn circuit(&self) -> PowerCircuitParams {
        PowerCircuitParams {
            rho_u: self.rho_u,
            rho_d: self.rho_d,
            p_c_u: self.p_c_u,
            p_c_nt: self.p_c_nt,
            p_c_na: self.p_c_na,
            omega_u: self.omega_u,
            omega_d: self.omega_d,
        }
    }

    pub fn link(&self, mu: f64) -> LinkParams {
        LinkParams {
            mu,
            bandwidth_cap: self.w_c,
            tau: self.tau,
            packet_bits: self.packet_bits,
            phi: self.phi,
            n0: self.n0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.budget()?;
        self.link(1.0).validate(self.t_frame)?;
        self.circuit().validate()?;
        let positive = [self.w_max, self.p_max_u, self.p_max_d, self.kappa, self.r_min, self.proximity];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidParameter("budgets, kappa and radii must be positive".into()));
        }
        if self.w_c > self.w_max {
            return Err(Error::InvalidParameter("w_c exceeds w_max".into()));
        }
        if self.kappa > 1.0 {
            return Err(Error::InvalidParameter("kappa is a probability".into()));
        }
        if self.r_max < self.r_min {
            return Err(Error::InvalidParameter("r_max below r_min".into()));
        }
        if self.n_a_max < 1 || self.psi < 2 {
            return Err(Error::InvalidParameter("need n_a_max >= 1 and psi >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensor {
    pub id: usize,
    pub position: [f64; 2],
    pub distance: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub id: usize,
    pub position: [f64; 2],
    pub distance: f64,
    pub mu: f64,
    /// Number of sensors the user listens to, at least one.
    pub active_set_size: usize,
    /// Packets per frame.
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub params: SystemParams,
    pub sensors: Vec<Sensor>,
    pub users: Vec<User>,
}

impl Scenario {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        s.params.validate()?;
        Ok(s)
    }

    /// Scenario with given distances; every user listens to one sensor.
    pub fn from_distances(params: SystemParams, sensor_distances: &[f64], user_distances: &[f64]) -> Result<Self> {
        let sensors = sensor_distances
            .iter()
            .enumerate()
            .map(|(id, &d)| Ok(Sensor { id, position: [d, 0.0], distance: d, mu: path_loss(d)? }))
            .collect::<Result<Vec<_>>>()?;
        let users = user_distances
            .iter()
            .enumerate()
            .map(|(id, &d)| {
                Ok(User {
                    id,
                    position: [-d, 0.0],
                    distance: d,
                    mu: path_loss(d)?,
                    active_set_size: 1,
                    lambda: params.kappa,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { seed: 0, params, sensors, users })
    }
}

fn place<R: Rng>(rng: &mut R, r_min: f64, r_max: f64) -> ([f64; 2], f64) {
    let r = rng.random_range(r_min..=r_max);
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    ([r * theta.cos(), r * theta.sin()], r)
}

/// Devices at uniform distance from the BS and uniform angle.
///
/// Deterministic in `seed`.
pub fn generate_scenario(n_sensors: usize, n_users: usize, seed: u64, params: &SystemParams) -> Result<Scenario> {
    params.validate()?;
    if n_sensors == 0 || n_users == 0 {
        return Err(Error::InvalidParameter("need at least one sensor and one user".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sensors = Vec::with_capacity(n_sensors);
    for id in 0..n_sensors {
        let (position, distance) = place(&mut rng, params.r_min, params.r_max);
        sensors.push(Sensor { id, position, distance, mu: path_loss(distance)? });
    }
    let mut users = Vec::with_capacity(n_users);
    for id in 0..n_users {
        let (position, distance) = place(&mut rng, params.r_min, params.r_max);
        let near = sensors
            .iter()
            .filter(|s| {
                let dx = s.position[0] - position[0];
                let dy = s.position[1] - position[1];
                dx.hypot(dy) <= params.proximity
            })
            .count();
        let active_set_size = near.max(1);
        users.push(User {
            id,
            position,
            distance,
            mu: path_loss(distance)?,
            active_set_size,
            lambda: active_set_size as f64 * params.kappa,
        });
    }
    Ok(Scenario { seed, params: params.clone(), sensors, users })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn path_loss_points() {
        assert_relative_eq!(path_loss(1.0).unwrap(), 10f64.powf(-3.53), max_relative = 1e-12);
        assert_relative_eq!(linear_to_db(path_loss(100.0).unwrap()), -35.3 - 75.2, max_relative = 1e-12);
        assert!(path_loss(0.0).is_err());
    }

    #[test]
    fn dbm_round_trip() {
        assert_relative_eq!(dbm_to_watts(30.0), 1.0);
        assert_relative_eq!(dbm_to_watts(23.0), 0.19952623149688797, max_relative = 1e-14);
        assert_relative_eq!(watts_to_dbm(dbm_to_watts(-173.0)), -173.0, max_relative = 1e-12);
    }

    #[test]
    fn defaults_validate() {
        SystemParams::default().validate().unwrap();
        let b = SystemParams::default().budget().unwrap();
        assert_relative_eq!(b.eps_pu, 2e-8);
        assert_relative_eq!(b.d_max - b.d_backhaul, 1e-3, max_relative = 1e-12);
    }

    #[test]
    fn generation_is_deterministic_and_in_range() {
        let p = SystemParams::default();
        let a = generate_scenario(30, 10, 42, &p).unwrap();
        let b = generate_scenario(30, 10, 42, &p).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_scenario(30, 10, 43, &p).unwrap());
        for s in &a.sensors {
            assert!(s.distance >= 50.0 && s.distance <= 250.0);
        }
        for u in &a.users {
            assert!(u.active_set_size >= 1);
            assert_relative_eq!(u.lambda, u.active_set_size as f64 * p.kappa);
        }
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let bad = r#"{"eps_max": 1e-7, "bogus": 1}"#;
        assert!(serde_json::from_str::<SystemParams>(bad).is_err());
        let ok = r#"{"eps_max": 1e-6}"#;
        let p: SystemParams = serde_json::from_str(ok).unwrap();
        assert_eq!(p.psi, 1024);
    }
}
