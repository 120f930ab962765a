//! Multi-UAV mobile access environment.
//!
//! UAVs fly over a square map of ground users. Each step every UAV moves one
//! leg in a cardinal direction or hovers, pays the rotor energy for that
//! choice, and serves the users that associate with it. The shared reward
//! weighs the delivered quality by how little the coverage discs overlap.
//!
//! Layouts:
//! - observation of UAV `m`: `[x_m, y_m, d_m0, .., d_m(M-1), e_m]`, distances
//!   are `-1` beyond the observation range and `0` for `m` itself;
//! - state: `(c_mn, q_mn)` pairs, UAV-major, `2 M N` entries.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{rx_power_dbm, ChannelParams, McsTable};
use crate::error::{Error, Result};
use crate::stochastics::NoiseDraw;

/// Closest a user can be to a UAV in the link budget.
pub const MIN_LINK_DISTANCE_M: f64 = 1.0;
/// Samples used to estimate the coverage overlap.
pub const OVERLAP_SAMPLES: usize = 10_000;
const OVERLAP_SEED: u64 = 0x5eed_0f_0ce7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UavEnergyParams {
    pub profile_drag: f64,
    pub air_density: f64,
    pub rotor_solidity: f64,
    pub rotor_disc_area_m2: f64,
    pub blade_angular_velocity: f64,
    pub rotor_radius_m: f64,
    pub induced_correction: f64,
    pub mass_kg: f64,
    pub gravity: f64,
    pub flight_speed_mps: f64,
    pub tip_speed: f64,
    pub mean_induced_velocity: f64,
    pub fuselage_drag_ratio: f64,
    pub battery_mah: f64,
    pub battery_voltage: f64,
}

impl Default for UavEnergyParams {
    fn default() -> Self {
        Self {
            profile_drag: 0.012,
            air_density: 1.225,
            rotor_solidity: 0.05,
            rotor_disc_area_m2: 0.503,
            blade_angular_velocity: 300.0,
            rotor_radius_m: 0.4,
            induced_correction: 0.1,
            mass_kg: 1.375,
            gravity: 9.8,
            flight_speed_mps: 20.0,
            tip_speed: 120.0,
            mean_induced_velocity: 4.03,
            fuselage_drag_ratio: 0.6,
            battery_mah: 5870.0,
            battery_voltage: 15.2,
        }
    }
}

impl UavEnergyParams {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let fields = [
            ("profile_drag", self.profile_drag),
            ("air_density", self.air_density),
            ("rotor_solidity", self.rotor_solidity),
            ("rotor_disc_area_m2", self.rotor_disc_area_m2),
            ("blade_angular_velocity", self.blade_angular_velocity),
            ("rotor_radius_m", self.rotor_radius_m),
            ("induced_correction", self.induced_correction),
            ("mass_kg", self.mass_kg),
            ("gravity", self.gravity),
            ("flight_speed_mps", self.flight_speed_mps),
            ("tip_speed", self.tip_speed),
            ("mean_induced_velocity", self.mean_induced_velocity),
            ("fuselage_drag_ratio", self.fuselage_drag_ratio),
            ("battery_mah", self.battery_mah),
            ("battery_voltage", self.battery_voltage),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(
                    format!("{prefix}{name}"),
                    format!("must be positive, got {v}"),
                ));
            }
        }
        let r = self.rotor_radius_m;
        let disc = std::f64::consts::PI * r * r;
        if (self.rotor_disc_area_m2 - disc).abs() > 0.01 * disc {
            return Err(Error::config(
                format!("{prefix}rotor_disc_area_m2"),
                format!("inconsistent with pi R^2 = {disc:.4}"),
            ));
        }
        let tip = self.blade_angular_velocity * r;
        if (self.tip_speed - tip).abs() > 0.01 * tip {
            return Err(Error::config(
                format!("{prefix}tip_speed"),
                format!("inconsistent with Omega R = {tip:.4}"),
            ));
        }
        Ok(())
    }

    /// Aircraft weight as a force, newtons.
    pub fn weight_n(&self) -> f64 {
        self.mass_kg * self.gravity
    }

    pub fn battery_wh(&self) -> f64 {
        self.battery_mah / 1000.0 * self.battery_voltage
    }

    pub fn battery_j(&self) -> f64 {
        self.battery_wh() * 3600.0
    }

    /// Blade-profile power `delta/8 rho s A Omega^3 R^3`.
    pub fn blade_profile_w(&self) -> f64 {
        self.profile_drag / 8.0
            * self.air_density
            * self.rotor_solidity
            * self.rotor_disc_area_m2
            * self.blade_angular_velocity.powi(3)
            * self.rotor_radius_m.powi(3)
    }

    /// Induced power `(1 + k) W^1.5 / sqrt(2 rho A)`.
    pub fn induced_w(&self) -> f64 {
        (1.0 + self.induced_correction) * self.weight_n().powf(1.5)
            / (2.0 * self.air_density * self.rotor_disc_area_m2).sqrt()
    }
}

pub fn hover_power_w(p: &UavEnergyParams) -> f64 {
    p.blade_profile_w() + p.induced_w()
}

/// Rotary-wing forward-flight power at `speed` m/s.
pub fn travel_power_w(speed: f64, p: &UavEnergyParams) -> Result<f64> {
    if !(speed >= 0.0) {
        return Err(Error::Domain(format!(
            "speed must be non-negative, got {speed}"
        )));
    }
    let v2 = speed * speed;
    let v0_2 = p.mean_induced_velocity * p.mean_induced_velocity;
    let blade = p.blade_profile_w() * (1.0 + 3.0 * v2 / (p.tip_speed * p.tip_speed));
    let induced =
        p.induced_w() * ((1.0 + v2 * v2 / (4.0 * v0_2 * v0_2)).sqrt() - v2 / (2.0 * v0_2)).sqrt();
    Ok(blade + induced + parasite_power_w(speed, p))
}

pub fn parasite_power_w(speed: f64, p: &UavEnergyParams) -> f64 {
    0.5 * p.fuselage_drag_ratio
        * p.air_density
        * p.rotor_solidity
        * p.rotor_disc_area_m2
        * speed.powi(3)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Traffic {
    Video,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QosParams {
    pub w_a: f64,
    pub w_b: f64,
    /// Multiplier inside the logarithm for non-video traffic.
    pub quality_w_c: f64,
    pub w_d: f64,
}

impl Default for QosParams {
    fn default() -> Self {
        Self {
            w_a: 0.01,
            w_b: 1024.0,
            quality_w_c: 1.0,
            w_d: 1.0,
        }
    }
}

impl QosParams {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.w_b > 0.0) {
            return Err(Error::config(format!("{prefix}w_b"), "must be positive"));
        }
        if !(self.w_a.is_finite() && self.quality_w_c > 0.0 && self.w_d >= 1.0) {
            return Err(Error::config(
                prefix.trim_end_matches('.'),
                "need finite w_a, quality_w_c > 0 and w_d >= 1",
            ));
        }
        Ok(())
    }
}

/// Quality of a delivered rate `kappa` (Mbps).
pub fn qos(kappa_mbps: f64, traffic: Traffic, p: &QosParams) -> Result<f64> {
    if !(kappa_mbps >= 0.0) {
        return Err(Error::Domain(format!(
            "rate must be non-negative, got {kappa_mbps}"
        )));
    }
    Ok(match traffic {
        Traffic::Video => 1.0 / (1.0 + (-p.w_a * (kappa_mbps - p.w_b)).exp()),
        Traffic::Other => (p.quality_w_c * kappa_mbps + p.w_d).ln(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioCfg {
    pub map_size_m: f64,
    pub num_uavs: usize,
    pub num_users: usize,
    /// Observation range `D_th` for inter-UAV distances.
    pub observation_range_m: f64,
    pub altitude_m: f64,
    /// Use slant range (ground distance plus altitude) in the link budget.
    pub slant_range: bool,
    pub delta_t_s: f64,
    pub episode_steps: usize,
    /// Fraction of users requesting video.
    pub video_fraction: f64,
}

impl Default for ScenarioCfg {
    fn default() -> Self {
        Self {
            map_size_m: 6000.0,
            num_uavs: 4,
            num_users: 25,
            observation_range_m: 1000.0,
            altitude_m: 2500.0,
            slant_range: false,
            delta_t_s: 60.0,
            episode_steps: 30,
            video_fraction: 0.5,
        }
    }
}

impl ScenarioCfg {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let positive = [
            ("map_size_m", self.map_size_m),
            ("observation_range_m", self.observation_range_m),
            ("delta_t_s", self.delta_t_s),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{prefix}{name}"), "must be positive"));
            }
        }
        if !(self.altitude_m.is_finite() && self.altitude_m >= 0.0) {
            return Err(Error::config(
                format!("{prefix}altitude_m"),
                "must be non-negative",
            ));
        }
        if self.num_uavs == 0 {
            return Err(Error::config(
                format!("{prefix}num_uavs"),
                "must be at least 1",
            ));
        }
        if self.num_users == 0 {
            return Err(Error::config(
                format!("{prefix}num_users"),
                "must be at least 1",
            ));
        }
        if self.episode_steps == 0 {
            return Err(Error::config(
                format!("{prefix}episode_steps"),
                "must be at least 1",
            ));
        }
        if !(0.0..=1.0).contains(&self.video_fraction) {
            return Err(Error::config(
                format!("{prefix}video_fraction"),
                "must be in [0, 1]",
            ));
        }
        Ok(())
    }
}

/// Cardinal moves plus hover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    PosX,
    NegX,
    PosY,
    NegY,
    Hover,
}

impl Action {
    pub const ALL: [Action; 5] = [
        Action::PosX,
        Action::NegX,
        Action::PosY,
        Action::NegY,
        Action::Hover,
    ];
    pub const COUNT: usize = 5;

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Usage(format!("action index {i} out of range")))
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn direction(self) -> [f64; 2] {
        match self {
            Action::PosX => [1.0, 0.0],
            Action::NegX => [-1.0, 0.0],
            Action::PosY => [0.0, 1.0],
            Action::NegY => [0.0, -1.0],
            Action::Hover => [0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Uav {
    pub position: [f64; 2],
    pub energy_j: f64,
}

impl Uav {
    pub fn alive(&self) -> bool {
        self.energy_j > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct User {
    pub position: [f64; 2],
    pub traffic: Traffic,
}

/// Association of each user with at most one UAV.
#[derive(Debug, Clone, PartialEq)]
pub struct Service {
    pub num_uavs: usize,
    pub served_by: Vec<Option<usize>>,
    pub rate_mbps: Vec<f64>,
    pub quality: Vec<f64>,
}

impl Service {
    pub fn c(&self, m: usize, n: usize) -> f64 {
        if self.served_by[n] == Some(m) {
            1.0
        } else {
            0.0
        }
    }

    pub fn q(&self, m: usize, n: usize) -> f64 {
        if self.served_by[n] == Some(m) {
            self.quality[n]
        } else {
            0.0
        }
    }

    pub fn kappa(&self, m: usize, n: usize) -> f64 {
        if self.served_by[n] == Some(m) {
            self.rate_mbps[n]
        } else {
            0.0
        }
    }

    pub fn served_count(&self) -> usize {
        self.served_by.iter().filter(|s| s.is_some()).count()
    }

    pub fn support_rate(&self) -> f64 {
        self.served_count() as f64 / self.served_by.len() as f64
    }

    pub fn qos_total(&self) -> f64 {
        self.served_by
            .iter()
            .zip(&self.quality)
            .filter(|(s, _)| s.is_some())
            .map(|(_, q)| q)
            .sum()
    }

    /// `(c_mn, q_mn)` pairs, UAV-major.
    pub fn state_vector(&self) -> Vec<f64> {
        let n_users = self.served_by.len();
        let mut out = Vec::with_capacity(2 * self.num_uavs * n_users);
        for m in 0..self.num_uavs {
            for n in 0..n_users {
                out.push(self.c(m, n));
                out.push(self.q(m, n));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub uavs: Vec<Uav>,
    pub users: Vec<User>,
    pub service: Service,
    pub t: usize,
}

impl WorldState {
    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.uavs.iter().map(|u| u.position).collect()
    }

    pub fn alive(&self) -> Vec<bool> {
        self.uavs.iter().map(Uav::alive).collect()
    }
}

/// What agents and the critic see after a reset or step.
#[derive(Debug, Clone, PartialEq)]
pub struct Perception {
    /// Service state from true positions.
    pub state: Vec<f64>,
    /// Service state recomputed from GPS-reported positions.
    pub observed_state: Vec<f64>,
    /// Per-UAV observations from reported positions.
    pub observations: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub perception: Perception,
    pub reward: f64,
    pub support_rate: f64,
    pub qos_total: f64,
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Immutable environment description; episodes live in [`WorldState`].
#[derive(Debug, Clone)]
pub struct UavEnv {
    scenario: ScenarioCfg,
    energy: UavEnergyParams,
    qos: QosParams,
    channel: ChannelParams,
    mcs: McsTable,
    reward_coef: f64,
    link_radius_m: f64,
    ground_radius_m: f64,
    hover_w: f64,
    travel_w: f64,
}

impl UavEnv {
    pub fn new(
        scenario: ScenarioCfg,
        energy: UavEnergyParams,
        qos: QosParams,
        channel: ChannelParams,
        mcs: McsTable,
        reward_coef: f64,
    ) -> Result<Self> {
        scenario.validate("scenario.")?;
        energy.validate("uav.")?;
        qos.validate("qos.")?;
        channel.validate("channel.")?;
        if !(reward_coef.is_finite() && reward_coef >= 0.0) {
            return Err(Error::config("train.reward_coef", "must be non-negative"));
        }
        let link_radius_m = crate::channel::coverage_radius_m(mcs.min_sensitivity_dbm(), &channel)?;
        let ground_radius_m = if scenario.slant_range {
            (link_radius_m.powi(2) - scenario.altitude_m.powi(2))
                .max(0.0)
                .sqrt()
        } else {
            link_radius_m
        };
        let hover_w = hover_power_w(&energy);
        let travel_w = travel_power_w(energy.flight_speed_mps, &energy)?;
        Ok(Self {
            scenario,
            energy,
            qos,
            channel,
            mcs,
            reward_coef,
            link_radius_m,
            ground_radius_m,
            hover_w,
            travel_w,
        })
    }

    /// Environment with every default and the given scenario.
    pub fn with_scenario(scenario: ScenarioCfg) -> Result<Self> {
        Self::new(
            scenario,
            UavEnergyParams::default(),
            QosParams::default(),
            ChannelParams::default(),
            McsTable::default(),
            0.01,
        )
    }

    pub fn scenario(&self) -> &ScenarioCfg {
        &self.scenario
    }
    pub fn energy(&self) -> &UavEnergyParams {
        &self.energy
    }
    pub fn num_uavs(&self) -> usize {
        self.scenario.num_uavs
    }
    pub fn num_users(&self) -> usize {
        self.scenario.num_users
    }
    pub fn observation_dim(&self) -> usize {
        self.scenario.num_uavs + 3
    }
    pub fn state_dim(&self) -> usize {
        2 * self.scenario.num_uavs * self.scenario.num_users
    }
    /// Ground radius of a UAV's MCS0 service disc.
    pub fn coverage_radius_m(&self) -> f64 {
        self.ground_radius_m
    }
    pub fn hover_w(&self) -> f64 {
        self.hover_w
    }
    pub fn travel_w(&self) -> f64 {
        self.travel_w
    }

    fn link_distance(&self, ground: f64) -> f64 {
        let d = if self.scenario.slant_range {
            ground.hypot(self.scenario.altitude_m)
        } else {
            ground
        };
        d.max(MIN_LINK_DISTANCE_M)
    }

    /// All UAVs at the map centre with full batteries; users uniform over
    /// the map with video traffic at `video_fraction`.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> WorldState {
        let size = self.scenario.map_size_m;
        let centre = [size / 2.0, size / 2.0];
        let uavs = vec![
            Uav {
                position: centre,
                energy_j: self.energy.battery_j(),
            };
            self.scenario.num_uavs
        ];
        let users: Vec<User> = (0..self.scenario.num_users)
            .map(|_| User {
                position: [rng.gen_range(0.0..=size), rng.gen_range(0.0..=size)],
                traffic: if rng.gen::<f64>() < self.scenario.video_fraction {
                    Traffic::Video
                } else {
                    Traffic::Other
                },
            })
            .collect();
        let service =
            self.assign_service(&centre_positions(&uavs), &vec![true; uavs.len()], &users);
        WorldState {
            uavs,
            users,
            service,
            t: 0,
        }
    }

    /// Nearest alive UAV within MCS0 reach serves each user; ties go to the
    /// lower UAV index. The rate follows the MCS table at the received power.
    pub fn assign_service(
        &self,
        positions: &[[f64; 2]],
        alive: &[bool],
        users: &[User],
    ) -> Service {
        let mut served_by = Vec::with_capacity(users.len());
        let mut rate_mbps = Vec::with_capacity(users.len());
        let mut quality = Vec::with_capacity(users.len());
        for user in users {
            let mut best: Option<(usize, f64)> = None;
            for (m, pos) in positions.iter().enumerate() {
                if !alive[m] {
                    continue;
                }
                let d = self.link_distance(distance(*pos, user.position));
                if d <= self.link_radius_m && best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((m, d));
                }
            }
            let (server, rate) = match best {
                Some((m, d)) => {
                    let rx = rx_power_dbm(d, &self.channel).expect("link distance is positive");
                    let rate = self.mcs.rate_mbps(rx);
                    if rate > 0.0 {
                        (Some(m), rate)
                    } else {
                        (None, 0.0)
                    }
                }
                None => (None, 0.0),
            };
            served_by.push(server);
            rate_mbps.push(rate);
            quality.push(if server.is_some() {
                qos(rate, user.traffic, &self.qos).expect("rate is non-negative")
            } else {
                0.0
            });
        }
        Service {
            num_uavs: positions.len(),
            served_by,
            rate_mbps,
            quality,
        }
    }

    /// `1 - |points in >= 2 discs| / |points in >= 1 disc|` over the alive
    /// UAVs' coverage discs, sampled on a jittered 100x100 grid spanning the
    /// discs' bounding box. Fixed jitter seed, so the estimate is a pure
    /// function of the geometry.
    pub fn overlap_factor(&self, positions: &[[f64; 2]], alive: &[bool]) -> f64 {
        let centres: Vec<[f64; 2]> = positions
            .iter()
            .zip(alive)
            .filter(|(_, a)| **a)
            .map(|(p, _)| *p)
            .collect();
        let r = self.ground_radius_m;
        if centres.len() <= 1 || r <= 0.0 {
            return 1.0;
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for c in &centres {
            for k in 0..2 {
                lo[k] = lo[k].min(c[k] - r);
                hi[k] = hi[k].max(c[k] + r);
            }
        }
        let side = (OVERLAP_SAMPLES as f64).sqrt() as usize;
        let (wx, wy) = ((hi[0] - lo[0]) / side as f64, (hi[1] - lo[1]) / side as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(OVERLAP_SEED);
        let r2 = r * r;
        let (mut union, mut overlap) = (0usize, 0usize);
        for i in 0..side {
            for j in 0..side {
                let px = lo[0] + (i as f64 + rng.gen::<f64>()) * wx;
                let py = lo[1] + (j as f64 + rng.gen::<f64>()) * wy;
                let covering = centres
                    .iter()
                    .filter(|c| (c[0] - px).powi(2) + (c[1] - py).powi(2) <= r2)
                    .count();
                if covering >= 1 {
                    union += 1;
                }
                if covering >= 2 {
                    overlap += 1;
                }
            }
        }
        if union == 0 {
            1.0
        } else {
            1.0 - overlap as f64 / union as f64
        }
    }

    /// `w_c * tau * sum_m 1(e_m > 0) sum_n c_mn q_mn`.
    pub fn reward(&self, world: &WorldState) -> f64 {
        let alive = world.alive();
        let tau = self.overlap_factor(&world.positions(), &alive);
        let s = &world.service;
        let mut total = 0.0;
        for (m, is_alive) in alive.iter().enumerate() {
            if !is_alive {
                continue;
            }
            for n in 0..world.users.len() {
                total += s.c(m, n) * s.q(m, n);
            }
        }
        self.reward_coef * total * tau
    }

    /// Observation of UAV `m` given the positions the swarm reports.
    pub fn observe(&self, world: &WorldState, m: usize, reported: &[[f64; 2]]) -> Result<Vec<f64>> {
        if m >= world.uavs.len() {
            return Err(Error::Usage(format!("no UAV {m}")));
        }
        let own = reported[m];
        let mut out = Vec::with_capacity(self.observation_dim());
        out.extend_from_slice(&own);
        for (k, other) in reported.iter().enumerate() {
            let d = if k == m { 0.0 } else { distance(own, *other) };
            out.push(if d <= self.scenario.observation_range_m {
                d
            } else {
                -1.0
            });
        }
        out.push(world.uavs[m].energy_j);
        Ok(out)
    }

    /// Builds the perception for `world` with per-UAV GPS offsets.
    pub fn perceive(&self, world: &WorldState, noise: &[NoiseDraw]) -> Result<Perception> {
        self.check_len(noise.len(), "noise draws")?;
        let reported: Vec<[f64; 2]> = world
            .uavs
            .iter()
            .zip(noise)
            .map(|(u, n)| {
                [
                    u.position[0] + n.state_offset[0],
                    u.position[1] + n.state_offset[1],
                ]
            })
            .collect();
        let state = world.service.state_vector();
        let observed_state = if noise.iter().any(|n| n.state_offset != [0.0, 0.0]) {
            self.assign_service(&reported, &world.alive(), &world.users)
                .state_vector()
        } else {
            state.clone()
        };
        let observations = (0..world.uavs.len())
            .map(|m| self.observe(world, m, &reported))
            .collect::<Result<Vec<_>>>()?;
        Ok(Perception {
            state,
            observed_state,
            observations,
        })
    }

    fn check_len(&self, got: usize, what: &str) -> Result<()> {
        if got != self.scenario.num_uavs {
            return Err(Error::Usage(format!(
                "expected {} {what}, got {got}",
                self.scenario.num_uavs
            )));
        }
        Ok(())
    }

    /// Advances one decision step. Alive UAVs move `v dt` in the commanded
    /// direction plus `wind dt`, clamped to the map, and pay hover or travel
    /// power for `dt`. Dead UAVs stay put.
    pub fn step(
        &self,
        world: &mut WorldState,
        actions: &[Action],
        noise: &[NoiseDraw],
    ) -> Result<StepOutcome> {
        self.check_len(actions.len(), "actions")?;
        self.check_len(noise.len(), "noise draws")?;
        let dt = self.scenario.delta_t_s;
        let leg = self.energy.flight_speed_mps * dt;
        let size = self.scenario.map_size_m;
        for ((uav, action), n) in world.uavs.iter_mut().zip(actions).zip(noise) {
            if !uav.alive() {
                continue;
            }
            let dir = action.direction();
            for k in 0..2 {
                let moved = uav.position[k] + dir[k] * leg + n.wind_velocity[k] * dt;
                uav.position[k] = moved.clamp(0.0, size);
            }
            let power = if *action == Action::Hover {
                self.hover_w
            } else {
                self.travel_w
            };
            uav.energy_j = (uav.energy_j - power * dt).max(0.0);
        }
        world.t += 1;
        world.service = self.assign_service(&world.positions(), &world.alive(), &world.users);
        let reward = self.reward(world);
        Ok(StepOutcome {
            perception: self.perceive(world, noise)?,
            reward,
            support_rate: world.service.support_rate(),
            qos_total: world.service.qos_total(),
        })
    }
}

fn centre_positions(uavs: &[Uav]) -> Vec<[f64; 2]> {
    uavs.iter().map(|u| u.position).collect()
}

/// Per-step episode record for CSV export.
#[derive(Debug, Clone, Default)]
pub struct EpisodeTrace {
    rows: Vec<(usize, Vec<Uav>, f64, f64, f64)>,
}

impl EpisodeTrace {
    pub fn record(&mut self, world: &WorldState, outcome: &StepOutcome) {
        self.rows.push((
            world.t,
            world.uavs.clone(),
            outcome.support_rate,
            outcome.qos_total,
            outcome.reward,
        ));
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Per-step rewards in order.
    pub fn rewards(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.4).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W, num_uavs: usize) -> Result<()> {
        let mut header = vec!["step".to_string()];
        for m in 0..num_uavs {
            header.extend([
                format!("uav{m}_x"),
                format!("uav{m}_y"),
                format!("uav{m}_energy_j"),
            ]);
        }
        header.extend(["support_rate".into(), "qos_sum".into(), "reward".into()]);
        writeln!(out, "{}", header.join(","))?;
        for (t, uavs, support, qos_sum, reward) in &self.rows {
            let mut cells = vec![t.to_string()];
            for u in uavs {
                cells.extend([
                    u.position[0].to_string(),
                    u.position[1].to_string(),
                    u.energy_j.to_string(),
                ]);
            }
            cells.extend([support.to_string(), qos_sum.to_string(), reward.to_string()]);
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}
