//! Experiment configuration: every tunable with its default.

use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::env::{QosParams, ScenarioCfg, UavEnergyParams};
use crate::error::{Error, Result};
use crate::stochastics::NoiseCfg;

/// Learner architecture and output heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelCfg {
    pub actor_qubits: usize,
    pub critic_qubits: usize,
    /// Encoding blocks per actor circuit; 0 picks the fewest that upload
    /// every observation coordinate.
    pub actor_blocks: usize,
    /// Same for the critic and the state vector.
    pub critic_blocks: usize,
    pub beta_a: f64,
    pub beta_c: f64,
    /// Trainable angles start uniform in `+-init_scale`.
    pub init_scale: f64,
    /// Multiplier on the normalized features before angle encoding.
    pub input_scale: f64,
    /// Hidden width of the classical baseline.
    pub hidden_width: usize,
}

impl Default for ModelCfg {
    fn default() -> Self {
        Self {
            actor_qubits: 5,
            critic_qubits: 8,
            actor_blocks: 0,
            critic_blocks: 0,
            beta_a: 3.0,
            beta_c: 15.0,
            init_scale: std::f64::consts::PI,
            input_scale: 1.0,
            hidden_width: 64,
        }
    }
}

impl ModelCfg {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(5..=crate::qsim::MAX_QUBITS).contains(&self.actor_qubits) {
            return Err(Error::config(
                format!("{prefix}actor_qubits"),
                "needs one readout wire per action, so 5..=16",
            ));
        }
        if !(1..=crate::qsim::MAX_QUBITS).contains(&self.critic_qubits) {
            return Err(Error::config(
                format!("{prefix}critic_qubits"),
                "must be in 1..=16",
            ));
        }
        for (name, v) in [
            ("beta_a", self.beta_a),
            ("beta_c", self.beta_c),
            ("init_scale", self.init_scale),
            ("input_scale", self.input_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(
                    format!("{prefix}{name}"),
                    "must be non-negative",
                ));
            }
        }
        if self.hidden_width == 0 {
            return Err(Error::config(
                format!("{prefix}hidden_width"),
                "must be at least 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainCfg {
    pub gamma: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub epsilon_init: f64,
    /// Linear decrease of epsilon per environment step.
    pub epsilon_anneal: f64,
    pub epsilon_min: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Transitions stored before the first update.
    pub min_fill: usize,
    /// Reward weight `w_c`.
    pub reward_coef: f64,
    /// Feed the critic the noise-free service state instead of the one
    /// rebuilt from reported positions.
    pub critic_ideal_state: bool,
    /// Checkpoint period in epochs; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub infer_episodes: usize,
    /// Fraction of trailing epochs summarized.
    pub summary_fraction: f64,
}

impl Default for TrainCfg {
    fn default() -> Self {
        Self {
            gamma: 0.98,
            lr_actor: 0.001,
            lr_critic: 0.00025,
            epsilon_init: 0.275,
            epsilon_anneal: 0.00005,
            epsilon_min: 0.01,
            epochs: 10_000,
            batch_size: 32,
            buffer_capacity: 50_000,
            min_fill: 1000,
            reward_coef: 0.01,
            critic_ideal_state: false,
            checkpoint_every: 0,
            infer_episodes: 100,
            summary_fraction: 0.1,
        }
    }
}

impl TrainCfg {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config(format!("{prefix}gamma"), "must be in [0, 1)"));
        }
        for (name, v) in [("lr_actor", self.lr_actor), ("lr_critic", self.lr_critic)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{prefix}{name}"), "must be positive"));
            }
        }
        for (name, v) in [
            ("epsilon_init", self.epsilon_init),
            ("epsilon_min", self.epsilon_min),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(
                    format!("{prefix}{name}"),
                    "must be in [0, 1]",
                ));
            }
        }
        if self.epsilon_min > self.epsilon_init {
            return Err(Error::config(
                format!("{prefix}epsilon_min"),
                "must not exceed epsilon_init",
            ));
        }
        if !(self.epsilon_anneal.is_finite() && self.epsilon_anneal >= 0.0) {
            return Err(Error::config(
                format!("{prefix}epsilon_anneal"),
                "must be non-negative",
            ));
        }
        for (name, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("buffer_capacity", self.buffer_capacity),
        ] {
            if v == 0 {
                return Err(Error::config(
                    format!("{prefix}{name}"),
                    "must be at least 1",
                ));
            }
        }
        if self.min_fill > self.buffer_capacity {
            return Err(Error::config(
                format!("{prefix}min_fill"),
                "must not exceed buffer_capacity",
            ));
        }
        if !(self.reward_coef.is_finite() && self.reward_coef >= 0.0) {
            return Err(Error::config(
                format!("{prefix}reward_coef"),
                "must be non-negative",
            ));
        }
        if !(self.summary_fraction > 0.0 && self.summary_fraction <= 1.0) {
            return Err(Error::config(
                format!("{prefix}summary_fraction"),
                "must be in (0, 1]",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputCfg {
    pub dir: String,
    /// Dump a per-step CSV trace of the last training epoch and of every
    /// inference episode.
    pub traces: bool,
}

impl Default for OutputCfg {
    fn default() -> Self {
        Self {
            dir: "runs".into(),
            traces: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scenario: ScenarioCfg,
    pub noise: NoiseCfg,
    pub channel: ChannelParams,
    pub uav: UavEnergyParams,
    pub qos: QosParams,
    pub model: ModelCfg,
    pub train: TrainCfg,
    pub output: OutputCfg,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            scenario: ScenarioCfg::default(),
            noise: NoiseCfg::default(),
            channel: ChannelParams::default(),
            uav: UavEnergyParams::default(),
            qos: QosParams::default(),
            model: ModelCfg::default(),
            train: TrainCfg::default(),
            output: OutputCfg::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate("scenario.")?;
        self.noise.validate("noise.")?;
        self.channel.validate("channel.")?;
        self.uav.validate("uav.")?;
        self.qos.validate("qos.")?;
        self.model.validate("model.")?;
        self.train.validate("train.")?;
        if self.output.dir.is_empty() {
            return Err(Error::config("output.dir", "must not be empty"));
        }
        Ok(())
    }

    /// Scaled-down scenario used by the smoke checks: 2 UAVs, 6 users,
    /// 2 km map, 20 steps per episode, 300 epochs.
    pub fn smoke() -> Self {
        let mut cfg = Self::default();
        cfg.scenario.map_size_m = 2000.0;
        cfg.scenario.num_uavs = 2;
        cfg.scenario.num_users = 6;
        cfg.scenario.episode_steps = 20;
        cfg.train.epochs = 300;
        cfg
    }
}
