//! Centralized-training, decentralized-execution actor-critic.
//!
//! Each epoch runs one episode with epsilon-greedy joint actions and stores
//! every step in the replay buffer. Once the buffer holds `min_fill`
//! transitions, each agent in turn samples a minibatch, the critic takes one
//! descent step on the squared TD error and the agent's actor one ascent
//! step on `delta * log pi(a | o)`. The TD errors are evaluated once per
//! minibatch, before the critic step, and shared by both updates.
//!
//! Actors see their own normalized observation; the critic sees the service
//! state. Both learners exist in a quantum (circuit) and a classical (MLP)
//! flavour behind [`Learner`].

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::env::{Action, EpisodeTrace, Perception, StepOutcome, UavEnv, WorldState};
use crate::error::{Error, Result};
use crate::mlp::Mlp;
use crate::optim::Adam;
use crate::replay::{ReplayBuffer, Transition};
use crate::stochastics::{stream, NoiseDraw, NoiseSource};
use crate::vqc::{argmax, softmax, CircuitDocument, CircuitModel, Role};

pub const CHECKPOINT_VERSION: u32 = 1;

// RNG stream ids under the run seed.
const STREAM_ENV: u64 = 0;
const STREAM_EXPLORE: u64 = 1;
const STREAM_REPLAY: u64 = 2;
const STREAM_INIT: u64 = 3;
const STREAM_EVAL_ENV: u64 = 10;
const STREAM_EVAL_ACTIONS: u64 = 11;
const STREAM_NOISE: u64 = 100;
const STREAM_EVAL_NOISE: u64 = 200;

/// `max(eps_min, eps_init - step * eps_anneal)`.
pub fn epsilon_at(global_step: u64, cfg: &crate::config::TrainCfg) -> f64 {
    (cfg.epsilon_init - global_step as f64 * cfg.epsilon_anneal).max(cfg.epsilon_min)
}

/// `r + gamma V(s') - V(s)`.
pub fn td_error(reward: f64, v_s: f64, v_next: f64, gamma: f64) -> f64 {
    reward + gamma * v_next - v_s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Quantum,
    Classical,
}

/// A differentiable map from features to outputs: `beta * <Z>` readouts of a
/// circuit, or the linear head of an MLP.
#[derive(Debug, Clone, PartialEq)]
pub enum Learner {
    Quantum { model: CircuitModel, beta: f64 },
    Classical(Mlp),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LearnerDocument {
    Quantum { beta: f64, circuit: CircuitDocument },
    Classical { mlp: Mlp },
}

impl Learner {
    pub fn outputs(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Learner::Quantum { model, beta } => Ok(model.forward(x)?.scaled(*beta)),
            Learner::Classical(net) => net.forward(x),
        }
    }

    /// Outputs and the gradient of `sum_k cotangent_k * out_k`.
    pub fn vjp(&self, x: &[f64], cotangent: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            Learner::Quantum { model, beta } => {
                let out = model.forward(x)?.scaled(*beta);
                if cotangent.len() != out.len() {
                    return Err(Error::Usage(format!(
                        "expected cotangent of length {}, got {}",
                        out.len(),
                        cotangent.len()
                    )));
                }
                let jac = model.parameter_shift_jacobian(x)?;
                let mut grad = vec![0.0; model.param_count()];
                for (row, &c) in jac.iter().zip(cotangent) {
                    if c == 0.0 {
                        continue;
                    }
                    for (g, d) in grad.iter_mut().zip(row) {
                        *g += beta * c * d;
                    }
                }
                Ok((out, grad))
            }
            Learner::Classical(net) => net.backward(x, cotangent),
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Learner::Quantum { model, .. } => model.params(),
            Learner::Classical(net) => net.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Learner::Quantum { model, .. } => model.params_mut(),
            Learner::Classical(net) => net.params_mut(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().len()
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Learner::Quantum { model, .. } => model.input_dim(),
            Learner::Classical(net) => net.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Learner::Quantum { model, .. } => model.observable_wires().len(),
            Learner::Classical(net) => net.output_dim(),
        }
    }

    pub fn kind(&self) -> LearnerKind {
        match self {
            Learner::Quantum { .. } => LearnerKind::Quantum,
            Learner::Classical(_) => LearnerKind::Classical,
        }
    }

    pub fn to_document(&self) -> LearnerDocument {
        match self {
            Learner::Quantum { model, beta } => LearnerDocument::Quantum {
                beta: *beta,
                circuit: model.to_document(),
            },
            Learner::Classical(net) => LearnerDocument::Classical { mlp: net.clone() },
        }
    }

    pub fn from_document(doc: LearnerDocument) -> Result<Self> {
        match doc {
            LearnerDocument::Quantum { beta, circuit } => Ok(Learner::Quantum {
                model: CircuitModel::from_document(circuit)?,
                beta,
            }),
            LearnerDocument::Classical { mlp } => {
                let want = Mlp::param_count_for(mlp.input_dim(), mlp.hidden(), mlp.output_dim());
                if mlp.param_count() != want {
                    return Err(Error::Load(format!(
                        "network stores {} parameters, layout needs {want}",
                        mlp.param_count()
                    )));
                }
                Ok(Learner::Classical(mlp))
            }
        }
    }
}

/// Epsilon-greedy: a uniform action with probability `epsilon`, otherwise
/// the most probable action of the actor's softmax policy.
pub fn select_action<R: Rng + ?Sized>(
    actor: &Learner,
    obs: &[f64],
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Usage(format!(
            "epsilon must be in [0, 1], got {epsilon}"
        )));
    }
    if rng.gen::<f64>() < epsilon {
        return Ok(rng.gen_range(0..Action::COUNT));
    }
    Ok(argmax(&softmax(&actor.outputs(obs)?)))
}

/// Semi-gradient critic loss `sum_b delta_b^2` with the bootstrap target
/// held fixed. Returns the loss, its gradient and the per-sample deltas.
pub fn critic_loss_grad(
    critic: &Learner,
    batch: &[&Transition],
    gamma: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let mut grad = vec![0.0; critic.param_count()];
    let mut deltas = Vec::with_capacity(batch.len());
    let mut loss = 0.0;
    for t in batch {
        let v_next = critic.outputs(&t.next_state)?[0];
        // d(delta^2)/dV(s) = -2 delta
        let v = critic.outputs(&t.state)?[0];
        let delta = td_error(t.reward, v, v_next, gamma);
        let (_, g) = critic.vjp(&t.state, &[-2.0 * delta])?;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
        loss += delta * delta;
        deltas.push(delta);
    }
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("critic loss is {loss}")));
    }
    Ok((loss, grad, deltas))
}

/// `J = sum_b delta_b log pi(a_b | o_b)` for `agent` and its gradient, with
/// the deltas treated as constants.
pub fn actor_objective_grad(
    actor: &Learner,
    batch: &[&Transition],
    agent: usize,
    deltas: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if deltas.len() != batch.len() {
        return Err(Error::Usage(format!(
            "{} deltas for a batch of {}",
            deltas.len(),
            batch.len()
        )));
    }
    let mut grad = vec![0.0; actor.param_count()];
    let mut objective = 0.0;
    for (t, &delta) in batch.iter().zip(deltas) {
        let obs = t
            .observations
            .get(agent)
            .ok_or_else(|| Error::Usage(format!("no observation for agent {agent}")))?;
        let a = t.actions[agent];
        let probs = softmax(&actor.outputs(obs)?);
        objective += delta * probs[a].ln();
        if delta == 0.0 {
            continue;
        }
        // d log softmax_a / d logits = e_a - pi
        let cot: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(k, p)| delta * (f64::from(u8::from(k == a)) - p))
            .collect();
        let (_, g) = actor.vjp(obs, &cot)?;
        for (x, y) in grad.iter_mut().zip(&g) {
            *x += y;
        }
    }
    if let Some(g) = grad.iter().find(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("actor gradient entry {g}")));
    }
    Ok((objective, grad))
}

/// One descent step on the critic. Returns the loss and the deltas used.
pub fn update_critic(
    critic: &mut Learner,
    opt: &mut Adam,
    batch: &[&Transition],
    gamma: f64,
) -> Result<(f64, Vec<f64>)> {
    let (loss, grad, deltas) = critic_loss_grad(critic, batch, gamma)?;
    opt.descend(critic.params_mut(), &grad)?;
    Ok((loss, deltas))
}

/// One ascent step on an actor with precomputed deltas.
pub fn update_actor(
    actor: &mut Learner,
    opt: &mut Adam,
    batch: &[&Transition],
    agent: usize,
    deltas: &[f64],
) -> Result<f64> {
    let (objective, grad) = actor_objective_grad(actor, batch, agent, deltas)?;
    opt.ascend(actor.params_mut(), &grad)?;
    Ok(objective)
}

/// Feature maps from environment vectors to learner inputs.
#[derive(Debug, Clone)]
pub struct Features {
    map_size: f64,
    obs_range: f64,
    battery: f64,
    scale: f64,
}

impl Features {
    pub fn new(env: &UavEnv, input_scale: f64) -> Self {
        Self {
            map_size: env.scenario().map_size_m,
            obs_range: env.scenario().observation_range_m,
            battery: env.energy().battery_j(),
            scale: input_scale,
        }
    }

    /// Positions over the map size, in-range distances over the range
    /// (out-of-range stays `-1`), energy over a full battery.
    pub fn observation(&self, obs: &[f64]) -> Vec<f64> {
        let n = obs.len();
        obs.iter()
            .enumerate()
            .map(|(i, &v)| {
                let unit = if i < 2 {
                    v / self.map_size
                } else if i == n - 1 {
                    v / self.battery
                } else if v < 0.0 {
                    -1.0
                } else {
                    v / self.obs_range
                };
                unit * self.scale
            })
            .collect()
    }

    pub fn state(&self, state: &[f64]) -> Vec<f64> {
        state.iter().map(|v| v * self.scale).collect()
    }

    /// Actor input: the agent's observation followed by the state it
    /// perceives.
    pub fn actor_input(&self, obs: &[f64], observed_state: &[f64]) -> Vec<f64> {
        let mut x = self.observation(obs);
        x.extend(self.state(observed_state));
        x
    }
}

/// Length of [`Features::actor_input`] for `env`.
pub fn actor_input_dim(env: &UavEnv) -> usize {
    env.observation_dim() + env.state_dim()
}

/// Actors, critic and their optimizers.
#[derive(Debug, Clone)]
pub struct Agents {
    pub actors: Vec<Learner>,
    pub critic: Learner,
    pub actor_opts: Vec<Adam>,
    pub critic_opt: Adam,
}

/// Resolved block counts for the default-sized circuits.
pub fn circuit_blocks(cfg: &ExperimentConfig, env: &UavEnv) -> (usize, usize) {
    let m = &cfg.model;
    let actor = if m.actor_blocks == 0 {
        CircuitModel::blocks_to_cover(actor_input_dim(env), m.actor_qubits)
    } else {
        m.actor_blocks
    };
    let critic = if m.critic_blocks == 0 {
        CircuitModel::blocks_to_cover(env.state_dim(), m.critic_qubits)
    } else {
        m.critic_blocks
    };
    (actor, critic)
}

impl Agents {
    pub fn new<R: Rng + ?Sized>(
        kind: LearnerKind,
        cfg: &ExperimentConfig,
        env: &UavEnv,
        rng: &mut R,
    ) -> Result<Self> {
        let m = &cfg.model;
        let (obs_dim, state_dim) = (actor_input_dim(env), env.state_dim());
        let (actor_blocks, critic_blocks) = circuit_blocks(cfg, env);
        let mut actors = Vec::with_capacity(env.num_uavs());
        for _ in 0..env.num_uavs() {
            actors.push(match kind {
                LearnerKind::Quantum => {
                    let mut model = CircuitModel::new(
                        Role::Actor,
                        m.actor_qubits,
                        actor_blocks,
                        obs_dim,
                        (0..Action::COUNT).collect(),
                    )?;
                    model.randomize(rng, m.init_scale);
                    Learner::Quantum {
                        model,
                        beta: m.beta_a,
                    }
                }
                LearnerKind::Classical => {
                    Learner::Classical(Mlp::new(obs_dim, m.hidden_width, Action::COUNT, rng)?)
                }
            });
        }
        let critic = match kind {
            LearnerKind::Quantum => {
                let mut model = CircuitModel::new(
                    Role::Critic,
                    m.critic_qubits,
                    critic_blocks,
                    state_dim,
                    vec![0],
                )?;
                model.randomize(rng, m.init_scale);
                Learner::Quantum {
                    model,
                    beta: m.beta_c,
                }
            }
            LearnerKind::Classical => {
                Learner::Classical(Mlp::new(state_dim, m.hidden_width, 1, rng)?)
            }
        };
        let actor_opts = actors
            .iter()
            .map(|a| Adam::new(cfg.train.lr_actor, a.param_count()))
            .collect();
        let critic_opt = Adam::new(cfg.train.lr_critic, critic.param_count());
        Ok(Self {
            actors,
            critic,
            actor_opts,
            critic_opt,
        })
    }

    /// Critic step then actor step for `agent`, sharing one set of deltas.
    pub fn update(&mut self, agent: usize, batch: &[&Transition], gamma: f64) -> Result<f64> {
        let (loss, deltas) = update_critic(&mut self.critic, &mut self.critic_opt, batch, gamma)?;
        update_actor(
            &mut self.actors[agent],
            &mut self.actor_opts[agent],
            batch,
            agent,
            &deltas,
        )?;
        Ok(loss)
    }

    pub fn checkpoint(&self, epoch: usize, seed: u64) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            epoch,
            seed,
            actors: self.actors.iter().map(Learner::to_document).collect(),
            critic: self.critic.to_document(),
            actor_optimizers: self.actor_opts.clone(),
            critic_optimizer: self.critic_opt.clone(),
        }
    }

    /// Restores agents from a checkpoint, checking it fits the environment.
    pub fn from_checkpoint(ck: Checkpoint, env: &UavEnv) -> Result<Self> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Load(format!(
                "checkpoint version {} unsupported, expected {CHECKPOINT_VERSION}",
                ck.version
            )));
        }
        if ck.actors.len() != env.num_uavs() || ck.actor_optimizers.len() != env.num_uavs() {
            return Err(Error::Load(format!(
                "checkpoint has {} actors, scenario has {} UAVs",
                ck.actors.len(),
                env.num_uavs()
            )));
        }
        let actors = ck
            .actors
            .into_iter()
            .map(Learner::from_document)
            .collect::<Result<Vec<_>>>()?;
        let critic = Learner::from_document(ck.critic)?;
        for a in &actors {
            if a.input_dim() != actor_input_dim(env) || a.output_dim() != Action::COUNT {
                return Err(Error::Load(format!(
                    "actor maps {} -> {}, scenario needs {} -> {}",
                    a.input_dim(),
                    a.output_dim(),
                    actor_input_dim(env),
                    Action::COUNT
                )));
            }
        }
        if critic.input_dim() != env.state_dim() || critic.output_dim() != 1 {
            return Err(Error::Load(format!(
                "critic input {} does not match state dimension {}",
                critic.input_dim(),
                env.state_dim()
            )));
        }
        for (a, o) in actors.iter().zip(&ck.actor_optimizers) {
            if o.num_params() != a.param_count() {
                return Err(Error::Load("actor optimizer size mismatch".into()));
            }
        }
        if ck.critic_optimizer.num_params() != critic.param_count() {
            return Err(Error::Load("critic optimizer size mismatch".into()));
        }
        Ok(Self {
            actors,
            critic,
            actor_opts: ck.actor_optimizers,
            critic_opt: ck.critic_optimizer,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub epoch: usize,
    pub seed: u64,
    pub actors: Vec<LearnerDocument>,
    pub critic: LearnerDocument,
    pub actor_optimizers: Vec<Adam>,
    pub critic_optimizer: Adam,
}

/// One row of the metrics stream. `reward` is the episode return;
/// `support_rate` and `qos_total` are per-step averages over the episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub reward: f64,
    pub support_rate: f64,
    pub qos_total: f64,
    pub energy_remaining_mean: f64,
    pub epsilon: f64,
    pub wall_ms: u64,
}

impl EpochRecord {
    /// Equality ignoring wall-clock time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        Self {
            wall_ms: 0,
            ..self.clone()
        } == Self {
            wall_ms: 0,
            ..other.clone()
        }
    }
}

pub const METRICS_HEADER: &str =
    "epoch,reward,support_rate,qos_total,energy_remaining_mean,epsilon,wall_ms";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub records: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub window: usize,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub support_rate_mean: f64,
    pub support_rate_std: f64,
    pub qos_total_mean: f64,
    pub qos_total_std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl Metrics {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.records.iter().all(|r| {
            [
                r.reward,
                r.support_rate,
                r.qos_total,
                r.energy_remaining_mean,
                r.epsilon,
            ]
            .iter()
            .all(|v| v.is_finite())
        })
    }

    pub fn same_outcome(&self, other: &Self) -> bool {
        self.len() == other.len()
            && self
                .records
                .iter()
                .zip(&other.records)
                .all(|(a, b)| a.same_outcome(b))
    }

    /// Mean and population standard deviation over the trailing
    /// `ceil(fraction * len)` records.
    pub fn summary(&self, fraction: f64) -> Summary {
        let n = self.records.len();
        let window = ((fraction * n as f64).ceil() as usize).clamp(n.min(1), n);
        let tail = &self.records[n - window..];
        let col = |f: fn(&EpochRecord) -> f64| tail.iter().map(f).collect::<Vec<_>>();
        let (reward_mean, reward_std) = mean_std(&col(|r| r.reward));
        let (support_rate_mean, support_rate_std) = mean_std(&col(|r| r.support_rate));
        let (qos_total_mean, qos_total_std) = mean_std(&col(|r| r.qos_total));
        Summary {
            count: n,
            window,
            reward_mean,
            reward_std,
            support_rate_mean,
            support_rate_std,
            qos_total_mean,
            qos_total_std,
        }
    }

    /// CSV with an optional leading `# ...` stamp line.
    pub fn write_csv<W: Write>(&self, mut out: W, stamp: Option<&str>) -> Result<()> {
        if let Some(s) = stamp {
            writeln!(out, "# {s}")?;
        }
        writeln!(out, "{METRICS_HEADER}")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch,
                r.reward,
                r.support_rate,
                r.qos_total,
                r.energy_remaining_mean,
                r.epsilon,
                r.wall_ms
            )?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct EpisodeAcc {
    reward: f64,
    support: f64,
    qos: f64,
    steps: usize,
}

impl EpisodeAcc {
    fn add(&mut self, out: &StepOutcome) {
        self.reward += out.reward;
        self.support += out.support_rate;
        self.qos += out.qos_total;
        self.steps += 1;
    }

    fn finish(
        self,
        epoch: usize,
        world: &WorldState,
        epsilon: f64,
        started: Instant,
    ) -> EpochRecord {
        let steps = self.steps.max(1) as f64;
        EpochRecord {
            epoch,
            reward: self.reward,
            support_rate: self.support / steps,
            qos_total: self.qos / steps,
            energy_remaining_mean: world.uavs.iter().map(|u| u.energy_j).sum::<f64>()
                / world.uavs.len() as f64,
            epsilon,
            wall_ms: started.elapsed().as_millis() as u64,
        }
    }
}

pub fn build_env(cfg: &ExperimentConfig) -> Result<UavEnv> {
    cfg.validate()?;
    UavEnv::new(
        cfg.scenario.clone(),
        cfg.uav.clone(),
        cfg.qos.clone(),
        cfg.channel.clone(),
        crate::channel::McsTable::default(),
        cfg.train.reward_coef,
    )
}

/// Episode driver owning the environment RNG and per-UAV noise streams.
struct Runner {
    env: UavEnv,
    env_rng: ChaCha8Rng,
    noise: Vec<NoiseSource>,
}

impl Runner {
    fn new(
        cfg: &ExperimentConfig,
        env: UavEnv,
        env_stream: u64,
        noise_stream: u64,
    ) -> Result<Self> {
        let noise = (0..env.num_uavs() as u64)
            .map(|m| NoiseSource::new(&cfg.noise, cfg.seed, noise_stream + m))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            env_rng: stream(cfg.seed, env_stream),
            env,
            noise,
        })
    }

    fn draws(&mut self) -> Result<Vec<NoiseDraw>> {
        self.noise.iter_mut().map(NoiseSource::draw).collect()
    }

    fn start(&mut self) -> Result<(WorldState, Perception)> {
        let world = self.env.reset(&mut self.env_rng);
        let draws = self.draws()?;
        let p = self.env.perceive(&world, &draws)?;
        Ok((world, p))
    }

    fn advance(&mut self, world: &mut WorldState, actions: &[usize]) -> Result<StepOutcome> {
        let actions = actions
            .iter()
            .map(|&a| Action::from_index(a))
            .collect::<Result<Vec<_>>>()?;
        let draws = self.draws()?;
        let out = self.env.step(world, &actions, &draws)?;
        if !out.reward.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite reward at step {}",
                world.t
            )));
        }
        Ok(out)
    }
}

fn critic_input<'a>(p: &'a Perception, ideal: bool) -> &'a [f64] {
    if ideal {
        &p.state
    } else {
        &p.observed_state
    }
}

pub struct TrainOutput {
    pub metrics: Metrics,
    pub agents: Agents,
    /// Per-step trace of the final epoch.
    pub last_trace: EpisodeTrace,
}

/// Runs the epoch loop. `on_checkpoint` fires every `checkpoint_every`
/// epochs (if non-zero) and once after the final epoch.
pub fn train(
    cfg: &ExperimentConfig,
    kind: LearnerKind,
    mut on_checkpoint: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<TrainOutput> {
    let env = build_env(cfg)?;
    let features = Features::new(&env, cfg.model.input_scale);
    let mut agents = Agents::new(kind, cfg, &env, &mut stream(cfg.seed, STREAM_INIT))?;
    let mut runner = Runner::new(cfg, env, STREAM_ENV, STREAM_NOISE)?;
    let mut explore_rng = stream(cfg.seed, STREAM_EXPLORE);
    let mut replay_rng = stream(cfg.seed, STREAM_REPLAY);
    let mut buffer = ReplayBuffer::new(cfg.train.buffer_capacity)?;
    let tc = &cfg.train;
    let steps = cfg.scenario.episode_steps;
    let num_uavs = cfg.scenario.num_uavs;
    let mut metrics = Metrics::default();
    let mut trace = EpisodeTrace::default();
    let mut global_step: u64 = 0;

    for epoch in 0..tc.epochs {
        let started = Instant::now();
        let (mut world, mut perception) = runner.start()?;
        let mut acc = EpisodeAcc::default();
        let mut epsilon = epsilon_at(global_step, tc);
        trace = EpisodeTrace::default();
        for _ in 0..steps {
            epsilon = epsilon_at(global_step, tc);
            let obs: Vec<Vec<f64>> = perception
                .observations
                .iter()
                .map(|o| features.actor_input(o, &perception.observed_state))
                .collect();
            let actions = agents
                .actors
                .iter()
                .zip(&obs)
                .map(|(a, o)| select_action(a, o, epsilon, &mut explore_rng))
                .collect::<Result<Vec<_>>>()?;
            let out = runner.advance(&mut world, &actions)?;
            let next = &out.perception;
            buffer.push(Transition {
                state: features.state(critic_input(&perception, tc.critic_ideal_state)),
                observations: obs,
                actions,
                reward: out.reward,
                next_state: features.state(critic_input(next, tc.critic_ideal_state)),
                next_observations: next
                    .observations
                    .iter()
                    .map(|o| features.actor_input(o, &next.observed_state))
                    .collect(),
            })?;
            acc.add(&out);
            trace.record(&world, &out);
            perception = out.perception;
            global_step += 1;
        }
        if buffer.len() >= tc.min_fill.max(1) {
            for m in 0..num_uavs {
                let batch = buffer.sample(&mut replay_rng, tc.batch_size);
                agents.update(m, &batch, tc.gamma)?;
            }
        }
        metrics
            .records
            .push(acc.finish(epoch, &world, epsilon, started));
        let last = epoch + 1 == tc.epochs;
        if last || (tc.checkpoint_every > 0 && (epoch + 1) % tc.checkpoint_every == 0) {
            on_checkpoint(&agents.checkpoint(epoch + 1, cfg.seed))?;
        }
    }
    if !metrics.all_finite() {
        return Err(Error::Numeric(
            "non-finite value in training metrics".into(),
        ));
    }
    Ok(TrainOutput {
        metrics,
        agents,
        last_trace: trace,
    })
}

pub struct EvalOutput {
    pub metrics: Metrics,
    pub traces: Vec<EpisodeTrace>,
}

/// Greedy rollouts of trained actors: epsilon is 0 and nothing is updated.
pub fn infer(
    cfg: &ExperimentConfig,
    checkpoint: Checkpoint,
    episodes: usize,
) -> Result<EvalOutput> {
    let env = build_env(cfg)?;
    let features = Features::new(&env, cfg.model.input_scale);
    let agents = Agents::from_checkpoint(checkpoint, &env)?;
    let mut runner = Runner::new(cfg, env, STREAM_EVAL_ENV, STREAM_EVAL_NOISE)?;
    let mut rng = stream(cfg.seed, STREAM_EVAL_ACTIONS);
    rollouts(
        &mut runner,
        cfg,
        episodes,
        |p| {
            agents
                .actors
                .iter()
                .zip(&p.observations)
                .map(|(a, o)| {
                    select_action(
                        a,
                        &features.actor_input(o, &p.observed_state),
                        0.0,
                        &mut rng,
                    )
                })
                .collect()
        },
        0.0,
    )
}

/// Uniform random joint actions, same episodes as training for the seed.
pub fn baseline_random_walk(cfg: &ExperimentConfig, episodes: usize) -> Result<EvalOutput> {
    let env = build_env(cfg)?;
    let mut runner = Runner::new(cfg, env, STREAM_ENV, STREAM_NOISE)?;
    let mut rng = stream(cfg.seed, STREAM_EXPLORE);
    let m = cfg.scenario.num_uavs;
    rollouts(
        &mut runner,
        cfg,
        episodes,
        |_| Ok((0..m).map(|_| rng.gen_range(0..Action::COUNT)).collect()),
        1.0,
    )
}

fn rollouts(
    runner: &mut Runner,
    cfg: &ExperimentConfig,
    episodes: usize,
    mut policy: impl FnMut(&Perception) -> Result<Vec<usize>>,
    epsilon: f64,
) -> Result<EvalOutput> {
    let mut metrics = Metrics::default();
    let mut traces = Vec::new();
    for episode in 0..episodes {
        let started = Instant::now();
        let (mut world, mut perception) = runner.start()?;
        let mut acc = EpisodeAcc::default();
        let mut trace = EpisodeTrace::default();
        for _ in 0..cfg.scenario.episode_steps {
            let actions = policy(&perception)?;
            let out = runner.advance(&mut world, &actions)?;
            acc.add(&out);
            trace.record(&world, &out);
            perception = out.perception;
        }
        metrics
            .records
            .push(acc.finish(episode, &world, epsilon, started));
        if cfg.output.traces {
            traces.push(trace);
        }
    }
    Ok(EvalOutput { metrics, traces })
}

/// Trainable parameter totals for both learner families at the configured
/// sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub quantum_actor: usize,
    pub quantum_critic: usize,
    pub quantum_total: usize,
    pub classical_actor: usize,
    pub classical_critic: usize,
    pub classical_total: usize,
}

pub fn param_counts(cfg: &ExperimentConfig) -> Result<ParamCounts> {
    let env = build_env(cfg)?;
    let (actor_blocks, critic_blocks) = circuit_blocks(cfg, &env);
    let per_block = crate::vqc::ANGLES_PER_QUBIT;
    let quantum_actor = actor_blocks * cfg.model.actor_qubits * per_block;
    let quantum_critic = critic_blocks * cfg.model.critic_qubits * per_block;
    let h = cfg.model.hidden_width;
    let classical_actor = Mlp::param_count_for(actor_input_dim(&env), h, Action::COUNT);
    let classical_critic = Mlp::param_count_for(env.state_dim(), h, 1);
    let m = env.num_uavs();
    Ok(ParamCounts {
        quantum_actor,
        quantum_critic,
        quantum_total: m * quantum_actor + quantum_critic,
        classical_actor,
        classical_critic,
        classical_total: m * classical_actor + classical_critic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TrainCfg;

    fn tiny_actor(params: Vec<f64>) -> Learner {
        let model = CircuitModel::new(Role::Actor, 5, 1, 2, (0..5).collect())
            .unwrap()
            .with_params(params)
            .unwrap();
        Learner::Quantum { model, beta: 3.0 }
    }

    fn transition(obs: Vec<f64>, action: usize, reward: f64, state: Vec<f64>) -> Transition {
        Transition {
            state: state.clone(),
            observations: vec![obs.clone()],
            actions: vec![action],
            reward,
            next_state: state,
            next_observations: vec![obs],
        }
    }

    #[test]
    fn epsilon_schedule() {
        let c = TrainCfg::default();
        assert_eq!(epsilon_at(0, &c), 0.275);
        assert!((epsilon_at(5300, &c) - 0.01).abs() < 1e-12);
        assert_eq!(epsilon_at(1_000_000, &c), 0.01);
    }

    #[test]
    fn td_error_examples() {
        assert_eq!(td_error(1.0, 0.0, 0.0, 0.98), 1.0);
        assert!((td_error(0.0, 10.0, 10.0, 0.98) + 0.2).abs() < 1e-12);
        assert_eq!(td_error(2.0, 0.5, 100.0, 0.0), 1.5);
    }

    #[test]
    fn greedy_and_random_selection() {
        // theta = pi on wire 1 flips it (and wire 2 through the CNOT ring);
        // ties among the remaining +1 readouts go to action 0.
        let mut p = vec![0.0; 15];
        p[3] = std::f64::consts::PI;
        let actor = tiny_actor(p);
        let mut rng = stream(0, 0);
        for _ in 0..100 {
            assert_eq!(
                select_action(&actor, &[0.0, 0.0], 0.0, &mut rng).unwrap(),
                0
            );
        }
        let mut counts = [0usize; 5];
        for _ in 0..100_000 {
            counts[select_action(&actor, &[0.0, 0.0], 1.0, &mut rng).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / 100_000.0 - 0.2).abs() < 0.01);
        }
        assert!(select_action(&actor, &[0.0, 0.0], 1.5, &mut rng).is_err());
    }

    #[test]
    fn zero_delta_leaves_everything_unchanged() {
        let mut rng = stream(5, 0);
        let mut actor = tiny_actor((0..15).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let before = actor.clone();
        let t = transition(vec![0.3, -0.2], 2, 0.0, vec![0.1]);
        let batch = vec![&t];
        let mut opt = Adam::new(0.1, actor.param_count());
        update_actor(&mut actor, &mut opt, &batch, 0, &[0.0]).unwrap();
        assert_eq!(actor, before);

        // critic with V(s) = V(s') and gamma chosen so delta = 0
        let critic_model = CircuitModel::new(Role::Critic, 1, 0, 0, vec![0]).unwrap();
        let mut critic = Learner::Quantum {
            model: critic_model,
            beta: 1.0,
        };
        let t = Transition {
            state: vec![],
            observations: vec![],
            actions: vec![],
            reward: 0.5,
            next_state: vec![],
            next_observations: vec![],
        };
        let mut copt = Adam::new(0.1, 0);
        let (loss, deltas) = update_critic(&mut critic, &mut copt, &[&t], 0.5).unwrap();
        assert_eq!(deltas, vec![0.0]);
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn positive_delta_raises_taken_action_probability() {
        let mut rng = stream(6, 0);
        let mut actor = tiny_actor((0..15).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let obs = vec![0.4, 0.7];
        let t = transition(obs.clone(), 3, 0.0, vec![]);
        let before = softmax(&actor.outputs(&obs).unwrap())[3];
        let mut opt = Adam::new(1e-3, actor.param_count());
        update_actor(&mut actor, &mut opt, &[&t], 0, &[1.0]).unwrap();
        let after = softmax(&actor.outputs(&obs).unwrap())[3];
        assert!(after > before);
    }

    #[test]
    fn metrics_summary_and_csv() {
        let mut m = Metrics::default();
        for i in 0..10 {
            m.records.push(EpochRecord {
                epoch: i,
                reward: i as f64,
                support_rate: 0.5,
                qos_total: 1.0,
                energy_remaining_mean: 10.0,
                epsilon: 0.1,
                wall_ms: i as u64,
            });
        }
        let s = m.summary(0.2);
        assert_eq!(s.window, 2);
        assert_eq!(s.reward_mean, 8.5);
        assert_eq!(s.reward_std, 0.5);
        let mut buf = Vec::new();
        m.write_csv(&mut buf, Some("seed=1")).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# seed=1\nepoch,reward,"));
        assert_eq!(text.lines().count(), 12);
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let cfg = ExperimentConfig::smoke();
        let env = build_env(&cfg).unwrap();
        for kind in [LearnerKind::Quantum, LearnerKind::Classical] {
            let agents = Agents::new(kind, &cfg, &env, &mut stream(1, 3)).unwrap();
            let ck = agents.checkpoint(7, 1);
            let text = serde_json::to_string(&ck).unwrap();
            let back: Checkpoint = serde_json::from_str(&text).unwrap();
            assert_eq!(back, ck);
            let restored = Agents::from_checkpoint(back, &env).unwrap();
            assert_eq!(restored.actors, agents.actors);

            let mut other = cfg.clone();
            other.scenario.num_uavs = 3;
            let env3 = build_env(&other).unwrap();
            assert!(matches!(
                Agents::from_checkpoint(ck, &env3),
                Err(Error::Load(_))
            ));
        }
    }

    #[test]
    fn default_parameter_counts() {
        let c = param_counts(&ExperimentConfig::default()).unwrap();
        // actor input 7 + 200 -> 42 blocks of 5 qubits; state 200 -> 25 blocks of 8
        assert_eq!(c.quantum_actor, 42 * 15);
        assert_eq!(c.quantum_critic, 600);
        assert_eq!(c.classical_actor, 207 * 64 + 64 + 64 * 5 + 5);
        assert_eq!(c.classical_critic, 200 * 64 + 64 + 64 + 1);
        assert!(c.quantum_total < c.classical_total);
    }

    #[test]
    fn feature_normalization() {
        let cfg = ExperimentConfig::smoke();
        let env = build_env(&cfg).unwrap();
        let f = Features::new(&env, 1.0);
        let battery = env.energy().battery_j();
        let o = f.observation(&[1000.0, 500.0, 0.0, -1.0, battery]);
        assert_eq!(o, vec![0.5, 0.25, 0.0, -1.0, 1.0]);
        let x = f.actor_input(&[1000.0, 500.0, 0.0, -1.0, battery], &[1.0, 0.0, 2.5]);
        assert_eq!(x, vec![0.5, 0.25, 0.0, -1.0, 1.0, 1.0, 0.0, 2.5]);
    }
}
