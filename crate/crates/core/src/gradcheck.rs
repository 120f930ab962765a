//! Finite-difference audit of every gradient path: circuit readouts (shift
//! rule), MLP outputs (backprop), and the critic-loss and actor-objective
//! chains built on both.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mlp::Mlp;
use crate::replay::Transition;
use crate::stochastics::stream;
use crate::trainer::{actor_objective_grad, critic_loss_grad, td_error, Learner};
use crate::vqc::{softmax, CircuitModel, Role};

pub const FD_STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-5;
pub const RANDOM_CIRCUITS: usize = 100;
pub const RANDOM_MLPS: usize = 20;
const LOSS_CHECKS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub circuits: usize,
    pub mlps: usize,
    pub loss_checks: usize,
    pub max_err_quantum: f64,
    pub max_err_classical: f64,
    pub max_err_losses: f64,
    pub tolerance: f64,
}

impl GradientReport {
    pub fn max_err(&self) -> f64 {
        self.max_err_quantum
            .max(self.max_err_classical)
            .max(self.max_err_losses)
    }

    pub fn passed(&self) -> bool {
        self.max_err() < self.tolerance
    }
}

/// Central difference of `f` along each coordinate of `params`.
pub fn central_difference(
    params: &[f64],
    h: f64,
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut p = params.to_vec();
    let mut out = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = f(&p)?;
        p[i] = orig - h;
        let down = f(&p)?;
        p[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn with_params(learner: &Learner, p: &[f64]) -> Learner {
    let mut l = learner.clone();
    l.params_mut().copy_from_slice(p);
    l
}

fn random_circuit<R: Rng>(
    rng: &mut R,
    role: Role,
    q: usize,
    blocks: usize,
    input_dim: usize,
    outs: usize,
) -> Result<CircuitModel> {
    let wires: Vec<usize> = rand::seq::index::sample(rng, q, outs.min(q)).into_vec();
    let mut m = CircuitModel::new(role, q, blocks, input_dim, wires)?;
    m.randomize(rng, std::f64::consts::PI);
    Ok(m)
}

/// Input for `net` whose hidden pre-activations all sit well away from the
/// ReLU kink, so central differences are valid.
fn smooth_input<R: Rng>(rng: &mut R, net: &Mlp) -> Vec<f64> {
    loop {
        let x: Vec<f64> = (0..net.input_dim())
            .map(|_| rng.gen_range(-2.0..2.0))
            .collect();
        if net.hidden_pre(&x).iter().all(|z| z.abs() > 1e-2) {
            return x;
        }
    }
}

fn circuit_check<R: Rng>(rng: &mut R) -> Result<f64> {
    let q = rng.gen_range(1..=6);
    let blocks = rng.gen_range(1..=3);
    let input_dim = rng.gen_range(0..=8);
    let outs = rng.gen_range(1..=q);
    let model = random_circuit(rng, Role::Actor, q, blocks, input_dim, outs)?;
    let x: Vec<f64> = (0..input_dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let jac = model.parameter_shift_jacobian(&x)?;
    let mut worst: f64 = 0.0;
    for (k, row) in jac.iter().enumerate() {
        let fd = central_difference(model.params(), FD_STEP, |p| {
            Ok(model.clone().with_params(p.to_vec())?.forward(&x)?.values[k])
        })?;
        worst = worst.max(max_abs_diff(row, &fd));
    }
    Ok(worst)
}

fn mlp_check<R: Rng>(rng: &mut R) -> Result<f64> {
    let (i, h, o) = (
        rng.gen_range(1..=6),
        rng.gen_range(1..=16),
        rng.gen_range(1..=5),
    );
    let net = Mlp::new(i, h, o, rng)?;
    let x = smooth_input(rng, &net);
    let cot: Vec<f64> = (0..o).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (_, grad) = net.backward(&x, &cot)?;
    let fd = central_difference(net.params(), FD_STEP, |p| {
        let mut n = net.clone();
        n.params_mut().copy_from_slice(p);
        Ok(n.forward(&x)?.iter().zip(&cot).map(|(a, b)| a * b).sum())
    })?;
    Ok(max_abs_diff(&grad, &fd))
}

fn random_batch<R: Rng>(
    rng: &mut R,
    state_dim: usize,
    obs_dim: usize,
    n: usize,
) -> Vec<Transition> {
    let v = |d: usize, rng: &mut R| {
        (0..d)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect::<Vec<f64>>()
    };
    (0..n)
        .map(|_| Transition {
            state: v(state_dim, rng),
            observations: vec![v(obs_dim, rng)],
            actions: vec![rng.gen_range(0..5)],
            reward: rng.gen_range(0.0..0.3),
            next_state: v(state_dim, rng),
            next_observations: vec![v(obs_dim, rng)],
        })
        .collect()
}

/// Critic-loss gradient (target frozen) and actor-objective gradient (deltas
/// frozen) against finite differences of the scalar functions.
fn loss_check<R: Rng>(rng: &mut R, critic: &Learner, actor: &Learner) -> Result<f64> {
    let gamma = 0.98;
    let data = random_batch(rng, critic.input_dim(), actor.input_dim(), 3);
    let batch: Vec<&Transition> = data.iter().collect();
    let (_, grad, deltas) = critic_loss_grad(critic, &batch, gamma)?;
    let targets: Vec<f64> = batch
        .iter()
        .map(|t| Ok(t.reward + gamma * critic.outputs(&t.next_state)?[0]))
        .collect::<Result<_>>()?;
    let fd = central_difference(critic.params(), FD_STEP, |p| {
        let c = with_params(critic, p);
        batch.iter().zip(&targets).try_fold(0.0, |acc, (t, y)| {
            let d = td_error(*y, c.outputs(&t.state)?[0], 0.0, gamma);
            Ok(acc + d * d)
        })
    })?;
    let mut worst = max_abs_diff(&grad, &fd);

    let (_, agrad) = actor_objective_grad(actor, &batch, 0, &deltas)?;
    let fd = central_difference(actor.params(), FD_STEP, |p| {
        let a = with_params(actor, p);
        batch.iter().zip(&deltas).try_fold(0.0, |acc, (t, d)| {
            let probs = softmax(&a.outputs(&t.observations[0])?);
            Ok(acc + d * probs[t.actions[0]].ln())
        })
    })?;
    worst = worst.max(max_abs_diff(&agrad, &fd));
    Ok(worst)
}

pub fn verify_gradients(seed: u64) -> Result<GradientReport> {
    let mut rng = stream(seed, 0);
    let mut max_err_quantum: f64 = 0.0;
    for _ in 0..RANDOM_CIRCUITS {
        max_err_quantum = max_err_quantum.max(circuit_check(&mut rng)?);
    }
    let mut max_err_classical: f64 = 0.0;
    for _ in 0..RANDOM_MLPS {
        max_err_classical = max_err_classical.max(mlp_check(&mut rng)?);
    }
    let mut max_err_losses: f64 = 0.0;
    for i in 0..LOSS_CHECKS {
        let (critic, actor) = if i % 2 == 0 {
            (
                Learner::Quantum {
                    model: random_circuit(&mut rng, Role::Critic, 3, 2, 6, 1)?,
                    beta: 15.0,
                },
                Learner::Quantum {
                    model: random_circuit(&mut rng, Role::Actor, 5, 1, 4, 5)?,
                    beta: 3.0,
                },
            )
        } else {
            (
                Learner::Classical(Mlp::new(6, 8, 1, &mut rng)?),
                Learner::Classical(Mlp::new(4, 8, 5, &mut rng)?),
            )
        };
        max_err_losses = max_err_losses.max(loss_check(&mut rng, &critic, &actor)?);
    }
    Ok(GradientReport {
        circuits: RANDOM_CIRCUITS,
        mlps: RANDOM_MLPS,
        loss_checks: LOSS_CHECKS,
        max_err_quantum,
        max_err_classical,
        max_err_losses,
        tolerance: TOLERANCE,
    })
}
