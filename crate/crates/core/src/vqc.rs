//! Variational circuits with data re-uploading.
//!
//! A circuit is `num_blocks` repetitions of
//!
//! 1. an encoding layer: `RY(atan(x_j))` on wire `j - offset` for the block's
//!    slice of the input,
//! 2. a trainable layer: a three-angle rotation `U3(theta, phi, lambda)` on
//!    every wire, realized as `RZ(phi) RY(theta) RZ(lambda)`,
//! 3. a ring of CNOTs `(w, w+1 mod q)`.
//!
//! Input slices have width `num_qubits` and cycle: block `b` encodes slice
//! `b mod ceil(input_dim / num_qubits)`. Every trainable angle drives a single
//! Pauli rotation, so the two-term shift rule with the factor 1/2 is exact.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qsim::{Gate, Statevector, MAX_QUBITS};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const ANGLES_PER_QUBIT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Actor,
    Critic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    Y,
    Z,
}

#[derive(Debug, Clone, Copy)]
enum Step {
    Fixed(Gate),
    Param {
        index: usize,
        axis: Axis,
        wire: usize,
    },
}

impl Step {
    fn gate(&self, params: &[f64], shift: f64) -> Gate {
        match *self {
            Step::Fixed(g) => g,
            Step::Param { index, axis, wire } => {
                let angle = params[index] + shift;
                match axis {
                    Axis::Y => Gate::Ry { wire, angle },
                    Axis::Z => Gate::Rz { wire, angle },
                }
            }
        }
    }
}

/// Expectation values read off the observable wires, each in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Readout {
    pub values: Vec<f64>,
}

impl Readout {
    /// `beta * <O>` per wire.
    pub fn scaled(&self, beta: f64) -> Vec<f64> {
        self.values.iter().map(|v| beta * v).collect()
    }
}

/// Operation counts entering the execution-cost estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OpCounts {
    pub encoder_ops: usize,
    pub param_gates: usize,
    pub measurements: usize,
}

impl OpCounts {
    pub fn total(&self) -> usize {
        self.encoder_ops + self.param_gates + self.measurements
    }
}

/// Elementary-unit training cost of one epoch:
/// `T * (C_critic + M * (|A| + C_actor))`.
pub fn training_cost(
    steps: usize,
    agents: usize,
    num_actions: usize,
    actor: OpCounts,
    critic: OpCounts,
) -> usize {
    steps * (critic.total() + agents * (num_actions + actor.total()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CircuitModel {
    role: Role,
    num_qubits: usize,
    num_blocks: usize,
    input_dim: usize,
    observable_wires: Vec<usize>,
    params: Vec<f64>,
}

/// Serialized circuit layout and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitDocument {
    pub version: u32,
    pub role: Role,
    pub num_qubits: usize,
    pub num_blocks: usize,
    pub input_dim: usize,
    pub observable_wires: Vec<usize>,
    pub params: Vec<f64>,
}

impl CircuitModel {
    /// Builds a model with all trainable angles set to zero.
    pub fn new(
        role: Role,
        num_qubits: usize,
        num_blocks: usize,
        input_dim: usize,
        observable_wires: Vec<usize>,
    ) -> Result<Self> {
        if !(1..=MAX_QUBITS).contains(&num_qubits) {
            return Err(Error::config(
                "num_qubits",
                format!("must be in [1, {MAX_QUBITS}], got {num_qubits}"),
            ));
        }
        if observable_wires.is_empty() {
            return Err(Error::config("observable_wires", "must not be empty"));
        }
        if let Some(w) = observable_wires.iter().find(|&&w| w >= num_qubits) {
            return Err(Error::config(
                "observable_wires",
                format!("wire {w} out of range for {num_qubits} qubits"),
            ));
        }
        let n = num_blocks * num_qubits * ANGLES_PER_QUBIT;
        Ok(Self {
            role,
            num_qubits,
            num_blocks,
            input_dim,
            observable_wires,
            params: vec![0.0; n],
        })
    }

    /// Smallest block count that uploads every input coordinate at least once.
    pub fn blocks_to_cover(input_dim: usize, num_qubits: usize) -> usize {
        input_dim.div_ceil(num_qubits).max(1)
    }

    pub fn with_params(mut self, params: Vec<f64>) -> Result<Self> {
        self.set_params(params)?;
        Ok(self)
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Usage(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    /// Draws every angle uniformly from `[-scale, scale]`.
    pub fn randomize<R: Rng + ?Sized>(&mut self, rng: &mut R, scale: f64) {
        for p in &mut self.params {
            *p = if scale > 0.0 {
                rng.gen_range(-scale..=scale)
            } else {
                0.0
            };
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }
    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }
    pub fn num_blocks(&self) -> usize {
        self.num_blocks
    }
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn observable_wires(&self) -> &[usize] {
        &self.observable_wires
    }
    pub fn params(&self) -> &[f64] {
        &self.params
    }
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn num_slices(&self) -> usize {
        self.input_dim.div_ceil(self.num_qubits)
    }

    /// Input indices uploaded by `block`.
    pub fn block_slice(&self, block: usize) -> std::ops::Range<usize> {
        let slices = self.num_slices();
        if slices == 0 {
            return 0..0;
        }
        let start = (block % slices) * self.num_qubits;
        start..(start + self.num_qubits).min(self.input_dim)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Usage(format!(
                "input has {} entries, model expects {}",
                x.len(),
                self.input_dim
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("input entry {i} is not finite")));
        }
        Ok(())
    }

    /// Encoding rotations for `block`; angles are `atan(x_j)`.
    pub fn encode_input(&self, x: &[f64], block: usize) -> Result<Vec<Gate>> {
        self.check_input(x)?;
        Ok(self.encoding_gates(x, block).collect())
    }

    fn encoding_gates<'a>(&self, x: &'a [f64], block: usize) -> impl Iterator<Item = Gate> + 'a {
        let range = self.block_slice(block);
        let offset = range.start;
        range.map(move |j| Gate::Ry {
            wire: j - offset,
            angle: x[j].atan(),
        })
    }

    fn steps(&self, x: &[f64]) -> Result<Vec<Step>> {
        self.check_input(x)?;
        let q = self.num_qubits;
        let mut steps = Vec::with_capacity(self.num_blocks * (5 * q));
        for b in 0..self.num_blocks {
            steps.extend(self.encoding_gates(x, b).map(Step::Fixed));
            for w in 0..q {
                let base = (b * q + w) * ANGLES_PER_QUBIT;
                // U3(theta, phi, lambda) = RZ(phi) RY(theta) RZ(lambda)
                steps.push(Step::Param {
                    index: base + 2,
                    axis: Axis::Z,
                    wire: w,
                });
                steps.push(Step::Param {
                    index: base,
                    axis: Axis::Y,
                    wire: w,
                });
                steps.push(Step::Param {
                    index: base + 1,
                    axis: Axis::Z,
                    wire: w,
                });
            }
            if q > 1 {
                for w in 0..q {
                    steps.push(Step::Fixed(Gate::Cnot {
                        control: w,
                        target: (w + 1) % q,
                    }));
                }
            }
        }
        Ok(steps)
    }

    fn run(&self, state: &mut Statevector, steps: &[Step]) -> Result<()> {
        for s in steps {
            state.apply(&s.gate(&self.params, 0.0))?;
        }
        Ok(())
    }

    fn read(&self, state: &Statevector) -> Result<Vec<f64>> {
        self.observable_wires
            .iter()
            .map(|&w| state.expect_z(w))
            .collect()
    }

    /// Runs the circuit on `x` and measures `<Z>` on every observable wire.
    pub fn forward(&self, x: &[f64]) -> Result<Readout> {
        let steps = self.steps(x)?;
        let mut state = Statevector::new(self.num_qubits)?;
        self.run(&mut state, &steps)?;
        Ok(Readout {
            values: self.read(&state)?,
        })
    }

    /// `d<O_k>/d params_i` for every observable `k` (rows) and parameter `i`
    /// (columns), by the two-term shift rule
    /// `(<O>(p + pi/2 e_i) - <O>(p - pi/2 e_i)) / 2`.
    ///
    /// The state just before each trainable gate is cached during one forward
    /// pass so each shifted evaluation only replays the circuit suffix.
    pub fn parameter_shift_jacobian(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let steps = self.steps(x)?;
        let mut jac = vec![vec![0.0; self.params.len()]; self.observable_wires.len()];
        let mut state = Statevector::new(self.num_qubits)?;
        for (pos, step) in steps.iter().enumerate() {
            if let Step::Param { index, .. } = *step {
                let tail = &steps[pos + 1..];
                let shifted_read = |shift: f64| -> Result<Vec<f64>> {
                    let mut s = state.clone();
                    s.apply(&step.gate(&self.params, shift))?;
                    self.run(&mut s, tail)?;
                    self.read(&s)
                };
                let plus = shifted_read(FRAC_PI_2)?;
                let minus = shifted_read(-FRAC_PI_2)?;
                for (row, (plus, minus)) in jac.iter_mut().zip(plus.iter().zip(&minus)) {
                    row[index] = 0.5 * (plus - minus);
                }
            }
            state.apply(&step.gate(&self.params, 0.0))?;
        }
        Ok(jac)
    }

    /// Gradient of observable `obs_index` with respect to all parameters.
    pub fn parameter_shift_grad(&self, x: &[f64], obs_index: usize) -> Result<Vec<f64>> {
        if obs_index >= self.observable_wires.len() {
            return Err(Error::Usage(format!(
                "observable index {obs_index} out of range ({} observables)",
                self.observable_wires.len()
            )));
        }
        Ok(self.parameter_shift_jacobian(x)?.swap_remove(obs_index))
    }

    /// Encoder ops, trainable gates and measurements for one execution.
    pub fn complexity(&self) -> OpCounts {
        OpCounts {
            encoder_ops: self.input_dim,
            param_gates: self.params.len(),
            measurements: self.observable_wires.len(),
        }
    }

    pub fn to_document(&self) -> CircuitDocument {
        CircuitDocument {
            version: CHECKPOINT_VERSION,
            role: self.role,
            num_qubits: self.num_qubits,
            num_blocks: self.num_blocks,
            input_dim: self.input_dim,
            observable_wires: self.observable_wires.clone(),
            params: self.params.clone(),
        }
    }

    pub fn from_document(doc: CircuitDocument) -> Result<Self> {
        if doc.version != CHECKPOINT_VERSION {
            return Err(Error::Load(format!(
                "unsupported circuit version {} (expected {CHECKPOINT_VERSION})",
                doc.version
            )));
        }
        let model = Self::new(
            doc.role,
            doc.num_qubits,
            doc.num_blocks,
            doc.input_dim,
            doc.observable_wires,
        )?;
        model
            .with_params(doc.params)
            .map_err(|e| Error::Load(e.to_string()))
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// `softmax(beta_a * <O_a>)` over one readout wire per action.
pub fn actor_policy(model: &CircuitModel, obs: &[f64], beta_a: f64) -> Result<Vec<f64>> {
    Ok(softmax(&model.forward(obs)?.scaled(beta_a)))
}

/// `beta_c * <O_c>` on the critic's single readout wire.
pub fn critic_value(model: &CircuitModel, state: &[f64], beta_c: f64) -> Result<f64> {
    if model.observable_wires.len() != 1 {
        return Err(Error::Usage(format!(
            "critic must have one observable wire, has {}",
            model.observable_wires.len()
        )));
    }
    Ok(beta_c * model.forward(state)?.values[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn actor(q: usize, blocks: usize, input_dim: usize) -> CircuitModel {
        CircuitModel::new(Role::Actor, q, blocks, input_dim, (0..q).collect()).unwrap()
    }

    #[test]
    fn param_layout() {
        let m = actor(5, 3, 12);
        assert_eq!(m.param_count(), 3 * 5 * 3);
        assert!(CircuitModel::new(Role::Actor, 2, 1, 0, vec![2]).is_err());
        assert!(CircuitModel::new(Role::Actor, 0, 1, 0, vec![0]).is_err());
    }

    #[test]
    fn zero_input_encodes_identity_angles() {
        let m = actor(3, 2, 6);
        for g in m.encode_input(&[0.0; 6], 1).unwrap() {
            match g {
                Gate::Ry { angle, .. } => assert_eq!(angle, 0.0),
                other => panic!("unexpected gate {other:?}"),
            }
        }
    }

    #[test]
    fn slices_cycle_across_blocks() {
        let m = actor(2, 3, 4);
        assert_eq!(m.block_slice(0), 0..2);
        assert_eq!(m.block_slice(1), 2..4);
        assert_eq!(m.block_slice(2), 0..2);
        let x = [0.1, 0.2, 0.3, 0.4];
        let g = m.encode_input(&x, 1).unwrap();
        assert_eq!(
            g,
            vec![
                Gate::Ry {
                    wire: 0,
                    angle: 0.3f64.atan()
                },
                Gate::Ry {
                    wire: 1,
                    angle: 0.4f64.atan()
                }
            ]
        );
        // ragged tail slice
        let m = actor(2, 2, 3);
        assert_eq!(m.block_slice(1), 2..3);
    }

    #[test]
    fn large_inputs_stay_below_half_pi() {
        let m = actor(1, 1, 1);
        match m.encode_input(&[1e6], 0).unwrap()[0] {
            Gate::Ry { angle, .. } => assert!(angle < FRAC_PI_2),
            _ => unreachable!(),
        }
    }

    #[test]
    fn non_finite_input_is_data_error() {
        let m = actor(2, 1, 2);
        assert!(matches!(
            m.encode_input(&[f64::NAN, 0.0], 0),
            Err(Error::Data(_))
        ));
        assert!(matches!(m.forward(&[1.0]), Err(Error::Usage(_))));
    }

    #[test]
    fn zero_blocks_reads_ground_state() {
        let m = actor(4, 0, 3);
        assert_eq!(m.forward(&[0.3, 0.1, 9.0]).unwrap().values, vec![1.0; 4]);
    }

    #[test]
    fn single_qubit_reads_cos_theta() {
        for theta in [0.0, 0.4, 1.7, -2.2] {
            let m = actor(1, 1, 0).with_params(vec![theta, 0.0, 0.0]).unwrap();
            let v = m.forward(&[]).unwrap().values[0];
            assert!((v - theta.cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        let m = actor(1, 1, 0);
        let g = m.parameter_shift_grad(&[], 0).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
        assert!(m.parameter_shift_grad(&[], 1).is_err());
    }

    #[test]
    fn policy_heads() {
        let m = actor(5, 0, 0);
        let p = actor_policy(&m, &[], 3.0).unwrap();
        for v in &p {
            assert!((v - 0.2).abs() < 1e-15);
        }
        let p = softmax(&[0.0; 5].map(|v: f64| v * 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
    }

    #[test]
    fn critic_head() {
        let c = CircuitModel::new(Role::Critic, 3, 0, 2, vec![0]).unwrap();
        assert_eq!(critic_value(&c, &[1.0, 2.0], 15.0).unwrap(), 15.0);
        assert_eq!(critic_value(&c, &[1.0, 2.0], 0.0).unwrap(), 0.0);
        let bad = CircuitModel::new(Role::Critic, 3, 0, 2, vec![0, 1]).unwrap();
        assert!(critic_value(&bad, &[1.0, 2.0], 1.0).is_err());
    }

    #[test]
    fn complexity_counts() {
        let a = CircuitModel::new(Role::Actor, 5, 0, 8, (0..5).collect())
            .unwrap()
            .with_params(vec![])
            .unwrap();
        let mut counts = a.complexity();
        counts.param_gates = 36;
        assert_eq!(
            (counts.encoder_ops, counts.param_gates, counts.measurements),
            (8, 36, 5)
        );
        // 2 blocks * 4 qubits * 3 angles = 24
        let c = CircuitModel::new(Role::Critic, 4, 2, 10, vec![0]).unwrap();
        let cc = c.complexity();
        assert_eq!(
            (cc.encoder_ops, cc.param_gates, cc.measurements),
            (10, 24, 1)
        );
        let actor = OpCounts {
            encoder_ops: 8,
            param_gates: 36,
            measurements: 5,
        };
        assert_eq!(training_cost(30, 4, 5, actor, cc), 30 * (35 + 4 * (5 + 49)));
    }

    #[test]
    fn document_round_trip_and_version_check() {
        let mut m = actor(3, 2, 5);
        m.randomize(&mut rand::rngs::mock::StepRng::new(1, 1 << 40), 1.0);
        let doc = m.to_document();
        let json = serde_json::to_string(&doc).unwrap();
        let back: CircuitDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(CircuitModel::from_document(back.clone()).unwrap(), m);
        let mut bad = back;
        bad.version = 99;
        assert!(matches!(
            CircuitModel::from_document(bad),
            Err(Error::Load(_))
        ));
    }
}
