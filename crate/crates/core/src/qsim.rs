//! Dense statevector simulation of small registers.
//!
//! Basis states are indexed with qubit 0 as the most significant bit, so for a
//! three-qubit register `|q0 q1 q2>` lives at index `q0*4 + q1*2 + q2`.
//! Measurement is analytic: [`Statevector::expect_z`] returns the exact
//! Pauli-Z expectation rather than a shot estimate.

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const MAX_QUBITS: usize = 16;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// A gate together with the wires it acts on. Angles are radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    Rx {
        wire: usize,
        angle: f64,
    },
    Ry {
        wire: usize,
        angle: f64,
    },
    Rz {
        wire: usize,
        angle: f64,
    },
    Cnot {
        control: usize,
        target: usize,
    },
    /// Controlled three-angle rotation `U3(theta, phi, lambda)` on `target`.
    Cu3 {
        control: usize,
        target: usize,
        theta: f64,
        phi: f64,
        lambda: f64,
    },
}

type Mat2 = [[Complex64; 2]; 2];

fn rx(angle: f64) -> Mat2 {
    let (s, c) = (angle / 2.0).sin_cos();
    let mis = Complex64::new(0.0, -s);
    [[c.into(), mis], [mis, c.into()]]
}

fn ry(angle: f64) -> Mat2 {
    let (s, c) = (angle / 2.0).sin_cos();
    [[c.into(), (-s).into()], [s.into(), c.into()]]
}

fn rz(angle: f64) -> Mat2 {
    let half = angle / 2.0;
    [
        [Complex64::from_polar(1.0, -half), ZERO],
        [ZERO, Complex64::from_polar(1.0, half)],
    ]
}

fn u3(theta: f64, phi: f64, lambda: f64) -> Mat2 {
    let (s, c) = (theta / 2.0).sin_cos();
    [
        [c.into(), -Complex64::from_polar(s, lambda)],
        [
            Complex64::from_polar(s, phi),
            Complex64::from_polar(c, phi + lambda),
        ],
    ]
}

const PAULI_X: Mat2 = [[ZERO, ONE], [ONE, ZERO]];

fn apply2(m: &Mat2, a: &mut Complex64, b: &mut Complex64) {
    let (x, y) = (*a, *b);
    *a = m[0][0] * x + m[0][1] * y;
    *b = m[1][0] * x + m[1][1] * y;
}

impl Gate {
    /// Wires touched by the gate, control first for two-qubit gates.
    pub fn wires(&self) -> Vec<usize> {
        match *self {
            Gate::Rx { wire, .. } | Gate::Ry { wire, .. } | Gate::Rz { wire, .. } => vec![wire],
            Gate::Cnot { control, target }
            | Gate::Cu3 {
                control, target, ..
            } => {
                vec![control, target]
            }
        }
    }

    /// The 2x2 matrix applied to the target wire (conditioned on the control
    /// for two-qubit gates).
    fn target_matrix(&self) -> Mat2 {
        match *self {
            Gate::Rx { angle, .. } => rx(angle),
            Gate::Ry { angle, .. } => ry(angle),
            Gate::Rz { angle, .. } => rz(angle),
            Gate::Cnot { .. } => PAULI_X,
            Gate::Cu3 {
                theta, phi, lambda, ..
            } => u3(theta, phi, lambda),
        }
    }

    /// Dense unitary of the gate on its own wires: 2x2 for single-qubit
    /// gates, 4x4 in `|control target>` order for controlled gates.
    pub fn matrix(&self) -> Vec<Vec<Complex64>> {
        let m = self.target_matrix();
        match self {
            Gate::Rx { .. } | Gate::Ry { .. } | Gate::Rz { .. } => {
                m.iter().map(|row| row.to_vec()).collect()
            }
            Gate::Cnot { .. } | Gate::Cu3 { .. } => {
                let mut out = vec![vec![ZERO; 4]; 4];
                out[0][0] = ONE;
                out[1][1] = ONE;
                for r in 0..2 {
                    for c in 0..2 {
                        out[2 + r][2 + c] = m[r][c];
                    }
                }
                out
            }
        }
    }
}

/// Complex amplitudes over the `2^n` computational basis states.
#[derive(Debug, Clone, PartialEq)]
pub struct Statevector {
    num_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl Statevector {
    /// Prepares `|0...0>` on `num_qubits` qubits (1..=16).
    pub fn new(num_qubits: usize) -> Result<Self> {
        if !(1..=MAX_QUBITS).contains(&num_qubits) {
            return Err(Error::config(
                "num_qubits",
                format!("must be in [1, {MAX_QUBITS}], got {num_qubits}"),
            ));
        }
        let mut amplitudes = vec![ZERO; 1 << num_qubits];
        amplitudes[0] = ONE;
        Ok(Self {
            num_qubits,
            amplitudes,
        })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Resets to `|0...0>` without reallocating.
    pub fn reset(&mut self) {
        self.amplitudes.fill(ZERO);
        self.amplitudes[0] = ONE;
    }

    fn mask(&self, wire: usize) -> usize {
        1 << (self.num_qubits - 1 - wire)
    }

    fn check_wire(&self, wire: usize) -> Result<()> {
        if wire >= self.num_qubits {
            return Err(Error::Usage(format!(
                "wire {wire} out of range for {}-qubit register",
                self.num_qubits
            )));
        }
        Ok(())
    }

    /// Applies `gate` in place.
    pub fn apply(&mut self, gate: &Gate) -> Result<()> {
        let wires = gate.wires();
        for &w in &wires {
            self.check_wire(w)?;
        }
        if wires.len() == 2 && wires[0] == wires[1] {
            return Err(Error::Usage(format!(
                "control and target must differ, both are {}",
                wires[0]
            )));
        }
        match *gate {
            Gate::Rz { wire, angle } => {
                let phase = Complex64::from_polar(1.0, angle / 2.0);
                let (lo, hi) = (phase.conj(), phase);
                self.for_each_pair(wire, |a, b| {
                    *a *= lo;
                    *b *= hi;
                });
            }
            Gate::Ry { wire, angle } => {
                let (s, c) = (angle / 2.0).sin_cos();
                self.for_each_pair(wire, |a, b| {
                    let (x, y) = (*a, *b);
                    *a = x * c - y * s;
                    *b = x * s + y * c;
                });
            }
            Gate::Cnot { control, target } => {
                let cmask = self.mask(control);
                self.for_each_pair_indexed(target, |i, a, b| {
                    if i & cmask != 0 {
                        std::mem::swap(a, b);
                    }
                });
            }
            Gate::Rx { wire, .. } => {
                let m = gate.target_matrix();
                self.for_each_pair(wire, |a, b| apply2(&m, a, b));
            }
            Gate::Cu3 {
                control, target, ..
            } => {
                let m = gate.target_matrix();
                let cmask = self.mask(control);
                self.for_each_pair_indexed(target, |i, a, b| {
                    if i & cmask != 0 {
                        apply2(&m, a, b);
                    }
                });
            }
        }
        Ok(())
    }

    /// Consuming variant of [`Statevector::apply`].
    pub fn with(mut self, gate: &Gate) -> Result<Self> {
        self.apply(gate)?;
        Ok(self)
    }

    /// Calls `f` on every amplitude pair that differs only in `wire`, bit
    /// clear first.
    fn for_each_pair(&mut self, wire: usize, mut f: impl FnMut(&mut Complex64, &mut Complex64)) {
        self.for_each_pair_indexed(wire, |_, a, b| f(a, b));
    }

    fn for_each_pair_indexed(
        &mut self,
        wire: usize,
        mut f: impl FnMut(usize, &mut Complex64, &mut Complex64),
    ) {
        let stride = self.mask(wire);
        for (c, chunk) in self.amplitudes.chunks_exact_mut(2 * stride).enumerate() {
            let (lo, hi) = chunk.split_at_mut(stride);
            let base = c * 2 * stride;
            for (k, (a, b)) in lo.iter_mut().zip(hi.iter_mut()).enumerate() {
                f(base + k, a, b);
            }
        }
    }

    /// Exact `<Z>` on `wire`: probability of bit 0 minus probability of bit 1.
    pub fn expect_z(&self, wire: usize) -> Result<f64> {
        self.check_wire(wire)?;
        let mask = self.mask(wire);
        let value = self
            .amplitudes
            .iter()
            .enumerate()
            .map(|(i, a)| {
                if i & mask == 0 {
                    a.norm_sqr()
                } else {
                    -a.norm_sqr()
                }
            })
            .sum::<f64>();
        Ok(value.clamp(-1.0, 1.0))
    }
}
