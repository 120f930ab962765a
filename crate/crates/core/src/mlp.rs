//! Single-hidden-layer perceptron with rectified-linear hidden units and a
//! linear output layer, used by the classical baseline.
//!
//! Parameters are one flat vector: `W1` (hidden x input, row-major), `b1`,
//! `W2` (output x hidden, row-major), `b2`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mlp {
    input_dim: usize,
    hidden: usize,
    output_dim: usize,
    params: Vec<f64>,
}

impl Mlp {
    pub fn param_count_for(input_dim: usize, hidden: usize, output_dim: usize) -> usize {
        hidden * input_dim + hidden + output_dim * hidden + output_dim
    }

    /// Weights and biases uniform in `+-1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: usize,
        output_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || output_dim == 0 {
            return Err(Error::config(
                "model.hidden_width",
                "layer sizes must be at least 1",
            ));
        }
        let mut params = Vec::with_capacity(Self::param_count_for(input_dim, hidden, output_dim));
        let a1 = 1.0 / (input_dim as f64).sqrt();
        for _ in 0..hidden * input_dim + hidden {
            params.push(rng.gen_range(-a1..=a1));
        }
        let a2 = 1.0 / (hidden as f64).sqrt();
        for _ in 0..output_dim * hidden + output_dim {
            params.push(rng.gen_range(-a2..=a2));
        }
        Ok(Self {
            input_dim,
            hidden,
            output_dim,
            params,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn hidden(&self) -> usize {
        self.hidden
    }
    pub fn output_dim(&self) -> usize {
        self.output_dim
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

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.input_dim;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.output_dim * self.hidden;
        (b1, w2, b2)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Usage(format!(
                "expected input of length {}, got {}",
                self.input_dim,
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite network input".into()));
        }
        Ok(())
    }

    pub(crate) fn hidden_pre(&self, x: &[f64]) -> Vec<f64> {
        let (b1, _, _) = self.offsets();
        (0..self.hidden)
            .map(|h| {
                let row = &self.params[h * self.input_dim..(h + 1) * self.input_dim];
                self.params[b1 + h] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    fn output_from(&self, act: &[f64]) -> Vec<f64> {
        let (_, w2, b2) = self.offsets();
        (0..self.output_dim)
            .map(|o| {
                let row = &self.params[w2 + o * self.hidden..w2 + (o + 1) * self.hidden];
                self.params[b2 + o] + row.iter().zip(act).map(|(w, a)| w * a).sum::<f64>()
            })
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let act: Vec<f64> = self.hidden_pre(x).into_iter().map(|z| z.max(0.0)).collect();
        Ok(self.output_from(&act))
    }

    /// Outputs and the gradient of `sum_k cotangent_k * out_k` with respect
    /// to the parameters.
    pub fn backward(&self, x: &[f64], cotangent: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(x)?;
        if cotangent.len() != self.output_dim {
            return Err(Error::Usage(format!(
                "expected cotangent of length {}, got {}",
                self.output_dim,
                cotangent.len()
            )));
        }
        let pre = self.hidden_pre(x);
        let act: Vec<f64> = pre.iter().map(|z| z.max(0.0)).collect();
        let out = self.output_from(&act);
        let (b1, w2, b2) = self.offsets();
        let mut grad = vec![0.0; self.params.len()];
        let mut d_act = vec![0.0; self.hidden];
        for (o, &c) in cotangent.iter().enumerate() {
            grad[b2 + o] = c;
            for h in 0..self.hidden {
                grad[w2 + o * self.hidden + h] = c * act[h];
                d_act[h] += c * self.params[w2 + o * self.hidden + h];
            }
        }
        for h in 0..self.hidden {
            if pre[h] <= 0.0 {
                continue;
            }
            grad[b1 + h] = d_act[h];
            for i in 0..self.input_dim {
                grad[h * self.input_dim + i] = d_act[h] * x[i];
            }
        }
        Ok((out, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastics::stream;

    #[test]
    fn parameter_layout() {
        assert_eq!(Mlp::param_count_for(7, 64, 5), 7 * 64 + 64 + 64 * 5 + 5);
        let net = Mlp::new(3, 4, 2, &mut stream(0, 0)).unwrap();
        assert_eq!(net.param_count(), 12 + 4 + 8 + 2);
        assert!(Mlp::new(0, 4, 2, &mut stream(0, 0)).is_err());
    }

    #[test]
    fn hand_computed_forward() {
        let mut net = Mlp::new(2, 2, 1, &mut stream(0, 0)).unwrap();
        // h0 = relu(x0 - x1), h1 = relu(x0 + x1 - 10); out = 2 h0 + h1 + 0.5
        net.set_params(vec![1.0, -1.0, 1.0, 1.0, 0.0, -10.0, 2.0, 1.0, 0.5])
            .unwrap();
        assert_eq!(net.forward(&[3.0, 1.0]).unwrap(), vec![4.5]);
        assert_eq!(net.forward(&[1.0, 3.0]).unwrap(), vec![0.5]);
        let (_, g) = net.backward(&[3.0, 1.0], &[1.0]).unwrap();
        assert_eq!(g, vec![6.0, 2.0, 0.0, 0.0, 2.0, 0.0, 2.0, 0.0, 1.0]);
    }

    #[test]
    fn dimension_errors() {
        let net = Mlp::new(2, 3, 2, &mut stream(0, 0)).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Usage(_))));
        assert!(matches!(net.forward(&[1.0, f64::NAN]), Err(Error::Data(_))));
        assert!(net.backward(&[1.0, 2.0], &[1.0]).is_err());
    }
}
