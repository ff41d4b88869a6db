use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor2;
use super::Module;
use crate::error::{FalconError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, t: &mut Tensor2) {
        if self == Activation::Relu {
            for v in &mut t.data {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }

    /// Gates `grad` in place using the post-activation values `out`.
    fn backprop(self, out: &Tensor2, grad: &mut Tensor2) {
        if self == Activation::Relu {
            for (g, o) in grad.data.iter_mut().zip(&out.data) {
                if *o <= 0.0 {
                    *g = 0.0;
                }
            }
        }
    }
}

/// Fully connected layer `y = x W + b` with `W` stored as in x out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Tensor2,
    pub bias: Vec<f64>,
}

impl Dense {
    /// Gaussian init with standard deviation `gain / sqrt(fan_in)`.
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, gain: f64, rng: &mut R) -> Self {
        let std = gain / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            weights: Tensor2::from_vec(fan_in, fan_out, data),
            bias: vec![0.0; fan_out],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.rows
    }

    pub fn fan_out(&self) -> usize {
        self.weights.cols
    }

    pub fn forward(&self, x: &Tensor2) -> Tensor2 {
        let mut y = x.matmul(&self.weights);
        y.add_row_vector(&self.bias);
        y
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&self, x: &Tensor2, dy: &Tensor2, gw: &mut [f64], gb: &mut [f64]) -> Tensor2 {
        let dw = x.matmul_tn(dy);
        for (g, d) in gw.iter_mut().zip(&dw.data) {
            *g += d;
        }
        dy.add_column_sums_to(gb);
        dy.matmul_nt(&self.weights)
    }
}

impl Module for Dense {
    fn params(&self) -> Vec<&[f64]> {
        vec![&self.weights.data, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weights.data, &mut self.bias]
    }
}

/// Stack of dense layers, each followed by its own activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub layers: Vec<Dense>,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// `outputs[0]` is the input; `outputs[i + 1]` is layer i after activation.
    pub outputs: Vec<Tensor2>,
}

impl MlpCache {
    pub fn output(&self) -> &Tensor2 {
        self.outputs.last().expect("cache holds at least the input")
    }
}

impl Mlp {
    /// ReLU on hidden layers, `last` on the final layer.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], last: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let n = sizes.len() - 1;
        let activations: Vec<_> = (0..n)
            .map(|i| if i + 1 == n { last } else { Activation::Relu })
            .collect();
        let layers = (0..n)
            .map(|i| {
                let gain = if activations[i] == Activation::Relu {
                    2f64.sqrt()
                } else {
                    1.0
                };
                Dense::init(sizes[i], sizes[i + 1], gain, rng)
            })
            .collect();
        Self {
            sizes: sizes.to_vec(),
            activations,
            layers,
        }
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn forward(&self, x: &Tensor2) -> Tensor2 {
        let mut h = x.clone();
        for (layer, act) in self.layers.iter().zip(&self.activations) {
            h = layer.forward(&h);
            act.apply(&mut h);
        }
        h
    }

    pub fn forward_cached(&self, x: &Tensor2) -> MlpCache {
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(x.clone());
        for (layer, act) in self.layers.iter().zip(&self.activations) {
            let mut h = layer.forward(outputs.last().unwrap());
            act.apply(&mut h);
            outputs.push(h);
        }
        MlpCache { outputs }
    }

    /// `grads` must be laid out like [`Module::params`].
    pub fn backward(&self, cache: &MlpCache, dout: &Tensor2, grads: &mut [Vec<f64>]) -> Tensor2 {
        let mut g = dout.clone();
        for i in (0..self.layers.len()).rev() {
            self.activations[i].backprop(&cache.outputs[i + 1], &mut g);
            let (gw, rest) = grads[2 * i..].split_at_mut(1);
            g = self.layers[i].backward(&cache.outputs[i], &g, &mut gw[0], &mut rest[0]);
        }
        g
    }

    /// Checks shapes after deserialization.
    pub fn validate(&self) -> Result<()> {
        let ok = self.sizes.len() == self.layers.len() + 1
            && self.activations.len() == self.layers.len()
            && self.layers.iter().enumerate().all(|(i, l)| {
                l.weights.rows == self.sizes[i]
                    && l.weights.cols == self.sizes[i + 1]
                    && l.bias.len() == self.sizes[i + 1]
                    && l.weights.data.len() == l.weights.rows * l.weights.cols
            });
        if ok {
            Ok(())
        } else {
            Err(FalconError::Format(
                "MLP layer shapes are inconsistent".into(),
            ))
        }
    }
}

impl Module for Mlp {
    fn params(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }
}
