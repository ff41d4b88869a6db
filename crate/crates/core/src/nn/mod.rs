//! Minimal dense and attention layers with hand-written backpropagation.

mod adam;
mod attention;
mod dense;
mod tensor;

pub use adam::Adam;
pub use attention::{AttentionCache, MultiHeadAttention};
pub use dense::{Activation, Dense, Mlp, MlpCache};
pub use tensor::Tensor2;

/// Anything with trainable parameters exposed as flat groups.
///
/// The order of groups is stable and shared by gradient buffers.
pub trait Module {
    fn params(&self) -> Vec<&[f64]>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|p| vec![0.0; p.len()]).collect()
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn params_finite(&self) -> bool {
        self.params()
            .iter()
            .all(|p| p.iter().all(|v| v.is_finite()))
    }
}

pub fn scale_grads(grads: &mut [Vec<f64>], s: f64) {
    for g in grads.iter_mut().flatten() {
        *g *= s;
    }
}

pub fn add_grads(acc: &mut [Vec<f64>], other: &[Vec<f64>]) {
    for (a, b) in acc.iter_mut().zip(other) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}
