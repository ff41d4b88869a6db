use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dense::Dense;
use super::tensor::Tensor2;
use super::Module;
use crate::error::{FalconError, Result};

/// Multi-head scaled dot-product self-attention over short token sequences.
///
/// Inputs are `(batch * tokens) x d_model`, rows of one sample contiguous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub d_model: usize,
    pub heads: usize,
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub output: Dense,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub tokens: usize,
    x: Tensor2,
    q: Tensor2,
    k: Tensor2,
    v: Tensor2,
    ctx: Tensor2,
    /// Softmax weights indexed `[((b * heads + h) * tokens + i) * tokens + j]`.
    pub weights: Vec<f64>,
}

impl AttentionCache {
    pub fn batch(&self) -> usize {
        self.x.rows / self.tokens
    }

    /// Attention of query token `i` onto key token `j` for one sample and head.
    pub fn weight(&self, heads: usize, b: usize, h: usize, i: usize, j: usize) -> f64 {
        let t = self.tokens;
        self.weights[((b * heads + h) * t + i) * t + j]
    }
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(d_model: usize, heads: usize, rng: &mut R) -> Self {
        assert!(
            heads > 0 && d_model.is_multiple_of(heads),
            "d_model must split evenly into heads"
        );
        Self {
            d_model,
            heads,
            query: Dense::init(d_model, d_model, 1.0, rng),
            key: Dense::init(d_model, d_model, 1.0, rng),
            value: Dense::init(d_model, d_model, 1.0, rng),
            output: Dense::init(d_model, d_model, 1.0, rng),
        }
    }

    fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn forward(&self, x: &Tensor2, tokens: usize) -> (Tensor2, AttentionCache) {
        assert_eq!(x.cols, self.d_model);
        assert_eq!(
            x.rows % tokens,
            0,
            "rows must be a multiple of the token count"
        );
        let batch = x.rows / tokens;
        let (hd, heads) = (self.head_dim(), self.heads);
        let scale = 1.0 / (hd as f64).sqrt();
        let q = self.query.forward(x);
        let k = self.key.forward(x);
        let v = self.value.forward(x);
        let mut ctx = Tensor2::zeros(x.rows, self.d_model);
        let mut weights = vec![0.0; batch * heads * tokens * tokens];
        let mut scores = vec![0.0; tokens];

        for b in 0..batch {
            for h in 0..heads {
                let cols = h * hd..(h + 1) * hd;
                for i in 0..tokens {
                    let qi = &q.row(b * tokens + i)[cols.clone()];
                    let mut max = f64::NEG_INFINITY;
                    for (j, s) in scores.iter_mut().enumerate() {
                        let kj = &k.row(b * tokens + j)[cols.clone()];
                        *s = scale * qi.iter().zip(kj).map(|(a, c)| a * c).sum::<f64>();
                        max = max.max(*s);
                    }
                    let mut z = 0.0;
                    for s in scores.iter_mut() {
                        *s = (*s - max).exp();
                        z += *s;
                    }
                    let base = ((b * heads + h) * tokens + i) * tokens;
                    for j in 0..tokens {
                        let a = scores[j] / z;
                        weights[base + j] = a;
                        let vj = &v.row(b * tokens + j)[cols.clone()];
                        let out = &mut ctx.row_mut(b * tokens + i)[cols.clone()];
                        for (o, vv) in out.iter_mut().zip(vj) {
                            *o += a * vv;
                        }
                    }
                }
            }
        }
        let out = self.output.forward(&ctx);
        let cache = AttentionCache {
            tokens,
            x: x.clone(),
            q,
            k,
            v,
            ctx,
            weights,
        };
        (out, cache)
    }

    /// `grads` is laid out like [`Module::params`]: q, k, v, o (weight, bias each).
    pub fn backward(
        &self,
        cache: &AttentionCache,
        dout: &Tensor2,
        grads: &mut [Vec<f64>],
    ) -> Tensor2 {
        let tokens = cache.tokens;
        let batch = cache.batch();
        let (hd, heads) = (self.head_dim(), self.heads);
        let scale = 1.0 / (hd as f64).sqrt();
        let [gq_w, gq_b, gk_w, gk_b, gv_w, gv_b, go_w, go_b] = grads else {
            panic!("attention expects eight gradient buffers");
        };

        let dctx = self.output.backward(&cache.ctx, dout, go_w, go_b);
        let mut dq = Tensor2::zeros(cache.x.rows, self.d_model);
        let mut dk = Tensor2::zeros(cache.x.rows, self.d_model);
        let mut dv = Tensor2::zeros(cache.x.rows, self.d_model);
        let mut da = vec![0.0; tokens];

        for b in 0..batch {
            for h in 0..heads {
                let cols = h * hd..(h + 1) * hd;
                for i in 0..tokens {
                    let ri = b * tokens + i;
                    let base = ((b * heads + h) * tokens + i) * tokens;
                    let a = &cache.weights[base..base + tokens];
                    let gi = &dctx.row(ri)[cols.clone()];
                    for j in 0..tokens {
                        let rj = b * tokens + j;
                        let vj = &cache.v.row(rj)[cols.clone()];
                        da[j] = gi.iter().zip(vj).map(|(g, v)| g * v).sum();
                        let dvj = &mut dv.row_mut(rj)[cols.clone()];
                        for (d, g) in dvj.iter_mut().zip(gi) {
                            *d += a[j] * g;
                        }
                    }
                    let dot: f64 = a.iter().zip(&da).map(|(x, y)| x * y).sum();
                    for j in 0..tokens {
                        let ds = a[j] * (da[j] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let rj = b * tokens + j;
                        for c in cols.clone() {
                            dq.data[ri * self.d_model + c] +=
                                ds * cache.k.data[rj * self.d_model + c];
                            dk.data[rj * self.d_model + c] +=
                                ds * cache.q.data[ri * self.d_model + c];
                        }
                    }
                }
            }
        }

        let mut dx = self.query.backward(&cache.x, &dq, gq_w, gq_b);
        let dxk = self.key.backward(&cache.x, &dk, gk_w, gk_b);
        let dxv = self.value.backward(&cache.x, &dv, gv_w, gv_b);
        for ((d, a), b) in dx.data.iter_mut().zip(&dxk.data).zip(&dxv.data) {
            *d += a + b;
        }
        dx
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d_model;
        let ok = self.heads > 0
            && d.is_multiple_of(self.heads)
            && [&self.query, &self.key, &self.value, &self.output]
                .iter()
                .all(|l| l.fan_in() == d && l.fan_out() == d && l.bias.len() == d);
        if ok {
            Ok(())
        } else {
            Err(FalconError::Format(
                "attention block shapes are inconsistent".into(),
            ))
        }
    }
}

impl Module for MultiHeadAttention {
    fn params(&self) -> Vec<&[f64]> {
        [&self.query, &self.key, &self.value, &self.output]
            .into_iter()
            .flat_map(|l| l.params())
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        [
            &mut self.query,
            &mut self.key,
            &mut self.value,
            &mut self.output,
        ]
        .into_iter()
        .flat_map(|l| l.params_mut())
        .collect()
    }
}
