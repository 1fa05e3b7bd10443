//! Exact masked multi-head self-attention with explicit backward.

use ndarray::{s, Array2, ArrayView2};

use super::linear::Linear;
use super::ops::{masked_softmax, softmax_backward};
use super::param::{GradView, ParamStore};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    pub wqkv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub e: usize,
}

/// Activations kept for the backward pass.
pub struct AttnCache {
    x: Array2<f64>,
    qkv: Array2<f64>,
    ctx: Array2<f64>,
    probs: Vec<Array2<f64>>,
}

impl MultiHeadAttention {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        e: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(e % heads == 0, "embedding width {e} not divisible by {heads} heads");
        MultiHeadAttention {
            wqkv: Linear::new(ps, &format!("{name}.qkv"), e, 3 * e, rng),
            wo: Linear::new(ps, &format!("{name}.proj"), e, e, rng),
            heads,
            e,
        }
    }

    pub fn forward(
        &self,
        ps: &ParamStore,
        x: &Array2<f64>,
        mask: &ArrayView2<'_, bool>,
    ) -> (Array2<f64>, AttnCache) {
        let n = x.nrows();
        let hd = self.e / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let qkv = self.wqkv.forward(ps, x);
        let mut ctx = Array2::<f64>::zeros((n, self.e));
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let q = qkv.slice(s![.., h * hd..(h + 1) * hd]);
            let k = qkv.slice(s![.., self.e + h * hd..self.e + (h + 1) * hd]);
            let v = qkv.slice(s![.., 2 * self.e + h * hd..2 * self.e + (h + 1) * hd]);
            let mut scores = q.dot(&k.t());
            scores *= scale;
            let p = masked_softmax(&scores, mask);
            let ctx_h = p.dot(&v);
            ctx.slice_mut(s![.., h * hd..(h + 1) * hd]).assign(&ctx_h);
            probs.push(p);
        }
        let y = self.wo.forward(ps, &ctx);
        (y, AttnCache { x: x.clone(), qkv, ctx, probs })
    }

    pub fn backward(
        &self,
        ps: &ParamStore,
        cache: &AttnCache,
        dy: &Array2<f64>,
        grads: &mut GradView<'_>,
    ) -> Array2<f64> {
        let n = dy.nrows();
        let hd = self.e / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let dctx = self.wo.backward(ps, &cache.ctx, dy, grads);
        let mut dqkv = Array2::<f64>::zeros((n, 3 * self.e));
        for h in 0..self.heads {
            let q = cache.qkv.slice(s![.., h * hd..(h + 1) * hd]);
            let k = cache.qkv.slice(s![.., self.e + h * hd..self.e + (h + 1) * hd]);
            let v = cache.qkv.slice(s![.., 2 * self.e + h * hd..2 * self.e + (h + 1) * hd]);
            let p = &cache.probs[h];
            let dctx_h = dctx.slice(s![.., h * hd..(h + 1) * hd]);

            let dp = dctx_h.dot(&v.t());
            let dv = p.t().dot(&dctx_h);
            let mut dscores = softmax_backward(p, &dp);
            dscores *= scale;
            let dq = dscores.dot(&k);
            let dk = dscores.t().dot(&q);

            dqkv.slice_mut(s![.., h * hd..(h + 1) * hd]).assign(&dq);
            dqkv.slice_mut(s![.., self.e + h * hd..self.e + (h + 1) * hd]).assign(&dk);
            dqkv.slice_mut(s![.., 2 * self.e + h * hd..2 * self.e + (h + 1) * hd]).assign(&dv);
        }
        self.wqkv.backward(ps, &cache.x, &dqkv, grads)
    }
}
