//! Dense layers over `(rows, features)` matrices.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use super::param::{GradView, ParamStore, Tensor};

/// `y = x W + b`, weight shape `(in, out)`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: Tensor,
    pub b: Option<Tensor>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// Xavier-uniform weight, zero bias.
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = (6.0 / (d_in + d_out) as f64).sqrt();
        let w = ps.add(&format!("{name}.w"), &[d_in, d_out], || {
            use rand::Rng;
            rng.gen_range(-bound..bound)
        });
        let b = ps.zeros(&format!("{name}.b"), &[d_out]);
        Linear { w, b: Some(b), d_in, d_out }
    }

    /// All-zero weight and bias (adaLN-Zero heads).
    pub fn new_zeroed(ps: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Self {
        let w = ps.zeros(&format!("{name}.w"), &[d_in, d_out]);
        let b = ps.zeros(&format!("{name}.b"), &[d_out]);
        Linear { w, b: Some(b), d_in, d_out }
    }

    pub fn forward(&self, ps: &ParamStore, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(&ps.view2(self.w));
        if let Some(b) = self.b {
            let bv = ps.view1(b);
            for mut row in y.rows_mut() {
                row += &bv;
            }
        }
        y
    }

    /// Accumulates dW/db into `grads`, returns dL/dx.
    pub fn backward(
        &self,
        ps: &ParamStore,
        x: &Array2<f64>,
        dy: &Array2<f64>,
        grads: &mut GradView<'_>,
    ) -> Array2<f64> {
        {
            let dw = x.t().dot(dy);
            let mut gw = grads.view2_mut(self.w);
            gw += &dw;
        }
        if let Some(b) = self.b {
            let db = dy.sum_axis(ndarray::Axis(0));
            let mut gb = grads.view1_mut(b);
            gb += &db;
        }
        dy.dot(&ps.view2(self.w).t())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param::GradView;
    use ndarray::array;

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut ps = ParamStore::new();
        let mut rng = crate::rng::stream(0, &[1]);
        let lin = Linear::new(&mut ps, "t", 3, 2, &mut rng);
        let x = array![[0.5, -1.0, 2.0], [1.5, 0.3, -0.7]];
        let dy = array![[1.0, -0.5], [0.2, 0.8]];

        let mut gbuf = ps.grad_buffer();
        let mut grads = GradView::new(&ps, &mut gbuf);
        let dx = lin.backward(&ps, &x, &dy, &mut grads);

        let loss = |ps: &ParamStore, x: &Array2<f64>| -> f64 {
            lin.forward(ps, x).iter().zip(dy.iter()).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        // Parameter gradients.
        for idx in 0..ps.len() {
            let mut psp = ps.clone();
            psp.data[idx] += h;
            let mut psm = ps.clone();
            psm.data[idx] -= h;
            let fd = (loss(&psp, &x) - loss(&psm, &x)) / (2.0 * h);
            assert!((gbuf[idx] - fd).abs() < 1e-6, "param {idx}");
        }
        // Input gradients.
        for i in 0..2 {
            for j in 0..3 {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                let fd = (loss(&ps, &xp) - loss(&ps, &xm)) / (2.0 * h);
                assert!((dx[[i, j]] - fd).abs() < 1e-6);
            }
        }
    }
}
