//! 3D convolution over (channel, h, w, t) blocks via chunked im2col, plus
//! nearest-neighbor upsampling. Used by the slice autoencoder.

use ndarray::{Array2, Array4};
use rand_chacha::ChaCha8Rng;

use super::param::{GradView, ParamStore, Tensor};

/// Cubic-kernel 3D convolution. Weight is stored as
/// `(c_out, c_in * k^3)` with the kernel block nested (c_in, kh, kw, kt),
/// kt fastest; im2col gathers columns in the same order.
#[derive(Debug, Clone, Copy)]
pub struct Conv3 {
    pub w: Tensor,
    pub b: Tensor,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Bound on im2col chunk size (rows x cols of f64).
const CHUNK_BUDGET: usize = 1 << 21;

impl Conv3 {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = (c_in * k * k * k) as f64;
        let bound = (1.0 / fan_in).sqrt();
        let w = ps.add(&format!("{name}.w"), &[c_out, c_in * k * k * k], || {
            use rand::Rng;
            rng.gen_range(-bound..bound)
        });
        let b = ps.zeros(&format!("{name}.b"), &[c_out]);
        Conv3 { w, b, c_in, c_out, k, stride, pad }
    }

    pub fn out_dims(&self, h: usize, w: usize, t: usize) -> (usize, usize, usize) {
        let o = |n: usize| (n + 2 * self.pad - self.k) / self.stride + 1;
        (o(h), o(w), o(t))
    }

    fn fill_col_chunk(
        &self,
        x: &Array4<f64>,
        out_hw: (usize, usize, usize),
        h0: usize,
        h1: usize,
        col: &mut Array2<f64>,
    ) {
        let (_, wo, to) = out_hw;
        let (_, h, w, t) = x.dim();
        let k = self.k;
        let mut row = 0;
        for ho in h0..h1 {
            for woi in 0..wo {
                for toi in 0..to {
                    let mut c = 0;
                    for ci in 0..self.c_in {
                        for dh in 0..k {
                            let ih = (ho * self.stride + dh) as isize - self.pad as isize;
                            for dw in 0..k {
                                let iw = (woi * self.stride + dw) as isize - self.pad as isize;
                                for dt in 0..k {
                                    let it = (toi * self.stride + dt) as isize - self.pad as isize;
                                    col[[row, c]] = if ih >= 0
                                        && iw >= 0
                                        && it >= 0
                                        && (ih as usize) < h
                                        && (iw as usize) < w
                                        && (it as usize) < t
                                    {
                                        x[[ci, ih as usize, iw as usize, it as usize]]
                                    } else {
                                        0.0
                                    };
                                    c += 1;
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    fn chunk_rows(&self, wo: usize, to: usize) -> usize {
        let cols = self.c_in * self.k * self.k * self.k;
        (CHUNK_BUDGET / (cols * wo * to).max(1)).max(1)
    }

    pub fn forward(&self, ps: &ParamStore, x: &Array4<f64>) -> Array4<f64> {
        let (ci, h, w, t) = x.dim();
        assert_eq!(ci, self.c_in);
        let (ho, wo, to) = self.out_dims(h, w, t);
        let wmat = ps.view2(self.w);
        let bias = ps.view1(self.b);
        let mut out = Array4::<f64>::zeros((self.c_out, ho, wo, to));
        let cols = self.c_in * self.k * self.k * self.k;
        let chunk = self.chunk_rows(wo, to);

        let mut h0 = 0;
        while h0 < ho {
            let h1 = (h0 + chunk).min(ho);
            let rows = (h1 - h0) * wo * to;
            let mut col = Array2::<f64>::zeros((rows, cols));
            self.fill_col_chunk(x, (ho, wo, to), h0, h1, &mut col);
            let y = col.dot(&wmat.t()); // (rows, c_out)
            let mut row = 0;
            for hoi in h0..h1 {
                for woi in 0..wo {
                    for toi in 0..to {
                        for co in 0..self.c_out {
                            out[[co, hoi, woi, toi]] = y[[row, co]] + bias[co];
                        }
                        row += 1;
                    }
                }
            }
            h0 = h1;
        }
        out
    }

    /// Accumulates dW/db, returns dL/dx. Rebuilds im2col chunks instead of
    /// caching them.
    pub fn backward(
        &self,
        ps: &ParamStore,
        x: &Array4<f64>,
        dy: &Array4<f64>,
        grads: &mut GradView<'_>,
    ) -> Array4<f64> {
        let (_, h, w, t) = x.dim();
        let (ho, wo, to) = self.out_dims(h, w, t);
        assert_eq!(dy.dim(), (self.c_out, ho, wo, to));
        let wmat = ps.view2(self.w);
        let cols = self.c_in * self.k * self.k * self.k;
        let chunk = self.chunk_rows(wo, to);
        let mut dx = Array4::<f64>::zeros(x.raw_dim());
        let k = self.k;

        let mut h0 = 0;
        while h0 < ho {
            let h1 = (h0 + chunk).min(ho);
            let rows = (h1 - h0) * wo * to;
            let mut col = Array2::<f64>::zeros((rows, cols));
            self.fill_col_chunk(x, (ho, wo, to), h0, h1, &mut col);

            // Gather dy for this chunk as (rows, c_out).
            let mut dy_mat = Array2::<f64>::zeros((rows, self.c_out));
            let mut row = 0;
            for hoi in h0..h1 {
                for woi in 0..wo {
                    for toi in 0..to {
                        for co in 0..self.c_out {
                            dy_mat[[row, co]] = dy[[co, hoi, woi, toi]];
                        }
                        row += 1;
                    }
                }
            }

            {
                let dw = dy_mat.t().dot(&col);
                let mut gw = grads.view2_mut(self.w);
                gw += &dw;
            }
            {
                let db = dy_mat.sum_axis(ndarray::Axis(0));
                let mut gb = grads.view1_mut(self.b);
                gb += &db;
            }

            // Scatter-add dcol back into dx.
            let dcol = dy_mat.dot(&wmat);
            let mut row = 0;
            for hoi in h0..h1 {
                for woi in 0..wo {
                    for toi in 0..to {
                        let mut c = 0;
                        for ci in 0..self.c_in {
                            for dh in 0..k {
                                let ih = (hoi * self.stride + dh) as isize - self.pad as isize;
                                for dw_ in 0..k {
                                    let iw =
                                        (woi * self.stride + dw_) as isize - self.pad as isize;
                                    for dt in 0..k {
                                        let it =
                                            (toi * self.stride + dt) as isize - self.pad as isize;
                                        if ih >= 0
                                            && iw >= 0
                                            && it >= 0
                                            && (ih as usize) < h
                                            && (iw as usize) < w
                                            && (it as usize) < t
                                        {
                                            dx[[ci, ih as usize, iw as usize, it as usize]] +=
                                                dcol[[row, c]];
                                        }
                                        c += 1;
                                    }
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
            h0 = h1;
        }
        dx
    }
}

/// Nearest-neighbor x2 upsampling over (h, w, t).
pub fn upsample2(x: &Array4<f64>) -> Array4<f64> {
    let (c, h, w, t) = x.dim();
    Array4::from_shape_fn((c, 2 * h, 2 * w, 2 * t), |(ci, i, j, l)| x[[ci, i / 2, j / 2, l / 2]])
}

/// Backward of [`upsample2`]: sums gradients over each 2x2x2 block.
pub fn upsample2_backward(dy: &Array4<f64>) -> Array4<f64> {
    let (c, h2, w2, t2) = dy.dim();
    let mut dx = Array4::<f64>::zeros((c, h2 / 2, w2 / 2, t2 / 2));
    for ci in 0..c {
        for i in 0..h2 {
            for j in 0..w2 {
                for l in 0..t2 {
                    dx[[ci, i / 2, j / 2, l / 2]] += dy[[ci, i, j, l]];
                }
            }
        }
    }
    dx
}
