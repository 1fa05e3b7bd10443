//! Elementwise activations, layer normalization, and masked softmax with
//! hand-written backward passes.

use ndarray::{Array1, Array2, ArrayView2};

const FRAC_2_SQRT_PI: f64 = 0.7978845608028654; // sqrt(2/pi)

/// Tanh-approximate GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (FRAC_2_SQRT_PI * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_prime(x: f64) -> f64 {
    let u = FRAC_2_SQRT_PI * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = FRAC_2_SQRT_PI * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn silu_prime(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

pub fn gelu_map(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(gelu)
}

/// dL/dx for y = gelu(x), given x and dL/dy.
pub fn gelu_backward(x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(x, |g, &xv| *g *= gelu_prime(xv));
    dx
}

pub const LN_EPS: f64 = 1e-6;

/// Row-wise layer normalization without learned affine.
/// Returns (normalized, inverse std per row).
pub fn layernorm(x: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let n = x.ncols() as f64;
    let mut out = x.clone();
    let mut inv_std = Array1::<f64>::zeros(x.nrows());
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let mean = row.sum() / n;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / n;
        let is = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| v * is);
        inv_std[i] = is;
    }
    (out, inv_std)
}

/// Backward for [`layernorm`]: `xhat` is the normalized output,
/// `inv_std` the per-row inverse standard deviation.
pub fn layernorm_backward(
    xhat: &Array2<f64>,
    inv_std: &Array1<f64>,
    dy: &Array2<f64>,
) -> Array2<f64> {
    let n = xhat.ncols() as f64;
    let mut dx = Array2::<f64>::zeros(xhat.raw_dim());
    for i in 0..xhat.nrows() {
        let xh = xhat.row(i);
        let g = dy.row(i);
        let mean_g = g.sum() / n;
        let mean_gx = g.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
        let is = inv_std[i];
        for j in 0..xhat.ncols() {
            dx[[i, j]] = is * (g[j] - mean_g - xh[j] * mean_gx);
        }
    }
    dx
}

/// Row-wise softmax over allowed positions; disallowed entries become 0.
/// Rows with no allowed positions stay all-zero.
pub fn masked_softmax(logits: &Array2<f64>, mask: &ArrayView2<'_, bool>) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros(logits.raw_dim());
    for i in 0..logits.nrows() {
        let mut max = f64::NEG_INFINITY;
        for j in 0..logits.ncols() {
            if mask[[i, j]] && logits[[i, j]] > max {
                max = logits[[i, j]];
            }
        }
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut sum = 0.0;
        for j in 0..logits.ncols() {
            if mask[[i, j]] {
                let v = (logits[[i, j]] - max).exp();
                out[[i, j]] = v;
                sum += v;
            }
        }
        for j in 0..logits.ncols() {
            out[[i, j]] /= sum;
        }
    }
    out
}

/// Backward for [`masked_softmax`]: dL/dlogits given probabilities `p`
/// and dL/dp. Masked positions produce zero gradient automatically since
/// their probability is zero.
pub fn softmax_backward(p: &Array2<f64>, dp: &Array2<f64>) -> Array2<f64> {
    let mut dl = Array2::<f64>::zeros(p.raw_dim());
    for i in 0..p.nrows() {
        let dot = p.row(i).iter().zip(dp.row(i).iter()).map(|(a, b)| a * b).sum::<f64>();
        for j in 0..p.ncols() {
            dl[[i, j]] = p[[i, j]] * (dp[[i, j]] - dot);
        }
    }
    dl
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn finite_diff(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn activation_derivatives_match_finite_differences() {
        for &x in &[-2.3, -0.5, 0.0, 0.7, 1.9] {
            assert!((gelu_prime(x) - finite_diff(gelu, x)).abs() < 1e-8);
            assert!((silu_prime(x) - finite_diff(silu, x)).abs() < 1e-8);
        }
    }

    #[test]
    fn layernorm_rows_are_standardized() {
        let x = array![[1.0, 2.0, 3.0, 4.0], [-1.0, 0.0, 5.0, 2.0]];
        let (y, _) = layernorm(&x);
        for row in y.rows() {
            let mean: f64 = row.sum() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn layernorm_backward_matches_finite_differences() {
        let x = array![[0.3, -1.2, 0.8, 2.0, -0.1]];
        let dy = array![[0.5, -0.2, 1.0, 0.1, -0.7]];
        let (xhat, inv_std) = layernorm(&x);
        let dx = layernorm_backward(&xhat, &inv_std, &dy);
        let h = 1e-6;
        for j in 0..5 {
            let mut xp = x.clone();
            xp[[0, j]] += h;
            let mut xm = x.clone();
            xm[[0, j]] -= h;
            let (yp, _) = layernorm(&xp);
            let (ym, _) = layernorm(&xm);
            let lp: f64 = yp.iter().zip(dy.iter()).map(|(a, b)| a * b).sum();
            let lm: f64 = ym.iter().zip(dy.iter()).map(|(a, b)| a * b).sum();
            let fd = (lp - lm) / (2.0 * h);
            assert!((dx[[0, j]] - fd).abs() < 1e-6, "j={j}: {} vs {fd}", dx[[0, j]]);
        }
    }

    #[test]
    fn softmax_respects_mask() {
        let logits = array![[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]];
        let mask = array![[true, false, true], [true, true, true]];
        let p = masked_softmax(&logits, &mask.view());
        assert_eq!(p[[0, 1]], 0.0);
        assert!((p.row(0).sum() - 1.0).abs() < 1e-12);
        assert!((p[[1, 0]] - 1.0 / 3.0).abs() < 1e-12);
    }
}
