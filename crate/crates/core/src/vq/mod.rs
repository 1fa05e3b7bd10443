//! Spatiotemporal vector-quantized autoencoder, trained on random depth
//! slices and applied slice-by-slice to build stacked 3D+t latents.

mod ckpt;
mod model;
mod train;

pub use ckpt::{load_checkpoint, save_checkpoint, VqManifest};
pub use model::VqModel;
pub use train::{train_vq, VqTrainReport};

use ndarray::{Array3, Array4, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VqConfig {
    /// Per-axis compression factor over (h, w, t); must be a power of two.
    pub f: usize,
    /// Codebook size c'.
    pub codebook_size: usize,
    /// Embedding dimension per latent position.
    pub emb: usize,
    /// Commitment weight.
    pub beta: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Encoder widths per downsampling stage; length must equal log2(f).
    pub enc_channels: Vec<usize>,
    pub seed: u64,
}

impl Default for VqConfig {
    fn default() -> Self {
        // Desk-scale defaults; f = 8 / c' = 4096 remain configurable.
        VqConfig {
            f: 4,
            codebook_size: 256,
            emb: 8,
            beta: 0.25,
            epochs: 50,
            lr: 1e-3,
            batch_size: 8,
            enc_channels: vec![16, 32],
            seed: 0,
        }
    }
}

impl VqConfig {
    pub fn stages(&self) -> usize {
        self.f.trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.f == 0 || !self.f.is_power_of_two() {
            return Err(Error::config(format!("f must be a power of two, got {}", self.f)));
        }
        if self.codebook_size < 2 {
            return Err(Error::config("codebook needs at least 2 entries"));
        }
        if self.emb == 0 {
            return Err(Error::config("emb must be >= 1"));
        }
        if self.enc_channels.len() != self.stages() {
            return Err(Error::config(format!(
                "enc_channels must have log2(f) = {} entries, got {}",
                self.stages(),
                self.enc_channels.len()
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// Result of quantizing one activation grid.
pub struct Quantized {
    /// Snapped activations, same shape as the input `(emb, h', w', t')`.
    pub z_q: Array4<f64>,
    /// Selected codebook index per position.
    pub indices: Array3<usize>,
    /// mean ||sg(z_e) - z_q||^2 over all elements.
    pub codebook_loss: f64,
    /// mean ||z_e - sg(z_q)||^2 over all elements.
    pub commitment_loss: f64,
}

/// Nearest-codeword quantization. Ties resolve to the lowest index.
pub fn vq_quantize(z_e: &Array4<f64>, codebook: ArrayView2<'_, f64>) -> Result<Quantized> {
    let (emb, h, w, t) = z_e.dim();
    let c = codebook.nrows();
    if c == 0 {
        return Err(Error::config("empty codebook"));
    }
    if codebook.ncols() != emb {
        return Err(Error::shape(format!(
            "activation channels {emb} do not match codebook dimension {}",
            codebook.ncols()
        )));
    }
    let mut z_q = Array4::<f64>::zeros(z_e.raw_dim());
    let mut indices = Array3::<usize>::zeros((h, w, t));
    let mut dist_total = 0.0;
    for hi in 0..h {
        for wi in 0..w {
            for ti in 0..t {
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for k in 0..c {
                    let mut dsq = 0.0;
                    for ch in 0..emb {
                        let dv = z_e[[ch, hi, wi, ti]] - codebook[[k, ch]];
                        dsq += dv * dv;
                    }
                    if dsq < best_d {
                        best_d = dsq;
                        best = k;
                    }
                }
                indices[[hi, wi, ti]] = best;
                for ch in 0..emb {
                    z_q[[ch, hi, wi, ti]] = codebook[[best, ch]];
                }
                dist_total += best_d;
            }
        }
    }
    let numel = (emb * h * w * t) as f64;
    // The two losses coincide in value; they differ in which side the
    // gradient reaches (codebook entries vs encoder output).
    let mean_dist = dist_total / numel;
    Ok(Quantized { z_q, indices, codebook_loss: mean_dist, commitment_loss: mean_dist })
}
