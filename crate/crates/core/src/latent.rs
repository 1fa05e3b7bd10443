//! Latent grids produced by slice-wise VQ encoding and depth stacking.

use ndarray::Array5;

use crate::volume::Spacing;
use crate::{Error, Result};

/// A 4D grid of latent channel vectors, shape `(d, h/f, w/f, t/f)` with
/// `emb` channels stored channel-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVolume {
    /// Indexed `(d, h', w', t', channel)`.
    pub data: Array5<f32>,
    /// Effective spacing of the latent grid (source spacing scaled by `f`
    /// on the compressed axes).
    pub spacing: Spacing,
    /// Per-axis compression factor used to produce this latent.
    pub f: usize,
    /// Hash of the codebook that quantized this latent.
    pub codebook_hash: String,
}

impl LatentVolume {
    pub fn new(
        data: Array5<f32>,
        spacing: Spacing,
        f: usize,
        codebook_hash: String,
    ) -> Result<Self> {
        let lv = LatentVolume { data, spacing, f, codebook_hash };
        lv.validate()?;
        Ok(lv)
    }

    pub fn validate(&self) -> Result<()> {
        let (d, h, w, t, c) = self.data.dim();
        if d == 0 || h == 0 || w == 0 || t == 0 || c == 0 {
            return Err(Error::shape(format!(
                "zero-sized dimension in latent ({d},{h},{w},{t},{c})"
            )));
        }
        for (i, &v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { index: i });
            }
        }
        Ok(())
    }

    pub fn emb(&self) -> usize {
        self.data.dim().4
    }

    /// Grid extents without the channel axis.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let (d, h, w, t, _) = self.data.dim();
        (d, h, w, t)
    }

    /// Total scalar count, channels included.
    pub fn numel(&self) -> usize {
        self.data.len()
    }
}
