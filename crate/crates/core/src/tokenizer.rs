//! 4D patchification, sine-cosine positional encodings, and the attention
//! masks that realize full vs slice-factorized spatiotemporal coupling.
//!
//! Token ordering is fixed: d-major, t-fastest. Within a token, patch
//! elements nest as (d, h, w, t, channel) with the channel fastest. Masks,
//! positional tables, and `unpatchify` all assume this one ordering.

use ndarray::{Array2, Array5, ArrayView5};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Patch extents per axis `(p_d, p_h, p_w, p_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub p_d: usize,
    pub p_h: usize,
    pub p_w: usize,
    pub p_t: usize,
}

impl PatchSpec {
    pub const fn new(p_d: usize, p_h: usize, p_w: usize, p_t: usize) -> Self {
        PatchSpec { p_d, p_h, p_w, p_t }
    }

    pub fn volume(&self) -> usize {
        self.p_d * self.p_h * self.p_w * self.p_t
    }

    /// Patch-grid extents for a latent of the given dims, or an error when
    /// any extent does not divide.
    pub fn grid_for(
        &self,
        dims: (usize, usize, usize, usize),
    ) -> Result<(usize, usize, usize, usize)> {
        let (d, h, w, t) = dims;
        for (name, dim, p) in [
            ("d", d, self.p_d),
            ("h", h, self.p_h),
            ("w", w, self.p_w),
            ("t", t, self.p_t),
        ] {
            if p == 0 || dim % p != 0 {
                return Err(Error::shape(format!(
                    "patch extent {p} does not divide latent {name} = {dim}"
                )));
            }
        }
        Ok((d / self.p_d, h / self.p_h, w / self.p_w, t / self.p_t))
    }
}

impl Default for PatchSpec {
    fn default() -> Self {
        PatchSpec::new(1, 4, 4, 2)
    }
}

/// N tokens of equal width, plus the patch grid they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    /// `(N, token_width)`, token_width = patch volume x channels.
    pub tokens: Array2<f64>,
    pub grid: (usize, usize, usize, usize),
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Token index for patch-grid coordinates, d-major with t fastest.
#[inline]
pub fn token_index(grid: (usize, usize, usize, usize), p: (usize, usize, usize, usize)) -> usize {
    ((p.0 * grid.1 + p.1) * grid.2 + p.2) * grid.3 + p.3
}

/// Splits a latent grid `(d, h, w, t, c)` into flattened non-overlapping
/// patches.
pub fn patchify(latent: ArrayView5<'_, f64>, spec: &PatchSpec) -> Result<TokenSequence> {
    let (d, h, w, t, c) = latent.dim();
    let grid = spec.grid_for((d, h, w, t))?;
    let n = grid.0 * grid.1 * grid.2 * grid.3;
    let width = spec.volume() * c;
    let mut tokens = Array2::<f64>::zeros((n, width));

    for gd in 0..grid.0 {
        for gh in 0..grid.1 {
            for gw in 0..grid.2 {
                for gt in 0..grid.3 {
                    let k = token_index(grid, (gd, gh, gw, gt));
                    let mut row = tokens.row_mut(k);
                    let mut off = 0;
                    for dd in 0..spec.p_d {
                        for hh in 0..spec.p_h {
                            for ww in 0..spec.p_w {
                                for tt in 0..spec.p_t {
                                    for ch in 0..c {
                                        row[off] = latent[[
                                            gd * spec.p_d + dd,
                                            gh * spec.p_h + hh,
                                            gw * spec.p_w + ww,
                                            gt * spec.p_t + tt,
                                            ch,
                                        ]];
                                        off += 1;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(TokenSequence { tokens, grid })
}

/// Exact inverse of [`patchify`].
pub fn unpatchify(
    seq: &TokenSequence,
    spec: &PatchSpec,
    dims: (usize, usize, usize, usize),
    channels: usize,
) -> Result<Array5<f64>> {
    let grid = spec.grid_for(dims)?;
    if grid != seq.grid {
        return Err(Error::shape(format!(
            "token grid {:?} inconsistent with dims {:?} / spec {:?}",
            seq.grid, dims, spec
        )));
    }
    let n = grid.0 * grid.1 * grid.2 * grid.3;
    let width = spec.volume() * channels;
    if seq.tokens.dim() != (n, width) {
        return Err(Error::shape(format!(
            "token matrix {:?} inconsistent with expected ({n}, {width})",
            seq.tokens.dim()
        )));
    }
    let mut out = Array5::<f64>::zeros((dims.0, dims.1, dims.2, dims.3, channels));
    for gd in 0..grid.0 {
        for gh in 0..grid.1 {
            for gw in 0..grid.2 {
                for gt in 0..grid.3 {
                    let k = token_index(grid, (gd, gh, gw, gt));
                    let row = seq.tokens.row(k);
                    let mut off = 0;
                    for dd in 0..spec.p_d {
                        for hh in 0..spec.p_h {
                            for ww in 0..spec.p_w {
                                for tt in 0..spec.p_t {
                                    for ch in 0..channels {
                                        out[[
                                            gd * spec.p_d + dd,
                                            gh * spec.p_h + hh,
                                            gw * spec.p_w + ww,
                                            gt * spec.p_t + tt,
                                            ch,
                                        ]] = row[off];
                                        off += 1;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Standard 1D sine-cosine encoding of `pos` into `out` (length E, E even):
/// first E/2 sines, then E/2 cosines, frequencies 10000^(-2j/E).
fn sincos_1d(pos: f64, out: &mut [f64]) {
    let half = out.len() / 2;
    for j in 0..half {
        let omega = 1.0 / 10000f64.powf(2.0 * j as f64 / out.len() as f64);
        out[j] = (pos * omega).sin();
        out[half + j] = (pos * omega).cos();
    }
}

/// 4D sine-cosine positional table: `e` splits into four equal blocks, one
/// per axis in order (d, h, w, t); rows follow token ordering.
pub fn posenc_4d(grid: (usize, usize, usize, usize), e: usize) -> Result<Array2<f64>> {
    if e == 0 || e % 8 != 0 {
        return Err(Error::config(format!(
            "positional encoding width must be a positive multiple of 8, got {e}"
        )));
    }
    let block = e / 4;
    let n = grid.0 * grid.1 * grid.2 * grid.3;
    let mut table = Array2::<f64>::zeros((n, e));
    for gd in 0..grid.0 {
        for gh in 0..grid.1 {
            for gw in 0..grid.2 {
                for gt in 0..grid.3 {
                    let k = token_index(grid, (gd, gh, gw, gt));
                    let mut row = table.row_mut(k);
                    let coords = [gd as f64, gh as f64, gw as f64, gt as f64];
                    for (a, &pos) in coords.iter().enumerate() {
                        sincos_1d(
                            pos,
                            &mut row.as_slice_mut().unwrap()[a * block..(a + 1) * block],
                        );
                    }
                }
            }
        }
    }
    Ok(table)
}

/// Spatiotemporal coupling realized as an attention mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Every token attends to every token: the joint 4D model.
    Full,
    /// Tokens attend only within their own depth slice: the factorized
    /// baseline on the same backbone at the same capacity.
    SliceFactorized,
}

impl std::fmt::Display for MaskMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MaskMode::Full => write!(f, "full"),
            MaskMode::SliceFactorized => write!(f, "slice_factorized"),
        }
    }
}

/// Boolean N x N attention relation for the given grid and mode.
pub fn build_attention_mask(grid: (usize, usize, usize, usize), mode: MaskMode) -> Array2<bool> {
    let n = grid.0 * grid.1 * grid.2 * grid.3;
    match mode {
        MaskMode::Full => Array2::from_elem((n, n), true),
        MaskMode::SliceFactorized => {
            let per_slice = grid.1 * grid.2 * grid.3;
            Array2::from_shape_fn((n, n), |(i, j)| i / per_slice == j / per_slice)
        }
    }
}
