//! The shared 4D grid container and the preprocessing transforms.

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Physical step sizes: mm per depth slice, mm per row, mm per column,
/// seconds per frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub d_mm: f64,
    pub h_mm: f64,
    pub w_mm: f64,
    pub t_s: f64,
}

impl Spacing {
    pub const fn new(d_mm: f64, h_mm: f64, w_mm: f64, t_s: f64) -> Self {
        Spacing { d_mm, h_mm, w_mm, t_s }
    }

    pub fn is_valid(&self) -> bool {
        self.d_mm > 0.0 && self.h_mm > 0.0 && self.w_mm > 0.0 && self.t_s > 0.0
    }

    /// Voxel volume in mm^3.
    pub fn voxel_mm3(&self) -> f64 {
        self.d_mm * self.h_mm * self.w_mm
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.d_mm, self.h_mm, self.w_mm, self.t_s]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Spacing::new(a[0], a[1], a[2], a[3])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeKind {
    Image,
    Mask,
}

/// A dense real-valued grid indexed `(d, h, w, t)` with physical spacing.
///
/// Single channel throughout; masks hold exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume4D {
    pub data: Array4<f32>,
    pub spacing: Spacing,
    pub kind: VolumeKind,
}

impl Volume4D {
    /// Builds a volume and checks every invariant: nonzero dims, positive
    /// spacing, finite values, binary masks.
    pub fn new(data: Array4<f32>, spacing: Spacing, kind: VolumeKind) -> Result<Self> {
        let v = Volume4D { data, spacing, kind };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        let (d, h, w, t) = self.data.dim();
        if d == 0 || h == 0 || w == 0 || t == 0 {
            return Err(Error::shape(format!("zero-sized dimension in ({d},{h},{w},{t})")));
        }
        if !self.spacing.is_valid() {
            return Err(Error::config(format!("non-positive spacing {:?}", self.spacing)));
        }
        for (i, &v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { index: i });
            }
            if self.kind == VolumeKind::Mask && v != 0.0 && v != 1.0 {
                return Err(Error::NotBinary { index: i, value: v });
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.data.dim()
    }
}

/// Standardizes the frame count by cyclic repetition: output frame `i` is
/// input frame `i mod t`. Temporal spacing is unchanged.
pub fn cyclic_time_resample(v: &Volume4D, t_target: usize) -> Result<Volume4D> {
    let (d, h, w, t) = v.dims();
    if t_target == 0 {
        return Err(Error::config("t_target must be >= 1"));
    }
    if t_target == t {
        return Ok(v.clone());
    }
    let mut out = Array4::<f32>::zeros((d, h, w, t_target));
    for i in 0..t_target {
        out.index_axis_mut(ndarray::Axis(3), i)
            .assign(&v.data.index_axis(ndarray::Axis(3), i % t));
    }
    Ok(Volume4D { data: out, spacing: v.spacing, kind: v.kind })
}

/// Per spatial axis: symmetric center crop when the input is larger,
/// symmetric zero pad when smaller. An odd surplus or deficit places the
/// extra element on the high-index side. The t axis is untouched.
pub fn crop_or_pad(v: &Volume4D, target: (usize, usize, usize)) -> Result<Volume4D> {
    let (d, h, w, t) = v.dims();
    let (td, th, tw) = target;
    if td == 0 || th == 0 || tw == 0 {
        return Err(Error::config("target dims must be >= 1"));
    }
    let mut out = Array4::<f32>::zeros((td, th, tw, t));

    // Map target index -> source index per axis; None means padding.
    let axis_map = |src: usize, dst: usize| -> (usize, usize, usize) {
        // (src_start, dst_start, copy_len)
        if src >= dst {
            let lo = (src - dst) / 2; // odd surplus drops the extra from the high side
            (lo, 0, dst)
        } else {
            let lo = (dst - src) / 2;
            (0, lo, src)
        }
    };
    let (sd, dd, nd) = axis_map(d, td);
    let (sh, dh, nh) = axis_map(h, th);
    let (sw, dw, nw) = axis_map(w, tw);

    let src = v.data.slice(ndarray::s![sd..sd + nd, sh..sh + nh, sw..sw + nw, ..]);
    out.slice_mut(ndarray::s![dd..dd + nd, dh..dh + nh, dw..dw + nw, ..])
        .assign(&src);
    Ok(Volume4D { data: out, spacing: v.spacing, kind: v.kind })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    fn seq_volume(d: usize, h: usize, w: usize, t: usize) -> Volume4D {
        let data = Array4::from_shape_fn((d, h, w, t), |(a, b, c, e)| {
            (a * 1000 + b * 100 + c * 10 + e) as f32
        });
        Volume4D::new(data, Spacing::new(8.0, 1.0, 1.0, 0.03), VolumeKind::Image).unwrap()
    }

    #[test]
    fn mask_with_fraction_rejected() {
        let mut data = Array4::<f32>::zeros((2, 2, 2, 2));
        data[[0, 0, 0, 0]] = 0.5;
        let err = Volume4D::new(data, Spacing::new(1.0, 1.0, 1.0, 1.0), VolumeKind::Mask)
            .unwrap_err();
        assert!(matches!(err, Error::NotBinary { .. }));
    }

    #[test]
    fn cyclic_identity_when_t_matches() {
        let v = seq_volume(2, 3, 3, 32);
        let r = cyclic_time_resample(&v, 32).unwrap();
        assert_eq!(r.data, v.data);
    }

    #[test]
    fn cyclic_doubles_frames() {
        let v = seq_volume(1, 2, 2, 16);
        let r = cyclic_time_resample(&v, 32).unwrap();
        for i in 0..32 {
            assert_eq!(
                r.data.index_axis(ndarray::Axis(3), i),
                v.data.index_axis(ndarray::Axis(3), i % 16)
            );
        }
    }

    #[test]
    fn cyclic_wraps_20_to_32() {
        // Index oracle: output frame i = input frame (i mod 20).
        let v = seq_volume(1, 2, 2, 20);
        let r = cyclic_time_resample(&v, 32).unwrap();
        assert_eq!(r.dims().3, 32);
        for i in 0..32 {
            assert_eq!(r.data[[0, 0, 0, i]], v.data[[0, 0, 0, i % 20]]);
        }
    }

    #[test]
    fn center_crop_300_to_256() {
        // (300-256)/2 = 22, so rows/cols [22, 278) survive.
        let v = seq_volume(1, 300, 8, 1);
        let r = crop_or_pad(&v, (1, 256, 8)).unwrap();
        for i in 0..256 {
            assert_eq!(r.data[[0, i, 0, 0]], v.data[[0, i + 22, 0, 0]]);
        }
    }

    #[test]
    fn symmetric_pad_200_to_256() {
        let v = seq_volume(1, 200, 4, 1);
        let r = crop_or_pad(&v, (1, 256, 4)).unwrap();
        for i in 0..28 {
            assert_eq!(r.data[[0, i, 0, 0]], 0.0);
            assert_eq!(r.data[[0, 255 - i, 0, 0]], 0.0);
        }
        for i in 0..200 {
            assert_eq!(r.data[[0, i + 28, 0, 0]], v.data[[0, i, 0, 0]]);
        }
    }

    #[test]
    fn odd_pad_goes_high() {
        // 5 -> 6 slices: 0 low, 1 high.
        let v = seq_volume(5, 2, 2, 1);
        let r = crop_or_pad(&v, (6, 2, 2)).unwrap();
        for s in 0..5 {
            assert_eq!(r.data[[s, 0, 0, 0]], v.data[[s, 0, 0, 0]]);
        }
        assert_eq!(r.data[[5, 0, 0, 0]], 0.0);
    }

    #[test]
    fn odd_crop_drops_high() {
        // 7 -> 6: lo = (7-6)/2 = 0, so index 6 is dropped.
        let v = seq_volume(7, 2, 2, 1);
        let r = crop_or_pad(&v, (6, 2, 2)).unwrap();
        for s in 0..6 {
            assert_eq!(r.data[[s, 0, 0, 0]], v.data[[s, 0, 0, 0]]);
        }
    }

    #[test]
    fn pad_then_crop_recovers() {
        let v = seq_volume(3, 5, 7, 2);
        let big = crop_or_pad(&v, (6, 9, 11)).unwrap();
        let back = crop_or_pad(&big, (3, 5, 7)).unwrap();
        assert_eq!(back.data, v.data);
    }
}
