//! Analytic beating-heart phantoms: image plus ground-truth cavity mask
//! with controllable ejection fraction, slice tilt, and noise.
//!
//! The cavity is a circle in physical (mm) coordinates on every slice,
//! contracted in-plane by a raised-cosine waveform. Because every slice's
//! area scales by the same factor `rho^2` at end-systole and slice
//! thickness is constant, the volumetric ejection fraction is exactly
//! `1 - rho^2`, which gives every downstream metric an analytic oracle.

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::rng::{standard_normal, stream};
use crate::volume::{Spacing, Volume4D, VolumeKind};
use crate::{par, Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomConfig {
    /// Output extents `(d, h, w, t)`.
    pub dims: (usize, usize, usize, usize),
    pub spacing: Spacing,
    /// Target ejection fraction, in (0, 1).
    pub target_ef: f64,
    /// End-diastolic endocardial radius at the base slice, mm.
    pub r_endo_ed_mm: f64,
    /// Myocardial wall thickness, mm.
    pub wall_thickness_mm: f64,
    /// Fraction of the cycle spent contracting, in (0, 1).
    pub systolic_fraction: f64,
    /// Radius scale at the apex slice (s = 0); grows linearly to 1 at the base.
    pub taper_apex: f64,
    /// Per-slice linear center offset on the x axis, px per slice.
    pub tilt_px: f64,
    /// Amplitude of the sinusoidal per-slice center perturbation, px.
    pub wobble_amp_px: f64,
    /// Additive Gaussian intensity noise on the image (not the mask).
    pub noise_sigma: f64,
    pub blood: f32,
    pub myocardium: f32,
    pub background: f32,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            dims: (6, 128, 128, 32),
            spacing: Spacing::new(8.0, 1.0, 1.0, 0.033),
            target_ef: 0.5,
            r_endo_ed_mm: 25.0,
            wall_thickness_mm: 8.0,
            systolic_fraction: 0.375,
            taper_apex: 0.7,
            tilt_px: 0.0,
            wobble_amp_px: 0.0,
            noise_sigma: 0.02,
            blood: 0.9,
            myocardium: 0.55,
            background: 0.15,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let (d, h, w, t) = self.dims;
        if d == 0 || h == 0 || w == 0 || t == 0 {
            return Err(Error::config("phantom dims must be >= 1"));
        }
        if !(self.target_ef > 0.0 && self.target_ef < 1.0) {
            return Err(Error::config(format!(
                "target_ef must lie in (0,1), got {}",
                self.target_ef
            )));
        }
        if self.r_endo_ed_mm <= 0.0 || self.wall_thickness_mm <= 0.0 {
            return Err(Error::config("radius and wall thickness must be positive"));
        }
        if !(self.systolic_fraction > 0.0 && self.systolic_fraction < 1.0) {
            return Err(Error::config("systolic_fraction must lie in (0,1)"));
        }
        if !(self.taper_apex > 0.0 && self.taper_apex <= 1.0) {
            return Err(Error::config("taper_apex must lie in (0,1]"));
        }
        if !(self.blood > self.myocardium && self.myocardium > self.background) {
            return Err(Error::config(
                "intensities must satisfy blood > myocardium > background",
            ));
        }
        if !self.spacing.is_valid() {
            return Err(Error::config("spacing components must be positive"));
        }
        Ok(())
    }
}

/// Analytic ground truth carried next to each phantom.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhantomTruth {
    /// Cavity volume per frame, mL.
    pub volume_ml: Vec<f64>,
    /// Analytic ejection fraction (equals the configured target).
    pub ef: f64,
    /// Per-slice cavity centers `(x_px, y_px)`, constant over the cycle.
    pub centers_px: Vec<(f64, f64)>,
    pub target_ef: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct PhantomRecord {
    pub image: Volume4D,
    pub lv_mask: Volume4D,
    pub truth: PhantomTruth,
}

/// Inverts the EF formula for in-plane radius scaling: every slice's
/// cavity area shrinks by `rho^2` at end-systole, so `EF = 1 - rho^2`
/// and `rho = sqrt(1 - EF)`.
pub fn solve_contraction(target_ef: f64) -> Result<f64> {
    if !(target_ef > 0.0 && target_ef < 1.0) {
        return Err(Error::config(format!("target_ef must lie in (0,1), got {target_ef}")));
    }
    Ok((1.0 - target_ef).sqrt())
}

/// Raised-cosine contraction waveform: 0 at end-diastole (phase 0), 1 at
/// end-systole (phase = systolic_fraction), back to 0 at phase 1.
pub fn contraction_waveform(phase: f64, systolic_fraction: f64) -> f64 {
    let p = phase.rem_euclid(1.0);
    if p < systolic_fraction {
        0.5 * (1.0 - (std::f64::consts::PI * p / systolic_fraction).cos())
    } else {
        0.5 * (1.0
            + (std::f64::consts::PI * (p - systolic_fraction) / (1.0 - systolic_fraction)).cos())
    }
}

fn taper_scale(cfg: &PhantomConfig, s: usize) -> f64 {
    let d = cfg.dims.0;
    if d <= 1 {
        return 1.0;
    }
    cfg.taper_apex + (1.0 - cfg.taper_apex) * (s as f64) / ((d - 1) as f64)
}

fn slice_center(cfg: &PhantomConfig, s: usize) -> (f64, f64) {
    let (d, h, w, _) = cfg.dims;
    let cx0 = (w as f64 - 1.0) / 2.0;
    let cy0 = (h as f64 - 1.0) / 2.0;
    let x = cx0
        + cfg.tilt_px * (s as f64)
        + cfg.wobble_amp_px * (2.0 * std::f64::consts::PI * (s as f64) / (d as f64)).sin();
    (x, cy0)
}

/// Endocardial radius in mm for slice `s` at frame `i`.
fn endo_radius_mm(cfg: &PhantomConfig, rho: f64, s: usize, frame: usize) -> f64 {
    let t = cfg.dims.3;
    let g = contraction_waveform(frame as f64 / t as f64, cfg.systolic_fraction);
    taper_scale(cfg, s) * cfg.r_endo_ed_mm * (1.0 - (1.0 - rho) * g)
}

pub fn make_phantom(cfg: &PhantomConfig) -> Result<PhantomRecord> {
    cfg.validate()?;
    let (d, h, w, t) = cfg.dims;
    let rho = solve_contraction(cfg.target_ef)?;

    // Field-of-view check at the widest epicardial extent.
    for s in 0..d {
        let r_epi = taper_scale(cfg, s) * cfg.r_endo_ed_mm + cfg.wall_thickness_mm;
        let (cx, cy) = slice_center(cfg, s);
        let rx = r_epi / cfg.spacing.w_mm;
        let ry = r_epi / cfg.spacing.h_mm;
        if cx - rx < 0.0 || cx + rx > (w - 1) as f64 || cy - ry < 0.0 || cy + ry > (h - 1) as f64 {
            return Err(Error::config(format!(
                "cavity exceeds field of view at slice {s}: center ({cx:.1},{cy:.1}), epi radius {r_epi:.1} mm"
            )));
        }
    }

    let mut image = Array4::<f32>::zeros((d, h, w, t));
    let mut mask = Array4::<f32>::zeros((d, h, w, t));
    let mut noise_rng = stream(cfg.seed, &[0x6e6f6973]);

    for s in 0..d {
        let (cx, cy) = slice_center(cfg, s);
        for i in 0..t {
            let r_endo = endo_radius_mm(cfg, rho, s, i);
            let r_epi = r_endo + cfg.wall_thickness_mm;
            let (r_endo2, r_epi2) = (r_endo * r_endo, r_epi * r_epi);
            for y in 0..h {
                let dy = (y as f64 - cy) * cfg.spacing.h_mm;
                for x in 0..w {
                    let dx = (x as f64 - cx) * cfg.spacing.w_mm;
                    let dist2 = dx * dx + dy * dy;
                    let intensity = if dist2 <= r_endo2 {
                        mask[[s, y, x, i]] = 1.0;
                        cfg.blood
                    } else if dist2 <= r_epi2 {
                        cfg.myocardium
                    } else {
                        cfg.background
                    };
                    let noisy = if cfg.noise_sigma > 0.0 {
                        (intensity as f64 + cfg.noise_sigma * standard_normal(&mut noise_rng))
                            .clamp(0.0, 1.0) as f32
                    } else {
                        intensity
                    };
                    image[[s, y, x, i]] = noisy;
                }
            }
        }
    }

    // Exact cavity volume from circle areas (mm^2) times slice thickness.
    let volume_ml: Vec<f64> = (0..t)
        .map(|i| {
            (0..d)
                .map(|s| {
                    let r = endo_radius_mm(cfg, rho, s, i);
                    std::f64::consts::PI * r * r * cfg.spacing.d_mm
                })
                .sum::<f64>()
                / 1000.0
        })
        .collect();

    let truth = PhantomTruth {
        volume_ml,
        ef: 1.0 - rho * rho,
        centers_px: (0..d).map(|s| slice_center(cfg, s)).collect(),
        target_ef: cfg.target_ef,
        seed: cfg.seed,
    };

    Ok(PhantomRecord {
        image: Volume4D::new(image, cfg.spacing, VolumeKind::Image)?,
        lv_mask: Volume4D::new(mask, cfg.spacing, VolumeKind::Mask)?,
        truth,
    })
}

/// Sampling ranges for cohort generation. A range with `lo == hi` pins the
/// value; `lo > hi` is rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CohortDistribution {
    pub base: PhantomConfig,
    pub ef_range: (f64, f64),
    pub r_endo_range_mm: (f64, f64),
    pub tilt_range_px: (f64, f64),
    pub wobble_range_px: (f64, f64),
    pub noise_range: (f64, f64),
}

impl Default for CohortDistribution {
    fn default() -> Self {
        CohortDistribution {
            base: PhantomConfig::default(),
            ef_range: (0.35, 0.65),
            r_endo_range_mm: (22.0, 28.0),
            tilt_range_px: (-1.0, 1.0),
            wobble_range_px: (0.0, 0.5),
            noise_range: (0.02, 0.02),
        }
    }
}

impl CohortDistribution {
    fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("ef_range", self.ef_range),
            ("r_endo_range_mm", self.r_endo_range_mm),
            ("tilt_range_px", self.tilt_range_px),
            ("wobble_range_px", self.wobble_range_px),
            ("noise_range", self.noise_range),
        ] {
            if lo > hi || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::config(format!("degenerate {name}: ({lo}, {hi})")));
            }
        }
        Ok(())
    }

    /// The config for cohort member `index` under root `seed`.
    pub fn sample(&self, seed: u64, index: usize) -> PhantomConfig {
        use rand_distr::{Distribution, Uniform};
        let mut rng = stream(seed, &[index as u64, 0x636f686f]);
        let mut draw = |(lo, hi): (f64, f64)| -> f64 {
            if lo == hi {
                lo
            } else {
                Uniform::new(lo, hi).sample(&mut rng)
            }
        };
        let mut cfg = self.base.clone();
        cfg.target_ef = draw(self.ef_range);
        cfg.r_endo_ed_mm = draw(self.r_endo_range_mm);
        cfg.tilt_px = draw(self.tilt_range_px);
        cfg.wobble_amp_px = draw(self.wobble_range_px);
        cfg.noise_sigma = draw(self.noise_range);
        cfg.seed = seed ^ ((index as u64).wrapping_mul(0x9e3779b97f4a7c15)).rotate_left(17);
        cfg
    }
}

/// Draws `n` phantom records deterministically from `seed`; record `i`
/// depends only on `(seed, i)`, so cohorts are reproducible at any thread
/// count.
pub fn make_cohort(n: usize, dist: &CohortDistribution, seed: u64) -> Result<Vec<PhantomRecord>> {
    if n == 0 {
        return Err(Error::config("cohort size must be >= 1"));
    }
    dist.validate()?;
    dist.base.validate()?;
    let results = par::par_map_range(n, |i| make_phantom(&dist.sample(seed, i)));
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contraction_closed_form() {
        assert!((solve_contraction(0.5).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((solve_contraction(0.6).unwrap() - 0.4f64.sqrt()).abs() < 1e-12);
        // EF -> 0 limit: no contraction.
        assert!((solve_contraction(1e-12).unwrap() - 1.0).abs() < 1e-9);
        assert!(solve_contraction(0.0).is_err());
        assert!(solve_contraction(1.0).is_err());
    }

    #[test]
    fn waveform_endpoints() {
        assert_eq!(contraction_waveform(0.0, 0.375), 0.0);
        assert!((contraction_waveform(0.375, 0.375) - 1.0).abs() < 1e-12);
        assert!(contraction_waveform(0.9999, 0.375) < 1e-4);
    }

    fn small_cfg() -> PhantomConfig {
        PhantomConfig {
            dims: (4, 48, 48, 8),
            spacing: Spacing::new(8.0, 2.0, 2.0, 0.04),
            r_endo_ed_mm: 18.0,
            wall_thickness_mm: 6.0,
            ..PhantomConfig::default()
        }
    }

    #[test]
    fn centers_identical_without_tilt_or_wobble() {
        let cfg = PhantomConfig { tilt_px: 0.0, wobble_amp_px: 0.0, ..small_cfg() };
        let rec = make_phantom(&cfg).unwrap();
        let first = rec.truth.centers_px[0];
        for c in &rec.truth.centers_px {
            assert_eq!(*c, first);
        }
    }

    #[test]
    fn truth_volume_peaks_at_frame_zero() {
        let rec = make_phantom(&small_cfg()).unwrap();
        let v = &rec.truth.volume_ml;
        let argmax = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, 0);
        // Unimodal: exactly one local minimum over the cycle.
        let t = v.len();
        let mut minima = 0;
        for i in 0..t {
            let prev = v[(i + t - 1) % t];
            let next = v[(i + 1) % t];
            if v[i] < prev && v[i] < next {
                minima += 1;
            }
        }
        assert_eq!(minima, 1);
    }

    #[test]
    fn mask_voxels_are_blood_before_noise() {
        let cfg = PhantomConfig { noise_sigma: 0.0, ..small_cfg() };
        let rec = make_phantom(&cfg).unwrap();
        for (m, i) in rec.lv_mask.data.iter().zip(rec.image.data.iter()) {
            if *m == 1.0 {
                assert_eq!(*i, cfg.blood);
            }
        }
    }

    #[test]
    fn measured_ef_tracks_target() {
        // Voxel-counting oracle vs the analytic volume.
        let cfg = PhantomConfig { dims: (6, 128, 128, 32), ..PhantomConfig::default() };
        let rec = make_phantom(&cfg).unwrap();
        let t = rec.lv_mask.dims().3;
        let counts: Vec<f64> = (0..t)
            .map(|i| {
                rec.lv_mask
                    .data
                    .index_axis(ndarray::Axis(3), i)
                    .iter()
                    .map(|&v| v as f64)
                    .sum()
            })
            .collect();
        let vmax = counts.iter().cloned().fold(f64::MIN, f64::max);
        let vmin = counts.iter().cloned().fold(f64::MAX, f64::min);
        let ef = (vmax - vmin) / vmax;
        assert!((ef - 0.5).abs() < 0.02, "measured EF {ef}");
    }

    #[test]
    fn finer_resolution_reduces_ef_error() {
        let coarse = PhantomConfig {
            dims: (4, 48, 48, 8),
            spacing: Spacing::new(8.0, 2.0, 2.0, 0.04),
            noise_sigma: 0.0,
            ..small_cfg()
        };
        let fine = PhantomConfig {
            dims: (4, 96, 96, 8),
            spacing: Spacing::new(8.0, 1.0, 1.0, 0.04),
            ..coarse.clone()
        };
        let err = |cfg: &PhantomConfig| {
            let rec = make_phantom(cfg).unwrap();
            let t = cfg.dims.3;
            let counts: Vec<f64> = (0..t)
                .map(|i| {
                    rec.lv_mask
                        .data
                        .index_axis(ndarray::Axis(3), i)
                        .iter()
                        .map(|&v| v as f64)
                        .sum()
                })
                .collect();
            let vmax = counts.iter().cloned().fold(f64::MIN, f64::max);
            let vmin = counts.iter().cloned().fold(f64::MAX, f64::min);
            ((vmax - vmin) / vmax - cfg.target_ef).abs()
        };
        assert!(err(&fine) < err(&coarse));
    }

    #[test]
    fn cohort_is_deterministic() {
        let dist = CohortDistribution {
            base: small_cfg(),
            r_endo_range_mm: (14.0, 18.0),
            ..CohortDistribution::default()
        };
        let a = make_cohort(5, &dist, 7).unwrap();
        let b = make_cohort(5, &dist, 7).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image.data, y.image.data);
            assert_eq!(x.lv_mask.data, y.lv_mask.data);
        }
        for rec in &a {
            assert!((rec.truth.ef - rec.truth.target_ef).abs() < 1e-12);
        }
    }

    #[test]
    fn cohort_ef_mean_in_monte_carlo_bound() {
        let dist = CohortDistribution {
            base: small_cfg(),
            ef_range: (0.35, 0.65),
            r_endo_range_mm: (14.0, 18.0),
            ..CohortDistribution::default()
        };
        let n = 50;
        let cohort = make_cohort(n, &dist, 123).unwrap();
        let mean: f64 = cohort.iter().map(|r| r.truth.ef).sum::<f64>() / n as f64;
        let std = (0.65 - 0.35) / 12f64.sqrt();
        assert!((mean - 0.5).abs() < 3.0 * std / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn single_member_cohort_matches_direct_generation() {
        let dist = CohortDistribution { base: small_cfg(), ..CohortDistribution::default() };
        let cohort = make_cohort(1, &dist, 42).unwrap();
        let direct = make_phantom(&dist.sample(42, 0)).unwrap();
        assert_eq!(cohort[0].image.data, direct.image.data);
    }

    #[test]
    fn oversized_cavity_rejected() {
        let cfg = PhantomConfig { r_endo_ed_mm: 60.0, ..small_cfg() };
        assert!(matches!(make_phantom(&cfg), Err(Error::Config(_))));
    }
}
