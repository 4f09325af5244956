//! Training-time augmentations on `[channels × samples]` windows.
//!
//! Crop and time-out intervals are drawn once per window and shared by every
//! channel. Augmentations are applied only while training.

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Window length the default time-out range is expressed against
/// (50 s at 200 Hz).
pub const REFERENCE_WINDOW: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Crop fraction bounds `(l, m)`.
    pub rrc_range: (f64, f64),
    /// Time-out length bounds `(t_l, t_u)` in samples.
    pub timeout_range: (usize, usize),
    pub left_channels: Vec<usize>,
    pub right_channels: Vec<usize>,
    pub p_shuffle_within: f64,
    pub p_swap_hemispheres: f64,
    pub enable_rrc: bool,
    pub enable_timeout: bool,
    pub enable_swap: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rrc_range: (0.8, 1.0),
            timeout_range: (0, 2000),
            left_channels: Vec::new(),
            right_channels: Vec::new(),
            p_shuffle_within: 0.5,
            p_swap_hemispheres: 0.5,
            enable_rrc: true,
            enable_timeout: true,
            enable_swap: true,
        }
    }
}

impl AugmentConfig {
    /// No augmentation at all.
    pub fn disabled() -> Self {
        Self {
            enable_rrc: false,
            enable_timeout: false,
            enable_swap: false,
            ..Self::default()
        }
    }

    pub fn any_enabled(&self) -> bool {
        self.enable_rrc || self.enable_timeout || self.enable_swap
    }

    /// Fills in dataset-dependent defaults: empty hemisphere lists become the
    /// first and second half of the channels, and a time-out range longer
    /// than the window is rescaled from [`REFERENCE_WINDOW`] to `window`.
    pub fn resolve(&self, n_channels: usize, window: usize) -> AugmentConfig {
        let mut out = self.clone();
        if out.left_channels.is_empty() && out.right_channels.is_empty() {
            let half = n_channels / 2;
            out.left_channels = (0..half).collect();
            out.right_channels = (n_channels - half..n_channels).collect();
        }
        let (lo, hi) = out.timeout_range;
        if hi > window {
            let scale = |t: usize| (t * window).div_ceil(REFERENCE_WINDOW).min(window);
            out.timeout_range = (scale(lo).min(scale(hi)), scale(hi));
        }
        out
    }

    pub fn validate(&self, n_channels: usize, window: usize) -> Result<()> {
        let (l, m) = self.rrc_range;
        if !(0.0 < l && l <= m && m <= 1.0) {
            return Err(Error::Config(format!(
                "rrc_range must satisfy 0 < l <= m <= 1, got ({l}, {m})"
            )));
        }
        let (tl, tu) = self.timeout_range;
        if tl > tu || tu > window {
            return Err(Error::Config(format!(
                "timeout_range must satisfy t_l <= t_u <= {window}, got ({tl}, {tu})"
            )));
        }
        for p in [self.p_shuffle_within, self.p_swap_hemispheres] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("probability {p} outside [0, 1]")));
            }
        }
        check_hemispheres(&self.left_channels, &self.right_channels, n_channels)
    }
}

fn check_hemispheres(left: &[usize], right: &[usize], n_channels: usize) -> Result<()> {
    if left.len() != right.len() {
        return Err(Error::Config(format!(
            "hemisphere lists differ in length ({} vs {})",
            left.len(),
            right.len()
        )));
    }
    let mut seen = vec![false; n_channels];
    for &c in left.iter().chain(right) {
        if c >= n_channels {
            return Err(Error::Config(format!(
                "hemisphere channel {c} out of range for {n_channels} channels"
            )));
        }
        if std::mem::replace(&mut seen[c], true) {
            return Err(Error::Config(format!(
                "channel {c} listed twice in hemisphere lists"
            )));
        }
    }
    Ok(())
}

/// Linearly resizes samples `[start, start + len)` of every channel back to
/// the full window length. Endpoints map to endpoints, so `len == T` is the
/// identity.
pub fn crop_resize(window: &Array2<f32>, start: usize, len: usize) -> Result<Array2<f32>> {
    let (channels, t) = window.dim();
    if len == 0 || start + len > t {
        return Err(Error::Config(format!(
            "crop [{start}, {}) invalid for window of {t}",
            start + len
        )));
    }
    if len == t {
        return Ok(window.clone());
    }
    let step = if t > 1 {
        (len - 1) as f64 / (t - 1) as f64
    } else {
        0.0
    };
    let mut out = Array2::zeros((channels, t));
    for (src, mut dst) in window.rows().into_iter().zip(out.rows_mut()) {
        let src = src.slice(s![start..start + len]);
        for (j, y) in dst.iter_mut().enumerate() {
            let pos = j as f64 * step;
            let i0 = (pos.floor() as usize).min(len - 1);
            *y = if i0 + 1 >= len {
                src[len - 1]
            } else {
                let frac = pos - i0 as f64;
                (f64::from(src[i0]) * (1.0 - frac) + f64::from(src[i0 + 1]) * frac) as f32
            };
        }
    }
    Ok(out)
}

/// Random resized crop: keep a random fraction `p ~ U(l, m)` of the window
/// and stretch it back to full length.
pub fn random_resized_crop(window: &Array2<f32>, l: f64, m: f64, rng: &mut Rng) -> Result<Array2<f32>> {
    let t = window.ncols();
    let p = if l < m { rng.random_range(l..m) } else { l };
    let len = (p * t as f64).round() as usize;
    if len == 0 {
        return Err(Error::Config(format!(
            "crop fraction {p} yields an empty crop of a {t}-sample window"
        )));
    }
    let start = rng.random_range(0..=t - len.min(t));
    crop_resize(window, start, len.min(t))
}

/// Zeroes samples `[start, start + len)` on every channel.
pub fn mask_span(window: &mut Array2<f32>, start: usize, len: usize) {
    let end = (start + len).min(window.ncols());
    window.slice_mut(s![.., start..end]).fill(0.0);
}

/// Random signal time-out: zero a contiguous span of `t ~ U{t_l..=t_u}`
/// samples.
pub fn time_out(window: &Array2<f32>, t_l: usize, t_u: usize, rng: &mut Rng) -> Array2<f32> {
    let total = window.ncols();
    let t_u = t_u.min(total);
    let len = rng.random_range(t_l.min(t_u)..=t_u);
    let start = rng.random_range(0..=total - len);
    let mut out = window.clone();
    mask_span(&mut out, start, len);
    out
}

/// Draws the row permutation used by [`hemisphere_swap`]: `out[i] = in[perm[i]]`.
pub fn hemisphere_permutation(cfg: &AugmentConfig, n_channels: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    check_hemispheres(&cfg.left_channels, &cfg.right_channels, n_channels)?;
    let shuffle_left = rng.random_bool(cfg.p_shuffle_within);
    let shuffle_right = rng.random_bool(cfg.p_shuffle_within);
    let swap = rng.random_bool(cfg.p_swap_hemispheres);

    let mut left = cfg.left_channels.clone();
    let mut right = cfg.right_channels.clone();
    if shuffle_left {
        left.shuffle(rng);
    }
    if shuffle_right {
        right.shuffle(rng);
    }
    if swap {
        std::mem::swap(&mut left, &mut right);
    }
    let mut perm: Vec<usize> = (0..n_channels).collect();
    for (&dst, &src) in cfg.left_channels.iter().zip(&left) {
        perm[dst] = src;
    }
    for (&dst, &src) in cfg.right_channels.iter().zip(&right) {
        perm[dst] = src;
    }
    Ok(perm)
}

/// Shuffles channels within each hemisphere and/or exchanges the two
/// hemisphere blocks. Channels in neither list stay put.
pub fn hemisphere_swap(window: &Array2<f32>, cfg: &AugmentConfig, rng: &mut Rng) -> Result<Array2<f32>> {
    let perm = hemisphere_permutation(cfg, window.nrows(), rng)?;
    Ok(window.select(ndarray::Axis(0), &perm))
}

/// Applies every enabled augmentation in order: crop, time-out, swap.
pub fn augment_window(window: &Array2<f32>, cfg: &AugmentConfig, rng: &mut Rng) -> Result<Array2<f32>> {
    let mut out = window.clone();
    if cfg.enable_rrc {
        out = random_resized_crop(&out, cfg.rrc_range.0, cfg.rrc_range.1, rng)?;
    }
    if cfg.enable_timeout {
        out = time_out(&out, cfg.timeout_range.0, cfg.timeout_range.1, rng);
    }
    if cfg.enable_swap {
        out = hemisphere_swap(&out, cfg, rng)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn positive(c: usize, t: usize) -> Array2<f32> {
        Array2::from_shape_fn((c, t), |(i, j)| 1.0 + (i * t + j) as f32)
    }

    #[test]
    fn full_crop_is_identity() {
        let w = positive(3, 50);
        let mut r = seeded(1);
        assert_eq!(random_resized_crop(&w, 1.0, 1.0, &mut r).unwrap(), w);
    }

    #[test]
    fn eighty_percent_crop_stretches() {
        let w = Array2::from_shape_fn((1, 10_000), |(_, j)| j as f32);
        let out = crop_resize(&w, 1000, 8000).unwrap();
        assert_eq!(out.dim(), (1, 10_000));
        assert_eq!(out[[0, 0]], 1000.0);
        assert_eq!(out[[0, 9999]], 8999.0);
    }

    #[test]
    fn ramp_stays_linear() {
        let w = Array2::from_shape_fn((2, 1000), |(c, j)| (c as f32 + 1.0) * j as f32 * 1e-3);
        let mut r = seeded(9);
        for _ in 0..20 {
            let out = random_resized_crop(&w, 0.8, 1.0, &mut r).unwrap();
            for row in out.rows() {
                let slope = (row[999] - row[0]) as f64 / 999.0;
                let dev = row
                    .iter()
                    .enumerate()
                    .map(|(j, &y)| (y as f64 - (row[0] as f64 + slope * j as f64)).abs())
                    .fold(0.0, f64::max);
                assert!(dev < 1e-6 * 2.0f64.max(row[999] as f64), "dev {dev}");
            }
        }
    }

    #[test]
    fn degenerate_crop_errors() {
        let w = positive(1, 4);
        assert!(random_resized_crop(&w, 0.01, 0.01, &mut seeded(0)).is_err());
    }

    #[test]
    fn time_out_zero_is_identity() {
        let w = positive(2, 100);
        assert_eq!(time_out(&w, 0, 0, &mut seeded(3)), w);
    }

    #[test]
    fn time_out_2000_is_contiguous() {
        let w = positive(2, 10_000);
        let out = time_out(&w, 2000, 2000, &mut seeded(4));
        for row in out.rows() {
            let zeros: Vec<usize> = (0..row.len()).filter(|&j| row[j] == 0.0).collect();
            assert_eq!(zeros.len(), 2000);
            assert_eq!(zeros[1999] - zeros[0], 1999);
        }
    }

    #[test]
    fn disjoint_masks_add_up() {
        let mut w = positive(3, 1000);
        mask_span(&mut w, 10, 100);
        mask_span(&mut w, 500, 250);
        for row in w.rows() {
            assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), 350);
        }
    }

    #[test]
    fn swap_only_exchanges_blocks() {
        let cfg = AugmentConfig {
            p_shuffle_within: 0.0,
            p_swap_hemispheres: 1.0,
            left_channels: (0..8).collect(),
            right_channels: (8..16).collect(),
            ..Default::default()
        };
        let perm = hemisphere_permutation(&cfg, 16, &mut seeded(0)).unwrap();
        let expected: Vec<usize> = (8..16).chain(0..8).collect();
        assert_eq!(perm, expected);
    }

    #[test]
    fn zero_probabilities_are_identity() {
        let cfg = AugmentConfig {
            p_shuffle_within: 0.0,
            p_swap_hemispheres: 0.0,
            ..Default::default()
        }
        .resolve(6, 10);
        let w = positive(6, 10);
        assert_eq!(hemisphere_swap(&w, &cfg, &mut seeded(5)).unwrap(), w);
    }

    #[test]
    fn overlapping_hemispheres_rejected() {
        let cfg = AugmentConfig {
            left_channels: vec![0, 1],
            right_channels: vec![1, 2],
            ..Default::default()
        };
        assert!(hemisphere_swap(&positive(3, 2), &cfg, &mut seeded(0)).is_err());
    }

    #[test]
    fn resolve_fills_defaults() {
        let cfg = AugmentConfig::default().resolve(16, 512);
        assert_eq!(cfg.left_channels, (0..8).collect::<Vec<_>>());
        assert_eq!(cfg.right_channels, (8..16).collect::<Vec<_>>());
        assert_eq!(cfg.timeout_range, (0, 103));
        cfg.validate(16, 512).unwrap();
        let full = AugmentConfig::default().resolve(16, 10_000);
        assert_eq!(full.timeout_range, (0, 2000));
        assert!(AugmentConfig::default().validate(16, 512).is_err());
    }
}
