//! Image-quality metrics: PSNR and the coded-sampling ratio.

use std::fmt;

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

/// PSNR settings. The sensor bit depth sets the peak value `2^n - 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricConfig {
    pub bit_depth: u32,
    /// Min-max rescale both images to `[0, 2^n - 1]` before comparing.
    pub normalize: bool,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            bit_depth: 14,
            normalize: true,
        }
    }
}

impl MetricConfig {
    pub fn peak(&self) -> f64 {
        2f64.powi(self.bit_depth as i32) - 1.0
    }

    fn validate(&self) -> Result<()> {
        if self.bit_depth == 0 || self.bit_depth > 52 {
            return Err(Error::invalid(format!("bit depth must be in 1..=52, got {}", self.bit_depth)));
        }
        Ok(())
    }
}

/// PSNR in dB, with a distinguished value for a perfect match.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    /// `f64::INFINITY` for a perfect match.
    pub fn as_f64(self) -> f64 {
        match self {
            Psnr::Finite(v) => v,
            Psnr::Infinite => f64::INFINITY,
        }
    }
}

impl PartialOrd for Psnr {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.as_f64().partial_cmp(&other.as_f64())
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v:.4}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

fn rescale(img: &ImageGrid, peak: f64) -> Option<Vec<f64>> {
    let (lo, hi) = img.min_max();
    if hi > lo {
        Some(img.as_slice().iter().map(|&v| (v - lo) / (hi - lo) * peak).collect())
    } else {
        None
    }
}

pub fn psnr(recon: &ImageGrid, truth: &ImageGrid, cfg: &MetricConfig) -> Result<Psnr> {
    cfg.validate()?;
    if recon.dims() != truth.dims() {
        return Err(Error::invalid(format!(
            "PSNR of {:?} against {:?}",
            recon.dims(),
            truth.dims()
        )));
    }
    let peak = cfg.peak();
    let (a, b) = if cfg.normalize {
        let b = rescale(truth, peak).ok_or_else(|| {
            Error::DegenerateNormalization("reference image is constant".into())
        })?;
        // A constant reconstruction carries no range; it maps to zero.
        let a = rescale(recon, peak).unwrap_or_else(|| vec![0.0; recon.len()]);
        (a, b)
    } else {
        (recon.as_slice().to_vec(), truth.as_slice().to_vec())
    };
    let mse = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        Ok(Psnr::Infinite)
    } else {
        Ok(Psnr::Finite(10.0 * (peak * peak / mse).log10()))
    }
}

/// Measurements per unknown: `n_masks * fpa_pixels / dmd_pixels`.
pub fn sampling_ratio(n_masks: usize, fpa_pixels: usize, dmd_pixels: usize) -> Result<f64> {
    if dmd_pixels == 0 {
        return Err(Error::invalid("modulator pixel count must be positive"));
    }
    Ok(n_masks as f64 * fpa_pixels as f64 / dmd_pixels as f64)
}
