//! Super-resolved imaging: Hadamard-coded frames, the stacked measurement
//! operator, reconstruction and evaluation.
//!
//! Frame `t` is `C · diag(mask_t) · x`; stacking all frames gives one linear
//! system over the whole modulator, solved in a single TV call so there are
//! no block seams.

use std::path::Path;

use rayon::prelude::*;

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::grid::{devectorize, superpixel_bin, vectorize, BinaryMask, ImageGrid};
use crate::hadamard::{expand_mask, hadamard_basis_masks};
use crate::io::{self, KeyValues};
use crate::metrics::{psnr, sampling_ratio, MetricConfig, Psnr};
use crate::optics::{dark_reference, fringe_profile, forward_measure, SystemModel, TargetSpec};
use crate::solver::{tv_solve, LinearOperator, SolveReport, SolverConfig};
use crate::sparse::SparseCalibMatrix;

/// Hadamard order of the coding masks.
pub const BASIS_ORDER: usize = 16;

/// The first `n` 4×4 Hadamard basis masks, all-ones first.
pub fn select_masks(n: usize) -> Result<Vec<BinaryMask>> {
    if !(1..=BASIS_ORDER).contains(&n) {
        return Err(Error::invalid(format!("mask count must be in 1..={BASIS_ORDER}, got {n}")));
    }
    let mut all = hadamard_basis_masks(BASIS_ORDER)?;
    all.truncate(n);
    Ok(all)
}

/// Coded frames together with the basis masks that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    /// Pre-expansion masks; each tiles the modulator.
    pub masks: Vec<BinaryMask>,
    pub frames: Vec<ImageGrid>,
    pub dmd: (usize, usize),
    pub fpa: (usize, usize),
    pub seed: u64,
    /// Average of [`DARK_FRAMES`](crate::optics::DARK_FRAMES) all-off frames, subtracted before solving.
    pub dark: Option<ImageGrid>,
}

impl MeasurementSet {
    pub fn new(
        masks: Vec<BinaryMask>,
        frames: Vec<ImageGrid>,
        dmd: (usize, usize),
        fpa: (usize, usize),
        seed: u64,
        dark: Option<ImageGrid>,
    ) -> Result<Self> {
        if masks.is_empty() {
            return Err(Error::invalid("a measurement set needs at least one mask"));
        }
        if masks.len() != frames.len() {
            return Err(Error::invalid(format!("{} masks but {} frames", masks.len(), frames.len())));
        }
        for m in &masks {
            if m.rows() == 0 || !dmd.0.is_multiple_of(m.rows()) || !dmd.1.is_multiple_of(m.cols()) {
                return Err(Error::invalid(format!(
                    "a {}x{} mask does not tile a {}x{} modulator",
                    m.rows(),
                    m.cols(),
                    dmd.0,
                    dmd.1
                )));
            }
        }
        if frames.iter().chain(dark.iter()).any(|f| f.dims() != fpa) {
            return Err(Error::invalid(format!("every frame must be {}x{}", fpa.0, fpa.1)));
        }
        Ok(Self { masks, frames, dmd, fpa, seed, dark })
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn expanded_masks(&self) -> Result<Vec<BinaryMask>> {
        self.masks.iter().map(|m| expand_mask(m, self.dmd.0, self.dmd.1)).collect()
    }

    pub fn sampling_ratio(&self) -> Result<f64> {
        sampling_ratio(self.len(), self.fpa.0 * self.fpa.1, self.dmd.0 * self.dmd.1)
    }

    /// Frame `t` minus the dark reference.
    pub fn corrected_frame(&self, t: usize) -> Result<ImageGrid> {
        match &self.dark {
            Some(d) => ImageGrid::from_col_major(
                self.fpa.0,
                self.fpa.1,
                self.frames[t].as_slice().iter().zip(d.as_slice()).map(|(f, d)| f - d).collect(),
            ),
            None => Ok(self.frames[t].clone()),
        }
    }

    /// Writes `mask_%03d.pgm`, `frame_%03d.fgrid`, `dark.fgrid` and `meta`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (t, (m, f)) in self.masks.iter().zip(&self.frames).enumerate() {
            io::write_mask_pgm(&dir.join(format!("mask_{t:03}.pgm")), m)?;
            io::write_fgrid(&dir.join(format!("frame_{t:03}.fgrid")), f)?;
        }
        if let Some(d) = &self.dark {
            io::write_fgrid(&dir.join("dark.fgrid"), d)?;
        }
        let mut kv = KeyValues::new();
        kv.push("dmd_rows", self.dmd.0);
        kv.push("dmd_cols", self.dmd.1);
        kv.push("fpa_rows", self.fpa.0);
        kv.push("fpa_cols", self.fpa.1);
        kv.push("masks", self.len());
        kv.push("seed", self.seed);
        kv.push("dark_reference", if self.dark.is_some() { "dark.fgrid" } else { "none" });
        io::write_bytes(&dir.join("meta"), kv.to_text().as_bytes())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta");
        let kv = io::read_kv(&meta_path)?;
        let dmd = (kv.get_parsed("dmd_rows", &meta_path)?, kv.get_parsed("dmd_cols", &meta_path)?);
        let fpa = (kv.get_parsed("fpa_rows", &meta_path)?, kv.get_parsed("fpa_cols", &meta_path)?);
        let n: usize = kv.get_parsed("masks", &meta_path)?;
        let seed = kv.get_parsed("seed", &meta_path)?;
        let mut masks = Vec::with_capacity(n);
        let mut frames = Vec::with_capacity(n);
        for t in 0..n {
            masks.push(io::read_mask_pgm(&dir.join(format!("mask_{t:03}.pgm")))?);
            frames.push(io::read_fgrid(&dir.join(format!("frame_{t:03}.fgrid")))?);
        }
        let dark = match kv.require("dark_reference", &meta_path)? {
            "none" => None,
            name => Some(io::read_fgrid(&dir.join(name))?),
        };
        Self::new(masks, frames, dmd, fpa, seed, dark).map_err(|e| Error::format(&meta_path, e.to_string()))
    }
}

/// Simulates one frame per basis mask (expanded over the modulator) plus a
/// dark reference. Frame `t` draws its noise from `derive_seed(seed, t)`.
pub fn measure_sequence(
    c: &SparseCalibMatrix,
    model: &SystemModel,
    x: &ImageGrid,
    masks: &[BinaryMask],
    seed: u64,
) -> Result<MeasurementSet> {
    let dmd = (model.dmd_rows, model.dmd_cols);
    let fpa = (model.fpa_rows, model.fpa_cols);
    let expanded = masks
        .iter()
        .map(|m| expand_mask(m, dmd.0, dmd.1))
        .collect::<Result<Vec<_>>>()?;
    let frames = expanded
        .par_iter()
        .enumerate()
        .map(|(t, m)| forward_measure(c, m, x, model, derive_seed(seed, t as u64)))
        .collect::<Result<Vec<_>>>()?;
    let dark = dark_reference(c, model, seed)?;
    MeasurementSet::new(masks.to_vec(), frames, dmd, fpa, seed, Some(dark))
}

/// `x ↦ [C · diag(mask_t) · x]_t`, never materialized.
pub struct StackedOperator<'a> {
    c: &'a SparseCalibMatrix,
    masks: Vec<BinaryMask>,
}

impl<'a> StackedOperator<'a> {
    pub fn new(c: &'a SparseCalibMatrix, masks: Vec<BinaryMask>) -> Result<Self> {
        if masks.is_empty() {
            return Err(Error::invalid("stacked operator needs at least one mask"));
        }
        if let Some(m) = masks.iter().find(|m| m.len() != c.modulator_pixels()) {
            return Err(Error::invalid(format!(
                "a {}x{} mask does not match {} modulator pixels",
                m.rows(),
                m.cols(),
                c.modulator_pixels()
            )));
        }
        Ok(Self { c, masks })
    }
}

impl LinearOperator for StackedOperator<'_> {
    fn in_dim(&self) -> usize {
        self.c.modulator_pixels()
    }

    fn out_dim(&self) -> usize {
        self.c.sensor_pixels() * self.masks.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut gated = vec![0.0; x.len()];
        for (m, yt) in self.masks.iter().zip(y.chunks_exact_mut(self.c.sensor_pixels())) {
            for ((g, &v), &b) in gated.iter_mut().zip(x).zip(m.as_slice()) {
                *g = if b == 1 { v } else { 0.0 };
            }
            self.c.matvec(&gated, yt);
        }
    }

    fn apply_adjoint(&self, y: &[f64], x: &mut [f64]) {
        let mut back = vec![0.0; x.len()];
        x.fill(0.0);
        for (m, yt) in self.masks.iter().zip(y.chunks_exact(self.c.sensor_pixels())) {
            back.fill(0.0);
            self.c.transpose_matvec_add(yt, &mut back);
            for ((xi, &b), &v) in x.iter_mut().zip(m.as_slice()).zip(&back) {
                if b == 1 {
                    *xi += v;
                }
            }
        }
    }
}

pub fn stacked_operator(c: &SparseCalibMatrix, masks: Vec<BinaryMask>) -> Result<StackedOperator<'_>> {
    StackedOperator::new(c, masks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub psnr: Psnr,
    /// `(width, contrast)` per fringe group, when a target was given.
    pub contrasts: Vec<(usize, f64)>,
    pub sampling_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconResult {
    pub image: ImageGrid,
    pub report: SolveReport,
    pub sampling_ratio: f64,
    pub metrics: Option<Metrics>,
}

/// Solves the stacked system for the modulator-resolution image. The grid
/// shape in `cfg` is replaced by the modulator dims.
pub fn reconstruct(ms: &MeasurementSet, c: &SparseCalibMatrix, cfg: &SolverConfig) -> Result<ReconResult> {
    if c.shape() != (ms.fpa.0 * ms.fpa.1, ms.dmd.0 * ms.dmd.1) {
        return Err(Error::invalid(format!(
            "calibration matrix {:?} does not match a {}x{} sensor over a {}x{} modulator",
            c.shape(),
            ms.fpa.0,
            ms.fpa.1,
            ms.dmd.0,
            ms.dmd.1
        )));
    }
    let op = StackedOperator::new(c, ms.expanded_masks()?)?;
    let mut y = Vec::with_capacity(op.out_dim());
    for t in 0..ms.len() {
        y.extend(vectorize(&ms.corrected_frame(t)?));
    }
    let cfg = SolverConfig { grid_rows: ms.dmd.0, grid_cols: ms.dmd.1, ..cfg.clone() };
    let (x, report) = tv_solve(&op, &y, &cfg)?;
    Ok(ReconResult {
        image: devectorize(&x, ms.dmd.0, ms.dmd.1)?,
        report,
        sampling_ratio: ms.sampling_ratio()?,
        metrics: None,
    })
}

/// Michelson contrast of the fringe group of `width`, from the profile
/// across the stripes averaged over the group's band, split by the known
/// stripe phase.
pub fn fringe_contrast(img: &ImageGrid, spec: &TargetSpec, width: usize) -> Result<f64> {
    if img.dims() != (spec.rows, spec.cols) {
        return Err(Error::invalid(format!(
            "image is {:?} but the target is {}x{}",
            img.dims(),
            spec.rows,
            spec.cols
        )));
    }
    let group = spec.group(width)?;
    let profile = fringe_profile(img, spec, &group);
    let (mut peak, mut np, mut trough, mut nt) = (0.0, 0usize, 0.0, 0usize);
    for (j, v) in group.span.clone().zip(&profile) {
        if group.is_foreground(j) {
            peak += v;
            np += 1;
        } else {
            trough += v;
            nt += 1;
        }
    }
    let (peak, trough) = (peak / np as f64, trough / nt as f64);
    let den = peak + trough;
    if den <= 0.0 {
        return Ok(0.0);
    }
    Ok(((peak - trough) / den).clamp(0.0, 1.0))
}

/// PSNR against `truth`, fringe contrasts if `spec` is given, and the
/// sampling ratio.
pub fn evaluate(
    recon: &ReconResult,
    truth: &ImageGrid,
    spec: Option<&TargetSpec>,
    cfg: &MetricConfig,
) -> Result<Metrics> {
    let psnr = psnr(&recon.image, truth, cfg)?;
    let contrasts = match spec {
        Some(s) => s
            .fringe_widths
            .iter()
            .map(|&w| Ok((w, fringe_contrast(&recon.image, s, w)?)))
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    Ok(Metrics { psnr, contrasts, sampling_ratio: recon.sampling_ratio })
}

/// Repeats every pixel into a `k × k` block.
pub fn upsample_nearest(img: &ImageGrid, k: usize) -> Result<ImageGrid> {
    if k == 0 {
        return Err(Error::invalid("upsampling factor must be positive"));
    }
    ImageGrid::from_fn(img.rows() * k, img.cols() * k, |r, c| img.get(r / k, c / k))
}

/// The dark-corrected all-ones frame, upsampled to modulator resolution.
/// Returns `None` if the set has no all-ones mask.
pub fn lowres_view(ms: &MeasurementSet) -> Result<Option<ImageGrid>> {
    let Some(t) = ms.masks.iter().position(|m| m.count_ones() == m.len()) else {
        return Ok(None);
    };
    let frame = ms.corrected_frame(t)?;
    let k = ms.dmd.0 / ms.fpa.0;
    if ms.dmd != (ms.fpa.0 * k, ms.fpa.1 * k) {
        return Err(Error::invalid("low-res view needs an integer, isotropic undersampling"));
    }
    upsample_nearest(&frame, k).map(Some)
}

/// Block-averaged image, upsampled back: what an ideal low-res sensor sees.
pub fn block_average_view(img: &ImageGrid, k: usize) -> Result<ImageGrid> {
    upsample_nearest(&superpixel_bin(img, k)?, k)
}
