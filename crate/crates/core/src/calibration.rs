//! Recovering the calibration matrix `C`: exhaustive point scanning, and
//! compressive recovery of each row from a few random-mask frames.
//!
//! Row `ii` of `C` satisfies `y_t[ii] = ⟨mask_t, c_ii⟩` for every frame `t`,
//! so each row is an independent linear inverse problem. [`cs_calibrate`]
//! solves it with the TV solver on a window of the modulator around the
//! pixel's nominal block; contribution areas are local, so the window loses
//! nothing while keeping every solve small.

use std::ops::Range;

use rayon::prelude::*;

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::grid::{random_mask, BinaryMask, ImageGrid};
use crate::optics::{dark_reference, forward_measure, SystemModel};
use crate::solver::{tv_solve, DenseOperator, SolverConfig};
use crate::sparse::{Assembly, RowWarning, SparseCalibMatrix};

/// Default `sparsify_tau`.
pub const DEFAULT_TAU: f64 = 0.01;
/// Default guard around a region's nominal pre-image, in modulator pixels.
pub const DEFAULT_GUARD: usize = 8;
/// Default guard around one pixel's nominal block for its row solve.
pub const DEFAULT_ROW_GUARD: usize = 4;

/// A rectangle of modulator pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

impl Window {
    pub fn full(rows: usize, cols: usize) -> Self {
        Self { rows: 0..rows, cols: 0..cols }
    }

    pub fn height(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.cols.len()
    }

    pub fn len(&self) -> usize {
        self.height() * self.width()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Column-major indices into a grid with `grid_rows` rows, in the
    /// window's own column-major order.
    pub fn indices(&self, grid_rows: usize) -> impl Iterator<Item = usize> + '_ {
        self.cols
            .clone()
            .flat_map(move |c| self.rows.clone().map(move |r| r + c * grid_rows))
    }
}

/// Where each sensor pixel's nominal block sits on the modulator: pixel
/// `(r, c)` nominally covers rows `[o_r + r·s_r, o_r + (r+1)·s_r)` and the
/// analogous columns. The deformation of a real system is not known here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NominalMap {
    pub pitch: (f64, f64),
    pub origin: (f64, f64),
}

impl NominalMap {
    /// Sensor spread evenly over the modulator.
    pub fn uniform(dmd: (usize, usize), fpa: (usize, usize)) -> Self {
        Self {
            pitch: (dmd.0 as f64 / fpa.0 as f64, dmd.1 as f64 / fpa.1 as f64),
            origin: (0.0, 0.0),
        }
    }

    /// Nominal block of `(r, c)` grown by `guard` and clipped to `dmd`.
    pub fn window(&self, r: usize, c: usize, guard: usize, dmd: (usize, usize)) -> Window {
        Window {
            rows: span(self.origin.0, self.pitch.0, r, r + 1, guard, dmd.0),
            cols: span(self.origin.1, self.pitch.1, c, c + 1, guard, dmd.1),
        }
    }
}

fn span(origin: f64, pitch: f64, from: usize, to: usize, guard: usize, len: usize) -> Range<usize> {
    let lo = (origin + from as f64 * pitch).floor() as i64 - guard as i64;
    let hi = (origin + to as f64 * pitch).ceil() as i64 + guard as i64;
    let lo = lo.clamp(0, len as i64) as usize;
    let hi = hi.clamp(0, len as i64) as usize;
    lo..hi.max(lo)
}

/// Masks and the frames they produced.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibScan {
    dmd: (usize, usize),
    fpa: (usize, usize),
    nominal: NominalMap,
    masks: Vec<BinaryMask>,
    frames: Vec<ImageGrid>,
    dark_frame: Option<ImageGrid>,
}

impl CalibScan {
    pub fn new(
        dmd: (usize, usize),
        fpa: (usize, usize),
        masks: Vec<BinaryMask>,
        frames: Vec<ImageGrid>,
        dark_frame: Option<ImageGrid>,
    ) -> Result<Self> {
        Self::with_nominal(dmd, fpa, NominalMap::uniform(dmd, fpa), masks, frames, dark_frame)
    }

    pub fn with_nominal(
        dmd: (usize, usize),
        fpa: (usize, usize),
        nominal: NominalMap,
        masks: Vec<BinaryMask>,
        frames: Vec<ImageGrid>,
        dark_frame: Option<ImageGrid>,
    ) -> Result<Self> {
        if dmd.0 == 0 || dmd.1 == 0 || fpa.0 == 0 || fpa.1 == 0 {
            return Err(Error::invalid("scan dimensions must be positive"));
        }
        if masks.len() != frames.len() {
            return Err(Error::invalid(format!(
                "{} masks but {} frames",
                masks.len(),
                frames.len()
            )));
        }
        if let Some(t) = masks.iter().position(|m| m.dims() != dmd) {
            return Err(Error::invalid(format!("mask {t} is not {}x{}", dmd.0, dmd.1)));
        }
        if let Some(t) = frames.iter().position(|f| f.dims() != fpa) {
            return Err(Error::invalid(format!("frame {t} is not {}x{}", fpa.0, fpa.1)));
        }
        if dark_frame.as_ref().is_some_and(|d| d.dims() != fpa) {
            return Err(Error::invalid("dark frame does not match the sensor"));
        }
        Ok(Self { dmd, fpa, nominal, masks, frames, dark_frame })
    }

    pub fn dmd_dims(&self) -> (usize, usize) {
        self.dmd
    }

    pub fn fpa_dims(&self) -> (usize, usize) {
        self.fpa
    }

    pub fn nominal(&self) -> NominalMap {
        self.nominal
    }

    pub fn masks(&self) -> &[BinaryMask] {
        &self.masks
    }

    pub fn frames(&self) -> &[ImageGrid] {
        &self.frames
    }

    pub fn dark_frame(&self) -> Option<&ImageGrid> {
        self.dark_frame.as_ref()
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// Dark-subtracted readings of sensor pixel `ii`, one per frame.
    pub fn pixel_series(&self, ii: usize) -> Vec<f64> {
        let dark = self.dark_frame.as_ref().map_or(0.0, |d| d.as_slice()[ii]);
        self.frames.iter().map(|f| f.as_slice()[ii] - dark).collect()
    }
}

/// Calibrates by lighting one modulator pixel at a time. With
/// `subtract_dark`, an all-off mask is measured first and subtracted from
/// every response. Only positive responses are stored.
pub fn point_scan_calibrate(
    mut measure: impl FnMut(&BinaryMask) -> Result<ImageGrid>,
    dmd: (usize, usize),
    fpa: (usize, usize),
    subtract_dark: bool,
) -> Result<SparseCalibMatrix> {
    let mut checked = |mask: &BinaryMask, step: &str| -> Result<ImageGrid> {
        let frame = measure(mask)?;
        if frame.dims() != fpa {
            return Err(Error::Protocol(format!(
                "{step}: sensor returned {}x{} instead of {}x{}",
                frame.rows(),
                frame.cols(),
                fpa.0,
                fpa.1
            )));
        }
        Ok(frame)
    };
    let p = fpa.0 * fpa.1;
    let dark = if subtract_dark {
        let zero = BinaryMask::from_col_major(dmd.0, dmd.1, vec![0; dmd.0 * dmd.1])?;
        checked(&zero, "dark frame")?.into_vec()
    } else {
        vec![0.0; p]
    };
    let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); p];
    for j in 0..dmd.0 * dmd.1 {
        let (mr, mc) = (j % dmd.0, j / dmd.0);
        let frame = checked(&BinaryMask::single(dmd.0, dmd.1, mr, mc)?, &format!("pixel ({mr}, {mc})"))?;
        for (ii, (&v, &d)) in frame.as_slice().iter().zip(&dark).enumerate() {
            let v = v - d;
            if v > 0.0 {
                rows[ii].push((j as u32, v));
            }
        }
    }
    SparseCalibMatrix::from_rows(p, dmd.0 * dmd.1, rows)
}

/// Simulates a calibration scan of `m` half-density random masks against a
/// uniform unit source. Mask `t` comes from `derive_seed(seed, t)`; its
/// frame noise from a separate stream. The dark reference is included.
pub fn simulate_scan(c: &SparseCalibMatrix, model: &SystemModel, m: usize, seed: u64) -> Result<CalibScan> {
    let dmd = (model.dmd_rows, model.dmd_cols);
    let fpa = (model.fpa_rows, model.fpa_cols);
    let source = ImageGrid::filled(dmd.0, dmd.1, 1.0)?;
    let pairs = (0..m)
        .into_par_iter()
        .map(|t| {
            let mask = random_mask(dmd.0, dmd.1, 0.5, derive_seed(seed, t as u64))?;
            let noise = derive_seed(derive_seed(seed, t as u64), 1);
            let frame = forward_measure(c, &mask, &source, model, noise)?;
            Ok((mask, frame))
        })
        .collect::<Result<Vec<_>>>()?;
    let (masks, frames) = pairs.into_iter().unzip();
    let dark = dark_reference(c, model, seed)?;
    CalibScan::new(dmd, fpa, masks, frames, Some(dark))
}

/// Which modulator pixels a row solve may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowWindow {
    /// The whole modulator.
    Full,
    /// The pixel's nominal block grown by `guard` on each side.
    Local { guard: usize },
}

impl Default for RowWindow {
    fn default() -> Self {
        RowWindow::Local { guard: DEFAULT_ROW_GUARD }
    }
}

/// Zeroes entries below `tau · max(row)` and any non-positive entries.
pub fn threshold_support(row: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::invalid(format!("tau must lie in [0, 1), got {tau}")));
    }
    let max = row.iter().cloned().fold(0.0, f64::max);
    let floor = tau * max;
    Ok(row.iter().map(|&v| if v > 0.0 && v >= floor { v } else { 0.0 }).collect())
}

type SparseRow = Vec<(u32, f64)>;

/// Recovers every row of `C` from `scan` with the TV solver. `solver`
/// supplies everything but the grid shape, which is set per row window.
pub fn cs_calibrate(scan: &CalibScan, solver: &SolverConfig, tau: f64, window: RowWindow) -> Result<Assembly> {
    threshold_support(&[], tau)?;
    let (dmd, fpa) = (scan.dmd, scan.fpa);
    let solved: Vec<Result<Option<SparseRow>>> = (0..fpa.0 * fpa.1)
        .into_par_iter()
        .map(|ii| {
            let y = scan.pixel_series(ii);
            if y.iter().all(|&v| v == 0.0) {
                return Ok(None);
            }
            let win = match window {
                RowWindow::Full => Window::full(dmd.0, dmd.1),
                RowWindow::Local { guard } => scan.nominal.window(ii % fpa.0, ii / fpa.0, guard, dmd),
            };
            if win.is_empty() {
                return Ok(None);
            }
            solve_row(scan, &win, &y, solver, tau).map(Some)
        })
        .collect();
    let mut rows = Vec::with_capacity(solved.len());
    let mut warnings = Vec::new();
    for (ii, r) in solved.into_iter().enumerate() {
        match r? {
            Some(row) => rows.push(row),
            None => {
                warnings.push(RowWarning {
                    row: ii,
                    message: format!(
                        "sensor pixel ({}, {}) saw no signal in any frame",
                        ii % fpa.0,
                        ii / fpa.0
                    ),
                });
                rows.push(Vec::new());
            }
        }
    }
    let matrix = SparseCalibMatrix::from_rows(fpa.0 * fpa.1, dmd.0 * dmd.1, rows)?;
    Ok(Assembly { matrix, warnings })
}

fn solve_row(
    scan: &CalibScan,
    win: &Window,
    y: &[f64],
    solver: &SolverConfig,
    tau: f64,
) -> Result<Vec<(u32, f64)>> {
    let idx: Vec<usize> = win.indices(scan.dmd.0).collect();
    let a = DenseOperator::from_fn(scan.len(), idx.len(), |t, k| {
        f64::from(scan.masks[t].as_slice()[idx[k]])
    });
    let cfg = SolverConfig {
        grid_rows: win.height(),
        grid_cols: win.width(),
        nonneg: true,
        ..solver.clone()
    };
    let (x, _) = tv_solve(&a, y, &cfg)?;
    let x = threshold_support(&x, tau)?;
    Ok(idx
        .iter()
        .zip(&x)
        .filter(|(_, &v)| v > 0.0)
        .map(|(&j, &v)| (j as u32, v))
        .collect())
}

/// A rectangle of sensor pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Region {
    /// Splits a `rows × cols` sensor into an `nr × nc` grid of regions.
    pub fn grid(rows: usize, cols: usize, nr: usize, nc: usize) -> Result<Vec<Region>> {
        if nr == 0 || nc == 0 || nr > rows || nc > cols {
            return Err(Error::invalid(format!("cannot split {rows}x{cols} into {nr}x{nc} regions")));
        }
        let cuts = |len: usize, n: usize| -> Vec<usize> { (0..=n).map(|i| i * len / n).collect() };
        let (rc, cc) = (cuts(rows, nr), cuts(cols, nc));
        let mut out = Vec::with_capacity(nr * nc);
        for j in 0..nc {
            for i in 0..nr {
                out.push(Region {
                    row0: rc[i],
                    col0: cc[j],
                    rows: rc[i + 1] - rc[i],
                    cols: cc[j + 1] - cc[j],
                });
            }
        }
        Ok(out)
    }
}

/// One independently calibrated piece: a sensor region and the modulator
/// window its pixels can see.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPlan {
    pub region: Region,
    pub window: Window,
    /// Global sensor index of each local sensor pixel (column-major).
    pub sensor_index: Vec<usize>,
    /// Global modulator index of each local modulator pixel (column-major).
    pub modulator_index: Vec<usize>,
    nominal: NominalMap,
}

impl RegionPlan {
    /// Crops `scan` to this region. Every mask is kept, so each region
    /// sees the same number of measurements as the whole.
    pub fn sub_scan(&self, scan: &CalibScan) -> Result<CalibScan> {
        let dmd_rows = scan.dmd.0;
        let masks = scan
            .masks
            .iter()
            .map(|m| {
                let data = self.window.indices(dmd_rows).map(|j| m.as_slice()[j]).collect();
                BinaryMask::from_col_major(self.window.height(), self.window.width(), data)
            })
            .collect::<Result<Vec<_>>>()?;
        let crop = |f: &ImageGrid| {
            let data = self.sensor_index.iter().map(|&i| f.as_slice()[i]).collect();
            ImageGrid::from_col_major(self.region.rows, self.region.cols, data)
        };
        let frames = scan.frames.iter().map(crop).collect::<Result<Vec<_>>>()?;
        let dark = scan.dark_frame.as_ref().map(crop).transpose()?;
        CalibScan::with_nominal(
            (self.window.height(), self.window.width()),
            (self.region.rows, self.region.cols),
            self.nominal,
            masks,
            frames,
            dark,
        )
    }
}

/// Plans per-region calibration. Each region's window is the union of its
/// pixels' nominal blocks grown by `guard`. Regions must lie on the sensor
/// and must not overlap; uncovered pixels stay empty on reassembly.
pub fn split_regions(
    dmd: (usize, usize),
    fpa: (usize, usize),
    regions: &[Region],
    guard: usize,
) -> Result<Vec<RegionPlan>> {
    let global = NominalMap::uniform(dmd, fpa);
    let mut owner = vec![usize::MAX; fpa.0 * fpa.1];
    let mut plans = Vec::with_capacity(regions.len());
    for (k, reg) in regions.iter().enumerate() {
        if reg.rows == 0 || reg.cols == 0 || reg.row0 + reg.rows > fpa.0 || reg.col0 + reg.cols > fpa.1 {
            return Err(Error::invalid(format!("region {k} {reg:?} is empty or leaves the sensor")));
        }
        let mut sensor_index = Vec::with_capacity(reg.rows * reg.cols);
        for c in reg.col0..reg.col0 + reg.cols {
            for r in reg.row0..reg.row0 + reg.rows {
                let ii = r + c * fpa.0;
                if owner[ii] != usize::MAX {
                    return Err(Error::invalid(format!(
                        "regions {} and {k} overlap at sensor pixel ({r}, {c})",
                        owner[ii]
                    )));
                }
                owner[ii] = k;
                sensor_index.push(ii);
            }
        }
        let window = Window {
            rows: span(0.0, global.pitch.0, reg.row0, reg.row0 + reg.rows, guard, dmd.0),
            cols: span(0.0, global.pitch.1, reg.col0, reg.col0 + reg.cols, guard, dmd.1),
        };
        let nominal = NominalMap {
            pitch: global.pitch,
            origin: (
                reg.row0 as f64 * global.pitch.0 - window.rows.start as f64,
                reg.col0 as f64 * global.pitch.1 - window.cols.start as f64,
            ),
        };
        let modulator_index = window.indices(dmd.0).collect();
        plans.push(RegionPlan { region: *reg, window, sensor_index, modulator_index, nominal });
    }
    Ok(plans)
}

/// Maps per-region results back into a full `C`.
pub fn assemble_regions(
    dmd: (usize, usize),
    fpa: (usize, usize),
    plans: &[RegionPlan],
    parts: &[Assembly],
) -> Result<Assembly> {
    if plans.len() != parts.len() {
        return Err(Error::invalid(format!("{} plans but {} results", plans.len(), parts.len())));
    }
    let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); fpa.0 * fpa.1];
    let mut warnings = Vec::new();
    for (plan, part) in plans.iter().zip(parts) {
        if part.matrix.shape() != (plan.sensor_index.len(), plan.modulator_index.len()) {
            return Err(Error::invalid("region result does not match its plan"));
        }
        for (local, &ii) in plan.sensor_index.iter().enumerate() {
            let (cols, vals) = part.matrix.row(local);
            rows[ii] = cols
                .iter()
                .zip(vals)
                .map(|(&j, &v)| (plan.modulator_index[j as usize] as u32, v))
                .collect();
        }
        warnings.extend(part.warnings.iter().map(|w| RowWarning {
            row: plan.sensor_index[w.row],
            message: w.message.clone(),
        }));
    }
    warnings.sort_by_key(|w| w.row);
    let matrix = SparseCalibMatrix::from_rows(fpa.0 * fpa.1, dmd.0 * dmd.1, rows)?;
    Ok(Assembly { matrix, warnings })
}

/// Calibrates region by region and reassembles.
pub fn cs_calibrate_split(
    scan: &CalibScan,
    regions: &[Region],
    guard: usize,
    solver: &SolverConfig,
    tau: f64,
    window: RowWindow,
) -> Result<Assembly> {
    let plans = split_regions(scan.dmd, scan.fpa, regions, guard)?;
    let parts = plans
        .iter()
        .map(|p| cs_calibrate(&p.sub_scan(scan)?, solver, tau, window))
        .collect::<Result<Vec<_>>>()?;
    assemble_regions(scan.dmd, scan.fpa, &plans, &parts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibError {
    /// `‖C_est − C_true‖_F / ‖C_true‖_F`.
    pub frobenius_rel: f64,
    /// Per-row Jaccard index of the supports after thresholding both at
    /// `tau`. Two empty rows count as 1.
    pub row_support_jaccard: Vec<f64>,
}

impl CalibError {
    pub fn mean_jaccard(&self) -> f64 {
        if self.row_support_jaccard.is_empty() {
            return 1.0;
        }
        self.row_support_jaccard.iter().sum::<f64>() / self.row_support_jaccard.len() as f64
    }

    pub fn min_jaccard(&self) -> f64 {
        self.row_support_jaccard.iter().cloned().fold(1.0, f64::min)
    }
}

pub fn calib_error(est: &SparseCalibMatrix, truth: &SparseCalibMatrix, tau: f64) -> Result<CalibError> {
    if est.shape() != truth.shape() {
        return Err(Error::invalid(format!(
            "estimate is {:?} but truth is {:?}",
            est.shape(),
            truth.shape()
        )));
    }
    threshold_support(&[], tau)?;
    let mut diff2 = 0.0;
    let mut jaccard = Vec::with_capacity(est.sensor_pixels());
    for ii in 0..est.sensor_pixels() {
        let (ec, ev) = est.row(ii);
        let (tc, tv) = truth.row(ii);
        let (mut i, mut j) = (0, 0);
        while i < ec.len() || j < tc.len() {
            if j == tc.len() || (i < ec.len() && ec[i] < tc[j]) {
                diff2 += ev[i] * ev[i];
                i += 1;
            } else if i == ec.len() || tc[j] < ec[i] {
                diff2 += tv[j] * tv[j];
                j += 1;
            } else {
                diff2 += (ev[i] - tv[j]).powi(2);
                i += 1;
                j += 1;
            }
        }
        jaccard.push(support_jaccard(ec, ev, tc, tv, tau));
    }
    let tn = truth.frobenius_norm();
    let frobenius_rel = if tn > 0.0 {
        diff2.sqrt() / tn
    } else if diff2 == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(CalibError { frobenius_rel, row_support_jaccard: jaccard })
}

fn support_jaccard(ec: &[u32], ev: &[f64], tc: &[u32], tv: &[f64], tau: f64) -> f64 {
    let support = |c: &[u32], v: &[f64]| -> Vec<u32> {
        let max = v.iter().cloned().fold(0.0, f64::max);
        c.iter()
            .zip(v)
            .filter(|(_, &x)| x > 0.0 && x >= tau * max)
            .map(|(&c, _)| c)
            .collect()
    };
    let (a, b) = (support(ec, ev), support(tc, tv));
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    inter as f64 / (a.len() + b.len() - inter) as f64
}
