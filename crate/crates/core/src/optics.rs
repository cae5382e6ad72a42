//! Synthetic optical systems: ground-truth calibration matrices, sensor
//! frames, resolution targets and phantom loading.
//!
//! A sensor pixel collects light from a square region of the modulator, one
//! block of `undersample × undersample` pixels wide, centered at the affine
//! image of its nominal block center and blurred by a Gaussian of standard
//! deviation `psf_sigma`. The weight of modulator pixel `p` along one axis is
//! the blurred box integrated over `[p, p + 1)`, so `psf_sigma = 0` gives
//! exact area overlap.

use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, ImageGrid};
use crate::io::{self, KeyValues};
use crate::sparse::{Assembly, RowWarning, SparseCalibMatrix};

/// Footprint entries below this fraction of the row peak are dropped.
pub const TRUNCATION: f64 = 1e-4;

/// Zero-mask frames averaged into the dark reference.
pub const DARK_FRAMES: usize = 16;

/// Affine map `[a b tx; c d ty]` on `(row, col)` coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine(pub [f64; 6]);

impl Affine {
    pub const IDENTITY: Affine = Affine([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    /// Scale by `scale` and rotate by `degrees` about `center`.
    pub fn similarity(center: (f64, f64), scale: f64, degrees: f64) -> Self {
        let (s, c) = degrees.to_radians().sin_cos();
        let (a, b, cc, d) = (scale * c, -scale * s, scale * s, scale * c);
        let tx = center.0 - (a * center.0 + b * center.1);
        let ty = center.1 - (cc * center.0 + d * center.1);
        Affine([a, b, tx, cc, d, ty])
    }

    pub fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        let [a, b, tx, c, d, ty] = self.0;
        (a * p.0 + b * p.1 + tx, c * p.0 + d * p.1 + ty)
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    /// Stretch of the row and column axes.
    fn axis_scales(&self) -> (f64, f64) {
        let [a, b, _, c, d, _] = self.0;
        (a.hypot(b), c.hypot(d))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub dmd_rows: usize,
    pub dmd_cols: usize,
    pub fpa_rows: usize,
    pub fpa_cols: usize,
    pub undersample: usize,
    pub psf_sigma: f64,
    /// Nominal block center (modulator coordinates) to footprint center.
    pub deform: Affine,
    /// Column-major over sensor pixels.
    pub gain: Vec<f64>,
    /// Column-major over sensor pixels.
    pub dark: Vec<f64>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SystemModel {
    /// An ideal system: identity deform, no blur, unit gain, no dark, no noise.
    pub fn ideal(fpa_rows: usize, fpa_cols: usize, undersample: usize) -> Self {
        let p = fpa_rows * fpa_cols;
        Self {
            dmd_rows: fpa_rows * undersample,
            dmd_cols: fpa_cols * undersample,
            fpa_rows,
            fpa_cols,
            undersample,
            psf_sigma: 0.0,
            deform: Affine::IDENTITY,
            gain: vec![1.0; p],
            dark: vec![0.0; p],
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    /// 64×64 modulator, 16×16 sensor, blur 1.5, ±10 % gain and a small dark
    /// offset drawn from `seed`.
    pub fn desk(seed: u64) -> Self {
        let mut m = Self::ideal(16, 16, 4);
        m.psf_sigma = 1.5;
        m.seed = seed;
        m.draw_nonuniformity();
        m
    }

    /// 64×64 modulator seen by a 20×20 sensor through a magnifying, slightly
    /// rotated relay. The image spills about two sensor pixels past each
    /// edge of the central 16×16.
    pub fn desk_wide(seed: u64) -> Self {
        let mut m = Self::desk(seed);
        m.fpa_rows = 20;
        m.fpa_cols = 20;
        m.deform = Affine::similarity((32.0, 32.0), 0.8, 1.0);
        m.draw_nonuniformity();
        m
    }

    fn draw_nonuniformity(&mut self) {
        let p = self.sensor_pixels();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, 1));
        self.gain = (0..p).map(|_| rng.random_range(0.9..1.1)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, 2));
        self.dark = (0..p).map(|_| rng.random_range(0.0..0.02)).collect();
    }

    pub fn sensor_pixels(&self) -> usize {
        self.fpa_rows * self.fpa_cols
    }

    pub fn modulator_pixels(&self) -> usize {
        self.dmd_rows * self.dmd_cols
    }

    pub fn validate(&self) -> Result<()> {
        if self.dmd_rows == 0 || self.dmd_cols == 0 || self.fpa_rows == 0 || self.fpa_cols == 0 {
            return Err(Error::invalid("system dimensions must be positive"));
        }
        if self.undersample == 0 {
            return Err(Error::invalid("undersample must be at least 1"));
        }
        if self.deform.is_identity()
            && (self.dmd_rows != self.undersample * self.fpa_rows
                || self.dmd_cols != self.undersample * self.fpa_cols)
        {
            return Err(Error::invalid(format!(
                "identity deform needs a {}x{} modulator for a {}x{} sensor at undersample {}",
                self.undersample * self.fpa_rows,
                self.undersample * self.fpa_cols,
                self.fpa_rows,
                self.fpa_cols,
                self.undersample
            )));
        }
        if self.deform.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("deform must be finite"));
        }
        if !(self.psf_sigma >= 0.0 && self.psf_sigma.is_finite()) {
            return Err(Error::invalid("psf_sigma must be finite and >= 0"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise_sigma must be finite and >= 0"));
        }
        let p = self.sensor_pixels();
        if self.gain.len() != p || self.dark.len() != p {
            return Err(Error::invalid(format!(
                "gain and dark need {p} entries, got {} and {}",
                self.gain.len(),
                self.dark.len()
            )));
        }
        if self.gain.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
            return Err(Error::invalid("gain entries must be positive"));
        }
        if self.dark.iter().any(|d| !d.is_finite()) {
            return Err(Error::invalid("dark entries must be finite"));
        }
        Ok(())
    }

    /// Footprint center of sensor pixel `(r, c)` in modulator coordinates.
    /// The sensor grid is centered on the modulator before deformation.
    pub fn footprint_center(&self, r: usize, c: usize) -> (f64, f64) {
        let k = self.undersample as f64;
        let off_r = (self.dmd_rows as f64 - k * self.fpa_rows as f64) / 2.0;
        let off_c = (self.dmd_cols as f64 - k * self.fpa_cols as f64) / 2.0;
        self.deform
            .apply((k * (r as f64 + 0.5) + off_r, k * (c as f64 + 0.5) + off_c))
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.push("dmd_rows", self.dmd_rows);
        kv.push("dmd_cols", self.dmd_cols);
        kv.push("fpa_rows", self.fpa_rows);
        kv.push("fpa_cols", self.fpa_cols);
        kv.push("undersample", self.undersample);
        kv.push("psf_sigma", self.psf_sigma);
        kv.push("deform", io::join_f64(&self.deform.0));
        kv.push("gain", io::join_f64(&self.gain));
        kv.push("dark", io::join_f64(&self.dark));
        kv.push("noise_sigma", self.noise_sigma);
        kv.push("seed", self.seed);
        kv
    }

    /// Parses and validates. `path` is only used in error messages.
    pub fn from_kv(kv: &KeyValues, path: &Path) -> Result<Self> {
        let deform = io::parse_f64_list(kv.require("deform", path)?, "deform", path)?;
        let deform: [f64; 6] = deform
            .try_into()
            .map_err(|_| Error::format(path, "deform needs 6 values"))?;
        let m = Self {
            dmd_rows: kv.get_parsed("dmd_rows", path)?,
            dmd_cols: kv.get_parsed("dmd_cols", path)?,
            fpa_rows: kv.get_parsed("fpa_rows", path)?,
            fpa_cols: kv.get_parsed("fpa_cols", path)?,
            undersample: kv.get_parsed("undersample", path)?,
            psf_sigma: kv.get_parsed("psf_sigma", path)?,
            deform: Affine(deform),
            gain: io::parse_f64_list(kv.require("gain", path)?, "gain", path)?,
            dark: io::parse_f64_list(kv.require("dark", path)?, "dark", path)?,
            noise_sigma: kv.get_parsed("noise_sigma", path)?,
            seed: kv.get_parsed("seed", path)?,
        };
        m.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_bytes(path, self.to_kv().to_text().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_kv(&io::read_kv(path)?, path)
    }
}

/// Standard normal CDF.
fn phi(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// `∫_{-∞}^{t} Φ(s/σ) ds`.
fn ramp(t: f64, sigma: f64) -> f64 {
    let z = t / sigma;
    t * phi(z) + sigma * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Box `[lo, hi]` blurred by a Gaussian of std `sigma`, integrated over the
/// pixel `[p, p + 1)`.
pub fn blurred_box_weight(p: f64, lo: f64, hi: f64, sigma: f64) -> f64 {
    let w = if sigma == 0.0 {
        hi.min(p + 1.0) - lo.max(p)
    } else {
        (ramp(hi - p, sigma) - ramp(hi - p - 1.0, sigma))
            - (ramp(lo - p, sigma) - ramp(lo - p - 1.0, sigma))
    };
    w.max(0.0)
}

/// Weights along one axis, normalized to unit total before truncation.
/// Returns the unclipped peak and the in-range `(pixel, weight)` pairs.
fn axis_profile(center: f64, side: f64, sigma: f64, len: usize) -> (f64, Vec<(usize, f64)>) {
    let (lo, hi) = (center - side / 2.0, center + side / 2.0);
    let reach = 8.0 * sigma + 1.0;
    let first = (lo - reach).floor() as i64;
    let last = (hi + reach).ceil() as i64;
    let mut peak = 0.0f64;
    let mut out = Vec::new();
    for p in first..=last {
        let w = blurred_box_weight(p as f64, lo, hi, sigma) / side;
        peak = peak.max(w);
        if p >= 0 && (p as usize) < len && w > 0.0 {
            out.push((p as usize, w));
        }
    }
    (peak, out)
}

/// Synthesizes the ground-truth calibration matrix of `model`.
pub fn build_system(model: &SystemModel) -> Result<Assembly> {
    model.validate()?;
    let k = model.undersample as f64;
    let (sr, sc) = model.deform.axis_scales();
    let (side_r, side_c) = (k * sr, k * sc);
    let rows: Vec<Vec<(u32, f64)>> = (0..model.sensor_pixels())
        .into_par_iter()
        .map(|ii| {
            let (r, c) = (ii % model.fpa_rows, ii / model.fpa_rows);
            let (cr, cc) = model.footprint_center(r, c);
            let (peak_r, wr) = axis_profile(cr, side_r, model.psf_sigma, model.dmd_rows);
            let (peak_c, wc) = axis_profile(cc, side_c, model.psf_sigma, model.dmd_cols);
            let floor = TRUNCATION * peak_r * peak_c;
            let mut row = Vec::new();
            for &(q, vc) in &wc {
                for &(p, vr) in &wr {
                    let w = vr * vc;
                    if w >= floor {
                        row.push(((p + q * model.dmd_rows) as u32, model.gain[ii] * w));
                    }
                }
            }
            row
        })
        .collect();
    let warnings = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_empty())
        .map(|(ii, _)| RowWarning {
            row: ii,
            message: format!(
                "footprint of sensor pixel ({}, {}) lies outside the modulator",
                ii % model.fpa_rows,
                ii / model.fpa_rows
            ),
        })
        .collect();
    let matrix = SparseCalibMatrix::from_rows(model.sensor_pixels(), model.modulator_pixels(), rows)?;
    Ok(Assembly { matrix, warnings })
}

/// One sensor frame: `C · diag(mask) · x + dark + noise`. Noise is drawn
/// from `frame_seed` alone.
pub fn forward_measure(
    c: &SparseCalibMatrix,
    mask: &BinaryMask,
    x: &ImageGrid,
    model: &SystemModel,
    frame_seed: u64,
) -> Result<ImageGrid> {
    if x.dims() != mask.dims() {
        return Err(Error::invalid(format!(
            "image is {:?} but mask is {:?}",
            x.dims(),
            mask.dims()
        )));
    }
    if c.shape() != (model.sensor_pixels(), x.len()) {
        return Err(Error::invalid(format!(
            "calibration matrix {:?} does not map a {:?} image to a {}x{} sensor",
            c.shape(),
            x.dims(),
            model.fpa_rows,
            model.fpa_cols
        )));
    }
    if model.dark.len() != model.sensor_pixels() {
        return Err(Error::invalid("dark field has the wrong length"));
    }
    let masked: Vec<f64> = x
        .as_slice()
        .iter()
        .zip(mask.as_slice())
        .map(|(&v, &m)| if m == 1 { v } else { 0.0 })
        .collect();
    let mut y = vec![0.0; model.sensor_pixels()];
    c.matvec(&masked, &mut y);
    for (v, d) in y.iter_mut().zip(&model.dark) {
        *v += d;
    }
    if model.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, model.noise_sigma)
            .map_err(|e| Error::invalid(format!("noise: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(frame_seed);
        for v in y.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    ImageGrid::from_col_major(model.fpa_rows, model.fpa_cols, y)
}

/// Average of [`DARK_FRAMES`] all-off frames.
pub fn dark_reference(c: &SparseCalibMatrix, model: &SystemModel, seed: u64) -> Result<ImageGrid> {
    let off = BinaryMask::from_col_major(model.dmd_rows, model.dmd_cols, vec![0; model.modulator_pixels()])?;
    let zero = ImageGrid::zeros(model.dmd_rows, model.dmd_cols)?;
    let stream = derive_seed(seed, u64::MAX);
    let mut acc = vec![0.0; model.sensor_pixels()];
    for i in 0..DARK_FRAMES {
        let f = forward_measure(c, &off, &zero, model, derive_seed(stream, i as u64))?;
        for (a, v) in acc.iter_mut().zip(f.as_slice()) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= DARK_FRAMES as f64);
    ImageGrid::from_col_major(model.fpa_rows, model.fpa_cols, acc)
}

/// Noise standard deviation giving `snr_db` against a signal of RMS `signal_rms`.
pub fn noise_sigma_for_snr(signal_rms: f64, snr_db: f64) -> f64 {
    signal_rms / 10f64.powf(snr_db / 20.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// Vertical stripes; the profile runs along columns.
    Vertical,
    /// Horizontal stripes; the profile runs along rows.
    Horizontal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetSpec {
    pub rows: usize,
    pub cols: usize,
    pub fringe_widths: Vec<usize>,
    pub orientation: Orientation,
}

/// Placement of one fringe group. `band` runs along the stripes, `span`
/// across them; stripes start at `span.start` and alternate every `width`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FringeGroup {
    pub width: usize,
    pub band: Range<usize>,
    pub span: Range<usize>,
    pub stripes: usize,
}

impl FringeGroup {
    /// Whether position `j` across the stripes is foreground.
    pub fn is_foreground(&self, j: usize) -> bool {
        self.span.contains(&j) && ((j - self.span.start) / self.width).is_multiple_of(2)
    }
}

impl TargetSpec {
    /// 64×64, widths 1, 2 and 4, vertical stripes.
    pub fn standard() -> Self {
        Self {
            rows: 64,
            cols: 64,
            fringe_widths: vec![1, 2, 4],
            orientation: Orientation::Vertical,
        }
    }

    /// `(along, across)` extents.
    fn extents(&self) -> (usize, usize) {
        match self.orientation {
            Orientation::Vertical => (self.rows, self.cols),
            Orientation::Horizontal => (self.cols, self.rows),
        }
    }

    /// Groups are stacked along the stripes with background gaps of
    /// `along / 16` (at least 1). Stripes start `across / 8` in.
    pub fn layout(&self) -> Result<Vec<FringeGroup>> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::invalid("target dimensions must be positive"));
        }
        let g = self.fringe_widths.len();
        if g == 0 {
            return Err(Error::invalid("target needs at least one fringe width"));
        }
        let limit = self.rows.min(self.cols) / 4;
        if let Some(&w) = self.fringe_widths.iter().find(|&&w| w == 0 || w > limit) {
            return Err(Error::invalid(format!(
                "fringe width {w} outside 1..={limit} for a {}x{} target",
                self.rows, self.cols
            )));
        }
        let (along, across) = self.extents();
        let gap = (along / 16).max(1);
        let band = along.saturating_sub((g + 1) * gap) / g;
        if band == 0 {
            return Err(Error::invalid(format!("{g} fringe groups do not fit in {along} pixels")));
        }
        let start = across / 8;
        let usable = across - 2 * start;
        let mut groups = Vec::with_capacity(g);
        for (i, &w) in self.fringe_widths.iter().enumerate() {
            let stripes = (usable + w) / (2 * w);
            if stripes < 2 {
                return Err(Error::invalid(format!(
                    "fringe width {w} leaves fewer than two stripes across {across} pixels"
                )));
            }
            let b0 = gap + i * (band + gap);
            groups.push(FringeGroup {
                width: w,
                band: b0..b0 + band,
                span: start..start + (2 * stripes - 1) * w,
                stripes,
            });
        }
        Ok(groups)
    }

    pub fn group(&self, width: usize) -> Result<FringeGroup> {
        self.layout()?
            .into_iter()
            .find(|g| g.width == width)
            .ok_or_else(|| Error::invalid(format!("target has no fringe group of width {width}")))
    }

    /// Maps image `(r, c)` to `(along, across)`.
    pub fn to_local(&self, r: usize, c: usize) -> (usize, usize) {
        match self.orientation {
            Orientation::Vertical => (r, c),
            Orientation::Horizontal => (c, r),
        }
    }
}

/// Mean over the group's band at each position of its span.
pub fn fringe_profile(img: &ImageGrid, spec: &TargetSpec, group: &FringeGroup) -> Vec<f64> {
    let n = group.band.len() as f64;
    group
        .span
        .clone()
        .map(|b| {
            group
                .band
                .clone()
                .map(|a| match spec.orientation {
                    Orientation::Vertical => img.get(a, b),
                    Orientation::Horizontal => img.get(b, a),
                })
                .sum::<f64>()
                / n
        })
        .collect()
}

/// Binary fringe target: foreground 1, background 0.
pub fn generate_resolution_target(spec: &TargetSpec) -> Result<ImageGrid> {
    let groups = spec.layout()?;
    ImageGrid::from_fn(spec.rows, spec.cols, |r, c| {
        let (a, b) = spec.to_local(r, c);
        let on = groups.iter().any(|g| g.band.contains(&a) && g.is_foreground(b));
        if on {
            1.0
        } else {
            0.0
        }
    })
}

/// Loads a `.pgm` (scaled by its maxval) or `.fgrid` (min-max rescaled
/// unless already inside `[0, 1]`) as a `[0, 1]` image.
pub fn load_bitmap_phantom(path: &Path) -> Result<ImageGrid> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext.to_ascii_lowercase().as_str() {
        "pgm" => {
            let pgm = io::read_pgm(path)?;
            let maxval = f64::from(pgm.maxval);
            pgm.grid.map(|v| v / maxval)
        }
        "fgrid" => {
            let grid = io::read_fgrid(path)?;
            let (lo, hi) = grid.min_max();
            if lo >= 0.0 && hi <= 1.0 {
                Ok(grid)
            } else if hi > lo {
                grid.map(|v| (v - lo) / (hi - lo))
            } else {
                Err(Error::DegenerateNormalization(format!(
                    "{} is constant outside [0, 1]",
                    path.display()
                )))
            }
        }
        _ => Err(Error::format(path, "phantom must be a .pgm or .fgrid file")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::random_mask;

    #[test]
    fn block_average_limit() {
        let m = SystemModel::ideal(4, 5, 4);
        let a = build_system(&m).unwrap();
        assert!(a.warnings.is_empty());
        for ii in 0..m.sensor_pixels() {
            let (cols, vals) = a.matrix.row(ii);
            assert_eq!(cols.len(), 16);
            assert!(vals.iter().all(|&v| v == 1.0 / 16.0));
            let (r, c) = (ii % 4, ii / 4);
            for &j in cols {
                let (p, q) = (j as usize % 16, j as usize / 16);
                assert_eq!((p / 4, q / 4), (r, c));
            }
        }
    }

    #[test]
    fn unit_undersample_is_identity() {
        let a = build_system(&SystemModel::ideal(6, 3, 1)).unwrap().matrix;
        let dense = a.to_dense();
        for i in 0..18 {
            for j in 0..18 {
                assert_eq!(dense[i * 18 + j], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn blurred_weight_tends_to_overlap() {
        for &(p, lo, hi) in &[(3.0, 2.5, 6.5), (0.0, 0.2, 0.7), (5.0, 1.0, 4.0)] {
            let exact = blurred_box_weight(p, lo, hi, 0.0);
            let blurred = blurred_box_weight(p, lo, hi, 1e-6);
            assert!((exact - blurred).abs() < 1e-9, "{p} {lo} {hi}");
        }
    }

    #[test]
    fn blurred_weight_matches_quadrature() {
        // Midpoint rule on Φ((hi-u)/σ) - Φ((lo-u)/σ) over the pixel.
        let (lo, hi, sigma) = (10.3, 14.3, 1.5);
        for p in 4..22 {
            let n = 20_000;
            let q: f64 = (0..n)
                .map(|i| {
                    let u = p as f64 + (i as f64 + 0.5) / n as f64;
                    phi((hi - u) / sigma) - phi((lo - u) / sigma)
                })
                .sum::<f64>()
                / n as f64;
            let w = blurred_box_weight(p as f64, lo, hi, sigma);
            assert!((q - w).abs() < 1e-9, "pixel {p}: {q} vs {w}");
        }
    }

    #[test]
    fn rows_nonnegative_and_deterministic() {
        let m = SystemModel::desk_wide(3);
        let a = build_system(&m).unwrap();
        let b = build_system(&m).unwrap();
        assert_eq!(a, b);
        for (_, v) in a.matrix.rows() {
            assert!(v.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn off_modulator_footprint_warns() {
        let mut m = SystemModel::ideal(4, 4, 2);
        m.deform = Affine([1.0, 0.0, 100.0, 0.0, 1.0, 0.0]);
        let a = build_system(&m).unwrap();
        assert_eq!(a.warnings.len(), 16);
        assert_eq!(a.matrix.nnz(), 0);
    }

    #[test]
    fn invalid_models() {
        let mut m = SystemModel::ideal(4, 4, 2);
        m.dmd_rows = 9;
        assert!(build_system(&m).is_err());
        let mut m = SystemModel::ideal(4, 4, 2);
        m.gain[3] = 0.0;
        assert!(build_system(&m).is_err());
        let mut m = SystemModel::ideal(4, 4, 2);
        m.noise_sigma = -1.0;
        assert!(m.validate().is_err());
        let mut m = SystemModel::ideal(4, 4, 2);
        m.psf_sigma = -0.1;
        assert!(m.validate().is_err());
    }

    #[test]
    fn constant_image_through_block_average() {
        let m = SystemModel::ideal(4, 4, 4);
        let c = build_system(&m).unwrap().matrix;
        let x = ImageGrid::filled(16, 16, 0.37).unwrap();
        let y = forward_measure(&c, &BinaryMask::ones(16, 16).unwrap(), &x, &m, 0).unwrap();
        assert!(y.as_slice().iter().all(|&v| (v - 0.37).abs() < 1e-15));
    }

    #[test]
    fn zero_image_gives_dark() {
        let m = SystemModel::desk(5);
        let c = build_system(&m).unwrap().matrix;
        let x = ImageGrid::zeros(64, 64).unwrap();
        let y = forward_measure(&c, &random_mask(64, 64, 0.5, 1).unwrap(), &x, &m, 0).unwrap();
        assert_eq!(y.as_slice(), &m.dark[..]);
    }

    #[test]
    fn forward_is_linear() {
        let m = SystemModel::desk(5);
        let c = build_system(&m).unwrap().matrix;
        let mask = random_mask(64, 64, 0.5, 4).unwrap();
        let x1 = ImageGrid::from_fn(64, 64, |r, c| ((r * 7 + c * 3) % 11) as f64 / 11.0).unwrap();
        let x2 = ImageGrid::from_fn(64, 64, |r, c| ((r + 2 * c) % 5) as f64 / 5.0).unwrap();
        let sum = ImageGrid::from_fn(64, 64, |r, c| x1.get(r, c) + x2.get(r, c)).unwrap();
        let y1 = forward_measure(&c, &mask, &x1, &m, 0).unwrap();
        let y2 = forward_measure(&c, &mask, &x2, &m, 0).unwrap();
        let ys = forward_measure(&c, &mask, &sum, &m, 0).unwrap();
        for i in 0..y1.len() {
            let lin = y1.as_slice()[i] + y2.as_slice()[i] - m.dark[i];
            assert!((ys.as_slice()[i] - lin).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_is_seeded() {
        let mut m = SystemModel::desk(5);
        m.noise_sigma = 0.1;
        let c = build_system(&m).unwrap().matrix;
        let mask = random_mask(64, 64, 0.5, 4).unwrap();
        let x = ImageGrid::filled(64, 64, 0.5).unwrap();
        let a = forward_measure(&c, &mask, &x, &m, 11).unwrap();
        let b = forward_measure(&c, &mask, &x, &m, 11).unwrap();
        let d = forward_measure(&c, &mask, &x, &m, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, d);
    }

    #[test]
    fn forward_dimension_mismatch() {
        let m = SystemModel::ideal(4, 4, 4);
        let c = build_system(&m).unwrap().matrix;
        let x = ImageGrid::zeros(16, 16).unwrap();
        assert!(forward_measure(&c, &BinaryMask::ones(8, 8).unwrap(), &x, &m, 0).is_err());
        let x = ImageGrid::zeros(8, 8).unwrap();
        assert!(forward_measure(&c, &BinaryMask::ones(8, 8).unwrap(), &x, &m, 0).is_err());
    }

    #[test]
    fn config_round_trip() {
        for m in [SystemModel::desk(9), SystemModel::desk_wide(2)] {
            let text = m.to_kv().to_text();
            let back = SystemModel::from_kv(&io::parse_kv(&text, Path::new("mem")).unwrap(), Path::new("mem"))
                .unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn config_keys_are_field_names() {
        let keys: Vec<_> = SystemModel::desk(1).to_kv().keys().map(String::from).collect();
        assert_eq!(
            keys,
            [
                "dmd_rows", "dmd_cols", "fpa_rows", "fpa_cols", "undersample", "psf_sigma", "deform",
                "gain", "dark", "noise_sigma", "seed"
            ]
        );
    }

    #[test]
    fn target_is_binary_with_exact_stripes() {
        let spec = TargetSpec::standard();
        let t = generate_resolution_target(&spec).unwrap();
        assert!(t.as_slice().iter().all(|&v| v == 0.0 || v == 1.0));
        let g = spec.group(4).unwrap();
        let r = g.band.start;
        // Run lengths of foreground along the row.
        let mut runs = Vec::new();
        let mut run = 0;
        for c in 0..64 {
            if t.get(r, c) == 1.0 {
                run += 1;
            } else if run > 0 {
                runs.push(run);
                run = 0;
            }
        }
        assert_eq!(runs.len(), g.stripes);
        assert!(runs.iter().all(|&n| n == 4));
    }

    #[test]
    fn small_target_alternates() {
        let spec = TargetSpec {
            rows: 8,
            cols: 8,
            fringe_widths: vec![2],
            orientation: Orientation::Vertical,
        };
        let t = generate_resolution_target(&spec).unwrap();
        let g = spec.group(2).unwrap();
        let row: Vec<f64> = (0..8).map(|c| t.get(g.band.start, c)).collect();
        assert_eq!(row, [0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        let h = TargetSpec { orientation: Orientation::Horizontal, ..spec };
        let th = generate_resolution_target(&h).unwrap();
        let col: Vec<f64> = (0..8).map(|r| th.get(r, g.band.start)).collect();
        assert_eq!(col, row);
    }

    #[test]
    fn target_rejects_bad_widths() {
        let mut spec = TargetSpec::standard();
        spec.fringe_widths = vec![0];
        assert!(generate_resolution_target(&spec).is_err());
        spec.fringe_widths = vec![17];
        assert!(generate_resolution_target(&spec).is_err());
        spec.fringe_widths = vec![1; 30];
        assert!(generate_resolution_target(&spec).is_err());
    }

    #[test]
    fn phantom_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let t = generate_resolution_target(&TargetSpec::standard()).unwrap();
        let p = dir.path().join("t.pgm");
        io::write_pgm(&p, &t, 1).unwrap();
        assert_eq!(load_bitmap_phantom(&p).unwrap(), t);

        let full = ImageGrid::filled(5, 3, 255.0).unwrap();
        io::write_pgm(&p, &full, 255).unwrap();
        assert!(load_bitmap_phantom(&p).unwrap().as_slice().iter().all(|&v| v == 1.0));

        let f = dir.path().join("t.fgrid");
        io::write_fgrid(&f, &t).unwrap();
        assert_eq!(load_bitmap_phantom(&f).unwrap(), t);
        let scaled = t.map(|v| 3.0 * v + 2.0).unwrap();
        io::write_fgrid(&f, &scaled).unwrap();
        assert_eq!(load_bitmap_phantom(&f).unwrap(), t);

        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_bitmap_phantom(&p), Err(Error::Format { .. })));
    }
}
