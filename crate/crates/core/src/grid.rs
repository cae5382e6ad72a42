//! Scalar image grids and binary modulator masks.
//!
//! Both types store their samples in column-major order, so `data[r + c * rows]`
//! is the sample at row `r`, column `c`. Every matrix in the crate indexes
//! sensor and modulator pixels with this convention.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A 2D scalar field: modulator-plane image, sensor frame or reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Result<Self> {
        check_dims(rows, cols)?;
        if !value.is_finite() {
            return Err(Error::invalid("grid fill value must be finite"));
        }
        Ok(Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        })
    }

    /// Wraps a column-major sample vector.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(rows, cols)?;
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "grid data has {} samples, expected {}x{}={}",
                data.len(),
                rows,
                cols,
                rows * cols
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("grid data contains non-finite values"));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a grid from rows as they would be displayed (row-major nesting).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(Error::invalid("ragged rows"));
        }
        Self::from_fn(nrows, ncols, |r, c| rows[r][c])
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        check_dims(rows, cols)?;
        let mut data = Vec::with_capacity(rows * cols);
        for c in 0..cols {
            for r in 0..rows {
                data.push(f(r, c));
            }
        }
        Self::from_col_major(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Column-major samples.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r + c * self.rows]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Applies `f` to every sample; fails if the result is not finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_col_major(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// A {0,1}-valued modulator pattern.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(rows, cols)?;
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "mask data has {} samples, expected {}",
                data.len(),
                rows * cols
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::invalid("mask values must be 0 or 1"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        check_dims(rows, cols)?;
        let mut data = Vec::with_capacity(rows * cols);
        for c in 0..cols {
            for r in 0..rows {
                data.push(f(r, c) as u8);
            }
        }
        Ok(Self { rows, cols, data })
    }

    pub fn ones(rows: usize, cols: usize) -> Result<Self> {
        Self::from_fn(rows, cols, |_, _| true)
    }

    /// Mask with a single lit pixel at `(r, c)`.
    pub fn single(rows: usize, cols: usize, r: usize, c: usize) -> Result<Self> {
        if r >= rows || c >= cols {
            return Err(Error::invalid(format!("pixel ({r},{c}) outside {rows}x{cols} mask")));
        }
        Self::from_fn(rows, cols, |i, j| i == r && j == c)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.data[r + c * self.rows]
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn to_grid(&self) -> ImageGrid {
        ImageGrid {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v as f64).collect(),
        }
    }
}

fn check_dims(rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(format!("grid dimensions must be positive, got {rows}x{cols}")));
    }
    Ok(())
}

/// Column-wise vectorization.
pub fn vectorize(img: &ImageGrid) -> Vec<f64> {
    img.data.clone()
}

/// Inverse of [`vectorize`].
pub fn devectorize(v: &[f64], rows: usize, cols: usize) -> Result<ImageGrid> {
    ImageGrid::from_col_major(rows, cols, v.to_vec())
}

/// Bernoulli(`density`) mask, a pure function of its arguments.
pub fn random_mask(rows: usize, cols: usize, density: f64, seed: u64) -> Result<BinaryMask> {
    check_dims(rows, cols)?;
    if !(density > 0.0 && density < 1.0) {
        return Err(Error::invalid(format!("mask density must lie in (0,1), got {density}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols)
        .map(|_| (rng.random::<f64>() < density) as u8)
        .collect();
    Ok(BinaryMask { rows, cols, data })
}

/// Averages non-overlapping `k`×`k` blocks.
pub fn superpixel_bin(img: &ImageGrid, k: usize) -> Result<ImageGrid> {
    if k == 0 || !img.rows.is_multiple_of(k) || !img.cols.is_multiple_of(k) {
        return Err(Error::invalid(format!(
            "{}x{} grid is not divisible into {k}x{k} blocks",
            img.rows, img.cols
        )));
    }
    let (rows, cols) = (img.rows / k, img.cols / k);
    let norm = (k * k) as f64;
    ImageGrid::from_fn(rows, cols, |r, c| {
        let mut acc = 0.0;
        for dc in 0..k {
            for dr in 0..k {
                acc += img.get(r * k + dr, c * k + dc);
            }
        }
        acc / norm
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vectorize_is_column_major() {
        let g = ImageGrid::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(vectorize(&g), vec![1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn single_row_grid_vectorizes_unchanged() {
        let row = vec![5.0, -1.0, 2.5, 0.0];
        let g = ImageGrid::from_rows(std::slice::from_ref(&row)).unwrap();
        assert_eq!(vectorize(&g), row);
    }

    #[test]
    fn round_trip_seeded_7x5() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..35).map(|_| rng.random::<f64>()).collect();
        let g = ImageGrid::from_col_major(7, 5, data).unwrap();
        let back = devectorize(&vectorize(&g), 7, 5).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn rejects_bad_lengths_and_nan() {
        assert!(ImageGrid::from_col_major(2, 2, vec![0.0; 3]).is_err());
        assert!(ImageGrid::from_col_major(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(ImageGrid::zeros(0, 3).is_err());
        assert!(BinaryMask::from_col_major(1, 2, vec![0, 2]).is_err());
    }

    #[test]
    fn random_mask_is_deterministic() {
        let a = random_mask(16, 16, 0.5, 42).unwrap();
        let b = random_mask(16, 16, 0.5, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, random_mask(16, 16, 0.5, 43).unwrap());
    }

    #[test]
    fn random_mask_half_density_mean() {
        for seed in 0..20 {
            let m = random_mask(64, 64, 0.5, seed).unwrap();
            let mean = m.count_ones() as f64 / m.len() as f64;
            assert!((0.40..=0.60).contains(&mean), "seed {seed}: mean {mean}");
        }
    }

    #[test]
    fn random_mask_rejects_density_outside_open_interval() {
        for d in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(random_mask(4, 4, d, 0).is_err(), "density {d}");
        }
    }

    #[test]
    fn superpixel_bin_cases() {
        let g = ImageGrid::from_rows(&[vec![0.0, 2.0], vec![4.0, 6.0]]).unwrap();
        let b = superpixel_bin(&g, 2).unwrap();
        assert_eq!(b.dims(), (1, 1));
        assert_eq!(b.get(0, 0), 3.0);

        assert_eq!(superpixel_bin(&g, 1).unwrap(), g);

        let c = ImageGrid::filled(8, 12, 2.5).unwrap();
        let cb = superpixel_bin(&c, 4).unwrap();
        assert_eq!(cb.dims(), (2, 3));
        assert!(cb.as_slice().iter().all(|&v| v == 2.5));

        assert!(superpixel_bin(&c, 3).is_err());
        assert!(superpixel_bin(&ImageGrid::zeros(5, 4).unwrap(), 2).is_err());
    }
}
