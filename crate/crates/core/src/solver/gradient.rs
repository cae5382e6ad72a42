//! Forward-difference gradient on a column-major grid, replicate boundary.

use crate::error::{Error, Result};

/// Horizontal (along columns) and vertical (along rows) forward differences.
/// The last column of `dh` and the last row of `dv` are zero.
pub fn gradient_stencil(x: &[f64], rows: usize, cols: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    check(x.len(), rows, cols)?;
    let mut dh = vec![0.0; x.len()];
    let mut dv = vec![0.0; x.len()];
    forward(x, rows, cols, &mut dh, &mut dv);
    Ok((dh, dv))
}

/// `Dᵀ(zh, zv)`.
pub fn gradient_adjoint(zh: &[f64], zv: &[f64], rows: usize, cols: usize) -> Result<Vec<f64>> {
    check(zh.len(), rows, cols)?;
    check(zv.len(), rows, cols)?;
    let mut out = vec![0.0; zh.len()];
    adjoint(zh, zv, rows, cols, &mut out);
    Ok(out)
}

fn check(len: usize, rows: usize, cols: usize) -> Result<()> {
    if len != rows * cols || rows == 0 || cols == 0 {
        return Err(Error::invalid(format!(
            "vector of length {len} does not match a {rows}x{cols} grid"
        )));
    }
    Ok(())
}

pub(crate) fn forward(x: &[f64], rows: usize, cols: usize, dh: &mut [f64], dv: &mut [f64]) {
    for c in 0..cols {
        let base = c * rows;
        for r in 0..rows {
            let i = base + r;
            dh[i] = if c + 1 < cols { x[i + rows] - x[i] } else { 0.0 };
            dv[i] = if r + 1 < rows { x[i + 1] - x[i] } else { 0.0 };
        }
    }
}

pub(crate) fn adjoint(zh: &[f64], zv: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    out.fill(0.0);
    for c in 0..cols {
        let base = c * rows;
        for r in 0..rows {
            let i = base + r;
            if c + 1 < cols {
                out[i + rows] += zh[i];
                out[i] -= zh[i];
            }
            if r + 1 < rows {
                out[i + 1] += zv[i];
                out[i] -= zv[i];
            }
        }
    }
}
