//! Row-sparse calibration matrix and its `FCAL1` file format.
//!
//! Row `ii` is the contribution area of sensor pixel `ii`: the weights with
//! which each modulator pixel (column-major index) reaches that sensor pixel.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! FCAL1\n
//! sensor=<P*Q>\n
//! mod=<M*N>\n
//! nnz=<k>\n
//! k × (row: u32, col: u32, value: f32)
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::io;

const MAGIC: &[u8] = b"FCAL1\n";

/// A row that could not be filled, e.g. a footprint off the modulator or a
/// dead sensor pixel. The row is left empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowWarning {
    pub row: usize,
    pub message: String,
}

/// A calibration matrix together with the rows that came out empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Assembly {
    pub matrix: SparseCalibMatrix,
    pub warnings: Vec<RowWarning>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseCalibMatrix {
    sensor_pixels: usize,
    modulator_pixels: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    values: Vec<f64>,
}

impl SparseCalibMatrix {
    pub fn zeros(sensor_pixels: usize, modulator_pixels: usize) -> Self {
        Self {
            sensor_pixels,
            modulator_pixels,
            row_ptr: vec![0; sensor_pixels + 1],
            cols: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Assembles from per-row `(column, value)` lists. Each row is sorted by
    /// column; duplicate or out-of-range columns are rejected.
    pub fn from_rows(
        sensor_pixels: usize,
        modulator_pixels: usize,
        rows: Vec<Vec<(u32, f64)>>,
    ) -> Result<Self> {
        if rows.len() != sensor_pixels {
            return Err(Error::invalid(format!(
                "{} rows supplied for {sensor_pixels} sensor pixels",
                rows.len()
            )));
        }
        let mut m = Self::zeros(sensor_pixels, modulator_pixels);
        m.row_ptr.clear();
        m.row_ptr.push(0);
        for (ii, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|&(c, _)| c);
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::invalid(format!("row {ii} repeats column {}", w[0].0)));
                }
            }
            for (c, v) in row {
                if c as usize >= modulator_pixels {
                    return Err(Error::invalid(format!(
                        "row {ii} column {c} out of range for {modulator_pixels} modulator pixels"
                    )));
                }
                if !v.is_finite() {
                    return Err(Error::invalid(format!("row {ii} column {c} is not finite")));
                }
                m.cols.push(c);
                m.values.push(v);
            }
            m.row_ptr.push(m.cols.len());
        }
        Ok(m)
    }

    /// Keeps the nonzero entries of a dense row-major `sensor × modulator` array.
    pub fn from_dense(sensor_pixels: usize, modulator_pixels: usize, dense: &[f64]) -> Result<Self> {
        if dense.len() != sensor_pixels * modulator_pixels {
            return Err(Error::invalid("dense calibration array has the wrong length"));
        }
        let rows = dense
            .chunks_exact(modulator_pixels)
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(c, &v)| (c as u32, v))
                    .collect()
            })
            .collect();
        Self::from_rows(sensor_pixels, modulator_pixels, rows)
    }

    pub fn sensor_pixels(&self) -> usize {
        self.sensor_pixels
    }

    pub fn modulator_pixels(&self) -> usize {
        self.modulator_pixels
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.sensor_pixels, self.modulator_pixels)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `ii`.
    pub fn row(&self, ii: usize) -> (&[u32], &[f64]) {
        let span = self.row_ptr[ii]..self.row_ptr[ii + 1];
        (&self.cols[span.clone()], &self.values[span])
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[u32], &[f64])> {
        (0..self.sensor_pixels).map(move |ii| self.row(ii))
    }

    pub fn row_vec(&self, ii: usize) -> Vec<(u32, f64)> {
        let (c, v) = self.row(ii);
        c.iter().copied().zip(v.iter().copied()).collect()
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.sensor_pixels * self.modulator_pixels];
        for ii in 0..self.sensor_pixels {
            let (c, v) = self.row(ii);
            for (&c, &v) in c.iter().zip(v) {
                out[ii * self.modulator_pixels + c as usize] = v;
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.modulator_pixels);
        debug_assert_eq!(y.len(), self.sensor_pixels);
        for (ii, out) in y.iter_mut().enumerate() {
            let (c, v) = self.row(ii);
            *out = c.iter().zip(v).map(|(&c, &v)| v * x[c as usize]).sum();
        }
    }

    /// `y += Cᵀ r`.
    pub fn transpose_matvec_add(&self, r: &[f64], y: &mut [f64]) {
        debug_assert_eq!(r.len(), self.sensor_pixels);
        debug_assert_eq!(y.len(), self.modulator_pixels);
        for (ii, &ri) in r.iter().enumerate() {
            if ri == 0.0 {
                continue;
            }
            let (c, v) = self.row(ii);
            for (&c, &v) in c.iter().zip(v) {
                y[c as usize] += v * ri;
            }
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(
            format!(
                "sensor={}\nmod={}\nnnz={}\n",
                self.sensor_pixels,
                self.modulator_pixels,
                self.nnz()
            )
            .as_bytes(),
        );
        out.reserve(self.nnz() * 12);
        for ii in 0..self.sensor_pixels {
            let (c, v) = self.row(ii);
            for (&c, &v) in c.iter().zip(v) {
                out.extend_from_slice(&(ii as u32).to_le_bytes());
                out.extend_from_slice(&c.to_le_bytes());
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let rest = bytes
            .strip_prefix(MAGIC)
            .ok_or_else(|| Error::format(path, "missing FCAL1 magic"))?;
        let mut pos = 0usize;
        let mut field = |name: &str| -> Result<usize> {
            let end = rest[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| Error::format(path, "truncated FCAL header"))?;
            let line = std::str::from_utf8(&rest[pos..pos + end])
                .map_err(|_| Error::format(path, "FCAL header is not text"))?;
            pos += end + 1;
            let value = line
                .strip_prefix(name)
                .and_then(|s| s.strip_prefix('='))
                .ok_or_else(|| Error::format(path, format!("expected {name}=, found {line:?}")))?;
            value
                .parse()
                .map_err(|_| Error::format(path, format!("bad {name} value {value:?}")))
        };
        let sensor = field("sensor")?;
        let modulator = field("mod")?;
        let nnz = field("nnz")?;
        let payload = &rest[pos..];
        if payload.len() != nnz * 12 {
            return Err(Error::format(
                path,
                format!("FCAL payload has {} bytes, expected {}", payload.len(), nnz * 12),
            ));
        }
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); sensor];
        for t in payload.chunks_exact(12) {
            let r = u32::from_le_bytes([t[0], t[1], t[2], t[3]]) as usize;
            let c = u32::from_le_bytes([t[4], t[5], t[6], t[7]]);
            let v = f32::from_le_bytes([t[8], t[9], t[10], t[11]]) as f64;
            if r >= sensor {
                return Err(Error::format(path, format!("row index {r} out of range")));
            }
            rows[r].push((c, v));
        }
        Self::from_rows(sensor, modulator, rows).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_bytes(path, &self.encode())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&io::read_bytes(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> SparseCalibMatrix {
        SparseCalibMatrix::from_rows(
            2,
            5,
            vec![vec![(3, 0.5), (0, 0.25)], vec![(4, 1.0)]],
        )
        .unwrap()
    }

    #[test]
    fn header_layout_is_exact() {
        let bytes = small().encode();
        let head = b"FCAL1\nsensor=2\nmod=5\nnnz=3\n";
        assert!(bytes.starts_with(head));
        assert_eq!(bytes.len(), head.len() + 36);
        // First triplet: row 0, col 0, 0.25f32.
        let t = &bytes[head.len()..head.len() + 12];
        assert_eq!(&t[0..4], &0u32.to_le_bytes());
        assert_eq!(&t[4..8], &0u32.to_le_bytes());
        assert_eq!(&t[8..12], &0.25f32.to_le_bytes());
    }

    #[test]
    fn matvec_and_transpose() {
        let m = small();
        let mut y = vec![0.0; 2];
        m.matvec(&[1.0, 2.0, 3.0, 4.0, 5.0], &mut y);
        assert_eq!(y, vec![0.25 + 2.0, 5.0]);
        let mut x = vec![0.0; 5];
        m.transpose_matvec_add(&[1.0, 2.0], &mut x);
        assert_eq!(x, vec![0.25, 0.0, 0.0, 0.5, 2.0]);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(SparseCalibMatrix::from_rows(1, 3, vec![vec![(3, 1.0)]]).is_err());
        assert!(SparseCalibMatrix::from_rows(1, 3, vec![vec![(1, 1.0), (1, 2.0)]]).is_err());
        assert!(SparseCalibMatrix::from_rows(2, 3, vec![vec![]]).is_err());
    }

    #[test]
    fn decode_errors() {
        let p = Path::new("mem");
        let bytes = small().encode();
        assert!(SparseCalibMatrix::decode(&bytes[..bytes.len() - 1], p).is_err());
        assert!(SparseCalibMatrix::decode(b"FCAL2\n", p).is_err());
        assert!(SparseCalibMatrix::decode(b"FCAL1\nsensor=1\n", p).is_err());
    }

    proptest! {
        #[test]
        fn fcal_round_trip(
            sensor in 1usize..6,
            modulator in 1usize..40,
            entries in proptest::collection::vec((0usize..6, 0usize..40, -100.0f32..100.0), 0..30),
        ) {
            let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); sensor];
            for (r, c, v) in entries {
                let (r, c) = (r % sensor, (c % modulator) as u32);
                if rows[r].iter().all(|e| e.0 != c) {
                    rows[r].push((c, v as f64));
                }
            }
            let m = SparseCalibMatrix::from_rows(sensor, modulator, rows).unwrap();
            let bytes = m.encode();
            let back = SparseCalibMatrix::decode(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(back.encode(), bytes);
        }
    }
}
