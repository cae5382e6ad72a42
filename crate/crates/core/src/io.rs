//! On-disk formats: binary PGM, `.fgrid` float grids and flat key-value text.
//!
//! A `.fgrid` file holds raw little-endian `f32` samples in column-major
//! order. Its shape lives in a sidecar text file next to it (the same path
//! with `.hdr` appended):
//!
//! ```text
//! rows=<r>
//! cols=<c>
//! dtype=f32le
//! order=col
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, ImageGrid};

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    let bytes = read_bytes(path)?;
    String::from_utf8(bytes).map_err(|_| Error::format(path, "not valid UTF-8"))
}

// ---------------------------------------------------------------------------
// PGM

/// Decoded P5 raster. Samples are the raw integers, not rescaled.
#[derive(Debug, Clone, PartialEq)]
pub struct Pgm {
    pub grid: ImageGrid,
    pub maxval: u16,
}

pub fn encode_pgm(grid: &ImageGrid, maxval: u16) -> Result<Vec<u8>> {
    if maxval == 0 {
        return Err(Error::invalid("PGM maxval must be positive"));
    }
    let (rows, cols) = grid.dims();
    let mut out = format!("P5\n{cols} {rows}\n{maxval}\n").into_bytes();
    let wide = maxval > 255;
    for r in 0..rows {
        for c in 0..cols {
            let v = grid.get(r, c);
            if v.fract() != 0.0 || v < 0.0 || v > maxval as f64 {
                return Err(Error::invalid(format!(
                    "sample {v} at ({r},{c}) is not an integer in [0,{maxval}]"
                )));
            }
            let v = v as u16;
            if wide {
                out.extend_from_slice(&v.to_be_bytes());
            } else {
                out.push(v as u8);
            }
        }
    }
    Ok(out)
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Pgm> {
    let mut pos = 0usize;
    let token = |pos: &mut usize| -> Result<String> {
        loop {
            match bytes.get(*pos) {
                Some(b'#') => {
                    while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                        *pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => *pos += 1,
                Some(_) => break,
                None => return Err(Error::format(path, "truncated PGM header")),
            }
        }
        let start = *pos;
        while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
            *pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    if token(&mut pos)? != "P5" {
        return Err(Error::format(path, "not a binary PGM (missing P5 magic)"));
    }
    let number = |pos: &mut usize, what: &str| -> Result<usize> {
        let t = token(pos)?;
        t.parse::<usize>()
            .map_err(|_| Error::format(path, format!("bad PGM {what}: {t:?}")))
    };
    let cols = number(&mut pos, "width")?;
    let rows = number(&mut pos, "height")?;
    let maxval = number(&mut pos, "maxval")?;
    if cols == 0 || rows == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::format(path, "PGM dimensions or maxval out of range"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::format(path, "truncated PGM header"));
    }
    pos += 1;
    let width = if maxval > 255 { 2 } else { 1 };
    let need = rows * cols * width;
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(Error::format(
            path,
            format!("PGM raster has {} bytes, expected {need}", raster.len()),
        ));
    }
    let sample = |i: usize| -> f64 {
        if width == 2 {
            u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as f64
        } else {
            raster[i] as f64
        }
    };
    let grid = ImageGrid::from_fn(rows, cols, |r, c| sample(r * cols + c))?;
    if grid.as_slice().iter().any(|&v| v > maxval as f64) {
        return Err(Error::format(path, "PGM sample exceeds maxval"));
    }
    Ok(Pgm {
        grid,
        maxval: maxval as u16,
    })
}

pub fn read_pgm(path: &Path) -> Result<Pgm> {
    decode_pgm(&read_bytes(path)?, path)
}

/// Writes integer samples as PGM; 16-bit big-endian when `maxval > 255`.
pub fn write_pgm(path: &Path, grid: &ImageGrid, maxval: u16) -> Result<()> {
    write_bytes(path, &encode_pgm(grid, maxval)?)
}

/// Min-max rescales to the full 16-bit range for viewing.
pub fn write_pgm_display(path: &Path, grid: &ImageGrid) -> Result<()> {
    let (lo, hi) = grid.min_max();
    let scaled = if hi > lo {
        grid.map(|v| ((v - lo) / (hi - lo) * 65535.0).round())?
    } else {
        ImageGrid::zeros(grid.rows(), grid.cols())?
    };
    write_pgm(path, &scaled, 65535)
}

pub fn write_mask_pgm(path: &Path, mask: &BinaryMask) -> Result<()> {
    write_pgm(path, &mask.to_grid(), 1)
}

pub fn read_mask_pgm(path: &Path) -> Result<BinaryMask> {
    let pgm = read_pgm(path)?;
    let (rows, cols) = pgm.grid.dims();
    let max = pgm.maxval as f64;
    let mut data = Vec::with_capacity(rows * cols);
    for &v in pgm.grid.as_slice() {
        if v == 0.0 {
            data.push(0);
        } else if v == max {
            data.push(1);
        } else {
            return Err(Error::format(path, format!("mask sample {v} is neither 0 nor {max}")));
        }
    }
    BinaryMask::from_col_major(rows, cols, data)
}

// ---------------------------------------------------------------------------
// fgrid

pub fn fgrid_header_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".hdr");
    PathBuf::from(s)
}

pub fn encode_fgrid(grid: &ImageGrid) -> (String, Vec<u8>) {
    let header = format!(
        "rows={}\ncols={}\ndtype=f32le\norder=col\n",
        grid.rows(),
        grid.cols()
    );
    let mut data = Vec::with_capacity(grid.len() * 4);
    for &v in grid.as_slice() {
        data.extend_from_slice(&(v as f32).to_le_bytes());
    }
    (header, data)
}

pub fn decode_fgrid(header: &str, data: &[u8], path: &Path) -> Result<ImageGrid> {
    let kv = parse_kv(header, path)?;
    let rows = kv.get_parsed::<usize>("rows", path)?;
    let cols = kv.get_parsed::<usize>("cols", path)?;
    if kv.get("dtype") != Some("f32le") || kv.get("order") != Some("col") {
        return Err(Error::format(path, "fgrid header must declare dtype=f32le and order=col"));
    }
    if rows == 0 || cols == 0 || data.len() != rows * cols * 4 {
        return Err(Error::format(
            path,
            format!("fgrid payload has {} bytes, expected {}", data.len(), rows * cols * 4),
        ));
    }
    let samples: Vec<f64> = data
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    ImageGrid::from_col_major(rows, cols, samples).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_fgrid(path: &Path, grid: &ImageGrid) -> Result<()> {
    let (header, data) = encode_fgrid(grid);
    write_bytes(&fgrid_header_path(path), header.as_bytes())?;
    write_bytes(path, &data)
}

pub fn read_fgrid(path: &Path) -> Result<ImageGrid> {
    let data = read_bytes(path)?;
    let header = read_text(&fgrid_header_path(path))?;
    decode_fgrid(&header, &data, path)
}

// ---------------------------------------------------------------------------
// key=value text

/// Ordered `key=value` pairs. Blank lines and `#` comments are skipped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    /// Inserts or replaces.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value.to_string(),
            None => self.push(key, value),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str, path: &Path) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::format(path, format!("missing key {key:?}")))
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str, path: &Path) -> Result<T> {
        let raw = self.require(key, path)?;
        raw.trim()
            .parse()
            .map_err(|_| Error::format(path, format!("cannot parse {key}={raw:?}")))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

pub fn parse_kv(text: &str, path: &Path) -> Result<KeyValues> {
    let mut kv = KeyValues::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::format(path, format!("line {}: expected key=value", lineno + 1))
        })?;
        let k = k.trim();
        if kv.get(k).is_some() {
            return Err(Error::format(path, format!("duplicate key {k:?}")));
        }
        kv.push(k, v.trim());
    }
    Ok(kv)
}

pub fn read_kv(path: &Path) -> Result<KeyValues> {
    parse_kv(&read_text(path)?, path)
}

/// Parses a comma-separated list of floats.
pub fn parse_f64_list(raw: &str, key: &str, path: &Path) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::format(path, format!("bad number {t:?} in {key}")))
        })
        .collect()
}

pub fn join_f64(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}
