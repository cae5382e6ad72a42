//! Line profiles across the fringe groups, as CSV and as a small raster.

use std::fmt::Write as _;

use fpaci_core::{ImageGrid, Result};

pub struct Profile {
    pub width: usize,
    /// Position of the first sample across the stripes.
    pub start: usize,
    pub truth: Vec<f64>,
    pub lowres: Option<Vec<f64>>,
    pub recon: Vec<f64>,
}

pub fn profiles_csv(profiles: &[Profile]) -> String {
    let mut s = String::from("width,position,truth,lowres,recon\n");
    for p in profiles {
        for (k, (t, r)) in p.truth.iter().zip(&p.recon).enumerate() {
            let l = p.lowres.as_ref().map_or(String::new(), |l| l[k].to_string());
            let _ = writeln!(s, "{},{},{t},{l},{r}", p.width, p.start + k);
        }
    }
    s
}

const PANEL: usize = 48;
const STEP: usize = 4;

/// One panel per profile, stacked vertically: truth dim, low-res mid grey,
/// reconstruction white. Values are clamped to `[0, 1]`.
pub fn render(profiles: &[Profile]) -> Result<ImageGrid> {
    let len = profiles.iter().map(|p| p.truth.len()).max().unwrap_or(0);
    let (rows, cols) = ((PANEL + 2) * profiles.len().max(1), (len * STEP).max(1));
    let mut px = vec![0.0; rows * cols];
    let level = |v: f64| ((1.0 - v.clamp(0.0, 1.0)) * (PANEL - 1) as f64).round() as usize;
    for (k, p) in profiles.iter().enumerate() {
        let top = k * (PANEL + 2);
        let mut draw = |curve: &[f64], shade: f64| {
            for (i, &v) in curve.iter().enumerate() {
                let y = level(v);
                let prev = if i == 0 { y } else { level(curve[i - 1]) };
                for c in i * STEP..(i + 1) * STEP {
                    px[top + y + c * rows] = f64::max(px[top + y + c * rows], shade);
                }
                for r in prev.min(y)..=prev.max(y) {
                    let c = i * STEP;
                    px[top + r + c * rows] = f64::max(px[top + r + c * rows], shade);
                }
            }
        };
        draw(&p.truth, 96.0);
        if let Some(l) = &p.lowres {
            draw(l, 160.0);
        }
        draw(&p.recon, 255.0);
    }
    ImageGrid::from_col_major(rows, cols, px)
}
