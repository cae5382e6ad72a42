//! Focal-plane-array compressive imaging toolkit.
//!
//! A low-resolution sensor looks at a high-resolution binary modulator
//! through imperfect relay optics. The linear map from modulator pixels to
//! sensor pixels is the calibration matrix `C`; a coded frame is
//! `C · diag(mask) · x`. This crate
//!
//! - simulates such systems ([`optics`]),
//! - recovers `C` by point scanning or from a few random-mask frames with a
//!   TV-regularized solver ([`calibration`], [`solver`]),
//! - reconstructs super-resolved images from Hadamard-coded frames
//!   ([`pipeline`]).
//!
//! All grids are column-major; see [`grid`].

pub mod calibration;
pub mod error;
pub mod grid;
pub mod hadamard;
pub mod io;
pub mod metrics;
pub mod optics;
pub mod pipeline;
pub mod solver;
pub mod sparse;

pub use error::{Error, Result};
pub use grid::{devectorize, random_mask, superpixel_bin, vectorize, BinaryMask, ImageGrid};
pub use hadamard::{expand_mask, hadamard_basis_masks, hadamard_matrix};
pub use metrics::{psnr, sampling_ratio, MetricConfig, Psnr};
pub use sparse::SparseCalibMatrix;

/// Mixes a base seed with a stream index (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
