//! Sylvester Hadamard matrices and the coded-aperture basis built from them.

use crate::error::{Error, Result};
use crate::grid::BinaryMask;

/// Sylvester Hadamard matrix of the given power-of-two order, row-major.
pub fn hadamard_matrix(order: usize) -> Result<Vec<Vec<i8>>> {
    if order == 0 || !order.is_power_of_two() {
        return Err(Error::invalid(format!("Hadamard order must be a power of two, got {order}")));
    }
    // H[i][j] = (-1)^popcount(i & j)
    Ok((0..order)
        .map(|i| {
            (0..order)
                .map(|j| if (i & j).count_ones() % 2 == 0 { 1 } else { -1 })
                .collect()
        })
        .collect())
}

/// Basis masks of side `sqrt(order)`: row `k` of the Hadamard matrix with
/// `-1` mapped to `0`, reshaped column-major into a square mask.
///
/// Row entry `j` lands at mask pixel `(j % b, j / b)` for side `b`, which is
/// the column-wise vectorization convention used everywhere else.
pub fn hadamard_basis_masks(order: usize) -> Result<Vec<BinaryMask>> {
    let side = (order as f64).sqrt().round() as usize;
    if side * side != order {
        return Err(Error::invalid(format!(
            "Hadamard order {order} is not a perfect square; cannot reshape rows to square masks"
        )));
    }
    let h = hadamard_matrix(order)?;
    h.iter()
        .map(|row| {
            let data = row.iter().map(|&v| (v > 0) as u8).collect();
            BinaryMask::from_col_major(side, side, data)
        })
        .collect()
}

/// Periodic tiling of `basis` over a `rows`×`cols` modulator.
pub fn expand_mask(basis: &BinaryMask, rows: usize, cols: usize) -> Result<BinaryMask> {
    let (br, bc) = basis.dims();
    if rows == 0 || cols == 0 || !rows.is_multiple_of(br) || !cols.is_multiple_of(bc) {
        return Err(Error::invalid(format!(
            "{rows}x{cols} is not a whole multiple of the {br}x{bc} basis"
        )));
    }
    BinaryMask::from_fn(rows, cols, |r, c| basis.get(r % br, c % bc) == 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_two_base_case() {
        assert_eq!(hadamard_matrix(2).unwrap(), vec![vec![1, 1], vec![1, -1]]);
        assert_eq!(hadamard_matrix(1).unwrap(), vec![vec![1]]);
    }

    #[test]
    fn orthogonality_exact() {
        for order in [1usize, 2, 4, 8, 16, 32] {
            let h = hadamard_matrix(order).unwrap();
            for i in 0..order {
                for j in 0..order {
                    let dot: i64 = (0..order).map(|k| (h[i][k] as i64) * (h[j][k] as i64)).sum();
                    assert_eq!(dot, if i == j { order as i64 } else { 0 });
                }
            }
            assert!(h[0].iter().all(|&v| v == 1));
            assert!(h.iter().all(|row| row[0] == 1));
        }
    }

    #[test]
    fn non_power_of_two_rejected() {
        for order in [0usize, 3, 6, 12, 24] {
            assert!(hadamard_matrix(order).is_err());
        }
    }

    #[test]
    fn basis_masks_structure() {
        let masks = hadamard_basis_masks(16).unwrap();
        assert_eq!(masks.len(), 16);
        assert!(masks[0].as_slice().iter().all(|&v| v == 1));
        assert!(masks.iter().all(|m| m.dims() == (4, 4)));
        // Per-pixel coverage: pixel for Hadamard column 0 is lit in all
        // masks, every other pixel in exactly half.
        for p in 0..16 {
            let count: usize = masks.iter().map(|m| m.as_slice()[p] as usize).sum();
            assert_eq!(count, if p == 0 { 16 } else { 8 }, "pixel {p}");
        }
    }

    #[test]
    fn basis_masks_bipolar_orthogonality() {
        let masks = hadamard_basis_masks(16).unwrap();
        for j in 0..16 {
            for k in 0..16 {
                let s: i32 = (0..16)
                    .map(|p| {
                        let a = 2 * masks[j].as_slice()[p] as i32 - 1;
                        let b = 2 * masks[k].as_slice()[p] as i32 - 1;
                        a * b
                    })
                    .sum();
                assert_eq!(s, if j == k { 16 } else { 0 });
            }
        }
    }

    #[test]
    fn basis_rejects_non_square_order() {
        assert!(hadamard_basis_masks(8).is_err());
        assert!(hadamard_basis_masks(32).is_err());
        assert_eq!(hadamard_basis_masks(4).unwrap()[3].dims(), (2, 2));
    }

    #[test]
    fn expand_cases() {
        let ones = BinaryMask::ones(4, 4).unwrap();
        assert_eq!(expand_mask(&ones, 8, 8).unwrap(), BinaryMask::ones(8, 8).unwrap());

        let diag = BinaryMask::from_fn(2, 2, |r, c| r == c).unwrap();
        let tiled = expand_mask(&diag, 4, 4).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(tiled.get(r, c), ((r % 2) == (c % 2)) as u8);
            }
        }

        let b = hadamard_basis_masks(16).unwrap()[5].clone();
        assert_eq!(expand_mask(&b, 4, 4).unwrap(), b);
        assert!(expand_mask(&b, 6, 8).is_err());
    }

    #[test]
    fn expansion_is_idempotent() {
        for b in hadamard_basis_masks(16).unwrap() {
            let once = expand_mask(&b, 16, 12).unwrap();
            assert_eq!(expand_mask(&once, 16, 12).unwrap(), once);
        }
    }
}
