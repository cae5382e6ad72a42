use std::cell::Cell;

use fpaci_core::calibration::*;
use fpaci_core::optics::{build_system, forward_measure, SystemModel};
use fpaci_core::solver::{ls_oracle, DenseOperator, SolverConfig};
use fpaci_core::{random_mask, BinaryMask, Error, ImageGrid, SparseCalibMatrix};
use proptest::prelude::*;

fn ones(dmd: (usize, usize)) -> ImageGrid {
    ImageGrid::filled(dmd.0, dmd.1, 1.0).unwrap()
}

fn point_scan(model: &SystemModel, c: &SparseCalibMatrix) -> SparseCalibMatrix {
    let dmd = (model.dmd_rows, model.dmd_cols);
    let src = ones(dmd);
    point_scan_calibrate(
        |m| forward_measure(c, m, &src, model, 0),
        dmd,
        (model.fpa_rows, model.fpa_cols),
        true,
    )
    .unwrap()
}

fn max_abs_diff(a: &SparseCalibMatrix, b: &SparseCalibMatrix) -> f64 {
    a.to_dense()
        .iter()
        .zip(b.to_dense())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    d / b.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[test]
fn point_scan_of_identity_system() {
    let model = SystemModel::ideal(8, 8, 1);
    let truth = build_system(&model).unwrap().matrix;
    let c = point_scan(&model, &truth);
    assert_eq!(c.shape(), (64, 64));
    for ii in 0..64 {
        assert_eq!(c.row_vec(ii), vec![(ii as u32, 1.0)]);
    }
}

#[test]
fn point_scan_matches_ground_truth() {
    for model in [SystemModel::ideal(4, 4, 4), SystemModel::desk(3)] {
        let truth = build_system(&model).unwrap().matrix;
        let c = point_scan(&model, &truth);
        assert!(max_abs_diff(&c, &truth) < 1e-10);
    }
}

#[test]
fn point_scan_wide_sensor_shape() {
    let model = SystemModel::desk_wide(1);
    let truth = build_system(&model).unwrap().matrix;
    let calls = Cell::new(0usize);
    let src = ones((64, 64));
    let c = point_scan_calibrate(
        |m| {
            calls.set(calls.get() + 1);
            forward_measure(&truth, m, &src, &model, 0)
        },
        (64, 64),
        (20, 20),
        false,
    )
    .unwrap();
    assert_eq!(c.shape(), (400, 4096));
    assert_eq!(calls.get(), 4096);
}

#[test]
fn point_scan_detects_drift() {
    let calls = Cell::new(0usize);
    let err = point_scan_calibrate(
        |_| {
            calls.set(calls.get() + 1);
            let rows = if calls.get() < 10 { 2 } else { 3 };
            ImageGrid::zeros(rows, 2)
        },
        (4, 4),
        (2, 2),
        false,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
    assert_eq!(calls.get(), 10);
}

#[test]
fn threshold_examples() {
    let row = [1.0, 0.004, 0.5];
    assert_eq!(threshold_support(&row, 0.0).unwrap(), row.to_vec());
    assert_eq!(threshold_support(&row, 0.01).unwrap(), vec![1.0, 0.0, 0.5]);
    assert!(threshold_support(&[], 0.01).unwrap().is_empty());
    assert!(threshold_support(&row, 1.0).is_err());
    assert!(threshold_support(&row, -0.1).is_err());
}

#[test]
fn dark_sensor_gives_empty_rows_and_warnings() {
    let masks: Vec<BinaryMask> = (0..5).map(|t| random_mask(8, 8, 0.5, t).unwrap()).collect();
    let frames = vec![ImageGrid::zeros(2, 3).unwrap(); 5];
    let scan = CalibScan::new((8, 8), (2, 3), masks, frames, None).unwrap();
    let out = cs_calibrate(&scan, &SolverConfig::calibration(8, 8), DEFAULT_TAU, RowWindow::default()).unwrap();
    assert_eq!(out.matrix.shape(), (6, 64));
    assert_eq!(out.matrix.nnz(), 0);
    assert_eq!(out.warnings.iter().map(|w| w.row).collect::<Vec<_>>(), (0..6).collect::<Vec<_>>());
}

#[test]
fn scan_rejects_inconsistent_input() {
    let masks: Vec<BinaryMask> = (0..3).map(|t| random_mask(8, 8, 0.5, t).unwrap()).collect();
    let frames = vec![ImageGrid::zeros(2, 2).unwrap(); 2];
    assert!(CalibScan::new((8, 8), (2, 2), masks.clone(), frames, None).is_err());
    let frames = vec![ImageGrid::zeros(2, 3).unwrap(); 3];
    assert!(CalibScan::new((8, 8), (2, 2), masks, frames, None).is_err());
}

#[test]
fn spike_row_peaks_at_spike() {
    let (dmd, spike) = ((16, 16), 5 + 9 * 16);
    let masks: Vec<BinaryMask> = (0..128).map(|t| random_mask(dmd.0, dmd.1, 0.5, 100 + t).unwrap()).collect();
    let y: Vec<f64> = masks.iter().map(|m| f64::from(m.as_slice()[spike])).collect();
    // On the spike's own column the system is consistent with value 1.
    let col = DenseOperator::from_fn(128, 1, |t, _| y[t]);
    assert!((ls_oracle(&col, &y)[0] - 1.0).abs() < 1e-12);

    let frames = y.iter().map(|&v| ImageGrid::filled(1, 1, v).unwrap()).collect();
    let scan = CalibScan::new(dmd, (1, 1), masks, frames, None).unwrap();
    let c = cs_calibrate(&scan, &SolverConfig::calibration(16, 16), DEFAULT_TAU, RowWindow::Full)
        .unwrap()
        .matrix;
    let row = c.row_vec(0);
    let (arg, max) = row.iter().fold((0, 0.0), |b, &(j, v)| if v > b.1 { (j, v) } else { b });
    assert_eq!(arg as usize, spike);
    assert!((max - 1.0).abs() < 1e-2, "{max}");
}

#[test]
fn overdetermined_rows_match_least_squares() {
    let mut model = SystemModel::ideal(4, 4, 4);
    model.psf_sigma = 1.0;
    let truth = build_system(&model).unwrap().matrix;
    let scan = simulate_scan(&truth, &model, 320, 5).unwrap();
    let c = cs_calibrate(&scan, &SolverConfig::calibration(16, 16), 0.0, RowWindow::Full)
        .unwrap()
        .matrix;
    let a = DenseOperator::from_fn(320, 256, |t, j| f64::from(scan.masks()[t].as_slice()[j]));
    for ii in 0..16 {
        let lsq = ls_oracle(&a, &scan.pixel_series(ii));
        let mut est = vec![0.0; 256];
        for (j, v) in c.row_vec(ii) {
            est[j as usize] = v;
        }
        assert!(rel(&est, &lsq) < 1e-3, "row {ii}: {}", rel(&est, &lsq));
    }
}

#[test]
fn recovered_rows_stay_in_dilated_truth_box() {
    let model = SystemModel::desk(1);
    let truth = build_system(&model).unwrap().matrix;
    let scan = simulate_scan(&truth, &model, 100, 7).unwrap();
    let est = cs_calibrate(&scan, &SolverConfig::calibration(64, 64), DEFAULT_TAU, RowWindow::default())
        .unwrap()
        .matrix;
    let bbox = |row: Vec<(u32, f64)>, tau: f64| {
        let max = row.iter().map(|e| e.1).fold(0.0, f64::max);
        let mut b = (usize::MAX, 0, usize::MAX, 0);
        for (j, v) in row {
            if v >= tau * max && v > 0.0 {
                let (r, c) = (j as usize % 64, j as usize / 64);
                b = (b.0.min(r), b.1.max(r), b.2.min(c), b.3.max(c));
            }
        }
        b
    };
    for ii in 0..256 {
        let t = bbox(truth.row_vec(ii), DEFAULT_TAU);
        let e = bbox(est.row_vec(ii), 0.0);
        assert!(est.row(ii).1.iter().all(|&v| v > 0.0));
        assert!(
            e.0 + 1 >= t.0 && e.1 <= t.1 + 1 && e.2 + 1 >= t.2 && e.3 <= t.3 + 1,
            "row {ii}: {e:?} vs {t:?}"
        );
    }
}

#[test]
fn single_region_is_the_whole_problem() {
    let mut model = SystemModel::ideal(4, 4, 4);
    model.psf_sigma = 1.0;
    let truth = build_system(&model).unwrap().matrix;
    let scan = simulate_scan(&truth, &model, 60, 2).unwrap();
    let whole = Region { row0: 0, col0: 0, rows: 4, cols: 4 };
    let plans = split_regions((16, 16), (4, 4), &[whole], 2).unwrap();
    assert_eq!(plans[0].window, Window::full(16, 16));
    assert_eq!(plans[0].sensor_index, (0..16).collect::<Vec<_>>());
    assert_eq!(plans[0].modulator_index, (0..256).collect::<Vec<_>>());
    assert_eq!(plans[0].sub_scan(&scan).unwrap(), scan);
    let cfg = SolverConfig::calibration(16, 16);
    let direct = cs_calibrate(&scan, &cfg, DEFAULT_TAU, RowWindow::default()).unwrap();
    let split = cs_calibrate_split(&scan, &[whole], 2, &cfg, DEFAULT_TAU, RowWindow::default()).unwrap();
    assert_eq!(split, direct);
}

#[test]
fn split_matches_unsplit_on_block_average() {
    let model = SystemModel::ideal(8, 8, 4);
    let truth = build_system(&model).unwrap().matrix;
    let scan = simulate_scan(&truth, &model, 40, 9).unwrap();
    let regions = Region::grid(8, 8, 2, 2).unwrap();
    let cfg = SolverConfig::calibration(32, 32);
    let window = RowWindow::Local { guard: 4 };
    let direct = cs_calibrate(&scan, &cfg, DEFAULT_TAU, window).unwrap();
    let split = cs_calibrate_split(&scan, &regions, 4, &cfg, DEFAULT_TAU, window).unwrap();
    assert_eq!(split, direct);
    for plan in split_regions((32, 32), (8, 8), &regions, 4).unwrap() {
        assert_eq!(plan.sub_scan(&scan).unwrap().len(), 40);
    }
}

#[test]
fn narrow_guard_breaks_rows_at_seams() {
    // A blurred footprint reaches past its nominal block, so with no guard
    // the pixels next to a seam lose part of their contribution area.
    let mut model = SystemModel::ideal(4, 4, 4);
    model.psf_sigma = 1.5;
    let truth = build_system(&model).unwrap().matrix;
    let scan = simulate_scan(&truth, &model, 200, 4).unwrap();
    let regions = Region::grid(4, 4, 2, 2).unwrap();
    let cfg = SolverConfig::calibration(16, 16);
    let direct = cs_calibrate(&scan, &cfg, DEFAULT_TAU, RowWindow::Full).unwrap().matrix;
    let split = cs_calibrate_split(&scan, &regions, 0, &cfg, DEFAULT_TAU, RowWindow::Full)
        .unwrap()
        .matrix;
    let seam = 1 + 4; // sensor pixel (1, 1), next to both seams
    let row_err = |ii: usize| {
        let d: Vec<f64> = direct.to_dense()[ii * 256..(ii + 1) * 256].to_vec();
        let s: Vec<f64> = split.to_dense()[ii * 256..(ii + 1) * 256].to_vec();
        rel(&s, &d)
    };
    assert!(row_err(seam) > 1e-2, "{}", row_err(seam));
    // The split rows never reach outside their region's window.
    for (j, _) in split.row_vec(seam) {
        assert!((j % 16) < 8 && (j / 16) < 8);
    }
}

#[test]
fn split_rejects_bad_regions() {
    let a = Region { row0: 0, col0: 0, rows: 3, cols: 3 };
    let b = Region { row0: 2, col0: 2, rows: 2, cols: 2 };
    assert!(split_regions((16, 16), (4, 4), &[a, b], 4).is_err());
    let off = Region { row0: 3, col0: 0, rows: 2, cols: 1 };
    assert!(split_regions((16, 16), (4, 4), &[off], 4).is_err());
    assert!(Region::grid(4, 4, 5, 1).is_err());
}

#[test]
fn calib_error_examples() {
    let truth = build_system(&SystemModel::desk(2)).unwrap().matrix;
    let same = calib_error(&truth, &truth, DEFAULT_TAU).unwrap();
    assert_eq!(same.frobenius_rel, 0.0);
    assert!(same.row_support_jaccard.iter().all(|&j| j == 1.0));

    let doubled: Vec<Vec<(u32, f64)>> = (0..256)
        .map(|ii| truth.row_vec(ii).into_iter().map(|(j, v)| (j, 2.0 * v)).collect())
        .collect();
    let doubled = SparseCalibMatrix::from_rows(256, 4096, doubled).unwrap();
    let e = calib_error(&doubled, &truth, DEFAULT_TAU).unwrap();
    assert!((e.frobenius_rel - 1.0).abs() < 1e-12);
    assert_eq!(e.mean_jaccard(), 1.0);

    let a = SparseCalibMatrix::from_rows(1, 4, vec![vec![(0, 1.0), (1, 1.0)]]).unwrap();
    let b = SparseCalibMatrix::from_rows(1, 4, vec![vec![(2, 1.0), (3, 1.0)]]).unwrap();
    let e = calib_error(&a, &b, 0.0).unwrap();
    assert_eq!(e.row_support_jaccard, vec![0.0]);
    assert_eq!(e.min_jaccard(), 0.0);

    let c = SparseCalibMatrix::zeros(2, 4);
    assert!(calib_error(&a, &c, 0.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn recovered_rows_are_nonnegative(seed in 0u64..1000, m in 8usize..48) {
        let mut model = SystemModel::ideal(4, 4, 4);
        model.psf_sigma = 0.8;
        model.noise_sigma = 0.01;
        model.seed = seed;
        let truth = build_system(&model).unwrap().matrix;
        let scan = simulate_scan(&truth, &model, m, seed).unwrap();
        let c = cs_calibrate(&scan, &SolverConfig::calibration(16, 16), DEFAULT_TAU, RowWindow::default())
            .unwrap()
            .matrix;
        for (_, vals) in c.rows() {
            prop_assert!(vals.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn window_indices_cover_the_window(r0 in 0usize..10, h in 0usize..6, c0 in 0usize..10, w in 0usize..6) {
        let win = Window { rows: r0..r0 + h, cols: c0..c0 + w };
        let idx: Vec<usize> = win.indices(16).collect();
        prop_assert_eq!(idx.len(), win.len());
        for (k, &j) in idx.iter().enumerate() {
            prop_assert_eq!(j % 16, r0 + k % h.max(1));
            prop_assert_eq!(j / 16, c0 + k / h.max(1));
        }
    }
}
