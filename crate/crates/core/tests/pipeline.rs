use fpaci_core::optics::{build_system, generate_resolution_target, SystemModel, TargetSpec};
use fpaci_core::pipeline::*;
use fpaci_core::solver::{
    adjoint_mismatch, gradient_stencil, numerical_rank, DenseOperator, LinearOperator, SolverConfig,
};
use fpaci_core::{expand_mask, psnr, random_mask, superpixel_bin, BinaryMask, ImageGrid, MetricConfig, Psnr};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy() -> (SystemModel, fpaci_core::SparseCalibMatrix) {
    let mut model = SystemModel::ideal(4, 4, 4);
    model.psf_sigma = 1.0;
    let c = build_system(&model).unwrap().matrix;
    (model, c)
}

fn random_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
}

fn expanded(n: usize, dmd: usize) -> Vec<BinaryMask> {
    select_masks(n).unwrap().iter().map(|m| expand_mask(m, dmd, dmd).unwrap()).collect()
}

#[test]
fn mask_selection() {
    let all = select_masks(16).unwrap();
    assert_eq!(all.len(), 16);
    let one = select_masks(1).unwrap();
    assert_eq!(one[0].count_ones(), 16);
    assert_eq!(select_masks(6).unwrap(), all[..6].to_vec());
    assert!(select_masks(0).is_err());
    assert!(select_masks(17).is_err());

    let (model, c) = toy();
    let x = ImageGrid::filled(16, 16, 1.0).unwrap();
    for (n, ratio) in [(16, 1.0), (10, 0.625), (6, 0.375), (1, 0.0625)] {
        let ms = measure_sequence(&c, &model, &x, &select_masks(n).unwrap(), 0).unwrap();
        assert_eq!(ms.sampling_ratio().unwrap(), ratio);
    }
}

#[test]
fn sequence_shapes() {
    let model = SystemModel::ideal(16, 16, 4);
    let c = build_system(&model).unwrap().matrix;
    let x = generate_resolution_target(&TargetSpec::standard()).unwrap();
    let ms = measure_sequence(&c, &model, &x, &select_masks(16).unwrap(), 1).unwrap();
    assert_eq!(ms.len(), 16);
    assert!(ms.frames.iter().all(|f| f.dims() == (16, 16)));
    assert_eq!(ms.masks[0].dims(), (4, 4));
    assert_eq!(ms.expanded_masks().unwrap()[3].dims(), (64, 64));
}

#[test]
fn all_ones_frame_is_the_low_res_image() {
    let model = SystemModel::ideal(16, 16, 4);
    let c = build_system(&model).unwrap().matrix;
    let x = generate_resolution_target(&TargetSpec::standard()).unwrap();
    let ms = measure_sequence(&c, &model, &x, &select_masks(4).unwrap(), 1).unwrap();
    let binned = superpixel_bin(&x, 4).unwrap();
    for (a, b) in ms.corrected_frame(0).unwrap().as_slice().iter().zip(binned.as_slice()) {
        assert!((a - b).abs() < 1e-12);
    }
    let view = lowres_view(&ms).unwrap().unwrap();
    assert_eq!(view, block_average_view(&x, 4).unwrap());

    let no_dc = MeasurementSet::new(ms.masks[1..].to_vec(), ms.frames[1..].to_vec(), ms.dmd, ms.fpa, 1, None).unwrap();
    assert!(lowres_view(&no_dc).unwrap().is_none());
}

#[test]
fn zero_object_sees_only_dark() {
    let model = SystemModel::desk(4);
    let c = build_system(&model).unwrap().matrix;
    let ms = measure_sequence(&c, &model, &ImageGrid::zeros(64, 64).unwrap(), &select_masks(5).unwrap(), 2).unwrap();
    for f in &ms.frames {
        assert_eq!(f.as_slice(), &model.dark[..]);
    }
}

#[test]
fn single_all_ones_mask_is_c() {
    let (_, c) = toy();
    let op = stacked_operator(&c, expanded(1, 16)).unwrap();
    let x = random_vec(256, 3);
    let (mut a, mut b) = (vec![0.0; 16], vec![0.0; 16]);
    op.apply(&x, &mut a);
    c.matvec(&x, &mut b);
    assert!(a.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-12));
}

#[test]
fn stacked_operator_matches_dense_assembly() {
    let (_, c) = toy();
    let masks = expanded(16, 16);
    let dense_c = c.to_dense();
    // A[(t, ii), j] = C[ii, j] · mask_t[j]
    let a = DenseOperator::from_fn(16 * 16, 256, |row, j| {
        let (t, ii) = (row / 16, row % 16);
        dense_c[ii * 256 + j] * f64::from(masks[t].as_slice()[j])
    });
    let op = stacked_operator(&c, masks).unwrap();
    assert_eq!((op.out_dim(), op.in_dim()), (256, 256));
    for seed in 0..4 {
        let x = random_vec(256, seed);
        let (mut p, mut q) = (vec![0.0; 256], vec![0.0; 256]);
        op.apply(&x, &mut p);
        a.apply(&x, &mut q);
        let diff = p.iter().zip(&q).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "{diff}");
    }
    assert!(adjoint_mismatch(&op, 9) < 1e-8);
    let (rank, _, _) = numerical_rank(&a);
    assert_eq!(rank, 256);
}

#[test]
fn stacked_operator_rejects_mismatch() {
    let (_, c) = toy();
    assert!(stacked_operator(&c, Vec::new()).is_err());
    assert!(stacked_operator(&c, vec![random_mask(8, 8, 0.5, 0).unwrap()]).is_err());
}

#[test]
fn full_ratio_toy_reconstruction() {
    let (model, c) = toy();
    let x = ImageGrid::from_fn(16, 16, |r, c| if (r / 3 + c / 5) % 2 == 0 { 1.0 } else { 0.2 }).unwrap();
    let ms = measure_sequence(&c, &model, &x, &select_masks(16).unwrap(), 5).unwrap();
    let rec = reconstruct(&ms, &c, &SolverConfig::reconstruction(16, 16)).unwrap();
    assert_eq!(rec.image.dims(), (16, 16));
    let p = psnr(&rec.image, &x, &MetricConfig::default()).unwrap();
    assert!(p >= Psnr::Finite(40.0), "{p}");
}

#[test]
fn constant_object_reconstructs_flat() {
    let model = SystemModel::desk(1);
    let c = build_system(&model).unwrap().matrix;
    let x = ImageGrid::filled(64, 64, 0.7).unwrap();
    let ms = measure_sequence(&c, &model, &x, &select_masks(16).unwrap(), 3).unwrap();
    let rec = reconstruct(&ms, &c, &SolverConfig::reconstruction(64, 64)).unwrap();
    let v = rec.image.as_slice();
    assert!(v.iter().all(|p| ((p - 0.7) / 0.7).abs() < 1e-3));
    let normalized: Vec<f64> = v.iter().map(|p| p / 0.7).collect();
    let (dh, dv) = gradient_stencil(&normalized, 64, 64).unwrap();
    assert!(dh.iter().chain(&dv).all(|g| g.abs() < 1e-3));
}

#[test]
fn reconstruct_checks_geometry() {
    let (model, c) = toy();
    let x = ImageGrid::zeros(16, 16).unwrap();
    let ms = measure_sequence(&c, &model, &x, &select_masks(2).unwrap(), 0).unwrap();
    let other = build_system(&SystemModel::ideal(8, 8, 2)).unwrap().matrix;
    assert!(reconstruct(&ms, &other, &SolverConfig::reconstruction(16, 16)).is_err());
}

#[test]
fn contrast_examples() {
    let spec = TargetSpec::standard();
    let target = generate_resolution_target(&spec).unwrap();
    for &w in &spec.fringe_widths {
        assert_eq!(fringe_contrast(&target, &spec, w).unwrap(), 1.0);
    }
    let flat = ImageGrid::filled(64, 64, 0.3).unwrap();
    assert_eq!(fringe_contrast(&flat, &spec, 2).unwrap(), 0.0);
    assert_eq!(fringe_contrast(&ImageGrid::zeros(64, 64).unwrap(), &spec, 2).unwrap(), 0.0);
    let blurred = block_average_view(&target, 4).unwrap();
    assert!(fringe_contrast(&blurred, &spec, 1).unwrap() < 1e-12);
    assert!(fringe_contrast(&target, &spec, 3).is_err());
    assert!(fringe_contrast(&ImageGrid::zeros(32, 32).unwrap(), &spec, 1).is_err());
}

#[test]
fn evaluate_is_pure_and_exact_on_truth() {
    let (model, c) = toy();
    let spec = TargetSpec { rows: 16, cols: 16, fringe_widths: vec![1, 2], ..TargetSpec::standard() };
    let x = generate_resolution_target(&spec).unwrap();
    let ms = measure_sequence(&c, &model, &x, &select_masks(16).unwrap(), 5).unwrap();
    let mut rec = reconstruct(&ms, &c, &SolverConfig::reconstruction(16, 16)).unwrap();
    let cfg = MetricConfig::default();
    let a = evaluate(&rec, &x, Some(&spec), &cfg).unwrap();
    assert_eq!(a, evaluate(&rec, &x, Some(&spec), &cfg).unwrap());
    assert_eq!(a.sampling_ratio, 1.0);
    rec.image = x.clone();
    let exact = evaluate(&rec, &x, Some(&spec), &cfg).unwrap();
    assert_eq!(exact.psnr, Psnr::Infinite);
    assert_eq!(exact.contrasts, vec![(1, 1.0), (2, 1.0)]);
}

#[test]
fn measurement_set_directory_round_trip() {
    let model = SystemModel::desk(2);
    let c = build_system(&model).unwrap().matrix;
    let x = generate_resolution_target(&TargetSpec::standard()).unwrap();
    let ms = measure_sequence(&c, &model, &x, &select_masks(6).unwrap(), 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ms.write_dir(dir.path()).unwrap();
    assert!(dir.path().join("mask_005.pgm").exists());
    assert!(dir.path().join("frame_000.fgrid").exists());
    let back = MeasurementSet::read_dir(dir.path()).unwrap();
    assert_eq!((&back.masks, back.dmd, back.fpa, back.seed), (&ms.masks, ms.dmd, ms.fpa, ms.seed));
    // Frames are stored as f32.
    for (a, b) in back.frames.iter().chain(&back.dark).zip(ms.frames.iter().chain(&ms.dark)) {
        assert!(a.as_slice().iter().zip(b.as_slice()).all(|(u, v)| (u - v).abs() <= 1e-7 * v.abs().max(1.0)));
    }
    let again = tempfile::tempdir().unwrap();
    back.write_dir(again.path()).unwrap();
    assert_eq!(MeasurementSet::read_dir(again.path()).unwrap(), back);
    assert!(MeasurementSet::read_dir(&dir.path().join("missing")).is_err());
}

#[test]
fn upsampling() {
    let img = ImageGrid::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    let up = upsample_nearest(&img, 2).unwrap();
    assert_eq!(up.dims(), (4, 4));
    assert_eq!(up.get(3, 2), 4.0);
    assert_eq!(up.get(1, 2), 2.0);
    assert!(upsample_nearest(&img, 0).is_err());
}
