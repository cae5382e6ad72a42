use std::cell::Cell;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use fpaci_core::calibration::{
    calib_error, cs_calibrate, cs_calibrate_split, point_scan_calibrate, simulate_scan, CalibError, Region,
    RowWindow,
};
use fpaci_core::io;
use fpaci_core::optics::{
    build_system, fringe_profile, forward_measure, generate_resolution_target, load_bitmap_phantom,
    noise_sigma_for_snr, SystemModel, TargetSpec,
};
use fpaci_core::pipeline::{
    evaluate, lowres_view, measure_sequence, reconstruct, select_masks, MeasurementSet, Metrics, ReconResult,
};
use fpaci_core::sparse::Assembly;
use fpaci_core::{derive_seed, BinaryMask, Error, ImageGrid, SparseCalibMatrix};

use crate::config::{CalibSource, ExperimentConfig, Method, PhantomSource};
use crate::plot::{self, Profile};
use crate::CliError;

pub struct CalibOutcome {
    pub matrix: SparseCalibMatrix,
    /// Coded or single-pixel frames taken, not counting dark references.
    pub measurements: usize,
    pub error: CalibError,
    pub empty_rows: usize,
}

pub struct RunOutcome {
    pub recon: ReconResult,
    pub metrics: Option<Metrics>,
}

impl RunOutcome {
    pub fn check_converged(&self) -> Result<(), CliError> {
        if self.recon.report.converged {
            Ok(())
        } else {
            Err(CliError::NotConverged(self.recon.report.iterations))
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    Ok(io::write_bytes(path, text.as_bytes())?)
}

fn prepare_out(cfg: &ExperimentConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::Io { path: cfg.out.clone(), source: e })?;
    write_text(&cfg.out.join("effective.cfg"), &cfg.to_kv().to_text())
}

/// RMS of the dark-subtracted frames.
pub fn signal_rms(frames: &[ImageGrid], dark: Option<&ImageGrid>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for f in frames {
        for (i, v) in f.as_slice().iter().enumerate() {
            let d = dark.map_or(0.0, |d| d.as_slice()[i]);
            sum += (v - d) * (v - d);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

fn with_noise(model: &SystemModel, sigma: f64) -> SystemModel {
    SystemModel { noise_sigma: sigma, ..model.clone() }
}

pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<(SystemModel, Assembly), CliError> {
    prepare_out(cfg)?;
    let model = cfg.system_model()?;
    let asm = build_system(&model)?;
    model.write(&cfg.out.join("system.cfg"))?;
    asm.matrix.write(&cfg.out.join("truth.fcal"))?;
    let (p, n) = asm.matrix.shape();
    println!("C: {p}x{n}, nnz {}", asm.matrix.nnz());
    if !asm.warnings.is_empty() {
        println!("{} sensor pixels see nothing", asm.warnings.len());
    }
    Ok((model, asm))
}

pub fn cmd_calibrate(cfg: &ExperimentConfig) -> Result<CalibOutcome, CliError> {
    prepare_out(cfg)?;
    let model = cfg.system_model()?;
    let truth = build_system(&model)?.matrix;
    let dmd = (model.dmd_rows, model.dmd_cols);
    let fpa = (model.fpa_rows, model.fpa_cols);
    let start = Instant::now();
    let (matrix, measurements, empty_rows) = match cfg.method {
        Method::Point => {
            // Every single-pixel frame has the same mean power, so the
            // signal RMS follows from C directly.
            let model = match cfg.snr_db {
                Some(snr) => {
                    let rms = truth.frobenius_norm() / ((truth.sensor_pixels() * truth.modulator_pixels()) as f64).sqrt();
                    with_noise(&model, noise_sigma_for_snr(rms, snr))
                }
                None => model,
            };
            let source = ImageGrid::filled(dmd.0, dmd.1, 1.0)?;
            let (calls, lit) = (Cell::new(0u64), Cell::new(0usize));
            let seed = cfg.scan_seed();
            let measure = |m: &BinaryMask| {
                calls.set(calls.get() + 1);
                if m.count_ones() > 0 {
                    lit.set(lit.get() + 1);
                }
                forward_measure(&truth, m, &source, &model, derive_seed(seed, calls.get()))
            };
            let c = point_scan_calibrate(measure, dmd, fpa, true)?;
            let empty = c.rows().filter(|(cols, _)| cols.is_empty()).count();
            (c, lit.get(), empty)
        }
        Method::Cs => {
            let mut scan = simulate_scan(&truth, &model, cfg.calib_masks, cfg.scan_seed())?;
            if let Some(snr) = cfg.snr_db {
                let clean = simulate_scan(&truth, &with_noise(&model, 0.0), cfg.calib_masks, cfg.scan_seed())?;
                let rms = signal_rms(clean.frames(), clean.dark_frame());
                scan = simulate_scan(&truth, &with_noise(&model, noise_sigma_for_snr(rms, snr)), cfg.calib_masks, cfg.scan_seed())?;
            }
            let solver = cfg.calib_solver();
            let window = RowWindow::Local { guard: cfg.row_guard };
            let asm = if cfg.regions == (1, 1) {
                cs_calibrate(&scan, &solver, cfg.tau, window)?
            } else {
                let regions = Region::grid(fpa.0, fpa.1, cfg.regions.0, cfg.regions.1)?;
                cs_calibrate_split(&scan, &regions, cfg.guard, &solver, cfg.tau, window)?
            };
            (asm.matrix, scan.len(), asm.warnings.len())
        }
    };
    let seconds = start.elapsed().as_secs_f64();
    let error = calib_error(&matrix, &truth, cfg.tau)?;
    matrix.write(&cfg.out.join("est.fcal"))?;
    let mut tsv = String::from("method\tmeasurements\tfrobenius_rel\tmean_jaccard\tmin_jaccard\tempty_rows\n");
    let _ = writeln!(
        tsv,
        "{}\t{measurements}\t{}\t{}\t{}\t{empty_rows}",
        cfg.method.name(),
        error.frobenius_rel,
        error.mean_jaccard(),
        error.min_jaccard()
    );
    write_text(&cfg.out.join("calib_metrics.tsv"), &tsv)?;
    write_text(
        &cfg.out.join("calibrate.log"),
        &format!("wall_seconds={seconds:.3}\nmeasurements={measurements}\n"),
    )?;
    println!(
        "{}: {measurements} measurements, frobenius_rel {:.4}, mean Jaccard {:.4}",
        cfg.method.name(),
        error.frobenius_rel,
        error.mean_jaccard()
    );
    Ok(CalibOutcome { matrix, measurements, error, empty_rows })
}

fn phantom(cfg: &ExperimentConfig, model: &SystemModel) -> Result<(ImageGrid, Option<TargetSpec>), CliError> {
    match &cfg.phantom {
        PhantomSource::Target => {
            let spec = TargetSpec { rows: model.dmd_rows, cols: model.dmd_cols, ..TargetSpec::standard() };
            Ok((generate_resolution_target(&spec)?, Some(spec)))
        }
        PhantomSource::File(p) => {
            let x = load_bitmap_phantom(p)?;
            if x.dims() != (model.dmd_rows, model.dmd_cols) {
                return Err(CliError::Usage(format!(
                    "phantom {} is {}x{} but the modulator is {}x{}",
                    p.display(),
                    x.rows(),
                    x.cols(),
                    model.dmd_rows,
                    model.dmd_cols
                )));
            }
            Ok((x, None))
        }
    }
}

fn measure_frames(
    cfg: &ExperimentConfig,
    c: &SparseCalibMatrix,
    model: &SystemModel,
    x: &ImageGrid,
) -> Result<MeasurementSet, CliError> {
    let masks = select_masks(cfg.masks)?;
    let seed = cfg.measure_seed();
    let model = match cfg.snr_db {
        Some(snr) => {
            let clean = measure_sequence(c, &with_noise(model, 0.0), x, &masks, seed)?;
            let rms = signal_rms(&clean.frames, clean.dark.as_ref());
            with_noise(model, noise_sigma_for_snr(rms, snr))
        }
        None => model.clone(),
    };
    let ms = measure_sequence(c, &model, x, &masks, seed)?;
    ms.write_dir(&cfg.out.join("measurements"))?;
    io::write_fgrid(&cfg.out.join("phantom.fgrid"), x)?;
    io::write_pgm_display(&cfg.out.join("phantom.pgm"), x)?;
    Ok(ms)
}

pub fn cmd_measure(cfg: &ExperimentConfig) -> Result<MeasurementSet, CliError> {
    prepare_out(cfg)?;
    let model = cfg.system_model()?;
    let c = build_system(&model)?.matrix;
    let (x, _) = phantom(cfg, &model)?;
    let ms = measure_frames(cfg, &c, &model, &x)?;
    println!(
        "{} frames of {}x{} in {}",
        ms.len(),
        ms.fpa.0,
        ms.fpa.1,
        cfg.out.join("measurements").display()
    );
    Ok(ms)
}

fn calibration_path(cfg: &ExperimentConfig) -> std::path::PathBuf {
    match &cfg.calibration {
        CalibSource::Truth => cfg.out.join("truth.fcal"),
        CalibSource::Estimate => cfg.out.join("est.fcal"),
        CalibSource::File(p) => p.clone(),
    }
}

pub fn cmd_reconstruct(cfg: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    prepare_out(cfg)?;
    let c = SparseCalibMatrix::read(&calibration_path(cfg))?;
    let ms = MeasurementSet::read_dir(&cfg.out.join("measurements"))?;
    let truth_path = cfg.out.join("phantom.fgrid");
    let truth = if truth_path.exists() { Some(io::read_fgrid(&truth_path)?) } else { None };
    let spec = match (&cfg.phantom, &truth) {
        (PhantomSource::Target, Some(t)) => Some(TargetSpec { rows: t.rows(), cols: t.cols(), ..TargetSpec::standard() }),
        _ => None,
    };
    finish(cfg, &ms, &c, truth.as_ref(), spec.as_ref())
}

pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunOutcome, CliError> {
    if let CalibSource::File(p) = &cfg.calibration {
        if !p.exists() {
            return Err(Error::NotFound(p.clone()).into());
        }
    }
    let (model, asm) = cmd_simulate(cfg)?;
    let c = match cfg.calibration {
        CalibSource::Truth => asm.matrix.clone(),
        CalibSource::Estimate => cmd_calibrate(cfg)?.matrix,
        CalibSource::File(_) => SparseCalibMatrix::read(&calibration_path(cfg))?,
    };
    let (x, spec) = phantom(cfg, &model)?;
    let ms = measure_frames(cfg, &asm.matrix, &model, &x)?;
    finish(cfg, &ms, &c, Some(&x), spec.as_ref())
}

fn finish(
    cfg: &ExperimentConfig,
    ms: &MeasurementSet,
    c: &SparseCalibMatrix,
    truth: Option<&ImageGrid>,
    spec: Option<&TargetSpec>,
) -> Result<RunOutcome, CliError> {
    let start = Instant::now();
    let recon = reconstruct(ms, c, &cfg.solver(ms.dmd.0, ms.dmd.1))?;
    let seconds = start.elapsed().as_secs_f64();
    let out = &cfg.out;
    io::write_fgrid(&out.join("recon.fgrid"), &recon.image)?;
    io::write_pgm_display(&out.join("recon.pgm"), &recon.image)?;
    let lowres = lowres_view(ms)?;
    if let Some(l) = &lowres {
        io::write_pgm_display(&out.join("lowres.pgm"), l)?;
    }
    write_text(&out.join("solve_report.txt"), &recon.report.to_kv())?;

    let metrics = truth.map(|t| evaluate(&recon, t, spec, &cfg.metric())).transpose()?;
    let mut head = String::from("masks\tratio\tpsnr_db");
    let mut row = format!("{}\t{}\t", ms.len(), recon.sampling_ratio);
    match &metrics {
        Some(m) => {
            let _ = write!(row, "{}", m.psnr);
            for (w, v) in &m.contrasts {
                let _ = write!(head, "\tcontrast_w{w}");
                let _ = write!(row, "\t{v}");
            }
        }
        None => row.push_str("na"),
    }
    head.push_str("\titerations\tconverged\n");
    let _ = writeln!(row, "\t{}\t{}", recon.report.iterations, recon.report.converged);
    write_text(&out.join("metrics.tsv"), &(head + &row))?;

    if let (Some(t), Some(s)) = (truth, spec) {
        let profiles = s
            .fringe_widths
            .iter()
            .map(|&w| {
                let g = s.group(w)?;
                Ok(Profile {
                    width: w,
                    start: g.span.start,
                    truth: fringe_profile(t, s, &g),
                    lowres: lowres.as_ref().map(|l| fringe_profile(l, s, &g)),
                    recon: fringe_profile(&recon.image, s, &g),
                })
            })
            .collect::<Result<Vec<_>, Error>>()?;
        write_text(&out.join("profiles.csv"), &plot::profiles_csv(&profiles))?;
        io::write_pgm(&out.join("profiles.pgm"), &plot::render(&profiles)?, 255)?;
    }
    write_text(&out.join("run.log"), &format!("reconstruct_wall_seconds={seconds:.3}\n"))?;

    match &metrics {
        Some(m) => println!(
            "{} masks, ratio {}, PSNR {} dB, {} iterations{}",
            ms.len(),
            recon.sampling_ratio,
            m.psnr,
            recon.report.iterations,
            if recon.report.converged { "" } else { " (not converged)" }
        ),
        None => println!("{} masks, {} iterations", ms.len(), recon.report.iterations),
    }
    Ok(RunOutcome { recon, metrics })
}
