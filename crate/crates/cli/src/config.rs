//! Layered experiment configuration: built-in defaults, then an optional
//! `key=value` file, then command-line flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use fpaci_core::io::{self, KeyValues};
use fpaci_core::optics::SystemModel;
use fpaci_core::solver::{SolverConfig, TvNorm};
use fpaci_core::{derive_seed, MetricConfig};

use crate::{CliError, Flags};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    Point,
    Cs,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Point => "point",
            Method::Cs => "cs",
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "point" => Ok(Method::Point),
            "cs" => Ok(Method::Cs),
            _ => Err(format!("method must be point or cs, got {s:?}")),
        }
    }
}

/// Where the optical system comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum SystemSource {
    Desk,
    DeskWide,
    File(PathBuf),
}

/// The object being imaged.
#[derive(Debug, Clone, PartialEq)]
pub enum PhantomSource {
    Target,
    File(PathBuf),
}

/// Which calibration matrix reconstruction uses.
#[derive(Debug, Clone, PartialEq)]
pub enum CalibSource {
    /// The simulator's ground truth.
    Truth,
    /// The result of `calibrate`.
    Estimate,
    File(PathBuf),
}

/// Which subcommand is loading the config; `--masks` and `--mu` refer to
/// the calibration scan for `calibrate` and to reconstruction otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Calibrate,
    Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub system: SystemSource,
    pub phantom: PhantomSource,
    /// Hadamard masks used for imaging.
    pub masks: usize,
    /// Random masks used for CS calibration.
    pub calib_masks: usize,
    pub method: Method,
    pub calibration: CalibSource,
    pub tau: f64,
    pub mu: f64,
    pub calib_mu: f64,
    pub norm: TvNorm,
    pub max_outer: usize,
    pub tol: f64,
    /// Additive sensor noise, set from the clean signal power.
    pub snr_db: Option<f64>,
    /// Sensor split for calibration, `rows x cols` regions.
    pub regions: (usize, usize),
    pub guard: usize,
    pub row_guard: usize,
    pub bit_depth: u32,
    pub normalize: bool,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let recon = SolverConfig::reconstruction(1, 1);
        Self {
            system: SystemSource::Desk,
            phantom: PhantomSource::Target,
            masks: 16,
            calib_masks: 100,
            method: Method::Cs,
            calibration: CalibSource::Truth,
            tau: fpaci_core::calibration::DEFAULT_TAU,
            mu: recon.mu,
            calib_mu: SolverConfig::calibration(1, 1).mu,
            norm: recon.norm,
            max_outer: recon.max_outer,
            tol: recon.tol,
            snr_db: None,
            regions: (1, 1),
            guard: fpaci_core::calibration::DEFAULT_GUARD,
            row_guard: fpaci_core::calibration::DEFAULT_ROW_GUARD,
            bit_depth: 14,
            normalize: true,
            seed: 1,
            out: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, raw: &str, path: &Path) -> Result<T, CliError> {
    raw.parse()
        .map_err(|_| CliError::Usage(format!("{}: bad value {raw:?} for {key}", path.display())))
}

impl ExperimentConfig {
    /// Defaults, overridden by `flags.config` if given, then by the flags.
    pub fn load(flags: &Flags, stage: Stage) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        if let Some(path) = &flags.config {
            let kv = io::read_kv(path)?;
            cfg.apply(&kv, path)?;
        }
        if let Some(seed) = flags.seed {
            cfg.seed = seed;
        }
        if let Some(method) = flags.method {
            cfg.method = method;
        }
        if let Some(out) = &flags.out {
            cfg.out = out.clone();
        }
        if let Some(tau) = flags.tau {
            cfg.tau = tau;
        }
        match stage {
            Stage::Calibrate => {
                if let Some(m) = flags.masks {
                    cfg.calib_masks = m;
                }
                if let Some(mu) = flags.mu {
                    cfg.calib_mu = mu;
                }
            }
            Stage::Image => {
                if let Some(m) = flags.masks {
                    cfg.masks = m;
                }
                if let Some(mu) = flags.mu {
                    cfg.mu = mu;
                }
            }
        }
        cfg.check()?;
        Ok(cfg)
    }

    fn apply(&mut self, kv: &KeyValues, path: &Path) -> Result<(), CliError> {
        for (key, raw) in kv.iter() {
            match key {
                "system" => {
                    self.system = match raw {
                        "desk" => SystemSource::Desk,
                        "desk_wide" => SystemSource::DeskWide,
                        p => SystemSource::File(p.into()),
                    }
                }
                "phantom" => {
                    self.phantom = match raw {
                        "target" => PhantomSource::Target,
                        p => PhantomSource::File(p.into()),
                    }
                }
                "calibration" => {
                    self.calibration = match raw {
                        "truth" => CalibSource::Truth,
                        "estimate" => CalibSource::Estimate,
                        p => CalibSource::File(p.into()),
                    }
                }
                "masks" => self.masks = parse(key, raw, path)?,
                "calib_masks" => self.calib_masks = parse(key, raw, path)?,
                "method" => self.method = raw.parse().map_err(CliError::Usage)?,
                "tau" => self.tau = parse(key, raw, path)?,
                "mu" => self.mu = parse(key, raw, path)?,
                "calib_mu" => self.calib_mu = parse(key, raw, path)?,
                "tv_p" => self.norm = TvNorm::from_p(parse(key, raw, path)?)?,
                "max_outer" => self.max_outer = parse(key, raw, path)?,
                "tol" => self.tol = parse(key, raw, path)?,
                "snr_db" => {
                    self.snr_db = match raw {
                        "none" => None,
                        v => Some(parse(key, v, path)?),
                    }
                }
                "regions" => {
                    let (r, c) = raw
                        .split_once('x')
                        .ok_or_else(|| CliError::Usage(format!("regions must look like 2x2, got {raw:?}")))?;
                    self.regions = (parse(key, r, path)?, parse(key, c, path)?);
                }
                "guard" => self.guard = parse(key, raw, path)?,
                "row_guard" => self.row_guard = parse(key, raw, path)?,
                "bit_depth" => self.bit_depth = parse(key, raw, path)?,
                "normalize" => self.normalize = parse(key, raw, path)?,
                "seed" => self.seed = parse(key, raw, path)?,
                "out" => self.out = raw.into(),
                _ => return Err(CliError::Usage(format!("{}: unknown key {key:?}", path.display()))),
            }
        }
        Ok(())
    }

    fn check(&self) -> Result<(), CliError> {
        if self.calib_masks == 0 {
            return Err(CliError::Usage("calibration needs at least one mask".into()));
        }
        if !(0.0..1.0).contains(&self.tau) {
            return Err(CliError::Usage(format!("tau must lie in [0, 1), got {}", self.tau)));
        }
        if self.regions.0 == 0 || self.regions.1 == 0 {
            return Err(CliError::Usage("regions must be at least 1x1".into()));
        }
        self.solver(1, 1).validate()?;
        self.calib_solver().validate()?;
        Ok(())
    }

    /// Every effective value, in a form [`ExperimentConfig::load`] reads back.
    /// The output directory is left out so that runs into different
    /// directories write identical files.
    pub fn to_kv(&self) -> KeyValues {
        let path = |p: &Path| p.display().to_string();
        let mut kv = KeyValues::new();
        kv.push(
            "system",
            match &self.system {
                SystemSource::Desk => "desk".into(),
                SystemSource::DeskWide => "desk_wide".into(),
                SystemSource::File(p) => path(p),
            },
        );
        kv.push(
            "phantom",
            match &self.phantom {
                PhantomSource::Target => "target".into(),
                PhantomSource::File(p) => path(p),
            },
        );
        kv.push(
            "calibration",
            match &self.calibration {
                CalibSource::Truth => "truth".into(),
                CalibSource::Estimate => "estimate".into(),
                CalibSource::File(p) => path(p),
            },
        );
        kv.push("masks", self.masks);
        kv.push("calib_masks", self.calib_masks);
        kv.push("method", self.method.name());
        kv.push("tau", self.tau);
        kv.push("mu", self.mu);
        kv.push("calib_mu", self.calib_mu);
        kv.push("tv_p", self.norm.p());
        kv.push("max_outer", self.max_outer);
        kv.push("tol", self.tol);
        kv.push("snr_db", self.snr_db.map_or("none".into(), |v| v.to_string()));
        kv.push("regions", format!("{}x{}", self.regions.0, self.regions.1));
        kv.push("guard", self.guard);
        kv.push("row_guard", self.row_guard);
        kv.push("bit_depth", self.bit_depth);
        kv.push("normalize", self.normalize);
        kv.push("seed", self.seed);
        kv
    }

    pub fn solver(&self, rows: usize, cols: usize) -> SolverConfig {
        SolverConfig {
            mu: self.mu,
            norm: self.norm,
            max_outer: self.max_outer,
            tol: self.tol,
            ..SolverConfig::reconstruction(rows, cols)
        }
    }

    /// Grid shape is set per row window by the calibration itself.
    pub fn calib_solver(&self) -> SolverConfig {
        SolverConfig {
            mu: self.calib_mu,
            norm: self.norm,
            ..SolverConfig::calibration(1, 1)
        }
    }

    pub fn metric(&self) -> MetricConfig {
        MetricConfig {
            bit_depth: self.bit_depth,
            normalize: self.normalize,
        }
    }

    pub fn system_model(&self) -> Result<SystemModel, CliError> {
        Ok(match &self.system {
            SystemSource::Desk => SystemModel::desk(self.seed),
            SystemSource::DeskWide => SystemModel::desk_wide(self.seed),
            SystemSource::File(p) => SystemModel::read(p)?,
        })
    }

    /// Seed for the calibration scan.
    pub fn scan_seed(&self) -> u64 {
        derive_seed(self.seed, 101)
    }

    /// Seed for the coded imaging frames.
    pub fn measure_seed(&self) -> u64 {
        derive_seed(self.seed, 202)
    }
}
