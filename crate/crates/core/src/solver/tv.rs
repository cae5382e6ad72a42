//! TV-regularized least squares,
//!
//! ```text
//! min_x  Σ_i ‖D_i x‖_p + (μ/2) ‖y − A x‖²      (optionally x ≥ 0)
//! ```
//!
//! solved by alternating direction minimization. The gradient is split off
//! as `w = Dx` (and `z = x` for the nonnegative case); each outer iteration
//! shrinks `w`, projects `z`, solves the quadratic `x` subproblem by
//! conjugate gradients, updates the multipliers and grows the penalties.
//! Operators that expose a dense Gram matrix get the `x` subproblem solved
//! by Cholesky instead, refactored only when the penalty changes.

use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::solver::gradient;
use crate::solver::operator::{dot, gram_norm_estimate, norm, LinearOperator};

/// Norm applied to each pixel's gradient vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TvNorm {
    /// `|D_h x| + |D_v x|` (p = 1).
    Anisotropic,
    /// `sqrt(D_h x² + D_v x²)` (p = 2).
    Isotropic,
}

impl TvNorm {
    pub fn from_p(p: u32) -> Result<Self> {
        match p {
            1 => Ok(TvNorm::Anisotropic),
            2 => Ok(TvNorm::Isotropic),
            _ => Err(Error::invalid(format!("TV norm exponent must be 1 or 2, got {p}"))),
        }
    }

    pub fn p(self) -> u32 {
        match self {
            TvNorm::Anisotropic => 1,
            TvNorm::Isotropic => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Fidelity weight μ.
    pub mu: f64,
    pub norm: TvNorm,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub max_outer: usize,
    /// Conjugate-gradient iterations per outer step.
    pub max_inner: usize,
    /// Stop once the relative change of `x` drops below this, after the
    /// penalty continuation has finished.
    pub tol: f64,
    /// Penalty multiplier per outer iteration.
    pub penalty_growth: f64,
    /// Initial and final splitting penalties, relative to `μ·‖A‖²`.
    pub beta_init: f64,
    pub beta_max: f64,
    pub nonneg: bool,
}

impl SolverConfig {
    /// Defaults for whole-image reconstruction on a `rows`×`cols` grid.
    pub fn reconstruction(rows: usize, cols: usize) -> Self {
        Self {
            mu: 2f64.powi(16),
            norm: TvNorm::Anisotropic,
            grid_rows: rows,
            grid_cols: cols,
            max_outer: 2000,
            max_inner: 10,
            tol: 1e-5,
            penalty_growth: 1.0,
            beta_init: 2f64.powi(-7),
            beta_max: 2f64.powi(-7),
            nonneg: false,
        }
    }

    /// Defaults for recovering one contribution area from 0/1 masks. The
    /// penalty stays fixed, so a direct solver factors only once.
    pub fn calibration(rows: usize, cols: usize) -> Self {
        Self {
            mu: 2f64.powi(16),
            max_outer: 300,
            tol: 1e-6,
            beta_init: 2f64.powi(-20),
            beta_max: 2f64.powi(-20),
            nonneg: true,
            ..Self::reconstruction(rows, cols)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::invalid(format!("mu must be positive, got {}", self.mu)));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::invalid(format!("tol must be positive, got {}", self.tol)));
        }
        if !(self.penalty_growth >= 1.0 && self.penalty_growth.is_finite()) {
            return Err(Error::invalid(format!(
                "penalty growth must be >= 1, got {}",
                self.penalty_growth
            )));
        }
        if !(self.beta_init > 0.0 && self.beta_max >= self.beta_init && self.beta_max.is_finite()) {
            return Err(Error::invalid("penalties must satisfy 0 < beta_init <= beta_max"));
        }
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(Error::invalid("solver grid must be non-empty"));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::invalid("iteration caps must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub objective: f64,
    /// `‖y − A x̂‖₂`.
    pub residual: f64,
    /// Objective of the best iterate after each outer iteration.
    pub trace: Vec<f64>,
    pub converged: bool,
}

impl SolveReport {
    /// Flat `key=value` lines for logs.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "iterations={}", self.iterations);
        let _ = writeln!(s, "converged={}", self.converged);
        let _ = writeln!(s, "objective={:e}", self.objective);
        let _ = writeln!(s, "residual={:e}", self.residual);
        let trace: Vec<String> = self.trace.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(s, "trace={}", trace.join(","));
        s
    }
}

/// Evaluates `Σ_i ‖D_i x‖_p + (μ/2)‖y − Ax‖²`.
pub fn tv_objective(
    a: &dyn LinearOperator,
    y: &[f64],
    x: &[f64],
    cfg: &SolverConfig,
) -> Result<f64> {
    check_dims(a, y, cfg)?;
    let mut ws = Workspace::new(a, cfg);
    Ok(ws.objective(a, y, x, cfg).0)
}

fn check_dims(a: &dyn LinearOperator, y: &[f64], cfg: &SolverConfig) -> Result<()> {
    if a.out_dim() != y.len() {
        return Err(Error::invalid(format!(
            "operator produces {} values but y has {}",
            a.out_dim(),
            y.len()
        )));
    }
    if a.in_dim() != cfg.grid_rows * cfg.grid_cols {
        return Err(Error::invalid(format!(
            "operator takes {} unknowns but the grid is {}x{}",
            a.in_dim(),
            cfg.grid_rows,
            cfg.grid_cols
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("measurements contain non-finite values"));
    }
    Ok(())
}

struct Workspace {
    rows: usize,
    cols: usize,
    dh: Vec<f64>,
    dv: Vec<f64>,
    ax: Vec<f64>,
    tmp: Vec<f64>,
}

impl Workspace {
    fn new(a: &dyn LinearOperator, cfg: &SolverConfig) -> Self {
        let n = a.in_dim();
        Self {
            rows: cfg.grid_rows,
            cols: cfg.grid_cols,
            dh: vec![0.0; n],
            dv: vec![0.0; n],
            ax: vec![0.0; a.out_dim()],
            tmp: vec![0.0; n],
        }
    }

    /// Returns (objective, residual norm).
    fn objective(&mut self, a: &dyn LinearOperator, y: &[f64], x: &[f64], cfg: &SolverConfig) -> (f64, f64) {
        gradient::forward(x, self.rows, self.cols, &mut self.dh, &mut self.dv);
        let tv: f64 = match cfg.norm {
            TvNorm::Anisotropic => self.dh.iter().zip(&self.dv).map(|(h, v)| h.abs() + v.abs()).sum(),
            TvNorm::Isotropic => self.dh.iter().zip(&self.dv).map(|(h, v)| h.hypot(*v)).sum(),
        };
        a.apply(x, &mut self.ax);
        let r2: f64 = self.ax.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
        (tv + 0.5 * cfg.mu * r2, r2.sqrt())
    }

    /// `out = μAᵀA v + β DᵀD v + γ v`.
    fn normal_apply(&mut self, a: &dyn LinearOperator, mu: f64, beta: f64, gamma: f64, v: &[f64], out: &mut [f64]) {
        a.apply(v, &mut self.ax);
        a.apply_adjoint(&self.ax, out);
        gradient::forward(v, self.rows, self.cols, &mut self.dh, &mut self.dv);
        gradient::adjoint(&self.dh, &self.dv, self.rows, self.cols, &mut self.tmp);
        for ((o, t), vi) in out.iter_mut().zip(&self.tmp).zip(v) {
            *o = mu * *o + beta * t + gamma * vi;
        }
    }
}

/// Warm-started conjugate gradients on `(μAᵀA + βDᵀD + γI) x = rhs`.
#[allow(clippy::too_many_arguments)]
fn cg(
    ws: &mut Workspace,
    a: &dyn LinearOperator,
    (mu, beta, gamma): (f64, f64, f64),
    rhs: &[f64],
    x: &mut [f64],
    max_inner: usize,
    r: &mut [f64],
    p: &mut [f64],
    q: &mut [f64],
) {
    ws.normal_apply(a, mu, beta, gamma, x, q);
    for i in 0..x.len() {
        r[i] = rhs[i] - q[i];
    }
    p.copy_from_slice(r);
    let mut rr = dot(r, r);
    let stop = 1e-24 * dot(rhs, rhs);
    for _ in 0..max_inner {
        if rr <= stop || rr == 0.0 {
            break;
        }
        ws.normal_apply(a, mu, beta, gamma, p, q);
        let pq = dot(p, q);
        if pq <= 0.0 {
            break;
        }
        let alpha = rr / pq;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        let rr_new = dot(r, r);
        let b = rr_new / rr;
        rr = rr_new;
        for i in 0..x.len() {
            p[i] = r[i] + b * p[i];
        }
    }
}

/// Dense `x`-step for operators that expose `AᵀA`.
struct Direct {
    gram: DMatrix<f64>,
    laplacian: DMatrix<f64>,
    factor: Option<(f64, Cholesky<f64, Dyn>)>,
}

impl Direct {
    fn new(gram: Vec<f64>, rows: usize, cols: usize) -> Self {
        let n = rows * cols;
        let mut laplacian = DMatrix::zeros(n, n);
        let (mut e, mut dh, mut dv, mut col) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for j in 0..n {
            e[j] = 1.0;
            gradient::forward(&e, rows, cols, &mut dh, &mut dv);
            gradient::adjoint(&dh, &dv, rows, cols, &mut col);
            e[j] = 0.0;
            laplacian.set_column(j, &DVector::from_column_slice(&col));
        }
        Self {
            gram: DMatrix::from_row_slice(n, n, &gram),
            laplacian,
            factor: None,
        }
    }

    /// Solves `(μAᵀA + βDᵀD + γI) x = rhs`. Returns `false` if the matrix
    /// is not numerically positive definite.
    fn solve(&mut self, mu: f64, beta: f64, gamma: f64, rhs: &[f64], x: &mut [f64]) -> bool {
        if self.factor.as_ref().map(|f| f.0) != Some(beta) {
            let mut m = &self.gram * mu + &self.laplacian * beta;
            for i in 0..m.nrows() {
                m[(i, i)] += gamma;
            }
            self.factor = m.cholesky().map(|c| (beta, c));
        }
        match &self.factor {
            Some((_, c)) => {
                let sol = c.solve(&DVector::from_column_slice(rhs));
                x.copy_from_slice(sol.as_slice());
                true
            }
            None => false,
        }
    }
}

fn shrink(norm: TvNorm, vh: &mut [f64], vv: &mut [f64], thresh: f64) {
    match norm {
        TvNorm::Anisotropic => {
            for v in vh.iter_mut().chain(vv.iter_mut()) {
                let m = v.abs() - thresh;
                *v = if m > 0.0 { m.copysign(*v) } else { 0.0 };
            }
        }
        TvNorm::Isotropic => {
            for (h, v) in vh.iter_mut().zip(vv.iter_mut()) {
                let mag = h.hypot(*v);
                let s = if mag > thresh { (mag - thresh) / mag } else { 0.0 };
                *h *= s;
                *v *= s;
            }
        }
    }
}

/// Approximate minimizer of the TV objective from a zero start.
///
/// The returned iterate is the best one seen (clamped to `x ≥ 0` when
/// `nonneg` is set), so `report.trace` never increases. Hitting
/// `max_outer` is not an error; `report.converged` is then `false`.
pub fn tv_solve(a: &dyn LinearOperator, y: &[f64], cfg: &SolverConfig) -> Result<(Vec<f64>, SolveReport)> {
    cfg.validate()?;
    check_dims(a, y, cfg)?;
    let n = a.in_dim();
    let (rows, cols) = (cfg.grid_rows, cfg.grid_cols);
    let mu = cfg.mu;

    let gram = gram_norm_estimate(a, 30).max(f64::MIN_POSITIVE);
    let scale = mu * gram;
    let mut beta = cfg.beta_init * scale;
    let beta_max = cfg.beta_max * scale;

    let mut ws = Workspace::new(a, cfg);
    let mut x = vec![0.0; n];
    let mut x_prev = vec![0.0; n];
    let mut wh = vec![0.0; n];
    let mut wv = vec![0.0; n];
    let mut nu_h = vec![0.0; n];
    let mut nu_v = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut lam = vec![0.0; n];

    let mut aty = vec![0.0; n];
    a.apply_adjoint(y, &mut aty);

    // CG buffers
    let mut rhs = vec![0.0; n];
    let mut r = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];

    let mut direct = a.gram().map(|g| Direct::new(g, rows, cols));

    let mut best = x.clone();
    let (mut best_obj, _) = ws.objective(a, y, &best, cfg);
    let mut trace = Vec::with_capacity(cfg.max_outer);
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..cfg.max_outer {
        iterations += 1;
        let gamma = if cfg.nonneg { beta } else { 0.0 };

        // w-step: shrink(Dx − ν/β, 1/β)
        gradient::forward(&x, rows, cols, &mut wh, &mut wv);
        for i in 0..n {
            wh[i] -= nu_h[i] / beta;
            wv[i] -= nu_v[i] / beta;
        }
        shrink(cfg.norm, &mut wh, &mut wv, 1.0 / beta);

        // z-step: projection onto x ≥ 0
        if cfg.nonneg {
            for i in 0..n {
                z[i] = (x[i] - lam[i] / gamma).max(0.0);
            }
        }

        // x-step: (μAᵀA + βDᵀD + γI) x = Dᵀ(βw + ν) + μAᵀy + γz + λ
        for i in 0..n {
            ws.dh[i] = beta * wh[i] + nu_h[i];
            ws.dv[i] = beta * wv[i] + nu_v[i];
        }
        gradient::adjoint(&ws.dh, &ws.dv, rows, cols, &mut rhs);
        for i in 0..n {
            rhs[i] += mu * aty[i];
            if cfg.nonneg {
                rhs[i] += gamma * z[i] + lam[i];
            }
        }
        x_prev.copy_from_slice(&x);
        if let Some(d) = direct.as_mut() {
            if !d.solve(mu, beta, gamma, &rhs, &mut x) {
                direct = None;
            }
        }
        if direct.is_none() {
            cg(&mut ws, a, (mu, beta, gamma), &rhs, &mut x, cfg.max_inner, &mut r, &mut p, &mut q);
        }

        // multipliers
        gradient::forward(&x, rows, cols, &mut ws.dh, &mut ws.dv);
        for i in 0..n {
            nu_h[i] -= beta * (ws.dh[i] - wh[i]);
            nu_v[i] -= beta * (ws.dv[i] - wv[i]);
        }
        if cfg.nonneg {
            for i in 0..n {
                lam[i] -= gamma * (x[i] - z[i]);
            }
        }

        // candidate
        let cand: Vec<f64> = if cfg.nonneg {
            x.iter().map(|v| v.max(0.0)).collect()
        } else {
            x.clone()
        };
        let (obj, _) = ws.objective(a, y, &cand, cfg);
        if obj < best_obj {
            best_obj = obj;
            best = cand;
        }
        trace.push(best_obj);

        let change: f64 = x.iter().zip(&x_prev).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
        let size = norm(&x);
        let rel = if size > 0.0 { change / size } else { change };
        let at_max = beta >= beta_max || cfg.penalty_growth == 1.0;
        if at_max && rel < cfg.tol {
            converged = true;
            break;
        }
        beta = (beta * cfg.penalty_growth).min(beta_max);
    }

    let (objective, residual) = ws.objective(a, y, &best, cfg);
    Ok((
        best,
        SolveReport {
            iterations,
            objective,
            residual,
            trace,
            converged,
        },
    ))
}
