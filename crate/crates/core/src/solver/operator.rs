use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A matrix-free linear map `A: R^in_dim -> R^out_dim` with its adjoint.
pub trait LinearOperator: Sync {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    /// `y = A x`; `y` is overwritten.
    fn apply(&self, x: &[f64], y: &mut [f64]);
    /// `x = Aᵀ y`; `x` is overwritten.
    fn apply_adjoint(&self, y: &[f64], x: &mut [f64]);
    /// Dense row-major `AᵀA`, for operators small enough to factor directly.
    fn gram(&self) -> Option<Vec<f64>> {
        None
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn in_dim(&self) -> usize {
        (**self).in_dim()
    }
    fn out_dim(&self) -> usize {
        (**self).out_dim()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (**self).apply(x, y)
    }
    fn apply_adjoint(&self, y: &[f64], x: &mut [f64]) {
        (**self).apply_adjoint(y, x)
    }
    fn gram(&self) -> Option<Vec<f64>> {
        (**self).gram()
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseOperator {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "dense operator data length");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Materializes any operator column by column.
    pub fn assemble(op: &dyn LinearOperator) -> Self {
        let (rows, cols) = (op.out_dim(), op.in_dim());
        let mut data = vec![0.0; rows * cols];
        let mut e = vec![0.0; cols];
        let mut col = vec![0.0; rows];
        for j in 0..cols {
            e[j] = 1.0;
            op.apply(&e, &mut col);
            e[j] = 0.0;
            for i in 0..rows {
                data[i * cols + j] = col[i];
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

impl LinearOperator for DenseOperator {
    fn in_dim(&self) -> usize {
        self.cols
    }

    fn out_dim(&self) -> usize {
        self.rows
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (yi, row) in y.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *yi = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    fn apply_adjoint(&self, y: &[f64], x: &mut [f64]) {
        x.fill(0.0);
        for (&yi, row) in y.iter().zip(self.data.chunks_exact(self.cols)) {
            if yi != 0.0 {
                for (xj, a) in x.iter_mut().zip(row) {
                    *xj += a * yi;
                }
            }
        }
    }

    fn gram(&self) -> Option<Vec<f64>> {
        if self.cols > DIRECT_GRAM_LIMIT {
            return None;
        }
        let n = self.cols;
        let mut g = vec![0.0; n * n];
        for row in self.data.chunks_exact(n) {
            for (j, &aj) in row.iter().enumerate() {
                if aj != 0.0 {
                    for (gjk, &ak) in g[j * n..(j + 1) * n].iter_mut().zip(row) {
                        *gjk += aj * ak;
                    }
                }
            }
        }
        Some(g)
    }
}

/// Largest unknown count for which [`DenseOperator`] offers its Gram matrix.
pub const DIRECT_GRAM_LIMIT: usize = 1024;

#[derive(Debug, Clone, Copy)]
pub struct IdentityOperator(pub usize);

impl LinearOperator for IdentityOperator {
    fn in_dim(&self) -> usize {
        self.0
    }
    fn out_dim(&self) -> usize {
        self.0
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
    }
    fn apply_adjoint(&self, y: &[f64], x: &mut [f64]) {
        x.copy_from_slice(y);
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Relative mismatch `|<Ax,y> - <x,Aᵀy>| / (|Ax||y| + |x||Aᵀy|)` on seeded
/// Gaussian-ish random vectors. Zero for an exact adjoint pair.
pub fn adjoint_mismatch(op: &dyn LinearOperator, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..op.in_dim()).map(|_| rng.random::<f64>() - 0.5).collect();
    let y: Vec<f64> = (0..op.out_dim()).map(|_| rng.random::<f64>() - 0.5).collect();
    let mut ax = vec![0.0; op.out_dim()];
    let mut aty = vec![0.0; op.in_dim()];
    op.apply(&x, &mut ax);
    op.apply_adjoint(&y, &mut aty);
    let lhs = dot(&ax, &y);
    let rhs = dot(&x, &aty);
    let scale = norm(&ax) * norm(&y) + norm(&x) * norm(&aty);
    if scale == 0.0 {
        0.0
    } else {
        (lhs - rhs).abs() / scale
    }
}

/// Largest eigenvalue of `AᵀA` by power iteration from a fixed start vector.
pub fn gram_norm_estimate(op: &dyn LinearOperator, iterations: usize) -> f64 {
    let n = op.in_dim();
    if n == 0 || op.out_dim() == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x0005_eed0_fa11);
    let mut v: Vec<f64> = (0..n).map(|_| 0.5 + rng.random::<f64>()).collect();
    let mut av = vec![0.0; op.out_dim()];
    let mut w = vec![0.0; n];
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let nv = norm(&v);
        if nv == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|e| *e /= nv);
        op.apply(&v, &mut av);
        op.apply_adjoint(&av, &mut w);
        lambda = dot(&v, &w);
        std::mem::swap(&mut v, &mut w);
    }
    lambda
}
