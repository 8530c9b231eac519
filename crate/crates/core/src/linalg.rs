//! Sparse symmetric solvers and eigen helpers shared by the discretizations.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Triplet accumulator; duplicates are summed on conversion.
#[derive(Debug, Clone)]
pub struct SparseBuilder {
    n: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseBuilder {
    pub fn new(n: usize) -> Self {
        Self { n, rows: Vec::new(), cols: Vec::new(), vals: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            self.rows.push(i);
            self.cols.push(j);
            self.vals.push(v);
        }
    }

    /// Adds `c * (e_i - e_j)(e_i - e_j)^T`.
    pub fn add_edge(&mut self, i: usize, j: usize, c: f64) {
        self.push(i, i, c);
        self.push(j, j, c);
        self.push(i, j, -c);
        self.push(j, i, -c);
    }

    pub fn build(&self) -> CscMatrix<f64> {
        let coo = CooMatrix::try_from_triplets(
            self.n,
            self.n,
            self.rows.clone(),
            self.cols.clone(),
            self.vals.clone(),
        )
        .expect("triplet indices in range");
        CscMatrix::from(&coo)
    }
}

/// y = A x
pub fn spmv(a: &CscMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; a.nrows()];
    for (j, col) in a.col_iter().enumerate() {
        let xj = x[j];
        if xj == 0.0 {
            continue;
        }
        for (&i, &v) in col.row_indices().iter().zip(col.values()) {
            y[i] += v * xj;
        }
    }
    y
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Weighted inner product sum_i w_i a_i b_i.
pub fn wdot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum()
}

/// Principal submatrix on `keep` (indices into the rows/cols of `a`).
pub fn submatrix(a: &CscMatrix<f64>, keep: &[usize]) -> CscMatrix<f64> {
    let mut map = vec![usize::MAX; a.nrows()];
    for (k, &i) in keep.iter().enumerate() {
        map[i] = k;
    }
    let mut b = SparseBuilder::new(keep.len());
    for (j, col) in a.col_iter().enumerate() {
        if map[j] == usize::MAX {
            continue;
        }
        for (&i, &v) in col.row_indices().iter().zip(col.values()) {
            if map[i] != usize::MAX {
                b.push(map[i], map[j], v);
            }
        }
    }
    b.build()
}

/// Sparse Cholesky factorization with iterative refinement.
pub struct SpdSolver {
    a: CscMatrix<f64>,
    chol: CscCholesky<f64>,
    pub refine_tol: f64,
}

impl std::fmt::Debug for SpdSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpdSolver").field("n", &self.a.nrows()).finish()
    }
}

impl SpdSolver {
    pub fn new(a: CscMatrix<f64>) -> Result<Self> {
        let chol = CscCholesky::factor(&a).map_err(|_| Error::NotPositiveDefinite)?;
        Ok(Self { a, chol, refine_tol: 1e-10 })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn matrix(&self) -> &CscMatrix<f64> {
        &self.a
    }

    fn raw_solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = DMatrix::from_column_slice(b.len(), 1, b);
        self.chol.solve(&rhs).as_slice().to_vec()
    }

    /// Solves A x = b, refining until the relative residual is below `refine_tol`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let bn = norm(b);
        let mut x = self.raw_solve(b);
        if bn == 0.0 {
            return x;
        }
        for _ in 0..4 {
            let ax = spmv(&self.a, &x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
            if norm(&r) <= self.refine_tol * bn {
                break;
            }
            let d = self.raw_solve(&r);
            for (xi, di) in x.iter_mut().zip(&d) {
                *xi += di;
            }
        }
        x
    }

    pub fn relative_residual(&self, x: &[f64], b: &[f64]) -> f64 {
        let ax = spmv(&self.a, x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let bn = norm(b);
        if bn == 0.0 {
            norm(&r)
        } else {
            norm(&r) / bn
        }
    }
}

#[derive(Debug, Clone)]
pub struct EigenOptions {
    /// Solves with K + shift*M; a positive shift is needed for singular K.
    pub shift: f64,
    /// Vectors to M-orthogonally project out at every step.
    pub deflate: Vec<Vec<f64>>,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { shift: 0.0, deflate: Vec::new(), tol: 1e-8, max_iter: 20_000, seed: 7 }
    }
}

#[derive(Debug, Clone)]
pub struct Eigenpair {
    pub value: f64,
    /// M-normalized.
    pub vector: Vec<f64>,
    pub iterations: usize,
}

fn project_out(v: &mut [f64], m: &[f64], basis: &[Vec<f64>]) {
    for q in basis {
        let c = wdot(m, q, v) / wdot(m, q, q);
        for (vi, qi) in v.iter_mut().zip(q) {
            *vi -= c * qi;
        }
    }
}

/// Smallest eigenpair of K x = lambda M x (M diagonal) by inverse iteration.
pub fn smallest_eigenpair(k: &CscMatrix<f64>, m: &[f64], opts: &EigenOptions) -> Result<Eigenpair> {
    let n = k.nrows();
    let shifted = if opts.shift != 0.0 {
        let mut b = SparseBuilder::new(n);
        for (j, col) in k.col_iter().enumerate() {
            for (&i, &v) in col.row_indices().iter().zip(col.values()) {
                b.push(i, j, v);
            }
        }
        for (i, mi) in m.iter().enumerate() {
            b.push(i, i, opts.shift * mi);
        }
        b.build()
    } else {
        k.clone()
    };
    let solver = SpdSolver::new(shifted)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x: Vec<f64> = (0..n).map(|_| 0.5 + rng.random::<f64>()).collect();
    project_out(&mut x, m, &opts.deflate);
    let mut lambda = f64::INFINITY;
    let mut change = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let rhs: Vec<f64> = x.iter().zip(m).map(|(x, m)| x * m).collect();
        let mut y = solver.solve(&rhs);
        project_out(&mut y, m, &opts.deflate);
        let ym = wdot(m, &y, &y).sqrt();
        if ym == 0.0 || !ym.is_finite() {
            return Err(Error::Solver("inverse iteration collapsed".into()));
        }
        for v in y.iter_mut() {
            *v /= ym;
        }
        let ky = spmv(k, &y);
        let rq = dot(&y, &ky);
        change = (rq - lambda).abs() / rq.abs().max(f64::MIN_POSITIVE);
        lambda = rq;
        x = y;
        if change <= opts.tol && it > 2 {
            return Ok(Eigenpair { value: lambda, vector: x, iterations: it });
        }
    }
    Err(Error::NoConvergence { iters: opts.max_iter, change })
}

/// Full eigendecomposition of K x = lambda M x with dense K and diagonal M.
/// Eigenvalues ascending; eigenvectors M-orthonormal (columns).
pub fn dense_generalized(k: &DMatrix<f64>, m: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.len();
    let s: Vec<f64> = m.iter().map(|v| 1.0 / v.sqrt()).collect();
    let mut a = k.clone();
    for j in 0..n {
        for i in 0..n {
            a[(i, j)] *= s[i] * s[j];
        }
    }
    // sequential on purpose: results must not depend on the thread count
    faer::set_global_parallelism(faer::Par::Seq);
    let fa = faer::Mat::<f64>::from_fn(n, n, |i, j| a[(i, j)]);
    let eig = fa.self_adjoint_eigen(faer::Side::Lower).expect("symmetric eigendecomposition");
    let (ev, u) = (eig.S().column_vector(), eig.U());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| ev[i].total_cmp(&ev[j]));
    let values: Vec<f64> = order.iter().map(|&i| ev[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (c, &o) in order.iter().enumerate() {
        for i in 0..n {
            vecs[(i, c)] = u[(i, o)] * s[i];
        }
    }
    (values, vecs)
}

pub fn to_dense(a: &CscMatrix<f64>) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(a.nrows(), a.ncols());
    for (j, col) in a.col_iter().enumerate() {
        for (&i, &v) in col.row_indices().iter().zip(col.values()) {
            d[(i, j)] += v;
        }
    }
    d
}

/// Least-squares line fit y = a + b x; returns (a, b).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let b = sxy / sxx;
    (my - b * mx, b)
}

pub fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
