//! Bergman kernels of square-integrable holomorphic differentials on planar domains.
//!
//! The L^2 norm of f(w) dw is the Lebesgue integral of |f|^2, independent of
//! any metric, so the kernel depends only on the coordinate domain.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{submatrix, SparseBuilder, SpdSolver};
use crate::quadrature::gauss_legendre;
use crate::surface::{Region, Shape, SurfaceRef};

pub const MAX_CONDITION: f64 = 1e12;

/// Coordinate domain carrying the quadrature.
#[derive(Debug, Clone, PartialEq)]
pub enum PlanarDomain {
    Disc { center: Complex64, radius: f64 },
    Annulus { center: Complex64, inner: f64, outer: f64 },
    /// Weighted nodes (midpoint or cut-cell rule) of a general region.
    Points { nodes: Vec<Complex64>, weights: Vec<f64> },
}

impl PlanarDomain {
    pub fn disc(center: Complex64, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Domain("disc radius must be positive".into()));
        }
        Ok(Self::Disc { center, radius })
    }

    pub fn annulus(center: Complex64, inner: f64, outer: f64) -> Result<Self> {
        if !(inner > 0.0 && outer > inner) {
            return Err(Error::Domain("annulus needs 0 < inner < outer".into()));
        }
        Ok(Self::Annulus { center, inner, outer })
    }

    pub fn points(nodes: Vec<Complex64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.len() != weights.len() || nodes.is_empty() {
            return Err(Error::Input("nodes and weights must be nonempty and of equal length".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Quadrature("negative quadrature weight".into()));
        }
        Ok(Self::Points { nodes, weights })
    }

    /// Planar domain of a chart region (coordinate disc or node mask).
    pub fn from_region(region: &Region) -> Result<Self> {
        match (&region.parent, &region.shape) {
            (_, Shape::ChartDisc { center, radius }) => Self::disc(Complex64::new(center[0], center[1]), *radius),
            (SurfaceRef::Chart(c), Shape::Mask(m)) => {
                let mut nodes = Vec::new();
                for (k, _) in m.iter().enumerate().filter(|(_, v)| **v) {
                    let p = c.node(k % c.nx, k / c.nx);
                    nodes.push(Complex64::new(p[0], p[1]));
                }
                let w = vec![c.h * c.h; nodes.len()];
                Self::points(nodes, w)
            }
            _ => Err(Error::Unsupported("region is not a planar coordinate domain".into())),
        }
    }

    pub fn contains(&self, z: Complex64) -> bool {
        match self {
            Self::Disc { center, radius } => (z - center).norm() < *radius,
            Self::Annulus { center, inner, outer } => {
                let r = (z - center).norm();
                r > *inner && r < *outer
            }
            Self::Points { nodes, .. } => {
                let c = nodes.iter().sum::<Complex64>() / nodes.len() as f64;
                let rmax = nodes.iter().map(|n| (n - c).norm()).fold(0.0, f64::max);
                (z - c).norm() <= rmax
            }
        }
    }

    fn center_scale(&self) -> (Complex64, f64) {
        match self {
            Self::Disc { center, radius } => (*center, *radius),
            Self::Annulus { center, outer, .. } => (*center, *outer),
            Self::Points { nodes, weights } => {
                let wt: f64 = weights.iter().sum();
                let c = nodes.iter().zip(weights).map(|(n, w)| n * *w).sum::<Complex64>() / wt;
                (c, nodes.iter().map(|n| (n - c).norm()).fold(0.0, f64::max))
            }
        }
    }

    /// Quadrature nodes and weights able to integrate |w^k|^2 for |k| <= kmax.
    fn quadrature(&self, kmax: usize) -> (Vec<Complex64>, Vec<f64>) {
        match self {
            Self::Disc { center, radius } => {
                let nr = kmax + 8;
                let nt = 2 * kmax + 8;
                let mut n = Vec::with_capacity(nr * nt);
                let mut w = Vec::with_capacity(nr * nt);
                for (r, wr) in gauss_legendre(nr, 0.0, *radius) {
                    for k in 0..nt {
                        let th = 2.0 * PI * k as f64 / nt as f64;
                        n.push(center + Complex64::from_polar(r, th));
                        w.push(wr * r * 2.0 * PI / nt as f64);
                    }
                }
                (n, w)
            }
            Self::Annulus { center, inner, outer } => {
                // Gauss in t = log rho: dA = rho^2 dt dtheta
                let nr = 2 * kmax + 24;
                let nt = 4 * kmax + 8;
                let mut n = Vec::with_capacity(nr * nt);
                let mut w = Vec::with_capacity(nr * nt);
                for (t, wt) in gauss_legendre(nr, inner.ln(), outer.ln()) {
                    let r = t.exp();
                    for k in 0..nt {
                        let th = 2.0 * PI * k as f64 / nt as f64;
                        n.push(center + Complex64::from_polar(r, th));
                        w.push(wt * r * r * 2.0 * PI / nt as f64);
                    }
                }
                (n, w)
            }
            Self::Points { nodes, weights } => (nodes.clone(), weights.clone()),
        }
    }

    fn is_annulus(&self) -> bool {
        matches!(self, Self::Annulus { .. })
    }
}

/// Kernel value: raw coefficient and metric-normalized magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelValue {
    #[serde(serialize_with = "ser_complex")]
    pub raw: Complex64,
    pub normalized: Option<f64>,
}

fn ser_complex<S: serde::Serializer>(z: &Complex64, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeTuple;
    let mut t = s.serialize_tuple(2)?;
    t.serialize_element(&z.re)?;
    t.serialize_element(&z.im)?;
    t.end()
}

/// Span of unit-normalized monomials ((w - c)/s)^k with a Cholesky-orthonormalized basis.
#[derive(Debug, Clone)]
pub struct BergmanSpace {
    pub domain: PlanarDomain,
    pub nodes: Vec<Complex64>,
    pub weights: Vec<f64>,
    pub exponents: Vec<i32>,
    pub center: Complex64,
    pub scale: f64,
    /// L^2 norms of the unscaled monomials ((w - c)/s)^k.
    pub norms: Vec<f64>,
    /// Gram matrix of the unit-normalized monomials, P_kl = <e_l, e_k>.
    pub gram: DMatrix<Complex64>,
    pub condition: f64,
    /// Number of basis functions requested before truncation.
    pub requested: usize,
    chol: DMatrix<Complex64>,
}

fn exponents_for(annulus: bool, n: usize) -> Vec<i32> {
    if annulus {
        let n = n as i32;
        (-n..=n).collect()
    } else {
        (0..n as i32).collect()
    }
}

fn hermitian_condition(p: &DMatrix<Complex64>) -> f64 {
    let ev = nalgebra::SymmetricEigen::new(p.clone()).eigenvalues;
    let (lo, hi) = ev.iter().fold((f64::INFINITY, 0.0f64), |(l, h), v| (l.min(*v), h.max(*v)));
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Builds the space with `basis_size` monomials (k = 0..N-1), or k in [-N, N] on annuli.
pub fn build_bergman_space(domain: &PlanarDomain, basis_size: usize) -> Result<BergmanSpace> {
    if basis_size == 0 {
        return Err(Error::Input("basis size must be positive".into()));
    }
    let (center, scale) = domain.center_scale();
    if !(scale > 0.0) {
        return Err(Error::Domain("degenerate domain".into()));
    }
    let (nodes, weights) = domain.quadrature(basis_size + 1);
    let mut n = basis_size;
    loop {
        let exps = exponents_for(domain.is_annulus(), n);
        let m = exps.len();
        let q = nodes.len();
        // E_qk = sqrt(w_q) ((zeta_q - c)/s)^k
        let mut e = DMatrix::<Complex64>::zeros(q, m);
        for (i, (z, w)) in nodes.iter().zip(&weights).enumerate() {
            let t = (z - center) / scale;
            let sw = w.sqrt();
            for (k, &p) in exps.iter().enumerate() {
                e[(i, k)] = t.powi(p) * sw;
            }
        }
        let raw = e.adjoint() * &e;
        let norms: Vec<f64> = (0..m).map(|k| raw[(k, k)].re.sqrt()).collect();
        if norms.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Quadrature("monomial with zero or infinite norm".into()));
        }
        let mut p = raw;
        for i in 0..m {
            for j in 0..m {
                p[(i, j)] /= norms[i] * norms[j];
            }
        }
        let cond = hermitian_condition(&p);
        if cond <= MAX_CONDITION {
            let chol = Cholesky::new(p.clone()).ok_or_else(|| Error::Quadrature("Gram matrix not positive definite".into()))?;
            return Ok(BergmanSpace {
                domain: domain.clone(),
                nodes,
                weights,
                exponents: exps,
                center,
                scale,
                norms,
                gram: p,
                condition: cond,
                requested: basis_size,
                chol: chol.l(),
            });
        }
        if n == 1 {
            return Err(Error::Quadrature("Gram matrix ill-conditioned even for one basis function".into()));
        }
        n -= 1;
    }
}

impl BergmanSpace {
    pub fn dim(&self) -> usize {
        self.exponents.len()
    }

    fn basis(&self, z: Complex64) -> DVector<Complex64> {
        let t = (z - self.center) / self.scale;
        DVector::from_iterator(self.dim(), self.exponents.iter().zip(&self.norms).map(|(&p, &n)| t.powi(p) / n))
    }

    /// Values of the orthonormal basis at z: y = L^{-1} e(z).
    pub fn orthonormal(&self, z: Complex64) -> DVector<Complex64> {
        let b = self.basis(z);
        self.chol.solve_lower_triangular(&b).expect("Cholesky factor is nonsingular")
    }

    fn check(&self, z: Complex64) -> Result<()> {
        if self.domain.contains(z) {
            Ok(())
        } else {
            Err(Error::Domain(format!("point {z} outside the domain")))
        }
    }

    /// K*(z, w) = sum_j phi_j(z) conj(phi_j(w)).
    pub fn kernel(&self, z: Complex64, w: Complex64) -> Result<Complex64> {
        self.check(z)?;
        self.check(w)?;
        let (a, b) = (self.orthonormal(z), self.orthonormal(w));
        Ok(a.iter().zip(b.iter()).map(|(x, y)| x * y.conj()).sum())
    }

    /// Max |Phi^H W Phi - I| of the orthonormalized basis under this space's quadrature.
    pub fn gram_residual(&self) -> f64 {
        self.gram_residual_with(&self.nodes, &self.weights)
    }

    pub fn gram_residual_with(&self, nodes: &[Complex64], weights: &[f64]) -> f64 {
        let m = self.dim();
        let mut g = DMatrix::<Complex64>::zeros(m, m);
        for (z, w) in nodes.iter().zip(weights) {
            let y = self.orthonormal(*z);
            for i in 0..m {
                for j in 0..m {
                    g[(i, j)] += y[i].conj() * y[j] * *w;
                }
            }
        }
        let mut r: f64 = 0.0;
        for i in 0..m {
            for j in 0..m {
                let id = if i == j { 1.0 } else { 0.0 };
                r = r.max((g[(i, j)] - id).norm());
            }
        }
        r
    }
}

pub fn kernel_diag(space: &BergmanSpace, z: Complex64) -> Result<KernelValue> {
    space.check(z)?;
    let raw = space.orthonormal(z).iter().map(|v| v.norm_sqr()).sum::<f64>();
    Ok(KernelValue { raw: Complex64::new(raw, 0.0), normalized: None })
}

pub fn kernel_offdiag(space: &BergmanSpace, z: Complex64, w: Complex64) -> Result<KernelValue> {
    Ok(KernelValue { raw: space.kernel(z, w)?, normalized: None })
}

/// |K(z, w)| = |K*(z, w)| / sqrt(lambda(z) lambda(w)) for the metric lambda |dw|^2.
pub fn normalized_magnitude(space: &BergmanSpace, lambda: &dyn Fn(Complex64) -> f64, z: Complex64, w: Complex64) -> Result<KernelValue> {
    let (lz, lw) = (lambda(z), lambda(w));
    if !(lz > 0.0 && lw > 0.0) {
        return Err(Error::Domain("conformal factor must be positive".into()));
    }
    let raw = space.kernel(z, w)?;
    Ok(KernelValue { raw, normalized: Some(raw.norm() / (lz * lw).sqrt()) })
}

/// Sample points used by the reproducing check.
fn sample_points(space: &BergmanSpace) -> Vec<Complex64> {
    match &space.domain {
        PlanarDomain::Disc { center, radius } => {
            let mut v = vec![*center];
            for r in [0.3, 0.6] {
                for k in 0..6 {
                    v.push(center + Complex64::from_polar(r * radius, PI * k as f64 / 3.0 + 0.1));
                }
            }
            v
        }
        PlanarDomain::Annulus { center, inner, outer } => {
            let mid = 0.5 * (inner + outer);
            (0..8).map(|k| center + Complex64::from_polar(mid, PI * k as f64 / 4.0 + 0.1)).collect()
        }
        PlanarDomain::Points { nodes, .. } => {
            let c = space.center;
            let mut by: Vec<&Complex64> = nodes.iter().collect();
            by.sort_by(|a, b| (*a - c).norm().total_cmp(&(*b - c).norm()));
            let inner = &by[..by.len().div_ceil(4)];
            (0..8).map(|k| *inner[k * (inner.len() - 1) / 7]).collect()
        }
    }
}

/// max_z |int K(z, .) f dA - f(z)| / ||f|| for f = sum c_k w^k.
pub fn reproducing_residual(space: &BergmanSpace, coefficients: &[(i32, Complex64)]) -> f64 {
    let f = |z: Complex64| coefficients.iter().map(|(k, c)| c * z.powi(*k)).sum::<Complex64>();
    let m = space.dim();
    // a_j = int f conj(phi_j)
    let mut a = DVector::<Complex64>::zeros(m);
    let mut fnorm = 0.0;
    for (z, w) in space.nodes.iter().zip(&space.weights) {
        let fz = f(*z);
        fnorm += w * fz.norm_sqr();
        let y = space.orthonormal(*z);
        for j in 0..m {
            a[j] += fz * y[j].conj() * *w;
        }
    }
    let fnorm = fnorm.sqrt();
    if fnorm == 0.0 {
        return 0.0;
    }
    sample_points(space)
        .into_iter()
        .map(|z| {
            let y = space.orthonormal(z);
            let rep: Complex64 = (0..m).map(|j| y[j] * a[j]).sum();
            (rep - f(z)).norm() / fnorm
        })
        .fold(0.0, f64::max)
}

/// Node mask on a uniform grid for the discrete d-bar operator.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskGrid {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub h: f64,
    pub mask: Vec<bool>,
}

impl MaskGrid {
    pub fn node(&self, k: usize) -> Complex64 {
        Complex64::new(self.x0 + self.h * (k % self.nx) as f64, self.y0 + self.h * (k / self.nx) as f64)
    }

    /// Mask nodes whose four neighbours are in the mask.
    pub fn interior(&self) -> Vec<bool> {
        let (nx, ny) = (self.nx, self.ny);
        (0..nx * ny)
            .map(|k| {
                let (i, j) = (k % nx, k / nx);
                self.mask[k] && i > 0 && j > 0 && i + 1 < nx && j + 1 < ny && self.mask[k - 1] && self.mask[k + 1] && self.mask[k - nx] && self.mask[k + nx]
            })
            .collect()
    }

    /// Centered disc of coordinate radius `radius`.
    pub fn disc(radius: f64, h: f64) -> Self {
        let n = (radius / h).ceil() as usize + 1;
        let nx = 2 * n + 1;
        let x0 = -(n as f64) * h;
        let mask = (0..nx * nx)
            .map(|k| {
                let (x, y) = (x0 + h * (k % nx) as f64, x0 + h * (k / nx) as f64);
                x * x + y * y < radius * radius
            })
            .collect();
        Self { nx, ny: nx, x0, y0: x0, h, mask }
    }

    /// Discrete d-bar (central differences) of u at interior nodes.
    pub fn dbar(&self, u: &[Complex64]) -> Vec<Complex64> {
        let interior = self.interior();
        let (nx, h) = (self.nx, self.h);
        (0..u.len())
            .map(|k| {
                if interior[k] {
                    let dx = (u[k + 1] - u[k - 1]) / (2.0 * h);
                    let dy = (u[k + nx] - u[k - nx]) / (2.0 * h);
                    0.5 * (dx + Complex64::i() * dy)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DbarSolution {
    #[serde(skip)]
    pub u: Vec<Complex64>,
    /// ||u||_2 / ||v||_2 with ||v||^2 = sum |v|^2 / lambda dA.
    pub norm_ratio: f64,
    /// ||dbar u - v|| / ||v|| on interior nodes.
    pub residual: f64,
    /// max_k |<u, w^k>| / (||u|| ||w^k||) for k = 0, 1, 2.
    pub orthogonality: f64,
}

/// Minimal-norm solution of dbar u = v on the mask (v read at interior nodes).
pub fn dbar_min_norm_solve(grid: &MaskGrid, lambda: &[f64], v: &[Complex64]) -> Result<DbarSolution> {
    let n = grid.nx * grid.ny;
    if lambda.len() != n || v.len() != n || grid.mask.len() != n {
        return Err(Error::Input("field sizes must match the grid".into()));
    }
    let interior = grid.interior();
    let eq: Vec<usize> = (0..n).filter(|&k| interior[k]).collect();
    if eq.is_empty() {
        return Err(Error::Rank("no interior nodes".into()));
    }
    let (nx, h) = (grid.nx, grid.h);
    let h2 = h * h;
    let vnorm = eq.iter().map(|&k| v[k].norm_sqr() / lambda[k]).sum::<f64>().sqrt() * h;
    if vnorm == 0.0 {
        return Ok(DbarSolution { u: vec![Complex64::new(0.0, 0.0); n], norm_ratio: 0.0, residual: 0.0, orthogonality: 0.0 });
    }
    if eq.iter().any(|&k| !(lambda[k] > 0.0)) {
        return Err(Error::Domain("conformal factor must be positive".into()));
    }
    // D D^H = (1/16h^2)(4 I - shifts by 2 nodes) on interior nodes: real SPD.
    let mut b = SparseBuilder::new(n);
    let c = 1.0 / (16.0 * h2);
    for &k in &eq {
        b.push(k, k, 4.0 * c);
        for d in [2usize, 2 * nx] {
            if k + d < n && interior[k + d] {
                b.push(k, k + d, -c);
                b.push(k + d, k, -c);
            }
        }
    }
    let dd = submatrix(&b.build(), &eq);
    let solver = SpdSolver::new(dd).map_err(|_| Error::Rank("d-bar operator is rank deficient".into()))?;
    let yr = solver.solve(&eq.iter().map(|&k| v[k].re).collect::<Vec<_>>());
    let yi = solver.solve(&eq.iter().map(|&k| v[k].im).collect::<Vec<_>>());
    let mut y = vec![Complex64::new(0.0, 0.0); n];
    for (a, &k) in eq.iter().enumerate() {
        y[k] = Complex64::new(yr[a], yi[a]);
    }
    // u = D^H y; D = (delta_x + i delta_y)/2 so D^H = -(delta_x - i delta_y)/2 on the mask
    let mut u = vec![Complex64::new(0.0, 0.0); n];
    for &k in &eq {
        let t = y[k] / (4.0 * h);
        u[k + 1] += t;
        u[k - 1] -= t;
        u[k + nx] -= Complex64::i() * t;
        u[k - nx] += Complex64::i() * t;
    }
    let unorm = u.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt() * h;
    let du = grid.dbar(&u);
    let residual = eq.iter().map(|&k| (du[k] - v[k]).norm_sqr() / lambda[k]).sum::<f64>().sqrt() * h / vnorm;
    let mut orthogonality: f64 = 0.0;
    for p in 0..3 {
        let (mut ip, mut nn) = (Complex64::new(0.0, 0.0), 0.0);
        for k in 0..n {
            if grid.mask[k] {
                let m = grid.node(k).powi(p);
                ip += u[k] * m.conj();
                nn += m.norm_sqr();
            }
        }
        if unorm > 0.0 {
            orthogonality = orthogonality.max(ip.norm() * h2 / (unorm * nn.sqrt() * h));
        }
    }
    Ok(DbarSolution { u, norm_ratio: unorm / vnorm, residual, orthogonality })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_disc_gram_is_identity() {
        let s = build_bergman_space(&PlanarDomain::disc(Complex64::new(0.0, 0.0), 1.0).unwrap(), 6).unwrap();
        assert_eq!(s.dim(), 6);
        assert!(s.condition < 1.0 + 1e-10);
        for (k, n) in s.norms.iter().enumerate() {
            assert!((n * n - PI / (k as f64 + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn dbar_adjoint_matches_operator() {
        let g = MaskGrid::disc(1.0, 0.2);
        let n = g.nx * g.ny;
        let interior = g.interior();
        // <D u, y> = <u, D^H y> for random-ish fields
        let u: Vec<Complex64> = (0..n).map(|k| if g.mask[k] { Complex64::new((k as f64).sin(), (k as f64 * 0.7).cos()) } else { 0.0.into() }).collect();
        let y: Vec<Complex64> = (0..n).map(|k| if interior[k] { Complex64::new((k as f64 * 1.3).cos(), (k as f64).sin()) } else { 0.0.into() }).collect();
        let du = g.dbar(&u);
        let lhs: Complex64 = (0..n).map(|k| du[k] * y[k].conj()).sum();
        let mut dh = vec![Complex64::new(0.0, 0.0); n];
        for k in 0..n {
            if interior[k] {
                let t = y[k] / (4.0 * g.h);
                dh[k + 1] += t;
                dh[k - 1] -= t;
                dh[k + g.nx] -= Complex64::i() * t;
                dh[k - g.nx] += Complex64::i() * t;
            }
        }
        let rhs: Complex64 = (0..n).map(|k| u[k] * dh[k].conj()).sum();
        assert!((lhs - rhs).norm() < 1e-10 * lhs.norm().max(1.0));
    }
}
