//! Finite-volume discretizations of the Laplace–Beltrami energy.
//!
//! A [`Mesh`] carries the stiffness matrix `K` (energy `u^T K u` equals the
//! Dirichlet integral), the lumped mass `M` and the polygonal cells used for
//! exterior-product integrals. Dirichlet nodes are eliminated.

use nalgebra_sparse::CscMatrix;

use crate::error::{Error, Result};
use crate::linalg::{spmv, SparseBuilder};
use crate::quadrature::gauss_legendre;

/// Metric tensor components (E, F, G) at a chart point.
pub type Tensor = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub enum Layout {
    Grid { nx: usize, ny: usize, x0: f64, y0: f64, h: f64, index: Vec<Option<usize>>, periodic: bool },
    Rings { s: Vec<f64>, m: usize },
}

#[derive(Debug, Clone)]
pub struct Mesh {
    /// Chart coordinates of each unknown: (x, y) on grids, (s, theta) on ring meshes.
    pub coords: Vec<[f64; 2]>,
    pub stiffness: CscMatrix<f64>,
    pub mass: Vec<f64>,
    /// Counter-clockwise cells; `None` marks an eliminated Dirichlet node.
    pub cells: Vec<Vec<Option<usize>>>,
    /// True when no Dirichlet node was eliminated.
    pub closed: bool,
    pub layout: Layout,
}

/// End condition of a ring mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum End {
    /// The profile degenerates to a point carrying one node.
    Pole,
    /// Zero boundary values; the end ring is eliminated.
    Dirichlet,
    /// Natural boundary condition.
    Free,
    /// The last ring connects back to the first.
    Periodic,
}

/// Radial metric ds^2 = A(s) ds^2 + B(s) dtheta^2 sampled on rings.
pub struct RingSpec<'a> {
    pub a: &'a dyn Fn(f64) -> f64,
    pub b: &'a dyn Fn(f64) -> f64,
    /// Ring positions including both ends (for `Periodic`, the end equals start + period).
    pub s: Vec<f64>,
    pub m: usize,
    pub start: End,
    pub end: End,
}

fn cell_matrix(t: Tensor) -> [[f64; 4]; 4] {
    // corners 00, 10, 01, 11; energy density A grad u . grad u with A = sqrt(det) g^{-1}
    let det = t[0] * t[2] - t[1] * t[1];
    let sd = det.sqrt();
    let a = t[2] / sd;
    let b = -t[1] / sd;
    let c = t[0] / sd;
    let d1 = [-1.0, 1.0, 0.0, 0.0];
    let d2 = [0.0, 0.0, -1.0, 1.0];
    let e1 = [-1.0, 0.0, 1.0, 0.0];
    let e2 = [0.0, -1.0, 0.0, 1.0];
    let mut k = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            let s = d1[i] + d2[i];
            let sj = d1[j] + d2[j];
            let t_ = e1[i] + e2[i];
            let tj = e1[j] + e2[j];
            k[i][j] = 0.5 * a * (d1[i] * d1[j] + d2[i] * d2[j])
                + 0.5 * c * (e1[i] * e1[j] + e2[i] * e2[j])
                + 0.25 * b * (s * tj + t_ * sj);
        }
    }
    k
}

/// Uniform grid on [x0, x0 + (nx-1)h] x [y0, y0 + (ny-1)h].
pub struct GridSpec<'a> {
    pub metric: &'a (dyn Fn(f64, f64) -> Tensor + Sync),
    pub x0: f64,
    pub y0: f64,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
    /// Active-node predicate on grid indices; inactive nodes carry zero values.
    pub active: &'a dyn Fn(usize, usize) -> bool,
    /// Wrap in both directions (flat torus); nodes are then 0..n per axis.
    pub periodic: bool,
}

impl Mesh {
    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn area(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn energy(&self, u: &[f64]) -> f64 {
        crate::linalg::dot(u, &spmv(&self.stiffness, u))
    }

    /// Discrete integral of |u|^2.
    pub fn l2_sq(&self, u: &[f64]) -> f64 {
        crate::linalg::wdot(&self.mass, u, u)
    }

    pub fn grid(spec: &GridSpec<'_>) -> Result<Mesh> {
        let GridSpec { metric, x0, y0, h, nx, ny, active, periodic } = *spec;
        if nx < 2 || ny < 2 || !(h > 0.0) {
            return Err(Error::Domain("grid needs at least 2x2 nodes and h > 0".into()));
        }
        let mut index = vec![None; nx * ny];
        let mut coords = Vec::new();
        let mut mass = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                if active(i, j) {
                    let (x, y) = (x0 + h * i as f64, y0 + h * j as f64);
                    let t = metric(x, y);
                    let det = t[0] * t[2] - t[1] * t[1];
                    if !(t[0] > 0.0 && det > 0.0) {
                        return Err(Error::Metric { i, j });
                    }
                    index[j * nx + i] = Some(coords.len());
                    coords.push([x, y]);
                    mass.push(det.sqrt() * h * h);
                }
            }
        }
        let n = coords.len();
        let (cx, cy) = if periodic { (nx, ny) } else { (nx - 1, ny - 1) };
        let mut b = SparseBuilder::new(n);
        let mut cells = Vec::new();
        let mut closed = true;
        for j in 0..cy {
            for i in 0..cx {
                let (i1, j1) = ((i + 1) % nx, (j + 1) % ny);
                let ids = [index[j * nx + i], index[j * nx + i1], index[j1 * nx + i], index[j1 * nx + i1]];
                if ids.iter().all(|v| v.is_none()) {
                    continue;
                }
                if ids.iter().any(|v| v.is_none()) {
                    closed = false;
                }
                let xc = x0 + h * (i as f64 + 0.5);
                let yc = y0 + h * (j as f64 + 0.5);
                let km = cell_matrix(metric(xc, yc));
                for r in 0..4 {
                    let Some(p) = ids[r] else { continue };
                    for c in 0..4 {
                        if let Some(q) = ids[c] {
                            b.push(p, q, km[r][c]);
                        }
                    }
                }
                cells.push(vec![ids[0], ids[1], ids[3], ids[2]]);
            }
        }
        if n == 0 {
            return Err(Error::Domain("no active nodes".into()));
        }
        Ok(Mesh {
            coords,
            stiffness: b.build(),
            mass,
            cells,
            closed,
            layout: Layout::Grid { nx, ny, x0, y0, h, index, periodic },
        })
    }

    pub fn rings(spec: &RingSpec<'_>) -> Result<Mesh> {
        let s = &spec.s;
        let nr = s.len();
        let m = spec.m;
        if nr < 3 || m < 3 {
            return Err(Error::Domain("ring mesh needs >= 3 rings and >= 3 angles".into()));
        }
        if s.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("ring positions must increase".into()));
        }
        let periodic = spec.start == End::Periodic || spec.end == End::Periodic;
        if periodic && !(spec.start == End::Periodic && spec.end == End::Periodic) {
            return Err(Error::Domain("periodic ends must be paired".into()));
        }
        let dtheta = 2.0 * std::f64::consts::PI / m as f64;
        let sqrt_ab = |x: f64| ((spec.a)(x) * (spec.b)(x)).sqrt();
        let ratio_ab = |x: f64| ((spec.a)(x) / (spec.b)(x)).sqrt();
        let ratio_ba = |x: f64| ((spec.b)(x) / (spec.a)(x)).sqrt();
        let int = |f: &dyn Fn(f64) -> f64, lo: f64, hi: f64| -> f64 {
            gauss_legendre(4, lo, hi).iter().map(|(x, w)| w * f(*x)).sum()
        };
        // rings actually carrying unknowns: periodic drops the duplicated last ring
        let last = if periodic { nr - 1 } else { nr };
        #[derive(Clone, Copy)]
        enum Kind {
            Pole,
            Ring,
            Gone,
        }
        let kind = |i: usize| -> Kind {
            let e = if i == 0 {
                Some(spec.start)
            } else if i == nr - 1 {
                Some(spec.end)
            } else {
                None
            };
            match e {
                Some(End::Pole) => Kind::Pole,
                Some(End::Dirichlet) => Kind::Gone,
                _ => Kind::Ring,
            }
        };
        let mut first = vec![usize::MAX; nr];
        let mut coords = Vec::new();
        let mut mass = Vec::new();
        let dual_lo = |i: usize| -> f64 {
            if i == 0 {
                if periodic { s[0] - 0.5 * (s[nr - 1] - s[nr - 2]) } else { s[0] }
            } else {
                0.5 * (s[i - 1] + s[i])
            }
        };
        let dual_hi = |i: usize| -> f64 {
            if i == nr - 1 { s[i] } else { 0.5 * (s[i] + s[i + 1]) }
        };
        for i in 0..last {
            match kind(i) {
                Kind::Gone => {}
                Kind::Pole => {
                    first[i] = coords.len();
                    coords.push([s[i], 0.0]);
                    let (lo, hi) = (dual_lo(i), dual_hi(i));
                    mass.push(2.0 * std::f64::consts::PI * int(&sqrt_ab, lo, hi));
                }
                Kind::Ring => {
                    first[i] = coords.len();
                    let (lo, hi) = (dual_lo(i), dual_hi(i));
                    let mv = dtheta * int(&sqrt_ab, lo, hi);
                    for k in 0..m {
                        coords.push([s[i], dtheta * k as f64]);
                        mass.push(mv);
                    }
                }
            }
        }
        let node = |i: usize, k: usize| -> Option<usize> {
            let i = if periodic && i == nr - 1 { 0 } else { i };
            match kind(i) {
                Kind::Gone => None,
                Kind::Pole => Some(first[i]),
                Kind::Ring => Some(first[i] + k % m),
            }
        };
        let n = coords.len();
        let mut b = SparseBuilder::new(n);
        let mut cells = Vec::new();
        let mut closed = true;
        for i in 0..nr - 1 {
            let mid = 0.5 * (s[i] + s[i + 1]);
            let c_rad = ratio_ba(mid) * dtheta / (s[i + 1] - s[i]);
            for k in 0..m {
                let (p, q) = (node(i, k), node(i + 1, k));
                match (p, q) {
                    (Some(p), Some(q)) => b.add_edge(p, q, c_rad),
                    (Some(p), None) | (None, Some(p)) => b.push(p, p, c_rad),
                    (None, None) => {}
                }
                let mut cell = vec![node(i, k), node(i + 1, k), node(i + 1, k + 1), node(i, k + 1)];
                cell.dedup();
                if cell.len() > 1 && cell.first() == cell.last() {
                    cell.pop();
                }
                if cell.iter().any(|c| c.is_none()) {
                    closed = false;
                }
                cells.push(cell);
            }
        }
        for i in 0..last {
            if let Kind::Ring = kind(i) {
                let c_ang = int(&ratio_ab, dual_lo(i), dual_hi(i)) / dtheta;
                for k in 0..m {
                    b.add_edge(first[i] + k, first[i] + (k + 1) % m, c_ang);
                }
            }
        }
        if n == 0 {
            return Err(Error::Domain("no active nodes".into()));
        }
        Ok(Mesh { coords, stiffness: b.build(), mass, cells, closed, layout: Layout::Rings { s: s.clone(), m } })
    }

    /// Discrete integral of du ^ dv summed over cells (trapezoid rule on cell boundaries).
    pub fn wedge_matrix(&self) -> CscMatrix<f64> {
        let mut b = SparseBuilder::new(self.len());
        for cell in &self.cells {
            let nc = cell.len();
            for e in 0..nc {
                let (a, c) = (cell[e], cell[(e + 1) % nc]);
                // (u_a + u_c)/2 (v_c - v_a)
                if let Some(a) = a {
                    if let Some(c) = c {
                        b.push(a, c, 0.5);
                        b.push(c, c, 0.5);
                        b.push(c, a, -0.5);
                    }
                    b.push(a, a, -0.5);
                } else if let Some(c) = c {
                    b.push(c, c, 0.5);
                }
            }
        }
        b.build()
    }

    /// Adjacency lists from the stiffness pattern.
    pub fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.len()];
        for (j, col) in self.stiffness.col_iter().enumerate() {
            for &i in col.row_indices() {
                if i != j {
                    nb[j].push(i);
                }
            }
        }
        nb
    }

    /// Nodes that touch an eliminated Dirichlet node.
    pub fn boundary_adjacent(&self) -> Vec<bool> {
        let mut flag = vec![false; self.len()];
        for cell in &self.cells {
            if cell.iter().any(|c| c.is_none()) {
                for c in cell.iter().flatten() {
                    flag[*c] = true;
                }
            }
        }
        flag
    }
}

/// Uniform ring positions on [lo, hi] with n intervals.
pub fn uniform(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

/// Ring positions on [0, hi] clustered at 0: s = hi (e^{g t} - 1)/(e^g - 1).
pub fn graded(hi: f64, n: usize, g: f64) -> Vec<f64> {
    if g.abs() < 1e-12 {
        return uniform(0.0, hi, n);
    }
    (0..=n).map(|i| hi * ((g * i as f64 / n as f64).exp() - 1.0) / (g.exp() - 1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{smallest_eigenpair, EigenOptions};

    fn flat(_: f64, _: f64) -> Tensor {
        [1.0, 0.0, 1.0]
    }

    #[test]
    fn cell_matrix_annihilates_constants() {
        let k = cell_matrix([2.0, 0.7, 1.5]);
        for r in k.iter() {
            assert!(r.iter().sum::<f64>().abs() < 1e-14);
        }
    }

    #[test]
    fn square_dirichlet_eigenvalue() {
        let n = 33;
        let h = std::f64::consts::PI / (n - 1) as f64;
        let active = |i: usize, j: usize| i > 0 && j > 0 && i < n - 1 && j < n - 1;
        let mesh = Mesh::grid(&GridSpec { metric: &flat, x0: 0.0, y0: 0.0, h, nx: n, ny: n, active: &active, periodic: false }).unwrap();
        let p = smallest_eigenpair(&mesh.stiffness, &mesh.mass, &EigenOptions::default()).unwrap();
        assert!((p.value - 2.0).abs() < 0.01);
    }

    #[test]
    fn polar_disc_eigenvalue() {
        let a = |_: f64| 1.0;
        let b = |r: f64| r * r;
        let mesh = Mesh::rings(&RingSpec { a: &a, b: &b, s: uniform(0.0, 1.0, 64), m: 32, start: End::Pole, end: End::Dirichlet }).unwrap();
        let p = smallest_eigenpair(&mesh.stiffness, &mesh.mass, &EigenOptions::default()).unwrap();
        assert!((p.value - 5.783185962946784).abs() < 0.01 * 5.78);
        let inner = std::f64::consts::PI * (1.0 - 0.5 / 64.0f64).powi(2);
        assert!((mesh.area() - inner).abs() < 1e-10);
    }

    #[test]
    fn wedge_telescopes_on_dirichlet_and_closed_meshes() {
        let a = |_: f64| 1.0;
        let b = |r: f64| r.sin().powi(2);
        let pi = std::f64::consts::PI;
        let sphere = Mesh::rings(&RingSpec { a: &a, b: &b, s: uniform(0.0, pi, 16), m: 12, start: End::Pole, end: End::Pole }).unwrap();
        assert!(sphere.closed);
        let w = sphere.wedge_matrix();
        assert!(w.values().iter().all(|v| v.abs() < 1e-14));
        let active = |i: usize, j: usize| i > 0 && j > 0 && i < 9 && j < 9;
        let g = Mesh::grid(&GridSpec { metric: &flat, x0: 0.0, y0: 0.0, h: 0.1, nx: 10, ny: 10, active: &active, periodic: false }).unwrap();
        assert!(g.wedge_matrix().values().iter().all(|v| v.abs() < 1e-14));
    }
}
