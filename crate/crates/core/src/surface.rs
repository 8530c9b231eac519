//! Metrics on single charts and analytic model surfaces.

use std::collections::BinaryHeap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::mesh::Tensor;
use crate::quadrature::{gauss_legendre, integrate};

pub type Point = [f64; 2];

fn det(t: Tensor) -> f64 {
    t[0] * t[2] - t[1] * t[1]
}

fn is_pd(t: Tensor) -> bool {
    t[0] > 0.0 && det(t) > 0.0 && t.iter().all(|v| v.is_finite())
}

/// Gaussian curvature from (E, F, G) and their derivatives (Brioschi).
#[allow(clippy::too_many_arguments)]
pub fn brioschi(
    t: Tensor,
    (ex, ey, eyy): (f64, f64, f64),
    (fx, fy, fxy): (f64, f64, f64),
    (gx, gy, gxx): (f64, f64, f64),
) -> f64 {
    let [e, f, g] = t;
    let d3 = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let a = d3([
        [-0.5 * eyy + fxy - 0.5 * gxx, 0.5 * ex, fx - 0.5 * ey],
        [fy - 0.5 * gx, e, f],
        [0.5 * gy, f, g],
    ]);
    let b = d3([[0.0, 0.5 * ey, 0.5 * gx], [0.5 * ey, e, f], [0.5 * gx, f, g]]);
    (a - b) / (e * g - f * f).powi(2)
}

/// Metric tensor sampled on a uniform rectangular grid (row-major, x fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct GridChart {
    pub nx: usize,
    pub ny: usize,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub h: f64,
    pub e: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

impl GridChart {
    pub fn new(nx: usize, ny: usize, x_range: (f64, f64), y_range: (f64, f64), e: Vec<f64>, f: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        if nx < 8 || ny < 8 {
            return Err(Error::Domain(format!("grid needs >= 8 nodes per axis, got {nx}x{ny}")));
        }
        if e.len() != nx * ny || f.len() != nx * ny || g.len() != nx * ny {
            return Err(Error::Input("field length does not match nx*ny".into()));
        }
        let hx = (x_range.1 - x_range.0) / (nx - 1) as f64;
        let hy = (y_range.1 - y_range.0) / (ny - 1) as f64;
        if !(hx > 0.0) || !(hy > 0.0) || (hx - hy).abs() > 1e-9 * hx.max(hy) {
            return Err(Error::Domain(format!("grid spacing must be uniform and positive (hx={hx}, hy={hy})")));
        }
        for j in 0..ny {
            for i in 0..nx {
                let k = j * nx + i;
                if !is_pd([e[k], f[k], g[k]]) {
                    return Err(Error::Metric { i, j });
                }
            }
        }
        Ok(Self { nx, ny, x_range, y_range, h: hx, e, f, g })
    }

    /// Samples `metric` at the nodes of an nx x ny grid.
    pub fn from_fn(nx: usize, ny: usize, x_range: (f64, f64), y_range: (f64, f64), metric: impl Fn(f64, f64) -> Tensor) -> Result<Self> {
        let mut e = Vec::with_capacity(nx * ny);
        let mut f = Vec::with_capacity(nx * ny);
        let mut g = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let x = x_range.0 + (x_range.1 - x_range.0) * i as f64 / (nx - 1) as f64;
                let y = y_range.0 + (y_range.1 - y_range.0) * j as f64 / (ny - 1) as f64;
                let t = metric(x, y);
                e.push(t[0]);
                f.push(t[1]);
                g.push(t[2]);
            }
        }
        Self::new(nx, ny, x_range, y_range, e, f, g)
    }

    /// Square grid with spacing h over the given ranges (ranges are widened to a multiple of h).
    pub fn with_spacing(x_range: (f64, f64), y_range: (f64, f64), h: f64, metric: impl Fn(f64, f64) -> Tensor) -> Result<Self> {
        let nx = ((x_range.1 - x_range.0) / h).round() as usize + 1;
        let ny = ((y_range.1 - y_range.0) / h).round() as usize + 1;
        let xr = (x_range.0, x_range.0 + h * (nx - 1) as f64);
        let yr = (y_range.0, y_range.0 + h * (ny - 1) as f64);
        Self::from_fn(nx, ny, xr, yr, metric)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut header = std::collections::HashMap::new();
        let mut data = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((k, v)) = line.split_once('=') {
                header.insert(k.trim().to_string(), (v.trim().to_string(), ln + 1));
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|_| Error::Input(format!("line {}: malformed number '{s}'", ln + 1))))
                .collect::<Result<_>>()?;
            if vals.len() != 3 {
                return Err(Error::Input(format!("line {}: expected 3 values E F G", ln + 1)));
            }
            data.push([vals[0], vals[1], vals[2]]);
        }
        let get = |k: &str| -> Result<String> {
            header.get(k).map(|v| v.0.clone()).ok_or_else(|| Error::Input(format!("missing header '{k}'")))
        };
        let int = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::Input(format!("header '{k}' is not an integer"))) };
        let real = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Error::Input(format!("header '{k}' is not a number"))) };
        let (nx, ny) = (int("nx")?, int("ny")?);
        if data.len() != nx * ny {
            return Err(Error::Input(format!("expected {} data lines, found {}", nx * ny, data.len())));
        }
        Self::new(
            nx,
            ny,
            (real("x0")?, real("x1")?),
            (real("y0")?, real("y1")?),
            data.iter().map(|t| t[0]).collect(),
            data.iter().map(|t| t[1]).collect(),
            data.iter().map(|t| t[2]).collect(),
        )
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "nx={}\nny={}\nx0={:.17e}\nx1={:.17e}\ny0={:.17e}\ny1={:.17e}\n",
            self.nx, self.ny, self.x_range.0, self.x_range.1, self.y_range.0, self.y_range.1
        );
        for k in 0..self.nx * self.ny {
            s.push_str(&format!("{:.17e} {:.17e} {:.17e}\n", self.e[k], self.f[k], self.g[k]));
        }
        s
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn node(&self, i: usize, j: usize) -> Point {
        [self.x_range.0 + self.h * i as f64, self.y_range.0 + self.h * j as f64]
    }

    pub fn tensor(&self, i: usize, j: usize) -> Tensor {
        let k = self.idx(i, j);
        [self.e[k], self.f[k], self.g[k]]
    }

    /// Nearest node to p (clamped to the grid).
    pub fn nearest(&self, p: Point) -> (usize, usize) {
        let i = ((p[0] - self.x_range.0) / self.h).round().clamp(0.0, (self.nx - 1) as f64) as usize;
        let j = ((p[1] - self.y_range.0) / self.h).round().clamp(0.0, (self.ny - 1) as f64) as usize;
        (i, j)
    }

    pub fn contains(&self, p: Point) -> bool {
        let tol = 1e-12 * self.h;
        p[0] >= self.x_range.0 - tol && p[0] <= self.x_range.1 + tol && p[1] >= self.y_range.0 - tol && p[1] <= self.y_range.1 + tol
    }

    /// Bilinear interpolation of a node field.
    pub fn interpolate(&self, field: &[f64], p: Point) -> Result<f64> {
        if !self.contains(p) {
            return Err(Error::Domain(format!("point ({}, {}) outside chart", p[0], p[1])));
        }
        let fx = ((p[0] - self.x_range.0) / self.h).clamp(0.0, (self.nx - 1) as f64);
        let fy = ((p[1] - self.y_range.0) / self.h).clamp(0.0, (self.ny - 1) as f64);
        let i = (fx.floor() as usize).min(self.nx - 2);
        let j = (fy.floor() as usize).min(self.ny - 2);
        let (tx, ty) = (fx - i as f64, fy - j as f64);
        let v = |a: usize, b: usize| field[self.idx(a, b)];
        Ok((1.0 - tx) * (1.0 - ty) * v(i, j) + tx * (1.0 - ty) * v(i + 1, j) + (1.0 - tx) * ty * v(i, j + 1) + tx * ty * v(i + 1, j + 1))
    }

    pub fn metric_at(&self, p: Point) -> Result<Tensor> {
        Ok([self.interpolate(&self.e, p)?, self.interpolate(&self.f, p)?, self.interpolate(&self.g, p)?])
    }

    /// Second-order x-derivative of a node field (one-sided at the edges).
    pub fn d_x(&self, f: &[f64]) -> Vec<f64> {
        diff(f, self.nx, self.ny, self.h, true)
    }

    pub fn d_y(&self, f: &[f64]) -> Vec<f64> {
        diff(f, self.nx, self.ny, self.h, false)
    }

    pub fn d_xx(&self, f: &[f64]) -> Vec<f64> {
        diff2(f, self.nx, self.ny, self.h, true)
    }

    pub fn d_yy(&self, f: &[f64]) -> Vec<f64> {
        diff2(f, self.nx, self.ny, self.h, false)
    }

    /// Gaussian curvature at every node.
    pub fn curvature_field(&self) -> Vec<f64> {
        let (ex, ey, eyy) = (self.d_x(&self.e), self.d_y(&self.e), self.d_yy(&self.e));
        let (fx, fy) = (self.d_x(&self.f), self.d_y(&self.f));
        let fxy = self.d_y(&fx);
        let (gx, gy, gxx) = (self.d_x(&self.g), self.d_y(&self.g), self.d_xx(&self.g));
        (0..self.nx * self.ny)
            .map(|k| brioschi([self.e[k], self.f[k], self.g[k]], (ex[k], ey[k], eyy[k]), (fx[k], fy[k], fxy[k]), (gx[k], gy[k], gxx[k])))
            .collect()
    }

    pub fn gaussian_curvature(&self, p: Point) -> Result<f64> {
        self.interpolate(&self.curvature_field(), p)
    }

    /// Fast-marching distance from `p` to every node (infinite where unreachable).
    pub fn distance_field(&self, p: Point, active: Option<&[bool]>) -> Result<Vec<f64>> {
        if !self.contains(p) {
            return Err(Error::Domain("source outside chart".into()));
        }
        let all = vec![true; self.nx * self.ny];
        let active = active.unwrap_or(&all);
        let tensors: Vec<Tensor> = (0..self.nx * self.ny).map(|k| [self.e[k], self.f[k], self.g[k]]).collect();
        let (i0, j0) = self.nearest(p);
        let mut sources = Vec::new();
        for dj in 0..=1usize {
            for di in 0..=1usize {
                let fi = ((p[0] - self.x_range.0) / self.h).floor().max(0.0) as usize + di;
                let fj = ((p[1] - self.y_range.0) / self.h).floor().max(0.0) as usize + dj;
                if fi < self.nx && fj < self.ny && active[self.idx(fi, fj)] {
                    let q = self.node(fi, fj);
                    let t = self.tensor(fi, fj);
                    sources.push((self.idx(fi, fj), metric_len(t, [q[0] - p[0], q[1] - p[1]])));
                }
            }
        }
        if sources.is_empty() {
            if !active[self.idx(i0, j0)] {
                return Err(Error::Domain("source node is masked out".into()));
            }
            sources.push((self.idx(i0, j0), 0.0));
        }
        Ok(fast_marching(self.nx, self.ny, self.h, &tensors, active, &sources))
    }

    /// Distance to q read off a distance field (first order).
    pub fn read_distance(&self, field: &[f64], q: Point) -> Result<f64> {
        if !self.contains(q) {
            return Err(Error::Domain("target outside chart".into()));
        }
        let fi = ((q[0] - self.x_range.0) / self.h).floor().clamp(0.0, (self.nx - 2) as f64) as usize;
        let fj = ((q[1] - self.y_range.0) / self.h).floor().clamp(0.0, (self.ny - 2) as f64) as usize;
        let mut best = f64::INFINITY;
        for (a, b) in [(fi, fj), (fi + 1, fj), (fi, fj + 1), (fi + 1, fj + 1)] {
            let t = field[self.idx(a, b)];
            if t.is_finite() {
                let n = self.node(a, b);
                best = best.min(t + metric_len(self.tensor(a, b), [q[0] - n[0], q[1] - n[1]]));
            }
        }
        if best.is_finite() {
            Ok(best)
        } else {
            Err(Error::Unreachable)
        }
    }

    /// Every other node; used for the error estimate of first-order quantities.
    pub fn coarsen(&self) -> Option<GridChart> {
        if self.nx < 16 || self.ny < 16 || !(self.nx - 1).is_multiple_of(2) || !(self.ny - 1).is_multiple_of(2) {
            return None;
        }
        let (nx, ny) = ((self.nx - 1) / 2 + 1, (self.ny - 1) / 2 + 1);
        let pick = |v: &Vec<f64>| -> Vec<f64> {
            let mut out = Vec::with_capacity(nx * ny);
            for j in 0..ny {
                for i in 0..nx {
                    out.push(v[self.idx(2 * i, 2 * j)]);
                }
            }
            out
        };
        GridChart::new(nx, ny, self.x_range, self.y_range, pick(&self.e), pick(&self.f), pick(&self.g)).ok()
    }

    pub fn geodesic_distance(&self, p: Point, q: Point) -> Result<Distance> {
        let fine = self.read_distance(&self.distance_field(p, None)?, q)?;
        let err = match self.coarsen() {
            Some(c) => (fine - c.read_distance(&c.distance_field(p, None)?, q)?).abs(),
            None => 0.0,
        };
        let scale = (0..self.nx * self.ny).map(|k| self.e[k].max(self.g[k])).fold(0.0, f64::max).sqrt();
        Ok(Distance { value: fine, error_bound: err.max(self.h * scale) })
    }
}

fn diff(f: &[f64], nx: usize, ny: usize, h: f64, along_x: bool) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    let (n, stride) = if along_x { (nx, 1) } else { (ny, nx) };
    for j in 0..ny {
        for i in 0..nx {
            let k = j * nx + i;
            let pos = if along_x { i } else { j };
            out[k] = if pos == 0 {
                (-3.0 * f[k] + 4.0 * f[k + stride] - f[k + 2 * stride]) / (2.0 * h)
            } else if pos == n - 1 {
                (3.0 * f[k] - 4.0 * f[k - stride] + f[k - 2 * stride]) / (2.0 * h)
            } else {
                (f[k + stride] - f[k - stride]) / (2.0 * h)
            };
        }
    }
    out
}

fn diff2(f: &[f64], nx: usize, ny: usize, h: f64, along_x: bool) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    let (n, stride) = if along_x { (nx, 1) } else { (ny, nx) };
    for j in 0..ny {
        for i in 0..nx {
            let k = j * nx + i;
            let pos = if along_x { i } else { j };
            out[k] = if pos == 0 {
                (2.0 * f[k] - 5.0 * f[k + stride] + 4.0 * f[k + 2 * stride] - f[k + 3 * stride]) / (h * h)
            } else if pos == n - 1 {
                (2.0 * f[k] - 5.0 * f[k - stride] + 4.0 * f[k - 2 * stride] - f[k - 3 * stride]) / (h * h)
            } else {
                (f[k + stride] - 2.0 * f[k] + f[k - stride]) / (h * h)
            };
        }
    }
    out
}

pub fn metric_len(t: Tensor, d: [f64; 2]) -> f64 {
    (t[0] * d[0] * d[0] + 2.0 * t[1] * d[0] * d[1] + t[2] * d[1] * d[1]).max(0.0).sqrt()
}

#[derive(PartialEq)]
struct Item(f64, usize);
impl Eq for Item {}
impl PartialOrd for Item {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Item {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
    }
}

/// Minimum over s in [0,1] of ta + s (tb - ta) + |d0 - s e|_t.
fn simplex_update(t: Tensor, ta: f64, tb: f64, d0: [f64; 2], e: [f64; 2]) -> f64 {
    let ip = |a: [f64; 2], b: [f64; 2]| t[0] * a[0] * b[0] + t[1] * (a[0] * b[1] + a[1] * b[0]) + t[2] * a[1] * b[1];
    let c0 = ip(d0, d0);
    let k = ip(d0, e);
    let c2 = ip(e, e);
    let dt = tb - ta;
    let f = |s: f64| ta + s * dt + (c0 - 2.0 * k * s + c2 * s * s).max(0.0).sqrt();
    let mut best = f(0.0).min(f(1.0));
    // stationary points of f: (c2 s - k)^2 = dt^2 (c2 s^2 - 2 k s + c0)
    let qa = c2 * c2 - dt * dt * c2;
    let qb = -2.0 * c2 * k + 2.0 * dt * dt * k;
    let qc = k * k - dt * dt * c0;
    let mut roots = Vec::new();
    if qa.abs() > 1e-300 {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            roots.push((-qb + disc.sqrt()) / (2.0 * qa));
            roots.push((-qb - disc.sqrt()) / (2.0 * qa));
        }
    } else if qb.abs() > 1e-300 {
        roots.push(-qc / qb);
    }
    for s in roots {
        if s > 0.0 && s < 1.0 {
            best = best.min(f(s));
        }
    }
    best
}

/// First-order fast marching on the 8-neighbour grid with simplex updates.
pub fn fast_marching(nx: usize, ny: usize, h: f64, tensors: &[Tensor], active: &[bool], sources: &[(usize, f64)]) -> Vec<f64> {
    const OFF: [(i64, i64); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];
    let n = nx * ny;
    let mut t = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    for &(k, v) in sources {
        if v < t[k] {
            t[k] = v;
            heap.push(Item(v, k));
        }
    }
    let at = |k: usize, d: (i64, i64)| -> Option<usize> {
        let (i, j) = ((k % nx) as i64 + d.0, (k / nx) as i64 + d.1);
        if i < 0 || j < 0 || i >= nx as i64 || j >= ny as i64 {
            None
        } else {
            Some(j as usize * nx + i as usize)
        }
    };
    while let Some(Item(v, k)) = heap.pop() {
        if done[k] || v > t[k] {
            continue;
        }
        done[k] = true;
        for d in OFF {
            let Some(q) = at(k, d) else { continue };
            if done[q] || !active[q] {
                continue;
            }
            let tq = tensors[q];
            let mut best = t[q];
            for (idx, a) in OFF.iter().enumerate() {
                let Some(pa) = at(q, *a) else { continue };
                if !done[pa] {
                    continue;
                }
                let da = [-(a.0 as f64) * h, -(a.1 as f64) * h];
                best = best.min(t[pa] + metric_len(tq, da));
                let b = OFF[(idx + 1) % 8];
                if let Some(pb) = at(q, b) {
                    if done[pb] {
                        let e = [(b.0 - a.0) as f64 * h, (b.1 - a.1) as f64 * h];
                        best = best.min(simplex_update(tq, t[pa], t[pb], da, [-e[0], -e[1]]));
                    }
                }
            }
            if best < t[q] {
                t[q] = best;
                heap.push(Item(best, q));
            }
        }
    }
    t
}

/// Distance value with an error bound (zero for closed forms).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Distance {
    pub value: f64,
    pub error_bound: f64,
}

pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type PlaneFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Surface of revolution ds^2 = ds^2 + profile(s)^2 dphi^2.
#[derive(Clone)]
pub struct Revolution {
    pub profile: RealFn,
    pub s_range: (f64, f64),
    /// The profile vanishes at the corresponding end.
    pub caps: (bool, bool),
    /// Ends identified (flat torus when the profile is constant).
    pub periodic: bool,
}

impl Revolution {
    pub fn new(profile: RealFn, s_range: (f64, f64), caps: (bool, bool), periodic: bool) -> Result<Self> {
        if !(s_range.1 > s_range.0) {
            return Err(Error::Domain("empty profile interval".into()));
        }
        if periodic && (caps.0 || caps.1) {
            return Err(Error::Domain("periodic revolution cannot be capped".into()));
        }
        let (a, b) = s_range;
        for k in 1..64 {
            let s = a + (b - a) * k as f64 / 64.0;
            if !(profile(s) > 0.0) {
                return Err(Error::Domain(format!("profile not positive at s={s}")));
            }
        }
        for (end, capped) in [(a, caps.0), (b, caps.1)] {
            if capped && profile(end).abs() > 1e-9 {
                return Err(Error::Domain("capped end must have zero profile".into()));
            }
            if !capped && !(profile(end) > 0.0) {
                return Err(Error::Domain("uncapped end must have positive profile".into()));
            }
        }
        Ok(Self { profile, s_range, caps, periodic })
    }

    /// Cylinder of radius a and length l.
    pub fn cylinder(a: f64, l: f64) -> Result<Self> {
        Self::new(Arc::new(move |_| a), (0.0, l), (false, false), false)
    }

    /// Flat torus of sides l and 2 pi a.
    pub fn flat_torus(a: f64, l: f64) -> Result<Self> {
        Self::new(Arc::new(move |_| a), (0.0, l), (false, false), true)
    }

    /// Round sphere of radius r as a capped revolution.
    pub fn round_sphere(r: f64) -> Result<Self> {
        Self::new(Arc::new(move |s: f64| (r * (s / r).sin()).max(0.0)), (0.0, PI * r), (true, true), false)
    }

    pub fn second_derivative(&self, s: f64) -> f64 {
        let d = 1e-3 * (self.s_range.1 - self.s_range.0);
        let p = &self.profile;
        if s - 2.0 * d >= self.s_range.0 && s + 2.0 * d <= self.s_range.1 {
            (-p(s + 2.0 * d) + 16.0 * p(s + d) - 30.0 * p(s) + 16.0 * p(s - d) - p(s - 2.0 * d)) / (12.0 * d * d)
        } else if s - 2.0 * d < self.s_range.0 {
            (2.0 * p(s) - 5.0 * p(s + d) + 4.0 * p(s + 2.0 * d) - p(s + 3.0 * d)) / (d * d)
        } else {
            (2.0 * p(s) - 5.0 * p(s - d) + 4.0 * p(s - 2.0 * d) - p(s - 3.0 * d)) / (d * d)
        }
    }

    pub fn is_constant(&self) -> bool {
        let (a, b) = self.s_range;
        let p0 = (self.profile)(a);
        (0..=32).all(|k| ((self.profile)(a + (b - a) * k as f64 / 32.0) - p0).abs() <= 1e-14 * p0.abs())
    }

    pub fn is_compact(&self) -> bool {
        self.periodic || (self.caps.0 && self.caps.1)
    }
}

/// Conformal metric lambda(w)|dw|^2 on the disc |w| < radius.
#[derive(Clone)]
pub struct ConformalDisc {
    pub lambda: PlaneFn,
    pub radius: f64,
    /// lambda depends on |w| only.
    pub radial: bool,
}

#[derive(Clone)]
pub enum ModelKind {
    EuclideanPlane,
    HyperbolicDisc,
    Sphere { radius: f64 },
    Revolution(Revolution),
    ConformalDisc(ConformalDisc),
}

/// Closed-form reference quantities where known.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct ExactData {
    pub lambda1: Option<f64>,
    pub cheeger: Option<f64>,
    pub injectivity_radius: Option<f64>,
    pub area: Option<f64>,
}

#[derive(Clone)]
pub struct ModelSurface {
    pub kind: ModelKind,
}

impl fmt::Debug for ModelSurface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ModelSurface({})", self.name())
    }
}

/// Geodesic polar form ds^2 = A(s) ds^2 + B(s) dtheta^2 of a radially symmetric model.
pub struct PolarForm {
    pub a: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub b: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    /// Largest admissible radius (infinite for complete noncompact models).
    pub reach: f64,
    /// The far end closes up into a pole at `reach`.
    pub closes: bool,
}

impl ModelSurface {
    pub fn euclidean() -> Self {
        Self { kind: ModelKind::EuclideanPlane }
    }

    pub fn hyperbolic() -> Self {
        Self { kind: ModelKind::HyperbolicDisc }
    }

    pub fn sphere(radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Domain("sphere radius must be positive".into()));
        }
        Ok(Self { kind: ModelKind::Sphere { radius } })
    }

    pub fn revolution(r: Revolution) -> Self {
        Self { kind: ModelKind::Revolution(r) }
    }

    pub fn conformal_disc(lambda: PlaneFn, radius: f64, radial: bool) -> Result<Self> {
        for k in 0..16 {
            for l in 0..16 {
                let rho = radius * k as f64 / 16.0;
                let th = 2.0 * PI * l as f64 / 16.0;
                if !(lambda(rho * th.cos(), rho * th.sin()) > 0.0) {
                    return Err(Error::Domain("conformal factor must be positive".into()));
                }
            }
        }
        Ok(Self { kind: ModelKind::ConformalDisc(ConformalDisc { lambda, radius, radial }) })
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ModelKind::EuclideanPlane => "euclidean_plane",
            ModelKind::HyperbolicDisc => "hyperbolic_disc",
            ModelKind::Sphere { .. } => "sphere",
            ModelKind::Revolution(_) => "revolution",
            ModelKind::ConformalDisc(_) => "conformal_disc",
        }
    }

    pub fn is_compact(&self) -> bool {
        match &self.kind {
            ModelKind::Sphere { .. } => true,
            ModelKind::Revolution(r) => r.is_compact(),
            _ => false,
        }
    }

    pub fn exact_data(&self) -> ExactData {
        match &self.kind {
            ModelKind::EuclideanPlane => ExactData { lambda1: Some(0.0), cheeger: Some(0.0), injectivity_radius: Some(f64::INFINITY), area: None },
            ModelKind::HyperbolicDisc => ExactData { lambda1: Some(0.25), cheeger: Some(1.0), injectivity_radius: Some(f64::INFINITY), area: None },
            ModelKind::Sphere { radius } => ExactData {
                lambda1: Some(2.0 / (radius * radius)),
                cheeger: Some(2.0 / radius),
                injectivity_radius: Some(PI * radius),
                area: Some(4.0 * PI * radius * radius),
            },
            ModelKind::Revolution(r) => {
                let area = 2.0 * PI * integrate(|s| (r.profile)(s), r.s_range.0, r.s_range.1, 8, 64);
                let torus = r.periodic && r.is_constant();
                let lambda1 = torus.then(|| {
                    let (l, a) = (r.s_range.1 - r.s_range.0, (r.profile)(r.s_range.0));
                    (2.0 * PI / l).powi(2).min(1.0 / (a * a))
                });
                ExactData { lambda1, cheeger: None, injectivity_radius: self.injectivity_radius([r.s_range.0, 0.0]).ok(), area: r.is_compact().then_some(area) }
            }
            ModelKind::ConformalDisc(_) => ExactData::default(),
        }
    }

    fn check_domain(&self, p: Point) -> Result<()> {
        let ok = match &self.kind {
            ModelKind::EuclideanPlane => p[0].is_finite() && p[1].is_finite(),
            ModelKind::HyperbolicDisc => p[0] * p[0] + p[1] * p[1] < 1.0,
            ModelKind::Sphere { .. } => (0.0..=PI).contains(&p[0]) && p[1].is_finite(),
            ModelKind::Revolution(r) => (r.s_range.0..=r.s_range.1).contains(&p[0]) && p[1].is_finite(),
            ModelKind::ConformalDisc(c) => p[0] * p[0] + p[1] * p[1] < c.radius * c.radius,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("point ({}, {}) outside the {} chart", p[0], p[1], self.name())))
        }
    }

    /// (E, F, G) in the model's canonical chart. Sphere and revolution charts are
    /// (colatitude or arclength, longitude); pole points are degenerate.
    pub fn metric_at(&self, p: Point) -> Result<Tensor> {
        self.check_domain(p)?;
        Ok(match &self.kind {
            ModelKind::EuclideanPlane => [1.0, 0.0, 1.0],
            ModelKind::HyperbolicDisc => {
                let l = 4.0 / (1.0 - p[0] * p[0] - p[1] * p[1]).powi(2);
                [l, 0.0, l]
            }
            ModelKind::Sphere { radius } => [radius * radius, 0.0, (radius * p[0].sin()).powi(2)],
            ModelKind::Revolution(r) => [1.0, 0.0, (r.profile)(p[0]).powi(2)],
            ModelKind::ConformalDisc(c) => {
                let l = (c.lambda)(p[0], p[1]);
                [l, 0.0, l]
            }
        })
    }

    pub fn gaussian_curvature(&self, p: Point) -> Result<f64> {
        self.check_domain(p)?;
        Ok(match &self.kind {
            ModelKind::EuclideanPlane => 0.0,
            ModelKind::HyperbolicDisc => -1.0,
            ModelKind::Sphere { radius } => 1.0 / (radius * radius),
            ModelKind::Revolution(r) => {
                let rho = (r.profile)(p[0]);
                if rho.abs() < 1e-12 {
                    return Err(Error::Stencil("curvature at a cap pole needs the limit".into()));
                }
                -r.second_derivative(p[0]) / rho
            }
            ModelKind::ConformalDisc(c) => {
                let d = 1e-4 * c.radius;
                let ll = |x: f64, y: f64| (c.lambda)(x, y).ln();
                let [x, y] = p;
                if (x.abs() + 2.0 * d).hypot(y.abs() + 2.0 * d) >= c.radius {
                    return Err(Error::Stencil("point too close to the disc boundary".into()));
                }
                let lap = (-ll(x + 2.0 * d, y) + 16.0 * ll(x + d, y) - 30.0 * ll(x, y) + 16.0 * ll(x - d, y) - ll(x - 2.0 * d, y)
                    - ll(x, y + 2.0 * d)
                    + 16.0 * ll(x, y + d)
                    - 30.0 * ll(x, y)
                    + 16.0 * ll(x, y - d)
                    - ll(x, y - 2.0 * d))
                    / (12.0 * d * d);
                -lap / (2.0 * (c.lambda)(x, y))
            }
        })
    }

    pub fn geodesic_distance(&self, p: Point, q: Point) -> Result<Distance> {
        self.check_domain(p)?;
        self.check_domain(q)?;
        let exact = |v: f64| Ok(Distance { value: v, error_bound: 0.0 });
        match &self.kind {
            ModelKind::EuclideanPlane => exact((p[0] - q[0]).hypot(p[1] - q[1])),
            ModelKind::HyperbolicDisc => {
                // |p - q| / |1 - conj(p) q|
                let num = (p[0] - q[0]).hypot(p[1] - q[1]);
                let re = 1.0 - (p[0] * q[0] + p[1] * q[1]);
                let im = -(p[0] * q[1] - p[1] * q[0]);
                let r = (num / re.hypot(im)).min(1.0 - 1e-16);
                exact(2.0 * r.atanh())
            }
            ModelKind::Sphere { radius } => {
                let v = |a: Point| [a[0].sin() * a[1].cos(), a[0].sin() * a[1].sin(), a[0].cos()];
                let (a, b) = (v(p), v(q));
                let c = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
                let s = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
                let d = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
                exact(radius * s.atan2(d))
            }
            ModelKind::Revolution(r) => {
                let dphi = wrap_angle(q[1] - p[1]);
                if dphi.abs() < 1e-15 {
                    return exact((q[0] - p[0]).abs());
                }
                if r.is_constant() {
                    let a = (r.profile)(r.s_range.0);
                    let mut ds = (q[0] - p[0]).abs();
                    if r.periodic {
                        ds = ds.min(r.s_range.1 - r.s_range.0 - ds);
                    }
                    return exact(ds.hypot(a * dphi));
                }
                let rr = r.clone();
                let (s0, s1) = r.s_range;
                let margin = 1e-3 * (s1 - s0);
                let lo = if r.caps.0 { s0 + margin } else { s0 };
                let hi = if r.caps.1 { s1 - margin } else { s1 };
                let q1 = p[1] + dphi;
                let (ylo, yhi) = (p[1].min(q1) - PI, p[1].max(q1) + PI);
                let chart = GridChart::with_spacing((lo, hi), (ylo, yhi), (hi - lo) / 256.0, move |s, _| {
                    [1.0, 0.0, (rr.profile)(s).powi(2)]
                })?;
                let clamp = |a: Point| [a[0].clamp(lo, hi), a[1]];
                chart.geodesic_distance(clamp(p), clamp([q[0], q1]))
            }
            ModelKind::ConformalDisc(c) => {
                let cc = c.clone();
                let rad = c.radius;
                let chart = GridChart::with_spacing((-rad, rad), (-rad, rad), rad / 128.0, move |x, y| {
                    let s = (x.hypot(y) / (0.999 * rad)).max(1.0);
                    let l = (cc.lambda)(x / s, y / s);
                    [l, 0.0, l]
                })?;
                chart.geodesic_distance(p, q)
            }
        }
    }

    pub fn injectivity_radius(&self, p: Point) -> Result<f64> {
        match &self.kind {
            ModelKind::EuclideanPlane | ModelKind::HyperbolicDisc => Ok(f64::INFINITY),
            ModelKind::Sphere { radius } => Ok(PI * radius),
            ModelKind::Revolution(r) => {
                let (a, b) = r.s_range;
                let n = 512;
                let mut bound = f64::INFINITY;
                let mut kmax: f64 = 0.0;
                let prof: Vec<f64> = (0..=n).map(|k| (r.profile)(a + (b - a) * k as f64 / n as f64)).collect();
                for k in 1..n {
                    let s = a + (b - a) * k as f64 / n as f64;
                    let (l, m, h) = (prof[k - 1], prof[k], prof[k + 1]);
                    // closed geodesic parallels sit at critical points of the profile
                    if (m - l) * (h - m) <= 0.0 {
                        bound = bound.min(PI * m);
                    }
                    if m > 1e-9 {
                        kmax = kmax.max(-r.second_derivative(s) / m);
                    }
                }
                if r.is_constant() {
                    bound = bound.min(PI * prof[0]);
                }
                if kmax > 0.0 {
                    bound = bound.min(PI / kmax.sqrt());
                }
                if r.periodic {
                    bound = bound.min(0.5 * (b - a));
                }
                if !r.is_compact() {
                    // distance to an open end limits the ball radius
                    let to_end = [(!r.caps.0).then(|| p[0] - a), (!r.caps.1).then(|| b - p[0])];
                    for d in to_end.into_iter().flatten() {
                        bound = bound.min(d.max(0.0));
                    }
                }
                Ok(bound)
            }
            ModelKind::ConformalDisc(_) => Err(Error::Unsupported("injectivity radius of a general conformal disc".into())),
        }
    }

    /// Geodesic polar coordinates about the chart origin (or the first pole).
    pub fn polar_form(&self) -> Option<PolarForm> {
        match &self.kind {
            ModelKind::EuclideanPlane => Some(PolarForm { a: Box::new(|_| 1.0), b: Box::new(|r| r * r), reach: f64::INFINITY, closes: false }),
            ModelKind::HyperbolicDisc => Some(PolarForm { a: Box::new(|_| 1.0), b: Box::new(|r| r.sinh().powi(2)), reach: f64::INFINITY, closes: false }),
            ModelKind::Sphere { radius } => {
                let a = *radius;
                Some(PolarForm { a: Box::new(|_| 1.0), b: Box::new(move |r| (a * (r / a).sin()).powi(2)), reach: PI * a, closes: true })
            }
            ModelKind::Revolution(r) if r.caps.0 => {
                let (p, s0) = (r.profile.clone(), r.s_range.0);
                Some(PolarForm { a: Box::new(|_| 1.0), b: Box::new(move |s| p(s0 + s).powi(2)), reach: r.s_range.1 - s0, closes: r.caps.1 })
            }
            ModelKind::ConformalDisc(c) if c.radial => {
                let l = c.lambda.clone();
                let l2 = c.lambda.clone();
                Some(PolarForm { a: Box::new(move |r| l(r, 0.0)), b: Box::new(move |r| l2(r, 0.0) * r * r), reach: c.radius, closes: false })
            }
            _ => None,
        }
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let t = (a + PI).rem_euclid(2.0 * PI) - PI;
    if t == -PI {
        PI
    } else {
        t
    }
}

#[derive(Clone)]
pub enum SurfaceRef {
    Chart(Arc<GridChart>),
    Model(Arc<ModelSurface>),
}

impl fmt::Debug for SurfaceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SurfaceRef::Chart(c) => write!(f, "Chart({}x{})", c.nx, c.ny),
            SurfaceRef::Model(m) => write!(f, "{m:?}"),
        }
    }
}

impl SurfaceRef {
    pub fn metric_at(&self, p: Point) -> Result<Tensor> {
        match self {
            SurfaceRef::Chart(c) => c.metric_at(p),
            SurfaceRef::Model(m) => m.metric_at(p),
        }
    }

    pub fn gaussian_curvature(&self, p: Point) -> Result<f64> {
        match self {
            SurfaceRef::Chart(c) => c.gaussian_curvature(p),
            SurfaceRef::Model(m) => m.gaussian_curvature(p),
        }
    }

    pub fn geodesic_distance(&self, p: Point, q: Point) -> Result<Distance> {
        match self {
            SurfaceRef::Chart(c) => c.geodesic_distance(p, q),
            SurfaceRef::Model(m) => m.geodesic_distance(p, q),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Node mask on the parent chart grid.
    Mask(Vec<bool>),
    /// Geodesic ball on a model (closed forms).
    GeodesicBall { center: Point, radius: f64 },
    /// Coordinate disc in the parent chart.
    ChartDisc { center: Point, radius: f64 },
    /// Revolution level set s_range.0 <= s < level.
    Band { level: f64 },
}

/// A precompact domain with lazily computed area and perimeter.
#[derive(Debug, Clone)]
pub struct Region {
    pub parent: SurfaceRef,
    pub shape: Shape,
    area: OnceLock<f64>,
    perimeter: OnceLock<f64>,
}

impl Region {
    pub fn new(parent: SurfaceRef, shape: Shape) -> Result<Self> {
        match (&parent, &shape) {
            (SurfaceRef::Chart(c), Shape::Mask(m)) => {
                if m.len() != c.nx * c.ny {
                    return Err(Error::Input("mask size does not match chart".into()));
                }
                if !mask_connected(m, c.nx, c.ny) {
                    return Err(Error::Domain("mask region is not connected".into()));
                }
            }
            (SurfaceRef::Model(_), Shape::Mask(_)) => return Err(Error::Unsupported("mask regions need a grid chart".into())),
            (_, Shape::GeodesicBall { radius, .. }) | (_, Shape::ChartDisc { radius, .. }) if !(*radius > 0.0) => {
                return Err(Error::Domain("radius must be positive".into()));
            }
            (SurfaceRef::Model(m), Shape::Band { level }) => match &m.kind {
                ModelKind::Revolution(r) if *level > r.s_range.0 && *level <= r.s_range.1 => {}
                _ => return Err(Error::Domain("band regions need a revolution and a level inside the profile interval".into())),
            },
            (SurfaceRef::Chart(_), Shape::Band { .. }) => return Err(Error::Unsupported("band regions need a revolution model".into())),
            _ => {}
        }
        Ok(Self { parent, shape, area: OnceLock::new(), perimeter: OnceLock::new() })
    }

    pub fn area(&self) -> Result<f64> {
        if let Some(a) = self.area.get() {
            return Ok(*a);
        }
        let (a, p) = self.compute()?;
        let _ = self.perimeter.set(p);
        Ok(*self.area.get_or_init(|| a))
    }

    pub fn perimeter(&self) -> Result<f64> {
        if let Some(p) = self.perimeter.get() {
            return Ok(*p);
        }
        let (a, p) = self.compute()?;
        let _ = self.area.set(a);
        Ok(*self.perimeter.get_or_init(|| p))
    }

    fn compute(&self) -> Result<(f64, f64)> {
        match (&self.parent, &self.shape) {
            (SurfaceRef::Chart(c), Shape::Mask(m)) => Ok(mask_measure(c, m)),
            (SurfaceRef::Model(m), Shape::GeodesicBall { center, radius }) => ball_measure(m, *center, *radius),
            (SurfaceRef::Model(m), Shape::Band { level }) => match &m.kind {
                ModelKind::Revolution(r) => {
                    let area = 2.0 * PI * integrate(|s| (r.profile)(s), r.s_range.0, *level, 8, 64);
                    Ok((area, 2.0 * PI * (r.profile)(*level)))
                }
                _ => unreachable!(),
            },
            (parent, Shape::ChartDisc { center, radius }) => chart_disc_measure(parent, *center, *radius),
            (SurfaceRef::Chart(_), _) => Err(Error::Unsupported("shape on a grid chart".into())),
            (SurfaceRef::Model(_), Shape::Mask(_)) => unreachable!(),
        }
    }
}

/// (area, perimeter) of a region.
pub fn measure(region: &Region) -> Result<(f64, f64)> {
    Ok((region.area()?, region.perimeter()?))
}

pub fn mask_connected(m: &[bool], nx: usize, ny: usize) -> bool {
    let Some(start) = m.iter().position(|&v| v) else { return true };
    let mut seen = vec![false; m.len()];
    let mut stack = vec![start];
    seen[start] = true;
    let mut count = 0;
    while let Some(k) = stack.pop() {
        count += 1;
        let (i, j) = (k % nx, k / nx);
        let mut push = |q: usize| {
            if m[q] && !seen[q] {
                seen[q] = true;
                stack.push(q);
            }
        };
        if i > 0 {
            push(k - 1);
        }
        if i + 1 < nx {
            push(k + 1);
        }
        if j > 0 {
            push(k - nx);
        }
        if j + 1 < ny {
            push(k + nx);
        }
    }
    count == m.iter().filter(|&&v| v).count()
}

fn mask_measure(c: &GridChart, m: &[bool]) -> (f64, f64) {
    let h = c.h;
    let mut area = 0.0;
    for k in 0..m.len() {
        if m[k] {
            area += det([c.e[k], c.f[k], c.g[k]]).sqrt() * h * h;
        }
    }
    // marching squares at level 1/2 with edge-midpoint crossings
    let mut perim = 0.0;
    for j in 0..c.ny - 1 {
        for i in 0..c.nx - 1 {
            let v = [m[c.idx(i, j)], m[c.idx(i + 1, j)], m[c.idx(i + 1, j + 1)], m[c.idx(i, j + 1)]];
            let p0 = c.node(i, j);
            // edge midpoints: bottom, right, top, left
            let mids = [[0.5, 0.0], [1.0, 0.5], [0.5, 1.0], [0.0, 0.5]];
            let cut: Vec<usize> = (0..4).filter(|&e| v[e] != v[(e + 1) % 4]).collect();
            let mut segs = Vec::new();
            match cut.len() {
                2 => segs.push((cut[0], cut[1])),
                4 => {
                    // saddle: separate the inside corners
                    if v[0] {
                        segs.push((0, 3));
                        segs.push((1, 2));
                    } else {
                        segs.push((0, 1));
                        segs.push((2, 3));
                    }
                }
                _ => {}
            }
            for (a, b) in segs {
                let pa = [p0[0] + h * mids[a][0], p0[1] + h * mids[a][1]];
                let pb = [p0[0] + h * mids[b][0], p0[1] + h * mids[b][1]];
                let mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
                let t = c.metric_at(mid).unwrap_or_else(|_| c.tensor(i, j));
                perim += metric_len(t, [pb[0] - pa[0], pb[1] - pa[1]]);
            }
        }
    }
    (area, perim)
}

fn ball_measure(m: &ModelSurface, center: Point, r: f64) -> Result<(f64, f64)> {
    m.check_domain(center)?;
    match &m.kind {
        ModelKind::EuclideanPlane => Ok((PI * r * r, 2.0 * PI * r)),
        ModelKind::HyperbolicDisc => Ok((2.0 * PI * (r.cosh() - 1.0), 2.0 * PI * r.sinh())),
        ModelKind::Sphere { radius } => {
            if r > PI * radius {
                return Err(Error::Domain("ball radius exceeds the sphere diameter".into()));
            }
            Ok((2.0 * PI * radius * radius * (1.0 - (r / radius).cos()), 2.0 * PI * radius * (r / radius).sin()))
        }
        ModelKind::Revolution(rv) => {
            let at_pole = rv.caps.0 && (center[0] - rv.s_range.0).abs() < 1e-12;
            if !at_pole {
                return Err(Error::Unsupported("geodesic balls on a revolution are centred at a cap pole".into()));
            }
            let level = rv.s_range.0 + r;
            if level > rv.s_range.1 {
                return Err(Error::Domain("ball radius exceeds the profile length".into()));
            }
            let area = 2.0 * PI * integrate(|s| (rv.profile)(s), rv.s_range.0, level, 8, 64);
            Ok((area, 2.0 * PI * (rv.profile)(level)))
        }
        ModelKind::ConformalDisc(c) => {
            if !c.radial || center != [0.0, 0.0] {
                return Err(Error::Unsupported("geodesic balls of a conformal disc are centred at 0 with radial lambda".into()));
            }
            let rho = conformal_radius_for(c, r)?;
            chart_disc_measure(&SurfaceRef::Model(Arc::new(m.clone())), [0.0, 0.0], rho)
        }
    }
}

/// Coordinate radius rho with int_0^rho sqrt(lambda) = r for a radial conformal disc.
pub fn conformal_radius_for(c: &ConformalDisc, r: f64) -> Result<f64> {
    let dist = |rho: f64| integrate(|t| (c.lambda)(t, 0.0).sqrt(), 0.0, rho, 8, 32);
    let (mut lo, mut hi) = (0.0, c.radius * (1.0 - 1e-12));
    if dist(hi) < r {
        return Err(Error::Domain("geodesic radius exceeds the disc".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dist(mid) < r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn chart_disc_measure(parent: &SurfaceRef, center: Point, rho: f64) -> Result<(f64, f64)> {
    let nr = 48;
    let nt = 256;
    let mut area = 0.0;
    for (r, wr) in gauss_legendre(nr, 0.0, rho) {
        for k in 0..nt {
            let th = 2.0 * PI * (k as f64 + 0.5) / nt as f64;
            let t = parent.metric_at([center[0] + r * th.cos(), center[1] + r * th.sin()])?;
            area += wr * r * det(t).sqrt() * 2.0 * PI / nt as f64;
        }
    }
    let mut perim = 0.0;
    for k in 0..nt {
        let th = 2.0 * PI * (k as f64 + 0.5) / nt as f64;
        let t = parent.metric_at([center[0] + rho * th.cos(), center[1] + rho * th.sin()])?;
        perim += metric_len(t, [-rho * th.sin(), rho * th.cos()]) * 2.0 * PI / nt as f64;
    }
    Ok((area, perim))
}

/// Geodesic ball B_R(o) as a region.
pub fn geodesic_ball(surface: &SurfaceRef, o: Point, r: f64) -> Result<Region> {
    if !(r > 0.0) {
        return Err(Error::Domain("ball radius must be positive".into()));
    }
    match surface {
        SurfaceRef::Model(m) => {
            m.check_domain(o)?;
            match &m.kind {
                ModelKind::HyperbolicDisc if o == [0.0, 0.0] => {
                    Region::new(surface.clone(), Shape::ChartDisc { center: o, radius: (0.5 * r).tanh() })
                }
                ModelKind::EuclideanPlane => Region::new(surface.clone(), Shape::ChartDisc { center: o, radius: r }),
                ModelKind::ConformalDisc(c) if c.radial && o == [0.0, 0.0] => {
                    Region::new(surface.clone(), Shape::ChartDisc { center: o, radius: conformal_radius_for(c, r)? })
                }
                _ => Region::new(surface.clone(), Shape::GeodesicBall { center: o, radius: r }),
            }
        }
        SurfaceRef::Chart(c) => {
            let d = c.distance_field(o, None)?;
            let mask: Vec<bool> = d.iter().map(|&v| v < r).collect();
            let reach = (0..c.nx * c.ny)
                .filter(|&k| {
                    let (i, j) = (k % c.nx, k / c.nx);
                    i == 0 || j == 0 || i == c.nx - 1 || j == c.ny - 1
                })
                .map(|k| d[k])
                .fold(f64::INFINITY, f64::min);
            if reach < r {
                return Err(Error::Truncation { reach });
            }
            Region::new(surface.clone(), Shape::Mask(mask))
        }
    }
}
