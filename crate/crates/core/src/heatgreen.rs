//! Heat kernels, Green functions and capacities on discretized regions.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dense_generalized, dot, linear_fit, spmv, submatrix, to_dense, SpdSolver};
use crate::mesh::{uniform, End, Layout, Mesh, RingSpec};
use crate::quadrature::integrate;
use crate::spectral::{dirichlet_mesh, SpectralOptions};
use crate::surface::{ModelKind, ModelSurface, Point, PolarForm, Region, Shape, SurfaceRef};

/// Largest node count accepted by the dense eigendecomposition.
pub const DENSE_BUDGET: usize = 10_000;

/// Dirichlet heat kernel p(t,x,y) = sum_k exp(-lambda_k t) phi_k(x) phi_k(y) on mesh nodes.
#[derive(Debug, Clone)]
pub struct HeatField {
    pub coords: Vec<[f64; 2]>,
    pub mass: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    /// Mass-orthonormal eigenvectors as columns.
    pub eigenvectors: DMatrix<f64>,
    ring: bool,
}

impl HeatField {
    pub fn from_mesh(mesh: &Mesh) -> Result<Self> {
        let n = mesh.len();
        if n > DENSE_BUDGET {
            return Err(Error::Resolution { nodes: n, budget: DENSE_BUDGET });
        }
        let (eigenvalues, eigenvectors) = dense_generalized(&to_dense(&mesh.stiffness), &mesh.mass);
        Ok(Self {
            coords: mesh.coords.clone(),
            mass: mesh.mass.clone(),
            eigenvalues,
            eigenvectors,
            ring: matches!(mesh.layout, Layout::Rings { .. }),
        })
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn evaluate(&self, t: f64, x: usize, y: usize) -> f64 {
        let v = &self.eigenvectors;
        (0..self.len()).map(|k| (-self.eigenvalues[k] * t).exp() * v[(x, k)] * v[(y, k)]).sum()
    }

    /// p(t, x, .) at every node.
    pub fn row(&self, t: f64, x: usize) -> Vec<f64> {
        let v = &self.eigenvectors;
        let c: Vec<f64> = (0..self.len()).map(|k| (-self.eigenvalues[k] * t).exp() * v[(x, k)]).collect();
        (0..self.len()).map(|y| (0..self.len()).map(|k| c[k] * v[(y, k)]).sum()).collect()
    }

    /// int p(t, x, z) dV_z.
    pub fn mass_at(&self, t: f64, x: usize) -> f64 {
        dot(&self.row(t, x), &self.mass)
    }

    /// |int p(t,x,z) p(s,y,z) dz - p(t+s,x,y)|, relative to p(t+s,x,y).
    pub fn semigroup_residual(&self, t: f64, s: f64, x: usize, y: usize) -> f64 {
        let a = self.row(t, x);
        let b = self.row(s, y);
        let lhs: f64 = a.iter().zip(&b).zip(&self.mass).map(|((a, b), m)| a * b * m).sum();
        let rhs = self.evaluate(t + s, x, y);
        (lhs - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE)
    }

    /// int_0^T p(t, x, y) dt in closed form.
    pub fn time_integral(&self, x: usize, y: usize, t_max: f64) -> f64 {
        let v = &self.eigenvectors;
        (0..self.len())
            .map(|k| {
                let l = self.eigenvalues[k];
                let w = if l * t_max < 1e-12 { t_max } else { -(-l * t_max).exp_m1() / l };
                w * v[(x, k)] * v[(y, k)]
            })
            .sum()
    }

    /// (t, p(t, x, x)) on `samples` log-spaced times.
    pub fn ondiag_trace(&self, x: usize, window: (f64, f64), samples: usize) -> Vec<(f64, f64)> {
        log_times(window, samples).into_iter().map(|t| (t, self.evaluate(t, x, x))).collect()
    }

    /// Node nearest to mesh coordinates `c` ((s, theta) on ring meshes).
    pub fn nearest(&self, c: [f64; 2]) -> usize {
        nearest_node(&self.coords, self.ring, c)
    }
}

fn embed(ring: bool, c: [f64; 2]) -> [f64; 2] {
    if ring {
        [c[0] * c[1].cos(), c[0] * c[1].sin()]
    } else {
        c
    }
}

fn nearest_node(coords: &[[f64; 2]], ring: bool, c: [f64; 2]) -> usize {
    let p = embed(ring, c);
    let d = |q: &[f64; 2]| {
        let e = embed(ring, *q);
        (e[0] - p[0]).powi(2) + (e[1] - p[1]).powi(2)
    };
    (0..coords.len()).min_by(|&a, &b| d(&coords[a]).total_cmp(&d(&coords[b]))).expect("nonempty mesh")
}

pub fn log_times(window: (f64, f64), samples: usize) -> Vec<f64> {
    let (a, b) = (window.0.ln(), window.1.ln());
    (0..samples).map(|k| (a + (b - a) * k as f64 / (samples.max(2) - 1) as f64).exp()).collect()
}

/// Heat field on the fine Dirichlet mesh of a region.
pub fn heat_field(region: &Region, opts: &SpectralOptions) -> Result<HeatField> {
    HeatField::from_mesh(&dirichlet_mesh(region, 1, opts)?.1)
}

/// Mesh coordinates of a chart point of a region's surface.
pub fn mesh_coords(region: &Region, p: Point) -> Result<[f64; 2]> {
    match (&region.parent, &region.shape) {
        (SurfaceRef::Chart(_), _) => Ok(p),
        (SurfaceRef::Model(m), _) => Ok(polar_coords(m, p)?),
    }
}

fn polar_coords(m: &ModelSurface, p: Point) -> Result<[f64; 2]> {
    match &m.kind {
        ModelKind::Revolution(r) => Ok([p[0] - r.s_range.0, p[1]]),
        ModelKind::ConformalDisc(_) => Ok([p[0].hypot(p[1]), p[1].atan2(p[0])]),
        _ => Ok([m.geodesic_distance([0.0, 0.0], p)?.value, p[1].atan2(p[0])]),
    }
}

/// p(t,x,x) ~ c t^{-nu/2} with the induced kappa(t) = t^{nu/2} / c.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityFit {
    pub c: f64,
    pub nu_hat: f64,
    /// Regularity constants: kappa(beta s)/kappa(s) <= A kappa(beta t)/kappa(t) for s < t.
    pub a: f64,
    pub beta: f64,
    pub samples: Vec<(f64, f64)>,
}

impl RegularityFit {
    pub fn kappa(&self, t: f64) -> f64 {
        t.powf(0.5 * self.nu_hat) / self.c
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,value\n");
        for (t, p) in &self.samples {
            s.push_str(&format!("{t:.16e},{p:.16e}\n"));
        }
        s
    }
}

/// Log-log least squares on (t, p) samples; A is measured with beta = 2 on the trace itself.
pub fn fit_power_law(samples: &[(f64, f64)]) -> Result<RegularityFit> {
    if samples.len() < 5 {
        return Err(Error::Fit(format!("{} samples, need at least 5", samples.len())));
    }
    if samples.iter().any(|&(t, p)| !(t > 0.0 && p > 0.0)) {
        return Err(Error::Fit("samples must be positive".into()));
    }
    let lt: Vec<f64> = samples.iter().map(|s| s.0.ln()).collect();
    let lp: Vec<f64> = samples.iter().map(|s| s.1.ln()).collect();
    let (intercept, slope) = linear_fit(&lt, &lp);
    let beta: f64 = 2.0;
    // log kappa = -log p, interpolated linearly in log t
    let log_kappa = |x: f64| -> Option<f64> {
        let k = lt.windows(2).position(|w| w[0] <= x && x <= w[1])?;
        let f = (x - lt[k]) / (lt[k + 1] - lt[k]);
        Some(-(lp[k] + f * (lp[k + 1] - lp[k])))
    };
    let growth: Vec<f64> = lt.iter().filter_map(|&x| Some(log_kappa(x + beta.ln())? - log_kappa(x)?)).collect();
    let mut log_a: f64 = 0.0;
    for i in 0..growth.len() {
        for j in i + 1..growth.len() {
            log_a = log_a.max(growth[i] - growth[j]);
        }
    }
    Ok(RegularityFit { c: intercept.exp(), nu_hat: -2.0 * slope, a: log_a.exp(), beta, samples: samples.to_vec() })
}

pub fn ondiag_fit(field: &HeatField, x: usize, window: (f64, f64), samples: usize) -> Result<RegularityFit> {
    if !(window.0 > 0.0 && window.1 > window.0) {
        return Err(Error::Fit("time window must satisfy 0 < t0 < t1".into()));
    }
    fit_power_law(&field.ondiag_trace(x, window, samples))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OffdiagReport {
    pub alpha: f64,
    pub distance: f64,
    /// Largest certified delta in (0, 1], if any.
    pub delta: Option<f64>,
    /// sup over the window of LHS / RHS at the certified delta (or at delta = 1).
    pub sup_ratio: f64,
    pub holds: bool,
}

/// sup_t p(t,x,y) / (4A / sqrt(kappa1(delta t) kappa2(delta t)) exp(-alpha d^2 / 4t)).
pub fn offdiag_sup_ratio(field: &HeatField, x: usize, y: usize, d: f64, alpha: f64, delta: f64, fits: (&RegularityFit, &RegularityFit), times: &[f64]) -> f64 {
    let a = fits.0.a.max(fits.1.a);
    times
        .iter()
        .map(|&t| {
            let rhs = 4.0 * a / (fits.0.kappa(delta * t) * fits.1.kappa(delta * t)).sqrt() * (-alpha * d * d / (4.0 * t)).exp();
            field.evaluate(t, x, y) / rhs
        })
        .fold(0.0, f64::max)
}

/// Scans delta = 2^{-k}, k = 0..40, and keeps the first that certifies the bound.
#[allow(clippy::too_many_arguments)]
pub fn gaussian_offdiag_check(field: &HeatField, x: usize, y: usize, d: f64, alpha: f64, fit1: &RegularityFit, fit2: &RegularityFit, window: (f64, f64)) -> Result<OffdiagReport> {
    if !(alpha < 1.0) {
        return Err(Error::Domain("alpha must be < 1".into()));
    }
    let times = log_times(window, 41);
    for k in 0..=40 {
        let delta = 0.5f64.powi(k);
        let r = offdiag_sup_ratio(field, x, y, d, alpha, delta, (fit1, fit2), &times);
        if r <= 1.0 {
            return Ok(OffdiagReport { alpha, distance: d, delta: Some(delta), sup_ratio: r, holds: true });
        }
    }
    let r = offdiag_sup_ratio(field, x, y, d, alpha, 1.0, (fit1, fit2), &times);
    Ok(OffdiagReport { alpha, distance: d, delta: None, sup_ratio: r, holds: false })
}

#[derive(Debug, Clone)]
pub struct Capacity {
    pub value: f64,
    /// Equilibrium potential on the mesh nodes.
    pub potential: Vec<f64>,
}

/// Energy of the discrete equilibrium potential: 1 on `in_u`, 0 on the Dirichlet boundary.
pub fn capacity_on_mesh(mesh: &Mesh, in_u: &[bool]) -> Result<Capacity> {
    let n = mesh.len();
    if in_u.len() != n {
        return Err(Error::Input("membership length mismatch".into()));
    }
    let touching = mesh.boundary_adjacent();
    if mesh.closed || (0..n).any(|i| in_u[i] && touching[i]) {
        return Err(Error::Domain("U is not compactly inside Omega".into()));
    }
    let free: Vec<usize> = (0..n).filter(|&i| !in_u[i]).collect();
    if free.len() == n {
        return Err(Error::Domain("U contains no mesh node".into()));
    }
    let ones: Vec<f64> = in_u.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let k1 = spmv(&mesh.stiffness, &ones);
    let rhs: Vec<f64> = free.iter().map(|&i| -k1[i]).collect();
    let solver = SpdSolver::new(submatrix(&mesh.stiffness, &free))?;
    let sol = solver.solve(&rhs);
    let mut potential = ones;
    for (k, &i) in free.iter().enumerate() {
        potential[i] = sol[k];
    }
    Ok(Capacity { value: mesh.energy(&potential), potential })
}

/// Ring mesh of a ball about the polar origin with a ring placed exactly at `inner`.
pub fn concentric_mesh(form: &PolarForm, inner: f64, outer: f64, n_inner: usize, n_outer: usize, sectors: usize) -> Result<Mesh> {
    if !(0.0 < inner && inner < outer) {
        return Err(Error::Domain("U is not compactly inside Omega".into()));
    }
    let mut s = uniform(0.0, inner, n_inner);
    s.extend_from_slice(&uniform(inner, outer, n_outer)[1..]);
    Mesh::rings(&RingSpec { a: &*form.a, b: &*form.b, s, m: sectors, start: End::Pole, end: End::Dirichlet })
}

fn ball_radius(model: &ModelSurface, shape: &Shape) -> Result<f64> {
    match (&model.kind, shape) {
        (ModelKind::HyperbolicDisc, Shape::ChartDisc { center, radius }) if center == &[0.0, 0.0] => Ok(2.0 * radius.atanh()),
        (_, Shape::GeodesicBall { center, radius }) if center == &[0.0, 0.0] || matches!(model.kind, ModelKind::Revolution(_)) => Ok(*radius),
        (ModelKind::EuclideanPlane | ModelKind::ConformalDisc(_), Shape::ChartDisc { center, radius }) if center == &[0.0, 0.0] => Ok(*radius),
        _ => Err(Error::Unsupported("capacity needs concentric balls about the polar origin or masks".into())),
    }
}

/// Mesh of Omega with U marked, for concentric balls or nested masks on one chart.
pub fn capacity_mesh(u: &Region, omega: &Region, opts: &SpectralOptions) -> Result<(Mesh, Vec<bool>)> {
    match (&u.parent, &omega.parent) {
        (SurfaceRef::Model(m), SurfaceRef::Model(m2)) if std::ptr::eq(m.as_ref(), m2.as_ref()) || m.name() == m2.name() => {
            let (ru, ro) = (ball_radius(m, &u.shape)?, ball_radius(m, &omega.shape)?);
            let form = m.polar_form().ok_or_else(|| Error::Unsupported("model has no polar form".into()))?;
            if ro > form.reach {
                return Err(Error::Domain("Omega exceeds the model".into()));
            }
            let n = 2 * opts.rings;
            let n_in = ((n as f64 * ru / ro).round() as usize).max(2);
            let n_out = (n - n_in.min(n - 2)).max(2);
            let sectors = opts.sectors.unwrap_or(n.max(32));
            let mesh = concentric_mesh(&form, ru, ro, n_in, n_out, sectors)?;
            let in_u = mesh.coords.iter().map(|c| c[0] <= ru * (1.0 + 1e-12)).collect();
            Ok((mesh, in_u))
        }
        (SurfaceRef::Chart(_), SurfaceRef::Chart(_)) => match (&u.shape, &omega.shape) {
            (Shape::Mask(mu), Shape::Mask(_)) => {
                let (_, mesh) = dirichlet_mesh(omega, 1, opts)?;
                let Layout::Grid { index, .. } = &mesh.layout else { unreachable!() };
                let mut in_u = vec![false; mesh.len()];
                for (k, idx) in index.iter().enumerate() {
                    if let Some(i) = idx {
                        in_u[*i] = mu[k];
                    }
                }
                if mu.iter().zip(index).any(|(&m, i)| m && i.is_none()) {
                    return Err(Error::Domain("U is not compactly inside Omega".into()));
                }
                Ok((mesh, in_u))
            }
            _ => Err(Error::Unsupported("chart capacity needs masks".into())),
        },
        _ => Err(Error::Unsupported("U and Omega must live on the same surface".into())),
    }
}

pub fn capacity(u: &Region, omega: &Region, opts: &SpectralOptions) -> Result<f64> {
    let (mesh, in_u) = capacity_mesh(u, omega, opts)?;
    Ok(capacity_on_mesh(&mesh, &in_u)?.value)
}

#[derive(Debug, Clone)]
pub struct GreenField {
    pub mesh: Mesh,
    pub pole: usize,
    pub values: Vec<f64>,
    /// max |(K g)_i| away from the pole's 2-node neighbourhood, relative to max g.
    pub harmonic_residual: f64,
    pub min_value: f64,
}

impl GreenField {
    pub fn nearest(&self, c: [f64; 2]) -> usize {
        nearest_node(&self.mesh.coords, matches!(self.mesh.layout, Layout::Rings { .. }), c)
    }

    pub fn value(&self, node: usize) -> f64 {
        self.values[node]
    }
}

/// Solves K g = e_pole, i.e. unit mass at the pole spread over its dual cell.
pub fn green_on_mesh(mesh: &Mesh, pole: usize) -> Result<GreenField> {
    if pole >= mesh.len() {
        return Err(Error::Domain("pole is not a mesh node".into()));
    }
    let solver = SpdSolver::new(mesh.stiffness.clone())?;
    let mut e = vec![0.0; mesh.len()];
    e[pole] = 1.0;
    let values = solver.solve(&e);
    let nb = mesh.neighbours();
    let mut near = vec![false; mesh.len()];
    near[pole] = true;
    for _ in 0..2 {
        let cur = near.clone();
        for (i, &c) in cur.iter().enumerate() {
            if c {
                for &j in &nb[i] {
                    near[j] = true;
                }
            }
        }
    }
    let kg = spmv(&mesh.stiffness, &values);
    let gmax = values.iter().cloned().fold(0.0, f64::max);
    let harmonic_residual = (0..mesh.len()).filter(|&i| !near[i]).map(|i| kg[i].abs()).fold(0.0, f64::max) / gmax;
    let min_value = values.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(GreenField { mesh: mesh.clone(), pole, values, harmonic_residual, min_value })
}

/// Green function of a region with the pole at the node nearest to the chart point `pole`.
pub fn green_field(region: &Region, pole: Point, opts: &SpectralOptions) -> Result<GreenField> {
    let (_, mesh) = dirichlet_mesh(region, 1, opts)?;
    let c = mesh_coords(region, pole)?;
    let node = nearest_node(&mesh.coords, matches!(mesh.layout, Layout::Rings { .. }), c);
    green_on_mesh(&mesh, node)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichReport {
    pub capacity: f64,
    pub cap_inv: f64,
    pub inf_boundary: f64,
    pub sup_boundary: f64,
    pub holds: bool,
    /// inf < cap^{-1} < sup by more than rounding.
    pub strict: bool,
}

/// inf_{dU} g <= cap(U, Omega)^{-1} <= sup_{dU} g on the discrete boundary of U.
pub fn capacity_green_sandwich_on_mesh(mesh: &Mesh, in_u: &[bool], pole: usize) -> Result<SandwichReport> {
    if !in_u[pole] {
        return Err(Error::Domain("pole must lie in U".into()));
    }
    let cap = capacity_on_mesh(mesh, in_u)?.value;
    let g = green_on_mesh(mesh, pole)?;
    let nb = mesh.neighbours();
    let boundary: Vec<usize> = (0..mesh.len()).filter(|&i| in_u[i] && nb[i].iter().any(|&j| !in_u[j])).collect();
    let inf = boundary.iter().map(|&i| g.values[i]).fold(f64::INFINITY, f64::min);
    let sup = boundary.iter().map(|&i| g.values[i]).fold(f64::NEG_INFINITY, f64::max);
    let ci = 1.0 / cap;
    let slack = 0.01;
    let holds = inf <= ci * (1.0 + slack) && ci <= sup * (1.0 + slack);
    let tol = 1e-9 * ci;
    Ok(SandwichReport { capacity: cap, cap_inv: ci, inf_boundary: inf, sup_boundary: sup, holds, strict: inf < ci - tol && ci < sup - tol })
}

pub fn capacity_green_sandwich(u: &Region, omega: &Region, pole: Point, opts: &SpectralOptions) -> Result<SandwichReport> {
    let (mesh, in_u) = capacity_mesh(u, omega, opts)?;
    let c = mesh_coords(omega, pole)?;
    let node = nearest_node(&mesh.coords, matches!(mesh.layout, Layout::Rings { .. }), c);
    capacity_green_sandwich_on_mesh(&mesh, &in_u, node)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityStep {
    pub r: f64,
    pub cap_inv: f64,
    /// (1/2) int_R^{R+1} (t - R) / (|B_t| - |B_R|) dt
    pub integral: f64,
    /// (1/8) |B_{R+1}|^{-1}
    pub bound: f64,
    pub holds: bool,
}

/// cap(B_R, B_{R+1})^{-1} >= (1/8) |B_{R+1}|^{-1} on a radial model.
pub fn capacity_step(model: &ModelSurface, r: f64, opts: &SpectralOptions) -> Result<CapacityStep> {
    let form = model.polar_form().ok_or_else(|| Error::Unsupported("model has no polar form".into()))?;
    let n = 2 * opts.rings;
    let n_in = ((n as f64 * r / (r + 1.0)).round() as usize).max(2);
    let mesh = concentric_mesh(&form, r, r + 1.0, n_in, (n - n_in).max(8), opts.sectors.unwrap_or(n.max(32)))?;
    let in_u: Vec<bool> = mesh.coords.iter().map(|c| c[0] <= r * (1.0 + 1e-12)).collect();
    let cap_inv = 1.0 / capacity_on_mesh(&mesh, &in_u)?.value;
    let vol = |t: f64| 2.0 * PI * integrate(|s| ((form.a)(s) * (form.b)(s)).sqrt(), 0.0, t, 8, 32);
    let vr = vol(r);
    let integral = 0.5 * integrate(|t| if t > r { (t - r) / (vol(t) - vr) } else { 0.0 }, r, r + 1.0, 8, 16);
    let bound = 0.125 / vol(r + 1.0);
    Ok(CapacityStep { r, cap_inv, integral, bound, holds: cap_inv >= bound })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarnackReport {
    pub sup_half: f64,
    pub inf_half: f64,
    /// sup / inf on B_{r/2}.
    pub harnack_ratio: f64,
    pub ball_area: f64,
    pub l2_sq: f64,
    /// sup_{B_{r/2}} u^2 |B_r| / int_{B_r} u^2.
    pub submean_stat: f64,
}

/// Measures both statistics for u(s, theta) on B_r about the polar origin.
pub fn harnack_submean_measure(form: &PolarForm, r: f64, u: &dyn Fn(f64, f64) -> f64) -> Result<HarnackReport> {
    let (ns, nt) = (64, 256);
    let mut sup = f64::NEG_INFINITY;
    let mut inf = f64::INFINITY;
    for i in 0..=ns {
        let s = 0.5 * r * i as f64 / ns as f64;
        for k in 0..nt {
            let v = u(s, 2.0 * PI * k as f64 / nt as f64);
            if !(v > 0.0) {
                return Err(Error::Domain("field must be positive".into()));
            }
            sup = sup.max(v);
            inf = inf.min(v);
        }
    }
    let dv = |s: f64| ((form.a)(s) * (form.b)(s)).sqrt();
    let mut area = 0.0;
    let mut l2 = 0.0;
    for (s, w) in crate::quadrature::gauss_legendre(48, 0.0, r) {
        for k in 0..nt {
            let v = u(s, 2.0 * PI * (k as f64 + 0.5) / nt as f64);
            if !(v > 0.0) {
                return Err(Error::Domain("field must be positive".into()));
            }
            let wt = w * dv(s) * 2.0 * PI / nt as f64;
            area += wt;
            l2 += wt * v * v;
        }
    }
    Ok(HarnackReport { sup_half: sup, inf_half: inf, harnack_ratio: sup / inf, ball_area: area, l2_sq: l2, submean_stat: sup * sup * area / l2 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarnackFamily {
    pub names: Vec<String>,
    pub ratios: Vec<f64>,
    /// Largest ratio over the family: the measured common constant.
    pub common_bound: f64,
}

/// Positive harmonic test family on the Euclidean unit disc.
pub fn harnack_family() -> Result<HarnackFamily> {
    let form = ModelSurface::euclidean().polar_form().expect("plane has a polar form");
    let fam: Vec<(&str, Box<dyn Fn(f64, f64) -> f64>)> = vec![
        ("re_z_plus_1.5", Box::new(|s: f64, t: f64| s * t.cos() + 1.5)),
        ("re_z_plus_2", Box::new(|s: f64, t: f64| s * t.cos() + 2.0)),
        ("re_z2_plus_1.5", Box::new(|s: f64, t: f64| s * s * (2.0 * t).cos() + 1.5)),
        ("exp_x_cos_y_plus_3", Box::new(|s: f64, t: f64| (s * t.cos()).exp() * (s * t.sin()).cos() + 3.0)),
        ("one", Box::new(|_: f64, _: f64| 1.0)),
    ];
    let mut names = Vec::new();
    let mut ratios = Vec::new();
    for (n, f) in &fam {
        names.push(n.to_string());
        ratios.push(harnack_submean_measure(&form, 1.0, f.as_ref())?.harnack_ratio);
    }
    let common_bound = ratios.iter().cloned().fold(0.0, f64::max);
    Ok(HarnackFamily { names, ratios, common_bound })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreenBoundAudit {
    pub nu: f64,
    pub i_nu: f64,
    /// sup of g(o, x) d(o, x)^{nu - 2} over sampled nodes.
    pub green_envelope: f64,
    /// envelope / I_nu^{-nu}: constant of the derivation-consistent form.
    pub green_const_derived: f64,
    /// envelope / I_nu^{nu}: constant of the printed form.
    pub green_const_printed: f64,
    /// sup_t p(t, o, o) t^{nu / 2}.
    pub heat_envelope: Option<f64>,
    pub heat_const_derived: Option<f64>,
    pub heat_const_printed: Option<f64>,
    pub finite: bool,
}

/// sup (t, p) of p t^{nu/2}.
pub fn heat_envelope(trace: &[(f64, f64)], nu: f64) -> f64 {
    trace.iter().map(|&(t, p)| p * t.powf(0.5 * nu)).fold(0.0, f64::max)
}

pub fn green_upper_bound_audit(green: &GreenField, distance: &dyn Fn(usize) -> f64, heat_trace: Option<&[(f64, f64)]>, nu: f64, i_nu: f64) -> Result<GreenBoundAudit> {
    if !(nu > 2.0) {
        return Err(Error::Precondition("the Green bound needs nu > 2".into()));
    }
    if !(i_nu > 0.0) {
        return Err(Error::Precondition("the Green bound needs I_nu > 0".into()));
    }
    let env = (0..green.values.len())
        .filter(|&i| i != green.pole)
        .map(|i| green.values[i] * distance(i).powf(nu - 2.0))
        .fold(0.0, f64::max);
    let heat = heat_trace.map(|t| heat_envelope(t, nu));
    let finite = env.is_finite() && heat.is_none_or(|h| h.is_finite());
    Ok(GreenBoundAudit {
        nu,
        i_nu,
        green_envelope: env,
        green_const_derived: env * i_nu.powf(nu),
        green_const_printed: env / i_nu.powf(nu),
        heat_envelope: heat,
        heat_const_derived: heat.map(|h| h * i_nu.powf(nu)),
        heat_const_printed: heat.map(|h| h / i_nu.powf(nu)),
        finite,
    })
}
