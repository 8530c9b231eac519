//! First eigenvalues, isoperimetric sweeps and the inequality audit.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{smallest_eigenpair, EigenOptions, SparseBuilder};
use crate::mesh::{uniform, End, GridSpec, Mesh, RingSpec, Tensor};
use crate::quadrature::{integrate, smoothstep, smoothstep_deriv};
use crate::surface::{GridChart, ModelKind, ModelSurface, PolarForm, Region, Shape, SurfaceRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    Dirichlet,
    MeanZeroClosed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralReport {
    /// Best estimate (the extrapolated value).
    pub lambda1: f64,
    /// (h, estimate), coarse first.
    pub resolutions: Vec<(f64, f64)>,
    pub extrapolated: f64,
    pub mode: Mode,
}

impl SpectralReport {
    /// |extrapolated - finest| <= |finest - coarse|.
    pub fn bracket_ok(&self) -> bool {
        let n = self.resolutions.len();
        if n < 2 {
            return true;
        }
        let (c, f) = (self.resolutions[n - 2].1, self.resolutions[n - 1].1);
        (self.extrapolated - f).abs() <= (f - c).abs() * (1.0 + 1e-12) + 1e-15
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralOptions {
    /// Radial intervals on the coarse ring mesh.
    pub rings: usize,
    /// Angular sectors (defaults to max(16, rings / 2)).
    pub sectors: Option<usize>,
    /// Grid spacing of the coarse Cartesian mesh.
    pub h: f64,
    pub tol: f64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self { rings: 64, sectors: None, h: 1.0 / 32.0, tol: 1e-8 }
    }
}

fn sectors(opts: &SpectralOptions, rings: usize) -> usize {
    opts.sectors.unwrap_or((rings / 2).max(16))
}

/// Smallest eigenvalue of the mesh (mean-zero when the mesh is closed).
pub fn mesh_lambda1(mesh: &Mesh, tol: f64) -> Result<f64> {
    let mut opts = EigenOptions { tol, ..Default::default() };
    if mesh.closed {
        opts.shift = 1.0 / mesh.area();
        opts.deflate = vec![vec![1.0; mesh.len()]];
    }
    Ok(smallest_eigenpair(&mesh.stiffness, &mesh.mass, &opts)?.value)
}

fn richardson(levels: Vec<(f64, Mesh)>, mode: Mode, tol: f64) -> Result<SpectralReport> {
    let mut res = Vec::new();
    for (h, mesh) in &levels {
        res.push((*h, mesh_lambda1(mesh, tol)?));
    }
    let n = res.len();
    let ext = if n >= 2 { (4.0 * res[n - 1].1 - res[n - 2].1) / 3.0 } else { res[0].1 };
    Ok(SpectralReport { lambda1: ext, resolutions: res, extrapolated: ext, mode })
}

/// Ring mesh of the geodesic ball of radius `radius` in a polar form.
pub fn polar_ball_mesh(form: &PolarForm, radius: f64, rings: usize, sectors: usize) -> Result<Mesh> {
    if !(radius > 0.0) || radius > form.reach * (1.0 + 1e-12) {
        return Err(Error::Domain(format!("ball radius {radius} outside (0, {}]", form.reach)));
    }
    let closes = form.closes && (radius - form.reach).abs() <= 1e-12 * form.reach;
    Mesh::rings(&RingSpec {
        a: &*form.a,
        b: &*form.b,
        s: uniform(0.0, radius, rings),
        m: sectors,
        start: End::Pole,
        end: if closes { End::Pole } else { End::Dirichlet },
    })
}

/// Cartesian Dirichlet mesh: nodes strictly inside `inside` are unknowns.
pub fn cartesian_mesh(
    metric: &(dyn Fn(f64, f64) -> Tensor + Sync),
    inside: &(dyn Fn(f64, f64) -> bool + Sync),
    lo: [f64; 2],
    hi: [f64; 2],
    h: f64,
) -> Result<Mesh> {
    let nx = ((hi[0] - lo[0]) / h).round() as usize + 1;
    let ny = ((hi[1] - lo[1]) / h).round() as usize + 1;
    let active = |i: usize, j: usize| {
        let (x, y) = (lo[0] + h * i as f64, lo[1] + h * j as f64);
        i > 0 && j > 0 && i + 1 < nx && j + 1 < ny && inside(x, y)
    };
    Mesh::grid(&GridSpec { metric, x0: lo[0], y0: lo[1], h, nx, ny, active: &active, periodic: false })
}

/// Mesh of a mask region on its chart (level 0) or the every-other-node chart (level 1).
fn chart_mask_mesh(chart: &GridChart, mask: &[bool], coarse: bool) -> Result<(f64, Mesh)> {
    let (c, m): (GridChart, Vec<bool>) = if coarse {
        let cc = chart.coarsen().ok_or(Error::Resolution { nodes: chart.nx, budget: 16 })?;
        let mm = (0..cc.nx * cc.ny).map(|k| mask[chart.idx(2 * (k % cc.nx), 2 * (k / cc.nx))]).collect();
        (cc, mm)
    } else {
        (chart.clone(), mask.to_vec())
    };
    let metric = |x: f64, y: f64| c.metric_at([x, y]).unwrap_or([1.0, 0.0, 1.0]);
    let (nx, ny) = (c.nx, c.ny);
    let active = |i: usize, j: usize| i > 0 && j > 0 && i + 1 < nx && j + 1 < ny && m[j * nx + i];
    let mesh = Mesh::grid(&GridSpec { metric: &metric, x0: c.x_range.0, y0: c.y_range.0, h: c.h, nx, ny, active: &active, periodic: false })?;
    Ok((c.h, mesh))
}

/// Polar form and geodesic radius of a radially symmetric region.
fn polar_of(model: &ModelSurface, shape: &Shape) -> Result<(PolarForm, f64)> {
    let form = model.polar_form().ok_or_else(|| Error::Unsupported(format!("{} has no polar form", model.name())))?;
    let origin = |c: &[f64; 2]| c[0].abs() < 1e-14 && c[1].abs() < 1e-14;
    let radius = match (&model.kind, shape) {
        (ModelKind::EuclideanPlane, Shape::GeodesicBall { radius, .. } | Shape::ChartDisc { radius, .. }) => *radius,
        (ModelKind::HyperbolicDisc, Shape::GeodesicBall { radius, .. }) => *radius,
        (ModelKind::HyperbolicDisc, Shape::ChartDisc { center, radius }) if origin(center) => 2.0 * radius.atanh(),
        (ModelKind::Sphere { .. }, Shape::GeodesicBall { radius, .. }) => *radius,
        (ModelKind::Revolution(r), Shape::GeodesicBall { center, radius }) if r.caps.0 && (center[0] - r.s_range.0).abs() < 1e-12 => *radius,
        (ModelKind::Revolution(r), Shape::Band { level }) if r.caps.0 => level - r.s_range.0,
        (ModelKind::ConformalDisc(_), Shape::ChartDisc { center, radius }) if origin(center) => *radius,
        _ => return Err(Error::Unsupported("region is not a ball about the polar origin".into())),
    };
    Ok((form, radius))
}

/// Coarse (level 0) or fine (level 1) Dirichlet mesh of a region.
pub fn dirichlet_mesh(region: &Region, level: usize, opts: &SpectralOptions) -> Result<(f64, Mesh)> {
    match (&region.parent, &region.shape) {
        (SurfaceRef::Chart(c), Shape::Mask(m)) => chart_mask_mesh(c, m, level == 0),
        (SurfaceRef::Model(model), shape) => {
            let (form, radius) = polar_of(model, shape)?;
            let rings = opts.rings << level;
            Ok((radius / rings as f64, polar_ball_mesh(&form, radius, rings, sectors(opts, rings))?))
        }
        _ => Err(Error::Unsupported("region representation".into())),
    }
}

/// Dirichlet lambda_1 on two resolutions with Richardson extrapolation.
pub fn lambda1_dirichlet(region: &Region, opts: &SpectralOptions) -> Result<SpectralReport> {
    let levels = vec![dirichlet_mesh(region, 0, opts)?, dirichlet_mesh(region, 1, opts)?];
    richardson(levels, Mode::Dirichlet, opts.tol)
}

/// Dirichlet lambda_1 of {inside} for a metric in closed form, on spacings h and h/2.
pub fn lambda1_cartesian(
    metric: &(dyn Fn(f64, f64) -> Tensor + Sync),
    inside: &(dyn Fn(f64, f64) -> bool + Sync),
    lo: [f64; 2],
    hi: [f64; 2],
    h: f64,
    tol: f64,
) -> Result<SpectralReport> {
    let levels = vec![(h, cartesian_mesh(metric, inside, lo, hi, h)?), (0.5 * h, cartesian_mesh(metric, inside, lo, hi, 0.5 * h)?)];
    richardson(levels, Mode::Dirichlet, tol)
}

/// Closed mesh of a compact model at the given level.
pub fn closed_mesh(model: &ModelSurface, level: usize, opts: &SpectralOptions) -> Result<(f64, Mesh)> {
    let rings = opts.rings << level;
    match &model.kind {
        ModelKind::Sphere { .. } => {
            let form = model.polar_form().expect("sphere has a polar form");
            Ok((form.reach / rings as f64, polar_ball_mesh(&form, form.reach, rings, sectors(opts, rings))?))
        }
        ModelKind::Revolution(r) if r.caps.0 && r.caps.1 => {
            let form = model.polar_form().expect("capped revolution has a polar form");
            Ok((form.reach / rings as f64, polar_ball_mesh(&form, form.reach, rings, sectors(opts, rings))?))
        }
        ModelKind::Revolution(r) if r.periodic => {
            let p = r.profile.clone();
            let b = move |s: f64| p(s).powi(2);
            let (s0, s1) = r.s_range;
            let mesh = Mesh::rings(&RingSpec {
                a: &|_| 1.0,
                b: &b,
                s: uniform(s0, s1, rings),
                m: opts.sectors.map(|m| m << level).unwrap_or(rings),
                start: End::Periodic,
                end: End::Periodic,
            })?;
            Ok(((s1 - s0) / rings as f64, mesh))
        }
        _ => Err(Error::Precondition(format!("{} is not a compact model", model.name()))),
    }
}

/// First nonzero eigenvalue of a compact model.
pub fn lambda1_closed_meanzero(model: &ModelSurface, opts: &SpectralOptions) -> Result<SpectralReport> {
    let levels = vec![closed_mesh(model, 0, opts)?, closed_mesh(model, 1, opts)?];
    richardson(levels, Mode::MeanZeroClosed, opts.tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DbarIdentity {
    /// inf 4 int |df/dz|^2 / int |f|^2 over complex fields.
    pub ratio_inf: f64,
    pub lambda1: f64,
    /// |ratio_inf - lambda1| / lambda1.
    pub gap: f64,
}

/// Minimizes the complex Rayleigh quotient on the mesh and compares with lambda_1.
///
/// For f = a + ib, 4|f_z|^2 = |grad a|^2 + |grad b|^2 + 2 da^db / dA, so the
/// quadratic form is [[K, W], [W^T, K]] with W the discrete wedge pairing.
pub fn dbar_identity(mesh: &Mesh, tol: f64) -> Result<DbarIdentity> {
    let n = mesh.len();
    let w = mesh.wedge_matrix();
    let mut b = SparseBuilder::new(2 * n);
    for (j, col) in mesh.stiffness.col_iter().enumerate() {
        for (&i, &v) in col.row_indices().iter().zip(col.values()) {
            b.push(i, j, v);
            b.push(n + i, n + j, v);
        }
    }
    for (j, col) in w.col_iter().enumerate() {
        for (&i, &v) in col.row_indices().iter().zip(col.values()) {
            // symmetric part of a^T W b placed in both off-diagonal blocks
            b.push(i, n + j, v);
            b.push(n + j, i, v);
        }
    }
    let big = b.build();
    let mass: Vec<f64> = mesh.mass.iter().chain(mesh.mass.iter()).cloned().collect();
    let mut opts = EigenOptions { tol, ..Default::default() };
    if mesh.closed {
        opts.shift = 1.0 / mesh.area();
        let mut re = vec![0.0; 2 * n];
        let mut im = vec![0.0; 2 * n];
        for k in 0..n {
            re[k] = 1.0;
            im[n + k] = 1.0;
        }
        opts.deflate = vec![re, im];
    }
    let ratio_inf = smallest_eigenpair(&big, &mass, &opts)?.value;
    let lambda1 = mesh_lambda1(mesh, tol)?;
    Ok(DbarIdentity { ratio_inf, lambda1, gap: (ratio_inf - lambda1).abs() / lambda1.abs() })
}

/// The identity check on the fine Dirichlet mesh of a region.
pub fn lambda1_dbar_identity_check(region: &Region, opts: &SpectralOptions) -> Result<DbarIdentity> {
    dbar_identity(&dirichlet_mesh(region, 1, opts)?.1, opts.tol)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub r: f64,
    pub area: f64,
    pub perimeter: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsoperimetricSweep {
    /// f64::INFINITY for the Cheeger constant.
    pub nu: f64,
    pub rows: Vec<SweepRow>,
    pub inf_value: f64,
    pub compact_mode: bool,
    /// The candidate family is not known to contain minimizers.
    pub upper_estimate: bool,
}

impl IsoperimetricSweep {
    pub fn radii(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.r).collect()
    }

    pub fn ratios(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.ratio).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("r,area,perimeter,ratio\n");
        for r in &self.rows {
            s.push_str(&format!("{:.16e},{:.16e},{:.16e},{:.16e}\n", r.r, r.area, r.perimeter, r.ratio));
        }
        s
    }
}

pub fn isoperimetric_ratio(perimeter: f64, area: f64, nu: f64) -> f64 {
    if nu.is_infinite() {
        perimeter / area
    } else {
        perimeter / area.powf(1.0 - 1.0 / nu)
    }
}

/// Sweep of |dB_r| / |B_r|^{1-1/nu} over r = r_max k / samples, k = 1..samples.
pub fn isoperimetric_sweep(model: &ModelSurface, nu: f64, r_max: f64, samples: usize, compact_mode: bool) -> Result<IsoperimetricSweep> {
    if !(nu > 1.0) {
        return Err(Error::Domain("nu must exceed 1".into()));
    }
    if samples == 0 || !(r_max > 0.0) {
        return Err(Error::Domain("need r_max > 0 and at least one sample".into()));
    }
    let total = model.exact_data().area;
    if model.is_compact() && !compact_mode {
        let inj = model.injectivity_radius([0.0, 0.0]).unwrap_or(f64::INFINITY);
        if r_max > inj {
            return Err(Error::Domain(format!("r_max {r_max} exceeds the injectivity radius {inj}; use compact mode")));
        }
    }
    if compact_mode && total.is_none() {
        return Err(Error::Precondition("compact mode needs a compact model".into()));
    }
    let parent = SurfaceRef::Model(std::sync::Arc::new(model.clone()));
    let (center, upper) = match &model.kind {
        ModelKind::Revolution(r) => ([r.s_range.0, 0.0], true),
        ModelKind::ConformalDisc(_) => ([0.0, 0.0], true),
        _ => ([0.0, 0.0], false),
    };
    let mut rows = Vec::with_capacity(samples);
    for k in 1..=samples {
        let r = r_max * k as f64 / samples as f64;
        let shape = match &model.kind {
            ModelKind::Revolution(rv) if !rv.caps.0 => Shape::Band { level: rv.s_range.0 + r },
            ModelKind::ConformalDisc(c) => Shape::ChartDisc { center, radius: crate::surface::conformal_radius_for(c, r)? },
            _ => Shape::GeodesicBall { center, radius: r },
        };
        let region = Region::new(parent.clone(), shape)?;
        let (area, perimeter) = crate::surface::measure(&region)?;
        let a_eff = if compact_mode { area.min(total.unwrap() - area) } else { area };
        if a_eff <= 1e-12 * area.max(1.0) {
            // a cap filling the whole surface does not split it
            continue;
        }
        rows.push(SweepRow { r, area, perimeter, ratio: isoperimetric_ratio(perimeter, a_eff, nu) });
    }
    if rows.is_empty() {
        return Err(Error::Domain("no admissible radius in the sweep".into()));
    }
    let inf_value = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    Ok(IsoperimetricSweep { nu, rows, inf_value, compact_mode, upper_estimate: upper })
}

/// Radial bump 1 - smoothstep(s / scale) on a polar form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BumpNorms {
    pub scale: f64,
    pub grad_l2: f64,
    pub l1: f64,
    pub l2: f64,
    /// ||phi||_{2 nu / (nu - 2)}
    pub sobolev: f64,
}

pub fn bump_norms(form: &PolarForm, scale: f64, nu: f64) -> BumpNorms {
    let phi = |s: f64| 1.0 - smoothstep(s / scale);
    let dphi = |s: f64| -smoothstep_deriv(s / scale) / scale;
    let dv = |s: f64| 2.0 * PI * ((form.a)(s) * (form.b)(s)).sqrt();
    let int = |f: &dyn Fn(f64) -> f64| integrate(|s| f(s) * dv(s), 0.0, scale, 10, 32);
    let p = 2.0 * nu / (nu - 2.0);
    BumpNorms {
        scale,
        grad_l2: int(&|s| dphi(s).powi(2) / (form.a)(s)).sqrt(),
        l1: int(&|s| phi(s).abs()),
        l2: int(&|s| phi(s).powi(2)).sqrt(),
        sobolev: int(&|s| phi(s).abs().powf(p)).powf(1.0 / p),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditEntry {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// lhs / rhs; the inequality asks ratio >= threshold.
    pub ratio: f64,
    pub threshold: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub entries: Vec<AuditEntry>,
    pub all_hold: bool,
}

/// Inputs of the inequality audit; absent constants skip the matching check.
#[derive(Debug, Clone, Default)]
pub struct AuditInput {
    pub lambda1: Option<f64>,
    pub i_inf: Option<f64>,
    pub i_2: Option<f64>,
    pub area: Option<f64>,
    /// (nu, I_nu) for the Sobolev and Nash checks.
    pub i_nu: Option<(f64, f64)>,
    pub bumps: Vec<BumpNorms>,
    /// Relative tolerance granted to each inequality.
    pub slack: f64,
    /// Lower threshold for lambda_1 |M| / I_2^2.
    pub li_threshold: f64,
}

pub const LI_THRESHOLD: f64 = 0.3;

pub fn inequality_audit(input: &AuditInput) -> AuditReport {
    let mut entries = Vec::new();
    let mut push = |name: String, lhs: f64, rhs: f64, threshold: f64| {
        let ratio = lhs / rhs;
        entries.push(AuditEntry { name, lhs, rhs, ratio, threshold, holds: ratio >= threshold * (1.0 - input.slack) });
    };
    if let (Some(l), Some(i)) = (input.lambda1, input.i_inf) {
        push("cheeger".into(), l, 0.25 * i * i, 1.0);
    }
    if let (Some(l), Some(i), Some(a)) = (input.lambda1, input.i_2, input.area) {
        let th = if input.li_threshold > 0.0 { input.li_threshold } else { LI_THRESHOLD };
        push("li".into(), l * a / (i * i), 1.0, th);
    }
    if let Some((nu, i)) = input.i_nu {
        if nu > 2.0 {
            let c = (nu - 2.0) / (2.0 * (nu - 1.0)) * i;
            for b in &input.bumps {
                push(format!("sobolev_l2[scale={:.6e}]", b.scale), b.grad_l2, c * b.sobolev, 1.0);
                let nash_lhs = b.l2.powf(2.0 + 4.0 / nu);
                let nash_rhs = c.powi(-2) * b.grad_l2 * b.grad_l2 * b.l1.powf(4.0 / nu);
                push(format!("nash[scale={:.6e}]", b.scale), nash_rhs, nash_lhs, 1.0);
            }
        }
    }
    let all_hold = entries.iter().all(|e| e.holds);
    AuditReport { entries, all_hold }
}
