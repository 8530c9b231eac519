//! Convergence experiments for Bergman kernels of exhaustions and perturbed metrics.
//!
//! Kernels are compared as forms: a planar kernel K*(w) dw∧dw̄ is divided by the
//! area form of a fixed reference metric before differences are taken.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::bergman::{build_bergman_space, kernel_diag, BergmanSpace, PlanarDomain};
use crate::error::{Error, Result};
use crate::isothermal::{principal, solve_isothermal, AffineNormalization, IsothermalOptions, IsothermalPatch};
use crate::linalg::linear_fit;
use crate::quadrature::{smoothstep, CutoffProfile};
use crate::spectral::{isoperimetric_sweep, lambda1_dirichlet, SpectralOptions};
use crate::surface::{conformal_radius_for, GridChart, ModelKind, ModelSurface, Point, Region, Shape, SurfaceRef};
use crate::mesh::Tensor;

pub type MetricFn = Arc<dyn Fn(f64, f64) -> Tensor + Send + Sync>;

/// Largest final difference accepted by the verdict.
pub const CONVERGED_BELOW: f64 = 1e-2;
/// Differences at or below this level count as exact zeros.
pub const ZERO_LEVEL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Converged,
    NotConverged,
    Inconclusive,
}

/// Converged: final value below 1e-2 and the last three values strictly
/// decreasing (or all numerically zero). Fewer than `min_points` values is inconclusive.
pub fn verdict(diffs: &[f64], min_points: usize) -> Verdict {
    if diffs.len() < min_points.max(3) {
        return Verdict::Inconclusive;
    }
    let tail = &diffs[diffs.len() - 3..];
    let last = tail[2];
    let decreasing = tail.windows(2).all(|w| w[1] < w[0]);
    let zero = tail.iter().all(|d| d.abs() <= ZERO_LEVEL);
    if last < CONVERGED_BELOW && (decreasing || zero) {
        Verdict::Converged
    } else {
        Verdict::NotConverged
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    /// Exhaustion radius, or the sequence index j.
    #[serde(rename = "R")]
    pub r: f64,
    pub difference: f64,
    pub bound_lambda1: Option<f64>,
    pub bound_cheeger: Option<f64>,
    pub bound_li: Option<f64>,
    pub bound_log: Option<f64>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, f64>,
}

impl ConvergenceRow {
    fn new(r: f64, difference: f64) -> Self {
        Self { r, difference, bound_lambda1: None, bound_cheeger: None, bound_li: None, bound_log: None, extra: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub experiment: String,
    pub params: BTreeMap<String, serde_json::Value>,
    pub rows: Vec<ConvergenceRow>,
    /// Slope of log(difference) against R (or log j for sequences).
    pub fitted_rate: Option<f64>,
    pub verdict: Verdict,
    /// Asserted inequalities; any false entry is an audit violation.
    pub checks: BTreeMap<String, bool>,
    /// Informational properties that are not asserted.
    pub flags: BTreeMap<String, bool>,
    pub notes: Vec<String>,
}

impl ConvergenceReport {
    pub fn differences(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.difference).collect()
    }

    pub fn all_checks_hold(&self) -> bool {
        self.checks.values().all(|v| *v)
    }

    /// Rows as CSV; absent values are empty fields. Extra columns are taken from the first row.
    pub fn to_csv(&self) -> String {
        let extra: Vec<String> = self.rows.first().map(|r| r.extra.keys().cloned().collect()).unwrap_or_default();
        let mut s = String::from("R,difference,bound_lambda1,bound_cheeger,bound_li,bound_log");
        for k in &extra {
            s.push(',');
            s.push_str(k);
        }
        s.push('\n');
        let f = |v: f64| format!("{v:.16e}");
        let o = |v: Option<f64>| v.map(f).unwrap_or_default();
        for r in &self.rows {
            s.push_str(&[f(r.r), f(r.difference), o(r.bound_lambda1), o(r.bound_cheeger), o(r.bound_li), o(r.bound_log)].join(","));
            for k in &extra {
                s.push(',');
                s.push_str(&o(r.extra.get(k).copied()));
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOptions {
    pub basis_size: usize,
    /// Chart spacing for isothermal solves.
    pub h: f64,
    pub spectral: SpectralOptions,
    pub sweep_r_max: f64,
    pub sweep_samples: usize,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self { basis_size: 24, h: 1.0 / 64.0, spectral: SpectralOptions::default(), sweep_r_max: 10.0, sweep_samples: 200 }
    }
}

fn fit_slope(x: &[f64], d: &[f64]) -> Option<f64> {
    if x.len() < 2 || d.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let y: Vec<f64> = d.iter().map(|v| v.ln()).collect();
    Some(linear_fit(x, &y).1)
}

fn param<T: Serialize>(m: &mut BTreeMap<String, serde_json::Value>, k: &str, v: T) {
    m.insert(k.into(), serde_json::to_value(v).unwrap_or(serde_json::Value::Null));
}

/// Prop-5.3 shape a^{-1/2}/R + a^{-1}/R^2 with a a lower bound for lambda_1.
pub fn spectral_envelope(lambda1: f64, r: f64) -> Option<f64> {
    (lambda1 > 0.0 && lambda1.is_finite()).then(|| lambda1.powf(-0.5) / r + 1.0 / (lambda1 * r * r))
}

/// Cheeger form I^{-1}/R + I^{-2}/R^2.
pub fn cheeger_envelope(i_inf: f64, r: f64) -> Option<f64> {
    (i_inf > 0.0 && i_inf.is_finite()).then(|| 1.0 / (i_inf * r) + 1.0 / (i_inf * i_inf * r * r))
}

/// Compact form sqrt|M| / (I_2 R) + |M| / (I_2^2 R^2).
pub fn li_envelope(i_2: f64, area: f64, r: f64) -> Option<f64> {
    (i_2 > 0.0 && area > 0.0 && area.is_finite()).then(|| area.sqrt() / (i_2 * r) + area / (i_2 * i_2 * r * r))
}

/// Planar description of a radially symmetric noncompact model around the origin.
struct Planar {
    /// Chart radius of the model (infinite for the plane).
    radius: f64,
    ball: Box<dyn Fn(f64) -> Result<f64> + Send + Sync>,
    lambda: Box<dyn Fn(Complex64) -> f64 + Send + Sync>,
}

fn planar_model(model: &ModelSurface) -> Result<Planar> {
    match &model.kind {
        ModelKind::HyperbolicDisc => Ok(Planar {
            radius: 1.0,
            ball: Box::new(|r| Ok((0.5 * r).tanh())),
            lambda: Box::new(|z| 4.0 / (1.0 - z.norm_sqr()).powi(2)),
        }),
        ModelKind::EuclideanPlane => Ok(Planar { radius: f64::INFINITY, ball: Box::new(Ok), lambda: Box::new(|_| 1.0) }),
        ModelKind::ConformalDisc(c) if c.radial => {
            let (c1, c2) = (c.clone(), c.clone());
            Ok(Planar {
                radius: c.radius,
                ball: Box::new(move |r| match conformal_radius_for(&c1, r) {
                    Err(Error::Domain(_)) => Ok(c1.radius),
                    other => other,
                }),
                lambda: Box::new(move |z| (c2.lambda)(z.re, z.im)),
            })
        }
        _ => Err(Error::Unsupported(format!("{} has no planar geodesic balls", model.name()))),
    }
}

/// Evaluation set: the center, plus 8 points on the geodesic circle of radius e_radius.
fn evaluation_set(p: &Planar, e_radius: f64) -> Result<Vec<Complex64>> {
    let mut e = vec![Complex64::new(0.0, 0.0)];
    if e_radius > 0.0 {
        let rho = (p.ball)(e_radius)?;
        e.extend((0..8).map(|k| Complex64::from_polar(rho, 2.0 * PI * k as f64 / 8.0)));
    }
    Ok(e)
}

fn check_r_list(r_list: &[f64], e_radius: f64) -> Result<()> {
    if r_list.is_empty() || r_list.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Precondition("R list must be nonempty and increasing".into()));
    }
    let need = 2.0 * (2.0 * e_radius + 1.0);
    if !(r_list[0] > need) {
        return Err(Error::Precondition(format!("R = {} must exceed 2 (diam E + 1) = {need}", r_list[0])));
    }
    Ok(())
}

/// sup over E of normalized |K_M - K_{B_R}| together with sup of normalized K_{B_R}.
fn exhaustion_cells(model: &ModelSurface, e_radius: f64, r_list: &[f64], basis: usize) -> Result<(Vec<(f64, f64)>, Vec<Complex64>)> {
    let p = planar_model(model)?;
    let e = evaluation_set(&p, e_radius)?;
    let norm = |space: &BergmanSpace, z: Complex64| -> Result<f64> { Ok(kernel_diag(space, z)?.raw.re / (p.lambda)(z)) };
    let limit: Option<BergmanSpace> =
        if p.radius.is_finite() { Some(build_bergman_space(&PlanarDomain::disc(Complex64::new(0.0, 0.0), p.radius)?, basis)?) } else { None };
    let cells: Vec<Result<(f64, f64)>> = r_list
        .par_iter()
        .map(|&r| {
            let rho = (p.ball)(r)?;
            let space = build_bergman_space(&PlanarDomain::disc(Complex64::new(0.0, 0.0), rho)?, basis)?;
            let (mut diff, mut sup_ball): (f64, f64) = (0.0, 0.0);
            for &z in &e {
                let kb = norm(&space, z)?;
                let km = match &limit {
                    Some(l) => norm(l, z)?,
                    // the plane carries no square-integrable holomorphic differentials
                    None => 0.0,
                };
                diff = diff.max((km - kb).abs());
                sup_ball = sup_ball.max(kb);
            }
            Ok((diff, sup_ball))
        })
        .collect();
    Ok((cells.into_iter().collect::<Result<Vec<_>>>()?, e))
}

fn cheeger_constant(model: &ModelSurface, opts: &ExperimentOptions) -> Option<f64> {
    match model.exact_data().cheeger {
        Some(c) => Some(c),
        None => isoperimetric_sweep(model, f64::INFINITY, opts.sweep_r_max, opts.sweep_samples, false).ok().map(|s| s.inf_value),
    }
}

/// Exhaustion of a noncompact radial model by geodesic balls about the origin.
pub fn exhaustion_experiment(model: &ModelSurface, center: Point, e_radius: f64, r_list: &[f64], opts: &ExperimentOptions) -> Result<ConvergenceReport> {
    if model.is_compact() {
        return Err(Error::Precondition("exhaustion needs a noncompact model".into()));
    }
    if center[0] != 0.0 || center[1] != 0.0 {
        return Err(Error::Unsupported("exhaustion balls are centered at the chart origin".into()));
    }
    if !(e_radius >= 0.0) {
        return Err(Error::Precondition("E radius must be nonnegative".into()));
    }
    check_r_list(r_list, e_radius)?;
    let (cells, e) = exhaustion_cells(model, e_radius, r_list, opts.basis_size)?;
    let exact = model.exact_data();
    let lambda1 = exact.lambda1;
    let i_inf = cheeger_constant(model, opts);
    let mut rows = Vec::with_capacity(r_list.len());
    for (&r, &(diff, sup_ball)) in r_list.iter().zip(&cells) {
        let mut row = ConvergenceRow::new(r, diff);
        row.bound_lambda1 = lambda1.and_then(|l| spectral_envelope(l, r));
        row.bound_cheeger = i_inf.and_then(|i| cheeger_envelope(i, r));
        row.bound_li = exact.area.and_then(|a| li_envelope(i_inf.unwrap_or(0.0), a, r));
        row.extra.insert("ball_kernel".into(), sup_ball);
        rows.push(row);
    }
    let diffs: Vec<f64> = rows.iter().map(|r| r.difference).collect();
    let mut checks = BTreeMap::new();
    let bounded: Vec<bool> = rows.iter().filter_map(|r| r.bound_lambda1.map(|b| r.difference <= b)).collect();
    if !bounded.is_empty() {
        checks.insert("bound_dominance".into(), bounded.iter().all(|b| *b));
    }
    checks.insert("domain_monotonicity".into(), cells.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-12)));
    let mut notes = Vec::new();
    if bounded.is_empty() {
        notes.push("bound inapplicable: no positive lambda_1 for this model; verdict from measurements alone".into());
    }
    let mut params = BTreeMap::new();
    param(&mut params, "model", model.name());
    param(&mut params, "center", center);
    param(&mut params, "e_radius", e_radius);
    param(&mut params, "e_points", e.len());
    param(&mut params, "R_values", r_list);
    param(&mut params, "basis_size", opts.basis_size);
    param(&mut params, "lambda1", lambda1);
    param(&mut params, "cheeger", i_inf);
    param(&mut params, "cutoff_sup_deriv", CutoffProfile.sup_deriv());
    Ok(ConvergenceReport {
        experiment: "exhaustion".into(),
        params,
        fitted_rate: fit_slope(r_list, &diffs),
        verdict: verdict(&diffs, 3),
        rows,
        checks,
        flags: BTreeMap::new(),
        notes,
    })
}

/// C_1 = max d |log R| over the first half of the data, and whether the second
/// half stays below C_1 / |log R|.
pub fn fit_log_envelope(r: &[f64], d: &[f64]) -> Result<(f64, bool)> {
    if r.len() != d.len() || r.len() < 2 {
        return Err(Error::Fit("log envelope needs at least two points".into()));
    }
    if r.iter().any(|v| !(*v > 1.0)) {
        return Err(Error::Fit("log envelope needs R > 1".into()));
    }
    let half = r.len() / 2;
    let c1 = r[..half].iter().zip(&d[..half]).map(|(r, d)| d * r.ln()).fold(0.0, f64::max);
    let ok = r[half..].iter().zip(&d[half..]).all(|(r, d)| *d <= c1 / r.ln() * (1.0 + 1e-12));
    Ok((c1, ok))
}

/// Exhaustion overlaid with a logarithmic envelope C_1 / |log R|.
pub fn log_rate_experiment(model: &ModelSurface, nu: f64, center: Point, e_radius: f64, r_list: &[f64], opts: &ExperimentOptions) -> Result<ConvergenceReport> {
    if !(nu > 2.0 && nu.is_finite()) {
        return Err(Error::Precondition("nu must lie in (2, inf)".into()));
    }
    let sweep = isoperimetric_sweep(model, nu, opts.sweep_r_max, opts.sweep_samples, false)?;
    if !(sweep.inf_value > 0.0) {
        return Err(Error::Precondition("I_nu must be positive".into()));
    }
    let mut rep = exhaustion_experiment(model, center, e_radius, r_list, opts)?;
    rep.experiment = "log_rate".into();
    param(&mut rep.params, "nu", nu);
    param(&mut rep.params, "i_nu", sweep.inf_value);
    let diffs = rep.differences();
    rep.verdict = verdict(&diffs, 4);
    if r_list.len() >= 4 {
        let (c1, ok) = fit_log_envelope(r_list, &diffs)?;
        for row in &mut rep.rows {
            row.bound_log = Some(c1 / row.r.ln());
        }
        param(&mut rep.params, "C1", c1);
        rep.checks.insert("log_envelope_validated".into(), ok);
    } else {
        rep.notes.push("fewer than 4 radii: envelope not fitted".into());
    }
    Ok(rep)
}

/// Named metric sequences for the local stability experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationFamily {
    /// (1 + 2/j) dx^2 + dy^2.
    Anisotropic,
    /// exp(xy/j) (dx^2 + dy^2).
    Conformal,
    /// dx^2 + dy^2 for even j, 3 dx^2 + dy^2 for odd j.
    Alternating,
}

impl PerturbationFamily {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Anisotropic => "anisotropic",
            Self::Conformal => "conformal",
            Self::Alternating => "alternating",
        }
    }

    pub fn metric(&self, j: f64) -> MetricFn {
        match self {
            Self::Anisotropic => Arc::new(move |_, _| [1.0 + 2.0 / j, 0.0, 1.0]),
            Self::Conformal => Arc::new(move |x, y| {
                let l = (x * y / j).exp();
                [l, 0.0, l]
            }),
            Self::Alternating => {
                let a = if (j as i64) % 2 == 0 { 1.0 } else { 3.0 };
                Arc::new(move |_, _| [a, 0.0, 1.0])
            }
        }
    }

    pub fn limit(&self) -> MetricFn {
        Arc::new(|_, _| [1.0, 0.0, 1.0])
    }
}

/// Isothermal image of a chart region, with the Jacobian at each chart node.
struct Image {
    patch: IsothermalPatch,
}

impl Image {
    fn at(&self, node: usize) -> Option<(Complex64, f64)> {
        let k = self.patch.nodes.binary_search(&node).ok()?;
        Some((self.patch.w[k], self.patch.w_z[k].norm_sqr() - self.patch.w_zbar[k].norm_sqr()))
    }

    /// Weighted image nodes of `cells` (node index, area fraction).
    fn domain(&self, cells: &[(usize, f64)], h: f64) -> Result<PlanarDomain> {
        let mut nodes = Vec::with_capacity(cells.len());
        let mut weights = Vec::with_capacity(cells.len());
        for &(k, frac) in cells {
            let (w, jac) = self.at(k).ok_or_else(|| Error::Domain("region node outside the isothermal patch".into()))?;
            nodes.push(w);
            weights.push(frac * jac * h * h);
        }
        PlanarDomain::points(nodes, weights)
    }
}

/// Normalized radius whose solve disc contains the padded box [lo, hi].
fn covering_radius(metric: &MetricFn, center: Point, lo: Point, hi: Point, pad: f64) -> Result<(f64, AffineNormalization)> {
    let map = AffineNormalization::from_principal(center, principal(metric(center[0], center[1])))?;
    let mut r: f64 = 0.0;
    for x in [lo[0] - pad, hi[0] + pad] {
        for y in [lo[1] - pad, hi[1] + pad] {
            let q = map.forward([x, y]);
            r = r.max(q[0].hypot(q[1]));
        }
    }
    Ok((r * (1.0 + 1e-9), map))
}

fn solve_image(chart: &GridChart, center: Point, radius: f64) -> Result<Image> {
    let opts = IsothermalOptions { radius: Some(radius), patch_fraction: 1.0, eps0: f64::INFINITY, max_halvings: 0 };
    Ok(Image { patch: solve_isothermal(chart, center, &opts)? })
}

/// Form kernel K*(w(z)) J_w(z) at a chart node, per unit Euclidean chart area.
fn form_kernel(space: &BergmanSpace, img: &Image, node: usize) -> Result<f64> {
    let (w, jac) = img.at(node).ok_or_else(|| Error::Domain("evaluation node outside the patch".into()))?;
    Ok(kernel_diag(space, w)?.raw.re * jac)
}

/// Trapezoid cells of the rectangle [x0, x1] x [y0, y1] on a chart.
fn rectangle_cells(chart: &GridChart, lo: Point, hi: Point) -> Vec<(usize, f64)> {
    let h = chart.h;
    let mut out = Vec::new();
    for j in 0..chart.ny {
        for i in 0..chart.nx {
            let p = chart.node(i, j);
            let inside = |v: f64, a: f64, b: f64| v >= a - 1e-9 * h && v <= b + 1e-9 * h;
            if !(inside(p[0], lo[0], hi[0]) && inside(p[1], lo[1], hi[1])) {
                continue;
            }
            let edge = |v: f64, a: f64, b: f64| if (v - a).abs() < 1e-9 * h || (v - b).abs() < 1e-9 * h { 0.5 } else { 1.0 };
            out.push((chart.idx(i, j), edge(p[0], lo[0], hi[0]) * edge(p[1], lo[1], hi[1])));
        }
    }
    out
}

/// Per-j outcome of the local stability comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
struct LocalCell {
    gap: f64,
    eps: f64,
    metric_sup: f64,
}

/// Local stability: kernels of Omega = [0,1] x [0,1/2] and Omega' = [0,1]^2 under
/// a metric sequence, normalized by the limit metric's area form.
pub fn perturbation_experiment(metrics: &[(f64, MetricFn)], limit: &MetricFn, name: &str, opts: &ExperimentOptions) -> Result<ConvergenceReport> {
    if metrics.is_empty() {
        return Err(Error::Precondition("empty metric sequence".into()));
    }
    let h = opts.h;
    if !(h > 0.0 && h <= 0.125) {
        return Err(Error::Precondition("chart spacing must lie in (0, 1/8]".into()));
    }
    let center = [0.5, 0.5];
    let (lo, hi_small, hi_big) = ([0.0, 0.0], [1.0, 0.5], [1.0, 1.0]);
    // one chart for all j: wide enough for every normalized solve disc covering Omega'
    let mut half: f64 = 0.5;
    for m in metrics.iter().map(|(_, m)| m).chain(std::iter::once(limit)) {
        let (r, map) = covering_radius(m, center, lo, hi_big, 2.0 * h)?;
        let [ex, ey] = map.extents();
        half = half.max(r * ex.max(ey) + 3.0 * h);
    }
    let margin = ((half - 0.5) / h).ceil() * h;
    let range = (-margin, 1.0 + margin);
    let eval_pts = [[0.25, 0.25], [0.5, 0.25], [0.75, 0.25]];

    let side = |metric: &MetricFn| -> Result<(GridChart, Image, BergmanSpace, BergmanSpace)> {
        let chart = GridChart::with_spacing(range, range, h, |x, y| metric(x, y))?;
        let img = solve_image(&chart, center, covering_radius(metric, center, lo, hi_big, 2.0 * h)?.0)?;
        let small = build_bergman_space(&img.domain(&rectangle_cells(&chart, lo, hi_small), h)?, opts.basis_size)?;
        let big = build_bergman_space(&img.domain(&rectangle_cells(&chart, lo, hi_big), h)?, opts.basis_size)?;
        Ok((chart, img, small, big))
    };
    let (chart, img0, small0, big0) = side(limit)?;
    let eval_nodes: Vec<usize> = eval_pts.iter().map(|p| {
        let (i, j) = chart.nearest(*p);
        chart.idx(i, j)
    }).collect();
    let sqrt_det = |m: &MetricFn, p: Point| {
        let t = m(p[0], p[1]);
        (t[0] * t[2] - t[1] * t[1]).sqrt()
    };
    let base: Vec<(f64, f64)> = eval_nodes
        .iter()
        .map(|&k| {
            let p = chart.node(k % chart.nx, k / chart.nx);
            let s = sqrt_det(limit, p);
            Ok((form_kernel(&small0, &img0, k)? / s, form_kernel(&big0, &img0, k)? / s))
        })
        .collect::<Result<_>>()?;

    let cells: Vec<Result<LocalCell>> = metrics
        .par_iter()
        .map(|(_, m)| {
            let (_, img, small, big) = side(m)?;
            let (mut gap, mut eps): (f64, f64) = (0.0, 0.0);
            for (a, &k) in eval_nodes.iter().enumerate() {
                let p = chart.node(k % chart.nx, k / chart.nx);
                let s = sqrt_det(limit, p);
                let (ks, kb) = (form_kernel(&small, &img, k)? / s, form_kernel(&big, &img, k)? / s);
                let (ks0, kb0) = base[a];
                gap = gap.max((ks - ks0).abs() / ks0);
                // K_{Omega,j} >= K_{Omega'} - eps and K_Omega >= K_{Omega',j} - eps
                eps = eps.max(kb0 - ks).max(kb - ks0).max(0.0);
            }
            let mut metric_sup: f64 = 0.0;
            for (i, j) in (0..=16).flat_map(|i| (0..=16).map(move |j| (i, j))) {
                let (x, y) = (i as f64 / 16.0, j as f64 / 16.0);
                let (t, t0) = (m(x, y), limit(x, y));
                metric_sup = metric_sup.max((0..3).map(|q| (t[q] - t0[q]).abs()).fold(0.0, f64::max));
            }
            Ok(LocalCell { gap, eps, metric_sup })
        })
        .collect();
    let cells = cells.into_iter().collect::<Result<Vec<_>>>()?;
    let js: Vec<f64> = metrics.iter().map(|(j, _)| *j).collect();
    let mut rows = Vec::with_capacity(cells.len());
    for (j, c) in js.iter().zip(&cells) {
        let mut row = ConvergenceRow::new(*j, c.gap);
        row.extra.insert("epsilon".into(), c.eps);
        row.extra.insert("metric_sup".into(), c.metric_sup);
        rows.push(row);
    }
    let gaps: Vec<f64> = cells.iter().map(|c| c.gap).collect();
    let mut flags = BTreeMap::new();
    flags.insert("metric_sup_nonincreasing".into(), cells.windows(2).all(|w| w[1].metric_sup <= w[0].metric_sup));
    let eps: Vec<f64> = cells.iter().map(|c| c.eps).collect();
    flags.insert("epsilon_tail_decreasing".into(), verdict(&eps, 3) == Verdict::Converged);
    let mut params = BTreeMap::new();
    param(&mut params, "family", name);
    param(&mut params, "j_values", &js);
    param(&mut params, "h", h);
    param(&mut params, "basis_size", opts.basis_size);
    param(&mut params, "omega", [lo, hi_small]);
    param(&mut params, "omega_prime", [lo, hi_big]);
    param(&mut params, "evaluation_points", eval_pts);
    let logj: Vec<f64> = js.iter().map(|j| j.ln()).collect();
    Ok(ConvergenceReport {
        experiment: "perturbation".into(),
        params,
        fitted_rate: fit_slope(&logj, &gaps),
        verdict: verdict(&gaps, 3),
        rows,
        checks: BTreeMap::new(),
        flags,
        notes: vec!["difference is the relative kernel gap on Omega; epsilon is the least slack for both one-sided comparisons".into()],
    })
}

pub fn perturbation_family_experiment(family: PerturbationFamily, js: &[f64], opts: &ExperimentOptions) -> Result<ConvergenceReport> {
    let metrics: Vec<(f64, MetricFn)> = js.iter().map(|&j| (j, family.metric(j))).collect();
    perturbation_experiment(&metrics, &family.limit(), family.name(), opts)
}

/// Anisotropy outside the hyperbolic core of M_j.
pub const OUTSIDE_ANISOTROPY: f64 = 1.5;

/// Conformal class of M_j on the chart: identity on B_R, blended by a smoothstep
/// in hyperbolic distance over [R, R + 1] into diag(a^2, 1); the class is
/// diag(a^2, 1) outside the unit disc.
pub fn theorem14_class(r: f64, a: f64) -> impl Fn(f64, f64) -> Tensor + Send + Sync + Clone {
    move |x, y| {
        let z = x.hypot(y);
        let chi = if z >= 1.0 { 1.0 } else { smoothstep(2.0 * z.atanh() - r) };
        [1.0 - chi + chi * a * a, 0.0, 1.0]
    }
}

/// Cut cells of the unit disc: node indices and area fractions, by 8x8 subsampling.
fn disc_cells(chart: &GridChart) -> Vec<(usize, f64)> {
    let h = chart.h;
    let sub = 8;
    let mut out = Vec::new();
    for j in 0..chart.ny {
        for i in 0..chart.nx {
            let p = chart.node(i, j);
            let (near, far) = ((p[0].abs() - 0.5 * h).max(0.0).hypot((p[1].abs() - 0.5 * h).max(0.0)), (p[0].abs() + 0.5 * h).hypot(p[1].abs() + 0.5 * h));
            let frac = if far <= 1.0 {
                1.0
            } else if near >= 1.0 {
                0.0
            } else {
                let mut c = 0;
                for a in 0..sub {
                    for b in 0..sub {
                        let x = p[0] + h * ((a as f64 + 0.5) / sub as f64 - 0.5);
                        let y = p[1] + h * ((b as f64 + 0.5) / sub as f64 - 0.5);
                        if x * x + y * y < 1.0 {
                            c += 1;
                        }
                    }
                }
                c as f64 / (sub * sub) as f64
            };
            if frac > 0.0 {
                out.push((chart.idx(i, j), frac));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct DiscKernel {
    value: f64,
    tail: f64,
}

/// Normalized |K(0)| of the disc with conformal class `class`, and the kernel-row
/// mass outside hyperbolic radius `tail_radius`.
fn disc_kernel(class: &(dyn Fn(f64, f64) -> Tensor + Sync), tail_radius: f64, opts: &ExperimentOptions) -> Result<DiscKernel> {
    let h = opts.h;
    let range = (-1.25, 1.25);
    let chart = GridChart::with_spacing(range, range, h, class)?;
    let img = solve_image(&chart, [0.0, 0.0], 1.25 - 3.0 * h)?;
    let cells = disc_cells(&chart);
    let domain = img.domain(&cells, h)?;
    let space = build_bergman_space(&domain, opts.basis_size)?;
    let (ic, jc) = chart.nearest([0.0, 0.0]);
    let c = chart.idx(ic, jc);
    let (w0, jac0) = img.at(c).ok_or_else(|| Error::Domain("center outside the patch".into()))?;
    // hyperbolic area form at the center is 4 dx dy
    let value = kernel_diag(&space, w0)?.raw.re * jac0 / 4.0;
    let lambda_w0 = 4.0 / jac0;
    let PlanarDomain::Points { nodes, weights } = &domain else { unreachable!("image domains are weighted nodes") };
    let mut tail = 0.0;
    for (a, &(k, _)) in cells.iter().enumerate() {
        let p = chart.node(k % chart.nx, k / chart.nx);
        let z = p[0].hypot(p[1]);
        if z >= 1.0 || 2.0 * z.atanh() > tail_radius {
            tail += space.kernel(nodes[a], w0)?.norm_sqr() * weights[a];
        }
    }
    Ok(DiscKernel { value, tail: tail / lambda_w0 })
}

/// M_j: the unit disc, hyperbolic on B_{R_j}(0), blended into a fixed
/// non-conformal perturbation outside. `conformal_outside` uses an isotropic class instead.
pub fn theorem14_experiment(r_list: &[f64], conformal_outside: bool, opts: &ExperimentOptions) -> Result<ConvergenceReport> {
    if r_list.is_empty() || r_list.windows(2).any(|w| !(w[1] > w[0])) || !(r_list[0] > 0.0) {
        return Err(Error::Precondition("R_j list must be positive and increasing".into()));
    }
    let a = if conformal_outside { 1.0 } else { OUTSIDE_ANISOTROPY };
    let limit = 1.0 / (4.0 * PI);
    let reference = disc_kernel(&theorem14_class(f64::INFINITY, a), f64::INFINITY, opts)?;

    // g_hyp <= g_j <= a^2 g_hyp with energy density and area form both distorted by at most a,
    // so lambda_1(M_j) >= lambda_1(H^2) / a^2
    let lambda_h = ModelSurface::hyperbolic().exact_data().lambda1.unwrap_or(0.25);
    let lower = lambda_h / (a * a);
    let cells: Vec<Result<(DiscKernel, f64)>> = r_list
        .par_iter()
        .map(|&r| {
            let class = theorem14_class(r, a);
            let k = disc_kernel(&class, 0.5 * r, opts)?;
            // B_R is isometric to the hyperbolic ball, so its Dirichlet value bounds lambda_1(M_j) above
            let ball = Region::new(SurfaceRef::Model(Arc::new(ModelSurface::hyperbolic())), Shape::GeodesicBall { center: [0.0, 0.0], radius: r })?;
            let upper = lambda1_dirichlet(&ball, &opts.spectral)?.lambda1;
            Ok((k, upper))
        })
        .collect();
    let cells = cells.into_iter().collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(r_list.len());
    let mut guard = true;
    let mut cond = f64::INFINITY;
    for (&r, (k, upper)) in r_list.iter().zip(&cells) {
        let gap = (k.value - reference.value).abs();
        let ball = 1.0 / (4.0 * PI * (0.5 * r).tanh().powi(2));
        guard &= k.value <= ball;
        cond = cond.min(lower * r * r);
        let mut row = ConvergenceRow::new(r, gap);
        row.bound_lambda1 = spectral_envelope(lower, r);
        row.extra.insert("kernel".into(), k.value);
        row.extra.insert("ball_kernel".into(), ball);
        row.extra.insert("gap_exact".into(), (k.value - limit).abs());
        row.extra.insert("lambda1_lower".into(), lower);
        row.extra.insert("lambda1_upper".into(), *upper);
        row.extra.insert("lambda1_R2".into(), lower * r * r);
        row.extra.insert("tail_mass".into(), k.tail);
        row.extra.insert("gap_over_sqrt_tail".into(), if k.tail > 0.0 { gap / k.tail.sqrt() } else { 0.0 });
        rows.push(row);
    }
    if !(cond > 0.0 && cond.is_finite()) {
        return Err(Error::Precondition(format!("inf lambda_1 R_j^2 = {cond} is not positive")));
    }
    let gaps: Vec<f64> = rows.iter().map(|r| r.difference).collect();
    let mut checks = BTreeMap::new();
    checks.insert("ball_guard".into(), guard);
    checks.insert("lambda1_R2_positive".into(), cond > 0.0);
    let mut flags = BTreeMap::new();
    flags.insert("gaps_monotone".into(), gaps.windows(2).all(|w| w[1] <= w[0]));
    let mut params = BTreeMap::new();
    param(&mut params, "R_values", r_list);
    param(&mut params, "h", opts.h);
    param(&mut params, "lambda1_lower", lower);
    param(&mut params, "basis_size", opts.basis_size);
    param(&mut params, "outside_anisotropy", a);
    param(&mut params, "reference_kernel", reference.value);
    param(&mut params, "limit_kernel", limit);
    param(&mut params, "inf_lambda1_R2", cond);
    Ok(ConvergenceReport {
        experiment: if conformal_outside { "theorem14_conformal".into() } else { "theorem14".into() },
        params,
        fitted_rate: fit_slope(r_list, &gaps),
        verdict: verdict(&gaps, 3),
        rows,
        checks,
        flags,
        notes: vec!["difference is measured against the same pipeline run on the unperturbed disc; gap_exact is against 1/(4 pi)".into()],
    })
}

/// Hemisphere against round spheres: the limit kernel is positive, every sphere kernel vanishes.
pub fn counterexample_experiment(j_list: &[f64], opts: &ExperimentOptions) -> Result<ConvergenceReport> {
    if j_list.is_empty() {
        return Err(Error::Precondition("empty j list".into()));
    }
    // stereographic projection: the upper unit hemisphere is |w| < 1 with 4 / (1 + |w|^2)^2 |dw|^2
    let disc = build_bergman_space(&PlanarDomain::disc(Complex64::new(0.0, 0.0), 1.0)?, opts.basis_size)?;
    let hemisphere = kernel_diag(&disc, Complex64::new(0.0, 0.0))?.raw.re / 4.0;
    // dim H(M_j) = genus = 0
    let sphere = 0.0;
    let rows: Vec<ConvergenceRow> = j_list
        .iter()
        .map(|&j| {
            let mut row = ConvergenceRow::new(j, (hemisphere - sphere).abs());
            row.extra.insert("hemisphere_kernel".into(), hemisphere);
            row.extra.insert("sphere_kernel".into(), sphere);
            row
        })
        .collect();
    let diffs: Vec<f64> = rows.iter().map(|r| r.difference).collect();
    let mut checks = BTreeMap::new();
    checks.insert("hemisphere_kernel_positive".into(), hemisphere > 0.0);
    let mut params = BTreeMap::new();
    param(&mut params, "j_values", j_list);
    param(&mut params, "sphere_genus", 0);
    param(&mut params, "basis_size", opts.basis_size);
    Ok(ConvergenceReport {
        experiment: "counterexample".into(),
        params,
        fitted_rate: None,
        verdict: verdict(&diffs, 3).max_not_converged(),
        rows,
        checks,
        flags: BTreeMap::new(),
        notes: vec!["sphere kernels vanish by the genus rule; the gap never closes".into()],
    })
}

impl Verdict {
    /// A persistent positive gap cannot be inconclusive.
    fn max_not_converged(self) -> Self {
        match self {
            Self::Inconclusive => Self::NotConverged,
            v => v,
        }
    }
}

/// Kernel of an isothermal patch of a chart at one of its nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PatchKernel {
    /// K* at the image point.
    pub raw: f64,
    /// K* J_w / sqrt(det g): the kernel against the metric's area form.
    pub normalized: f64,
    pub nodes: usize,
    pub radius: f64,
    pub gram_residual: f64,
}

/// Kernel of the full isothermal patch around `center`, evaluated at the node nearest `point`.
pub fn patch_kernel(chart: &GridChart, center: Point, point: Point, basis: usize) -> Result<PatchKernel> {
    let patch = solve_isothermal(chart, center, &IsothermalOptions { patch_fraction: 1.0, ..IsothermalOptions::default() })?;
    let img = Image { patch };
    let cells: Vec<(usize, f64)> = img.patch.nodes.iter().map(|&k| (k, 1.0)).collect();
    let space = build_bergman_space(&img.domain(&cells, chart.h)?, basis)?;
    let (i, j) = chart.nearest(point);
    let node = chart.idx(i, j);
    let (w, jac) = img.at(node).ok_or_else(|| Error::Domain("point outside the isothermal patch".into()))?;
    let raw = kernel_diag(&space, w)?.raw.re;
    let t = chart.tensor(i, j);
    Ok(PatchKernel {
        raw,
        normalized: raw * jac / (t[0] * t[2] - t[1] * t[1]).sqrt(),
        nodes: img.patch.nodes.len(),
        radius: img.patch.radius,
        gram_residual: space.gram_residual(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_policy() {
        assert_eq!(verdict(&[0.1, 0.05, 0.009], 3), Verdict::Converged);
        assert_eq!(verdict(&[0.1, 0.05, 0.02], 3), Verdict::NotConverged);
        assert_eq!(verdict(&[0.001, 0.002, 0.001], 3), Verdict::NotConverged);
        assert_eq!(verdict(&[0.0, 0.0, 0.0], 3), Verdict::Converged);
        assert_eq!(verdict(&[0.1, 0.001], 3), Verdict::Inconclusive);
        assert_eq!(verdict(&[0.1, 0.01, 0.001], 4), Verdict::Inconclusive);
    }

    #[test]
    fn csv_columns() {
        let mut row = ConvergenceRow::new(3.0, 0.5);
        row.bound_lambda1 = Some(1.0);
        row.extra.insert("k".into(), 2.0);
        let rep = ConvergenceReport {
            experiment: "x".into(),
            params: BTreeMap::new(),
            rows: vec![row],
            fitted_rate: None,
            verdict: Verdict::Inconclusive,
            checks: BTreeMap::new(),
            flags: BTreeMap::new(),
            notes: vec![],
        };
        let csv = rep.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "R,difference,bound_lambda1,bound_cheeger,bound_li,bound_log,k");
        assert_eq!(lines[1].split(',').count(), 7);
        assert!(lines[1].contains(",,"));
    }
}
