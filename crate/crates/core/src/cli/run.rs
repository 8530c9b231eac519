//! Command dispatch and output writing.

use std::f64::consts::PI;
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use num_complex::Complex64;
use serde_json::{json, Value};

use super::config::{Command, ExperimentKind, RunConfig, SurfaceSpec};
use super::output::{to_csv, to_json};
use crate::bergman::{build_bergman_space, kernel_diag, PlanarDomain};
use crate::convergence::{
    counterexample_experiment, exhaustion_experiment, log_rate_experiment, patch_kernel, perturbation_family_experiment, theorem14_experiment,
    ExperimentOptions, PerturbationFamily,
};
use crate::error::Error;
use crate::heatgreen::{capacity, capacity_green_sandwich, capacity_step, green_field, heat_field, mesh_coords, ondiag_fit};
use crate::isothermal::{solve_isothermal, IsothermalOptions};
use crate::spectral::{
    bump_norms, inequality_audit, isoperimetric_sweep, lambda1_closed_meanzero, lambda1_dbar_identity_check, lambda1_dirichlet, AuditInput,
    SpectralOptions, LI_THRESHOLD,
};
use crate::surface::{GridChart, ModelKind, ModelSurface, Region, Revolution, Shape, SurfaceRef};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_AUDIT: i32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Invalid configuration or input data.
    Config(String),
    /// Solver, eigen or quadrature failure.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(m) => write!(f, "invalid configuration: {m}"),
            Self::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Domain(_) | Error::Precondition(_) | Error::Input(_) | Error::Unsupported(_) | Error::Metric { .. } | Error::Truncation { .. } => {
                Self::Config(e.to_string())
            }
            _ => Self::Numerical(e.to_string()),
        }
    }
}

/// Result of one command before it is written.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub name: String,
    pub result: Value,
    pub csv: String,
    /// Every asserted inequality held.
    pub audit_ok: bool,
}

fn model_of(cfg: &RunConfig) -> Result<ModelSurface, CliError> {
    Ok(match cfg.surface {
        SurfaceSpec::EuclideanPlane => ModelSurface::euclidean(),
        SurfaceSpec::HyperbolicDisc => ModelSurface::hyperbolic(),
        SurfaceSpec::UnitDisc => ModelSurface::conformal_disc(Arc::new(|_, _| 1.0), 1.0, true)?,
        SurfaceSpec::Sphere => ModelSurface::sphere(cfg.model_radius)?,
        SurfaceSpec::Cylinder => ModelSurface::revolution(Revolution::cylinder(cfg.model_radius, cfg.length)?),
        SurfaceSpec::FlatTorus => ModelSurface::revolution(Revolution::flat_torus(cfg.model_radius, cfg.length)?),
        SurfaceSpec::Chart => return Err(CliError::Config("this command needs a model surface, not a chart".into())),
    })
}

fn load_chart(cfg: &RunConfig) -> Result<GridChart, CliError> {
    let path = cfg.chart_file.as_ref().ok_or_else(|| CliError::Config("chart_file is not set".into()))?;
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(GridChart::parse(&text)?)
}

/// Grid chart of a planar model on the square of half-width `half` around the center.
fn model_chart(cfg: &RunConfig, model: &ModelSurface) -> Result<GridChart, CliError> {
    let half = match model.kind {
        ModelKind::EuclideanPlane => cfg.r,
        ModelKind::HyperbolicDisc | ModelKind::ConformalDisc(_) => cfg.r.min(0.6),
        _ => return Err(CliError::Config(format!("{} has no planar chart; use surface = chart", model.name()))),
    };
    let [cx, cy] = cfg.center;
    let m = model.clone();
    Ok(GridChart::with_spacing((cx - half, cx + half), (cy - half, cy + half), cfg.h, move |x, y| m.metric_at([x, y]).unwrap_or([f64::NAN; 3]))?)
}

fn spectral_opts(cfg: &RunConfig) -> SpectralOptions {
    SpectralOptions { rings: cfg.rings, sectors: None, h: cfg.h.max(1.0 / 256.0), tol: cfg.tol }
}

fn ball(model: &ModelSurface, r: f64) -> Result<Region, CliError> {
    let shape = match &model.kind {
        ModelKind::ConformalDisc(_) => Shape::ChartDisc { center: [0.0, 0.0], radius: r },
        _ => Shape::GeodesicBall { center: [0.0, 0.0], radius: r },
    };
    Ok(Region::new(SurfaceRef::Model(Arc::new(model.clone())), shape)?)
}

fn kernel(cfg: &RunConfig) -> Result<Outcome, CliError> {
    if cfg.surface == SurfaceSpec::Chart {
        let chart = load_chart(cfg)?;
        let k = patch_kernel(&chart, cfg.center, cfg.point, cfg.basis_size)?;
        let csv = to_csv(&["x", "y", "raw", "normalized"], &[vec![cfg.point[0], cfg.point[1], k.raw, k.normalized]]);
        return Ok(Outcome { name: "kernel".into(), result: serde_json::to_value(k).unwrap_or(Value::Null), csv, audit_ok: k.gram_residual <= cfg.audit_tol });
    }
    let model = model_of(cfg)?;
    let (rho, lambda): (f64, Box<dyn Fn(Complex64) -> f64>) = match &model.kind {
        ModelKind::HyperbolicDisc => ((0.5 * cfg.r).tanh(), Box::new(|z: Complex64| 4.0 / (1.0 - z.norm_sqr()).powi(2))),
        ModelKind::EuclideanPlane => (cfg.r, Box::new(|_| 1.0)),
        ModelKind::ConformalDisc(c) => (cfg.r.min(c.radius), Box::new(|_| 1.0)),
        _ => return Err(CliError::Config(format!("kernel needs a planar model or a chart, not {}", model.name()))),
    };
    let space = build_bergman_space(&PlanarDomain::disc(Complex64::new(0.0, 0.0), rho)?, cfg.basis_size)?;
    let z = Complex64::new(cfg.point[0], cfg.point[1]);
    let raw = kernel_diag(&space, z)?.raw.re;
    let exact = |z: Complex64| rho * rho / (PI * (rho * rho - z.norm_sqr()).powi(2));
    let mut rows = Vec::new();
    for k in 0..10 {
        let x = 0.9 * rho * k as f64 / 10.0;
        let zx = Complex64::new(x, 0.0);
        let kx = kernel_diag(&space, zx)?.raw.re;
        rows.push(vec![x, kx, kx / lambda(zx), exact(zx)]);
    }
    let gram = space.gram_residual();
    let result = json!({
        "surface": model.name(),
        "ball_radius": cfg.r,
        "disc_radius": rho,
        "point": cfg.point,
        "raw": raw,
        "normalized": raw / lambda(z),
        "exact_raw": exact(z),
        "basis_dim": space.dim(),
        "gram_residual": gram,
    });
    Ok(Outcome { name: "kernel".into(), result, csv: to_csv(&["x", "raw", "normalized", "exact_raw"], &rows), audit_ok: gram <= cfg.audit_tol })
}

fn isothermal(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let chart = if cfg.surface == SurfaceSpec::Chart { load_chart(cfg)? } else { model_chart(cfg, &model_of(cfg)?)? };
    let center = if cfg.surface == SurfaceSpec::Chart && cfg.center == [0.0, 0.0] && !chart.contains(cfg.center) {
        [0.5 * (chart.x_range.0 + chart.x_range.1), 0.5 * (chart.y_range.0 + chart.y_range.1)]
    } else {
        cfg.center
    };
    let p = solve_isothermal(&chart, center, &IsothermalOptions::default())?;
    let result = json!({
        "center": p.center,
        "radius": p.radius,
        "halvings": p.halvings,
        "nodes": p.nodes.len(),
        "cr_residual": p.cr_residual,
        "equation_residual": p.equation_residual,
        "jacobian_min": p.jacobian_min,
        "weak_norm": p.weak_norm,
        "weak_bound": p.weak_bound,
        "pullback_error": p.pullback_error,
        "curvature_error": p.curvature_error,
    });
    let ok = p.jacobian_min > 0.0 && p.weak_norm <= p.weak_bound * (1.0 + 1e-10);
    Ok(Outcome { name: "isothermal".into(), result, csv: p.to_csv(), audit_ok: ok })
}

fn spectral(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let model = model_of(cfg)?;
    let opts = spectral_opts(cfg);
    let compact = model.is_compact();
    let (report, dbar) = if compact {
        (lambda1_closed_meanzero(&model, &opts)?, None)
    } else {
        let region = ball(&model, cfg.r)?;
        (lambda1_dirichlet(&region, &opts)?, Some(lambda1_dbar_identity_check(&region, &opts)?))
    };
    let sweep = isoperimetric_sweep(&model, cfg.nu, cfg.sweep_r_max, cfg.sweep_samples, compact)?;
    let cheeger = isoperimetric_sweep(&model, f64::INFINITY, cfg.sweep_r_max, cfg.sweep_samples, compact)?;
    let mut input = AuditInput { lambda1: Some(report.lambda1), slack: cfg.slack, li_threshold: LI_THRESHOLD, ..Default::default() };
    if compact {
        let i2 = isoperimetric_sweep(&model, 2.0, cfg.sweep_r_max, cfg.sweep_samples, true)?;
        input.i_2 = Some(i2.inf_value);
        input.area = model.exact_data().area;
    } else {
        input.i_inf = Some(cheeger.inf_value);
        if cfg.nu > 2.0 && cfg.nu.is_finite() {
            if let Some(form) = model.polar_form() {
                input.i_nu = Some((cfg.nu, sweep.inf_value));
                input.bumps = [0.25, 0.5, 1.0].iter().map(|f| bump_norms(&form, f * cfg.r.min(form.reach), cfg.nu)).collect();
            }
        }
    }
    let audit = inequality_audit(&input);
    let result = json!({
        "surface": model.name(),
        "lambda1": report,
        "dbar_identity": dbar,
        "sweep": {"nu": if cfg.nu.is_finite() { json!(cfg.nu) } else { json!("inf") }, "inf_value": sweep.inf_value, "upper_estimate": sweep.upper_estimate, "compact_mode": sweep.compact_mode},
        "cheeger_sweep_inf": cheeger.inf_value,
        "audit": audit,
    });
    Ok(Outcome { name: "spectral".into(), result, csv: sweep.to_csv(), audit_ok: audit.all_hold })
}

fn heat(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let model = model_of(cfg)?;
    let region = ball(&model, cfg.r)?;
    let field = heat_field(&region, &spectral_opts(cfg))?;
    let x = field.nearest(mesh_coords(&region, cfg.center)?);
    let fit = ondiag_fit(&field, x, cfg.window, cfg.samples)?;
    let p = field.evaluate(cfg.t, x, x);
    let semigroup = field.semigroup_residual(cfg.t, cfg.t, x, x);
    let mass = field.mass_at(cfg.t, x);
    let result = json!({
        "surface": model.name(),
        "nodes": field.len(),
        "t": cfg.t,
        "p_tt": p,
        "four_pi_t_p": 4.0 * PI * cfg.t * p,
        "semigroup_residual": semigroup,
        "mass": mass,
        "fit": {"c": fit.c, "nu_hat": fit.nu_hat, "a": fit.a, "beta": fit.beta},
    });
    let ok = semigroup <= cfg.audit_tol && mass <= 1.0 + 1e-8 && p > 0.0;
    Ok(Outcome { name: "heat".into(), result, csv: fit.to_csv(), audit_ok: ok })
}

fn green(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let model = model_of(cfg)?;
    let region = ball(&model, cfg.r)?;
    let opts = spectral_opts(cfg);
    let g = green_field(&region, cfg.point, &opts)?;
    let sandwich = if cfg.inner < cfg.r { Some(capacity_green_sandwich(&ball(&model, cfg.inner)?, &region, cfg.point, &opts)?) } else { None };
    let rows: Vec<Vec<f64>> = g.mesh.coords.iter().zip(&g.values).map(|(c, v)| vec![c[0], c[1], *v]).collect();
    let result = json!({
        "surface": model.name(),
        "pole": cfg.point,
        "nodes": g.values.len(),
        "harmonic_residual": g.harmonic_residual,
        "min_value": g.min_value,
        "sandwich": sandwich,
    });
    let ok = g.min_value >= 0.0 && sandwich.as_ref().map(|s| s.holds).unwrap_or(true);
    Ok(Outcome { name: "green".into(), result, csv: to_csv(&["c0", "c1", "g"], &rows), audit_ok: ok })
}

fn capacity_cmd(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let model = model_of(cfg)?;
    let opts = spectral_opts(cfg);
    let cap = capacity(&ball(&model, cfg.inner)?, &ball(&model, cfg.outer)?, &opts)?;
    let exact = match model.kind {
        ModelKind::EuclideanPlane => Some(2.0 * PI / (cfg.outer / cfg.inner).ln()),
        ModelKind::HyperbolicDisc => Some(2.0 * PI / ((0.5 * cfg.outer).tanh() / (0.5 * cfg.inner).tanh()).ln()),
        _ => None,
    };
    let step = capacity_step(&model, cfg.inner, &opts)?;
    let result = json!({
        "surface": model.name(),
        "inner": cfg.inner,
        "outer": cfg.outer,
        "capacity": cap,
        "exact": exact,
        "capacity_step": step,
    });
    let csv = to_csv(&["inner", "outer", "capacity", "exact"], &[vec![cfg.inner, cfg.outer, cap, exact.unwrap_or(f64::NAN)]]);
    Ok(Outcome { name: "capacity".into(), result, csv, audit_ok: step.holds })
}

fn experiment(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let kind = cfg.experiment.ok_or_else(|| CliError::Config("experiment key is not set".into()))?;
    let opts = ExperimentOptions {
        basis_size: cfg.basis_size,
        h: cfg.h,
        spectral: spectral_opts(cfg),
        sweep_r_max: cfg.sweep_r_max,
        sweep_samples: cfg.sweep_samples,
    };
    let rep = match kind {
        ExperimentKind::Exhaustion => exhaustion_experiment(&model_of(cfg)?, cfg.center, cfg.e_radius, &cfg.r_list, &opts)?,
        ExperimentKind::LogRate => log_rate_experiment(&model_of(cfg)?, cfg.nu, cfg.center, cfg.e_radius, &cfg.r_list, &opts)?,
        ExperimentKind::Perturbation => {
            let family = match cfg.family.as_str() {
                "conformal" => PerturbationFamily::Conformal,
                "alternating" => PerturbationFamily::Alternating,
                _ => PerturbationFamily::Anisotropic,
            };
            perturbation_family_experiment(family, &cfg.j_list, &opts)?
        }
        ExperimentKind::Theorem14 => theorem14_experiment(&cfg.r_list, false, &opts)?,
        ExperimentKind::Theorem14Conformal => theorem14_experiment(&cfg.r_list, true, &opts)?,
        ExperimentKind::Counterexample => counterexample_experiment(&cfg.j_list, &opts)?,
    };
    Ok(Outcome { name: kind.name().into(), result: serde_json::to_value(&rep).unwrap_or(Value::Null), csv: rep.to_csv(), audit_ok: rep.all_checks_hold() })
}

/// Runs the configured command without writing anything.
pub fn execute(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let command = cfg.command.ok_or_else(|| CliError::Config("no command given".into()))?;
    match command {
        Command::Kernel => kernel(cfg),
        Command::Isothermal => isothermal(cfg),
        Command::Spectral => spectral(cfg),
        Command::Heat => heat(cfg),
        Command::Green => green(cfg),
        Command::Capacity => capacity_cmd(cfg),
        Command::Experiment => experiment(cfg),
    }
}

/// JSON document: resolved config header, result and audit status.
pub fn report_json(cfg: &RunConfig, out: &Outcome) -> String {
    let doc = json!({
        "config": cfg.resolved(),
        "command": cfg.command.map(|c| c.name()),
        "name": out.name,
        "result": out.result,
        "audit": {"mode": cfg.audit_mode, "all_hold": out.audit_ok},
    });
    to_json(&doc)
}

pub fn output_paths(cfg: &RunConfig, name: &str) -> (PathBuf, PathBuf) {
    (
        cfg.output_json.clone().unwrap_or_else(|| cfg.out_dir.join(format!("{name}.json"))),
        cfg.output_csv.clone().unwrap_or_else(|| cfg.out_dir.join(format!("{name}.csv"))),
    )
}

/// Executes, writes both outputs and returns the exit code.
pub fn run(cfg: &RunConfig) -> i32 {
    let out = match execute(cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("rkl: {e}");
            return e.exit_code();
        }
    };
    let (json_path, csv_path) = output_paths(cfg, &out.name);
    for (path, body) in [(&json_path, report_json(cfg, &out)), (&csv_path, out.csv.clone())] {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            if let Err(e) = fs::create_dir_all(dir) {
                eprintln!("rkl: cannot create {}: {e}", dir.display());
                return EXIT_CONFIG;
            }
        }
        if let Err(e) = fs::write(path, body) {
            eprintln!("rkl: cannot write {}: {e}", path.display());
            return EXIT_CONFIG;
        }
    }
    println!("{}\n{}", json_path.display(), csv_path.display());
    if cfg.audit_mode && !out.audit_ok {
        eprintln!("rkl: audit violation");
        return EXIT_AUDIT;
    }
    EXIT_OK
}
