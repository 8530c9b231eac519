use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;
use rkl_core::spectral::*;
use rkl_core::surface::{GridChart, ModelSurface, Region, Revolution, Shape, SurfaceRef};

fn model(m: ModelSurface) -> SurfaceRef {
    SurfaceRef::Model(Arc::new(m))
}

fn ball(m: ModelSurface, r: f64) -> Region {
    Region::new(model(m), Shape::GeodesicBall { center: [0.0, 0.0], radius: r }).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

// J_0 by its power series, first zero by bisection.
fn bessel_j0(x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..60 {
        term *= -(x * x) / (4.0 * (k * k) as f64);
        sum += term;
    }
    sum
}

fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let fa = f(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (f(m) > 0.0) == (fa > 0.0) {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

// u'' + coth(s) u' + lambda u = 0, u(0) = 1; returns u(R) by RK4 from a series start.
fn hyperbolic_shoot(lambda: f64, r: f64) -> f64 {
    let s0 = 1e-4;
    // u = 1 - lambda s^2 / 4 near the pole
    let mut y = [1.0 - lambda * s0 * s0 / 4.0, -lambda * s0 / 2.0];
    let n = 40_000;
    let h = (r - s0) / n as f64;
    let f = |s: f64, y: [f64; 2]| [y[1], -y[1] / s.tanh() - lambda * y[0]];
    let mut s = s0;
    for _ in 0..n {
        let k1 = f(s, y);
        let k2 = f(s + h / 2.0, [y[0] + h / 2.0 * k1[0], y[1] + h / 2.0 * k1[1]]);
        let k3 = f(s + h / 2.0, [y[0] + h / 2.0 * k2[0], y[1] + h / 2.0 * k2[1]]);
        let k4 = f(s + h, [y[0] + h * k3[0], y[1] + h * k3[1]]);
        y[0] += h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
        y[1] += h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
        s += h;
    }
    y[0]
}

fn hyperbolic_oracle(r: f64) -> f64 {
    // first sign change of u(R) in lambda
    let mut lo = 0.25;
    let mut step = 0.01;
    while hyperbolic_shoot(lo + step, r) > 0.0 {
        lo += step;
        step *= 1.5;
    }
    bisect(|l| hyperbolic_shoot(l, r), lo, lo + step)
}

#[test]
fn euclidean_disc_matches_bessel_zero() {
    let j = bisect(bessel_j0, 2.0, 3.0);
    let rep = lambda1_dirichlet(&ball(ModelSurface::euclidean(), 1.0), &SpectralOptions::default()).unwrap();
    assert_eq!(rep.mode, Mode::Dirichlet);
    assert!(rel(rep.lambda1, j * j) < 1e-2, "{} vs {}", rep.lambda1, j * j);
    assert!(rep.bracket_ok());
}

#[test]
fn euclidean_square_is_two() {
    let rep = lambda1_cartesian(&|_, _| [1.0, 0.0, 1.0], &|_, _| true, [0.0, 0.0], [PI, PI], PI / 32.0, 1e-10).unwrap();
    assert!(rel(rep.lambda1, 2.0) < 1e-2, "{}", rep.lambda1);
    // second order: the extrapolation is much closer than either grid
    assert!(rel(rep.extrapolated, 2.0) < 0.1 * rel(rep.resolutions[1].1, 2.0));
}

#[test]
fn hyperbolic_ball_matches_radial_shooting() {
    for r in [2.0, 4.0, 8.0] {
        let oracle = hyperbolic_oracle(r);
        let rep = lambda1_dirichlet(&ball(ModelSurface::hyperbolic(), r), &SpectralOptions::default()).unwrap();
        assert!(rel(rep.lambda1, oracle) < 1e-2, "R={r}: {} vs {oracle}", rep.lambda1);
    }
}

#[test]
fn hyperbolic_balls_decrease_toward_quarter() {
    let vals: Vec<f64> = [3.0, 5.0, 8.0, 12.0]
        .iter()
        .map(|&r| lambda1_dirichlet(&ball(ModelSurface::hyperbolic(), r), &SpectralOptions::default()).unwrap().lambda1)
        .collect();
    for w in vals.windows(2) {
        assert!(w[1] < w[0]);
    }
    assert!(vals.iter().all(|&v| v > 0.25));
}

#[test]
fn chart_disc_on_hyperbolic_is_the_geodesic_ball() {
    let r = 3.0;
    let a = lambda1_dirichlet(&ball(ModelSurface::hyperbolic(), r), &SpectralOptions::default()).unwrap();
    let disc = Region::new(model(ModelSurface::hyperbolic()), Shape::ChartDisc { center: [0.0, 0.0], radius: (r / 2.0).tanh() }).unwrap();
    let b = lambda1_dirichlet(&disc, &SpectralOptions::default()).unwrap();
    assert!(rel(a.lambda1, b.lambda1) < 1e-10);
}

#[test]
fn chart_mask_region_square() {
    let n = 65;
    let chart = GridChart::from_fn(n, n, (0.0, PI), (0.0, PI), |_, _| [1.0, 0.0, 1.0]).unwrap();
    let mask = vec![true; n * n];
    let region = Region::new(SurfaceRef::Chart(Arc::new(chart)), Shape::Mask(mask)).unwrap();
    let rep = lambda1_dirichlet(&region, &SpectralOptions::default()).unwrap();
    assert!(rel(rep.lambda1, 2.0) < 1e-2, "{}", rep.lambda1);
    assert_eq!(rep.resolutions.len(), 2);
    assert!(rep.resolutions[0].0 > rep.resolutions[1].0);
}

#[test]
fn spheres_and_torus_closed() {
    let o = SpectralOptions::default();
    let s1 = lambda1_closed_meanzero(&ModelSurface::sphere(1.0).unwrap(), &o).unwrap();
    assert_eq!(s1.mode, Mode::MeanZeroClosed);
    assert!(rel(s1.lambda1, 2.0) < 1e-2, "{}", s1.lambda1);
    let s2 = lambda1_closed_meanzero(&ModelSurface::sphere(2.0).unwrap(), &o).unwrap();
    assert!(rel(s2.lambda1, 0.5) < 1e-2, "{}", s2.lambda1);
    let torus = ModelSurface::revolution(Revolution::flat_torus(1.0, 2.0 * PI).unwrap());
    let t = lambda1_closed_meanzero(&torus, &o).unwrap();
    assert!(rel(t.lambda1, 1.0) < 1e-2, "{}", t.lambda1);
}

#[test]
fn capped_revolution_round_sphere() {
    let m = ModelSurface::revolution(Revolution::round_sphere(1.0).unwrap());
    let r = lambda1_closed_meanzero(&m, &SpectralOptions::default()).unwrap();
    assert!(rel(r.lambda1, 2.0) < 1e-2, "{}", r.lambda1);
}

#[test]
fn noncompact_closed_is_rejected() {
    assert!(lambda1_closed_meanzero(&ModelSurface::euclidean(), &SpectralOptions::default()).is_err());
    assert!(lambda1_closed_meanzero(&ModelSurface::hyperbolic(), &SpectralOptions::default()).is_err());
}

#[test]
fn dbar_identity_square_and_disc() {
    let mesh = cartesian_mesh(&|_, _| [1.0, 0.0, 1.0], &|_, _| true, [0.0, 0.0], [PI, PI], PI / 48.0).unwrap();
    let d = dbar_identity(&mesh, 1e-10).unwrap();
    assert!(rel(d.lambda1, 2.0) < 2e-2 && d.gap <= 2e-2, "{d:?}");
    let j = bisect(bessel_j0, 2.0, 3.0);
    let d = lambda1_dbar_identity_check(&ball(ModelSurface::euclidean(), 1.0), &SpectralOptions::default()).unwrap();
    assert!(rel(d.lambda1, j * j) < 2e-2 && rel(d.ratio_inf, j * j) < 2e-2 && d.gap <= 2e-2, "{d:?}");
}

#[test]
fn dbar_identity_model_set() {
    let o = SpectralOptions::default();
    for region in [ball(ModelSurface::hyperbolic(), 4.0), ball(ModelSurface::sphere(1.0).unwrap(), 1.0)] {
        let d = lambda1_dbar_identity_check(&region, &o).unwrap();
        assert!(d.gap <= 2e-2, "{d:?}");
    }
}

#[test]
fn dbar_identity_scaling() {
    let c = 3.0;
    let a = dbar_identity(&cartesian_mesh(&|_, _| [1.0, 0.0, 1.0], &|_, _| true, [0.0, 0.0], [PI, PI], PI / 24.0).unwrap(), 1e-10).unwrap();
    let b = dbar_identity(&cartesian_mesh(&|_, _| [c, 0.0, c], &|_, _| true, [0.0, 0.0], [PI, PI], PI / 24.0).unwrap(), 1e-10).unwrap();
    assert!(rel(b.lambda1 * c, a.lambda1) < 1e-8);
    assert!(rel(b.ratio_inf * c, a.ratio_inf) < 1e-8);
    assert!((a.gap - b.gap).abs() < 1e-8);
}

#[test]
fn domain_monotonicity_nested_pairs() {
    let o = SpectralOptions::default();
    for (m, r1, r2) in [(ModelSurface::euclidean(), 0.7, 1.0), (ModelSurface::hyperbolic(), 1.0, 2.5), (ModelSurface::sphere(1.0).unwrap(), 0.5, 1.2)] {
        let a = lambda1_dirichlet(&ball(m.clone(), r1), &o).unwrap().lambda1;
        let b = lambda1_dirichlet(&ball(m, r2), &o).unwrap().lambda1;
        assert!(b <= a);
    }
}

#[test]
fn metric_scaling_covariance() {
    let c = 1.7_f64;
    let base = lambda1_cartesian(&|x, y| [1.0 + 0.2 * x, 0.1 * y, 1.0], &|_, _| true, [0.0, 0.0], [1.0, 1.0], 1.0 / 16.0, 1e-10).unwrap();
    let scaled = lambda1_cartesian(&|x, y| [c * c * (1.0 + 0.2 * x), c * c * 0.1 * y, c * c], &|_, _| true, [0.0, 0.0], [1.0, 1.0], 1.0 / 16.0, 1e-10).unwrap();
    assert!(rel(scaled.lambda1 * c * c, base.lambda1) < 1e-2);
    // I_inf of the hyperbolic plane with metric c^2 g
    let lam = |r: f64| 4.0 / (1.0 - r * r).powi(2);
    let scaled_h = ModelSurface::conformal_disc(Arc::new(move |x: f64, y: f64| c * c * lam((x * x + y * y).sqrt())), 1.0, true).unwrap();
    let a = isoperimetric_sweep(&ModelSurface::hyperbolic(), f64::INFINITY, 4.0, 12, false).unwrap();
    let b = isoperimetric_sweep(&scaled_h, f64::INFINITY, 4.0 * c, 12, false).unwrap();
    assert!(rel(b.inf_value * c, a.inf_value) < 1e-2, "{} {}", a.inf_value, b.inf_value);
}

#[test]
fn euclidean_sweep_constant() {
    let s = isoperimetric_sweep(&ModelSurface::euclidean(), 2.0, 10.0, 25, false).unwrap();
    let c = 2.0 * PI.sqrt();
    for r in s.ratios() {
        assert!((r - c).abs() < 1e-10);
    }
    assert_eq!(s.radii().len(), 25);
    assert!(s.to_csv().starts_with("r,area,perimeter,ratio\n"));
}

#[test]
fn hyperbolic_cheeger_sweep() {
    let s = isoperimetric_sweep(&ModelSurface::hyperbolic(), f64::INFINITY, 10.0, 40, false).unwrap();
    for row in &s.rows {
        assert!(rel(row.ratio, 1.0 / (row.r / 2.0).tanh()) < 1e-8);
    }
    assert!(rel(s.inf_value, 1.0 / 5.0_f64.tanh()) < 1e-8);
    assert!(rel(s.inf_value, 1.0) < 1e-3);
    assert!(!s.upper_estimate);
}

#[test]
fn sphere_compact_sweep() {
    let s = isoperimetric_sweep(&ModelSurface::sphere(1.0).unwrap(), 2.0, PI, 40, true).unwrap();
    assert!(rel(s.inf_value, (2.0 * PI).sqrt()) < 1e-6, "{}", s.inf_value);
}

#[test]
fn revolution_sweep_is_labeled() {
    let cyl = ModelSurface::revolution(Revolution::cylinder(1.0, 10.0).unwrap());
    let s = isoperimetric_sweep(&cyl, f64::INFINITY, 5.0, 10, false).unwrap();
    assert!(s.upper_estimate);
    // band of length r: perimeter 2pi, area 2pi r
    for row in &s.rows {
        assert!(rel(row.ratio, 1.0 / row.r) < 1e-8);
    }
}

#[test]
fn audit_cheeger_hyperbolic() {
    let sweep = isoperimetric_sweep(&ModelSurface::hyperbolic(), f64::INFINITY, 10.0, 40, false).unwrap();
    let rep = inequality_audit(&AuditInput { lambda1: Some(0.25), i_inf: Some(sweep.inf_value), slack: 0.02, ..Default::default() });
    assert_eq!(rep.entries.len(), 1);
    assert!((rep.entries[0].ratio - 1.0).abs() < 0.02);
    assert!(rep.all_hold);
}

#[test]
fn audit_li_sphere() {
    let s = isoperimetric_sweep(&ModelSurface::sphere(1.0).unwrap(), 2.0, PI, 40, true).unwrap();
    let rep = inequality_audit(&AuditInput { lambda1: Some(2.0), i_2: Some(s.inf_value), area: Some(4.0 * PI), ..Default::default() });
    assert!(rel(rep.entries[0].ratio, 4.0) < 1e-6);
    assert_eq!(rep.entries[0].threshold, LI_THRESHOLD);
    assert!(rep.all_hold);
}

#[test]
fn audit_sobolev_nash_euclidean_bumps() {
    let m = ModelSurface::euclidean();
    let r_max = 4.0;
    let nu = 4.0;
    let s = isoperimetric_sweep(&m, nu, r_max, 32, false).unwrap();
    let form = m.polar_form().unwrap();
    let bumps: Vec<BumpNorms> = [0.25, 0.5, 1.0, 2.0, 4.0].iter().map(|&sc| bump_norms(&form, sc, nu)).collect();
    let rep = inequality_audit(&AuditInput { i_nu: Some((nu, s.inf_value)), bumps, ..Default::default() });
    assert_eq!(rep.entries.len(), 10);
    assert!(rep.all_hold, "{rep:?}");
}

#[test]
fn bump_norms_against_closed_forms() {
    // flat plane, phi = 1 - S(s/a): ||phi||_1 = 2 pi a^2 int_0^1 (1 - S(t)) t dt
    let form = ModelSurface::euclidean().polar_form().unwrap();
    let a = 1.3;
    let b = bump_norms(&form, a, 4.0);
    // int_0^1 (1 - 10t^3 + 15t^4 - 6t^5) t dt = 1/2 - 2 + 5/2 - 6/7
    let l1 = 2.0 * PI * a * a * (0.5 - 2.0 + 2.5 - 6.0 / 7.0);
    assert!(rel(b.l1, l1) < 1e-12);
    // gradient norm is scale invariant in two dimensions
    let b2 = bump_norms(&form, 2.0 * a, 4.0);
    assert!(rel(b.grad_l2, b2.grad_l2) < 1e-12);
}

#[test]
fn audit_flags_violation() {
    let rep = inequality_audit(&AuditInput { lambda1: Some(0.1), i_inf: Some(1.0), ..Default::default() });
    assert!(!rep.all_hold);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sweep_inf_is_min_and_positive(nu in 1.1f64..8.0, r_max in 0.5f64..6.0, n in 2usize..20) {
        let s = isoperimetric_sweep(&ModelSurface::hyperbolic(), nu, r_max, n, false).unwrap();
        let m = s.ratios().into_iter().fold(f64::INFINITY, f64::min);
        prop_assert_eq!(m, s.inf_value);
        prop_assert!(s.ratios().iter().all(|&r| r > 0.0));
    }

    #[test]
    fn euclidean_sweep_exact(r_max in 0.01f64..100.0, n in 1usize..30) {
        let s = isoperimetric_sweep(&ModelSurface::euclidean(), 2.0, r_max, n, false).unwrap();
        for r in s.ratios() {
            prop_assert!((r - 2.0 * PI.sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn cheeger_holds_on_models(a in 0.3f64..5.0, r_max in 10.0f64..20.0) {
        let sphere = ModelSurface::sphere(a).unwrap();
        let lam = sphere.exact_data().lambda1.unwrap();
        let i_inf = isoperimetric_sweep(&sphere, f64::INFINITY, PI * a, 16, true).unwrap().inf_value;
        let rep = inequality_audit(&AuditInput { lambda1: Some(lam), i_inf: Some(i_inf), ..Default::default() });
        prop_assert!(rep.all_hold);
        let hyp = isoperimetric_sweep(&ModelSurface::hyperbolic(), f64::INFINITY, r_max, 8, false).unwrap();
        let rep = inequality_audit(&AuditInput { lambda1: Some(0.25), i_inf: Some(hyp.inf_value), slack: 0.02, ..Default::default() });
        prop_assert!(rep.all_hold);
    }
}
