use num_complex::Complex64;
use proptest::prelude::*;
use rkl_core::isothermal::*;
use rkl_core::surface::GridChart;

fn chart(h: f64, range: (f64, f64), yr: (f64, f64), m: impl Fn(f64, f64) -> [f64; 3]) -> GridChart {
    GridChart::with_spacing(range, yr, h, m).unwrap()
}

/// Residual of the best complex-affine fit w ~ a z + b conj z + c over the patch.
fn affine_fit_residual(p: &IsothermalPatch, target: impl Fn(f64, f64) -> Complex64) -> f64 {
    // fit w = alpha * target + beta by least squares
    let n = p.nodes.len() as f64;
    let t: Vec<Complex64> = p.points.iter().map(|q| target(q[0], q[1])).collect();
    let mt = t.iter().sum::<Complex64>() / n;
    let mw = p.w.iter().sum::<Complex64>() / n;
    let num: Complex64 = t.iter().zip(&p.w).map(|(a, b)| (a - mt).conj() * (b - mw)).sum();
    let den: f64 = t.iter().map(|a| (a - mt).norm_sqr()).sum();
    let alpha = num / den;
    let scale = p.w.iter().map(|w| w.norm()).fold(0.0, f64::max);
    t.iter().zip(&p.w).map(|(a, b)| (alpha * (a - mt) + mw - b).norm()).fold(0.0, f64::max) / scale
}

#[test]
fn anisotropic_constant_metric() {
    let c = chart(1.0 / 64.0, (-1.0, 1.0), (-1.0, 1.0), |_, _| [4.0, 0.0, 1.0]);
    let p = solve_isothermal(&c, [0.0, 0.0], &IsothermalOptions::default()).unwrap();
    assert!(p.cr_residual < 1e-8);
    assert!(affine_fit_residual(&p, |x, y| Complex64::new(2.0 * x, y)) < 1e-10);
}

#[test]
fn polar_curvature_drop() {
    let mut errs = vec![];
    for h in [1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0] {
        let c = chart(h, (0.5, 1.5), (-0.5, 0.5), |x, _| [1.0, 0.0, x * x]);
        let p = solve_isothermal(&c, [1.0, 0.0], &IsothermalOptions::default()).unwrap();
        errs.push(p.curvature_error);
    }
    assert!(errs[1] * 3.0 <= errs[0]);
    assert!(errs[2] * 3.0 <= errs[1]);
}

#[test]
fn beltrami_examples() {
    let (s, m) = beltrami_at([1.0, 0.0, 1.0]).unwrap();
    assert_eq!((s, m), (1.0, Complex64::new(0.0, 0.0)));
    let (a, b) = (3.0, 1.5);
    let (s, m) = beltrami_at([a * a, 0.0, b * b]).unwrap();
    assert!((s - (a + b) * (a + b) / 4.0).abs() < 1e-14);
    assert!((m - Complex64::new((a - b) / (a + b), 0.0)).norm() < 1e-15);
    for r in [0.5, 1.0, 1.4] {
        let (s, m) = beltrami_at([1.0, 0.0, r * r]).unwrap();
        assert!((s - (1.0 + r) * (1.0 + r) / 4.0).abs() < 1e-14);
        assert!((m.re - (1.0 - r) / (1.0 + r)).abs() < 1e-15 && m.im == 0.0);
    }
    assert!(beltrami_at([1.0, 2.0, 1.0]).is_none());
}

#[test]
fn beltrami_field_on_a_chart() {
    let c = chart(1.0 / 16.0, (0.5, 1.5), (-0.5, 0.5), |x, _| [1.0, 0.0, x * x]);
    let d = beltrami_data(&c).unwrap();
    for j in 0..c.ny {
        for i in 0..c.nx {
            let r = c.node(i, j)[0];
            assert!((d.mu[c.idx(i, j)].re - (1.0 - r) / (1.0 + r)).abs() < 1e-14);
            assert!(d.sigma[c.idx(i, j)] > 0.0);
        }
    }
}

#[test]
fn elliptic_coefficient_examples() {
    let flat = elliptic_coefficients(&chart(1.0 / 8.0, (0.0, 1.0), (0.0, 1.0), |_, _| [1.0, 0.0, 1.0])).unwrap();
    assert!(flat.a11.iter().chain(&flat.a22).all(|v| *v == 1.0));
    assert!(flat.a12.iter().chain(&flat.b1).chain(&flat.b2).all(|v| *v == 0.0));
    let aniso = elliptic_coefficients(&chart(1.0 / 8.0, (0.0, 1.0), (0.0, 1.0), |_, _| [4.0, 0.0, 1.0])).unwrap();
    assert!(aniso.a11.iter().all(|v| (v - 0.5).abs() < 1e-15) && aniso.a22.iter().all(|v| (v - 2.0).abs() < 1e-15));
    for k in 0..aniso.a11.len() {
        assert!((aniso.a11[k] * aniso.a22[k] - aniso.a12[k].powi(2) - 1.0).abs() < 1e-12);
        assert!(aniso.b1[k].abs() < 1e-12 && aniso.b2[k].abs() < 1e-12);
    }
    let c = chart(1.0 / 64.0, (-1.0, 1.0), (0.0, 1.0), |x, _| [1.0 + x * x, 0.0, 1.0]);
    let e = elliptic_coefficients(&c).unwrap();
    let mut worst: f64 = 0.0;
    for j in 0..c.ny {
        for i in 1..c.nx - 1 {
            let x = c.node(i, j)[0];
            let k = c.idx(i, j);
            assert!((e.a11[k] - (1.0 + x * x).powf(-0.5)).abs() < 1e-14);
            worst = worst.max((e.b1[k] + x * (1.0 + x * x).powf(-1.5)).abs());
        }
    }
    assert!(worst < 1e-4, "{worst}");
}

fn manual_jet(b1: f64) -> CoefficientJet {
    let unit = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let zero = [0.0; 6];
    CoefficientJet { a11: unit, a12: zero, a22: unit, b1: [b1, 0.0, 0.0, 0.0, 0.0, 0.0], b2: zero }
}

#[test]
fn jet_of_the_laplacian_is_linear() {
    let p = jet_correction(&manual_jet(0.0), [0.0, 0.0]).unwrap();
    for a in 0..5 {
        for b in 0..5 {
            let want = if (a, b) == (1, 0) || (a, b) == (0, 1) { 1.0 } else { 0.0 };
            assert!((p.coefficient(a, b) - want).abs() < 1e-15);
        }
    }
}

#[test]
fn jet_quadratic_correction() {
    let beta = 0.7;
    let p = jet_correction(&manual_jet(beta), [0.0, 0.0]).unwrap();
    assert!((p.xi.c[2][0] + beta / 2.0).abs() < 1e-15);
    assert_eq!(p.xi.c[0][2], 0.0);
    assert!(jet_residual(&manual_jet(beta), &p).iter().all(|r| r.abs() < 1e-12));
    let g = p.gradient([0.0, 0.0]);
    assert!((g[0] - 1.0).abs() < 1e-15 && (g[1] - 1.0).abs() < 1e-15);
}

/// L u = a11 u_xx - 2 a12 u_xy + a22 u_yy + b1 u_x + b2 u_y by nested central differences.
fn apply_l(metric: &dyn Fn(f64, f64) -> [f64; 3], u: &dyn Fn(f64, f64) -> f64, x: f64, y: f64, h: f64) -> f64 {
    let a = |k: usize, x: f64, y: f64| principal(metric(x, y))[k];
    let dx = |f: &dyn Fn(f64, f64) -> f64, x: f64, y: f64| (f(x + h, y) - f(x - h, y)) / (2.0 * h);
    let dy = |f: &dyn Fn(f64, f64) -> f64, x: f64, y: f64| (f(x, y + h) - f(x, y - h)) / (2.0 * h);
    let uxx = (u(x + h, y) - 2.0 * u(x, y) + u(x - h, y)) / (h * h);
    let uyy = (u(x, y + h) - 2.0 * u(x, y) + u(x, y - h)) / (h * h);
    let uxy = (u(x + h, y + h) - u(x + h, y - h) - u(x - h, y + h) + u(x - h, y - h)) / (4.0 * h * h);
    let b1 = dx(&|x, y| a(0, x, y), x, y) - dy(&|x, y| a(1, x, y), x, y);
    let b2 = dy(&|x, y| a(2, x, y), x, y) - dx(&|x, y| a(1, x, y), x, y);
    a(0, x, y) * uxx - 2.0 * a(1, x, y) * uxy + a(2, x, y) * uyy + b1 * dx(u, x, y) + b2 * dy(u, x, y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn jet_annihilates_l_to_second_order(p in -0.4f64..0.4, q in -0.4f64..0.4, r in -0.3f64..0.3, s in -0.4f64..0.4) {
        let metric = move |x: f64, y: f64| [1.5 + p * x + q * y * y, r * (x + y).sin(), 1.0 + s * (x * y + x).cos() * 0.5 + 0.5];
        let c = [0.1, -0.05];
        let jet = CoefficientJet::from_metric(&metric, c, 1e-3);
        let poly = jet_correction(&jet, c).unwrap();
        let zeta = |x: f64, y: f64| poly.eval([x, y]);
        let h = 1e-3;
        let l0 = apply_l(&metric, &zeta, c[0], c[1], h);
        let lx = (apply_l(&metric, &zeta, c[0] + h, c[1], h) - apply_l(&metric, &zeta, c[0] - h, c[1], h)) / (2.0 * h);
        let ly = (apply_l(&metric, &zeta, c[0], c[1] + h, h) - apply_l(&metric, &zeta, c[0], c[1] - h, h)) / (2.0 * h);
        prop_assert!(l0.abs() <= 1e-6, "L zeta(0) = {l0}");
        prop_assert!(lx.hypot(ly) <= 1e-5, "grad = {lx} {ly}");
    }

    #[test]
    fn ellipticity_on_random_tensors(e in 0.01f64..100.0, g in 0.01f64..100.0, t in -0.999f64..0.999) {
        let f = t * (e * g).sqrt();
        let (sigma, mu) = beltrami_at([e, f, g]).unwrap();
        prop_assert!(sigma > 0.0 && mu.norm() < 1.0);
    }
}

#[test]
fn euclidean_chart_is_already_isothermal() {
    let c = chart(1.0 / 32.0, (-1.0, 1.0), (-1.0, 1.0), |_, _| [1.0, 0.0, 1.0]);
    let p = solve_isothermal(&c, [0.0, 0.0], &IsothermalOptions::default()).unwrap();
    assert!(affine_fit_residual(&p, Complex64::new) < 1e-10);
    assert!(p.lambda.iter().all(|l| (l - 1.0).abs() < 1e-10));
    assert!(p.weak_norm <= p.weak_bound * (1.0 + 1e-12) + 1e-300);
}

#[test]
fn conformal_chart_gauge_identity() {
    let mut res = Vec::new();
    for h in [1.0 / 32.0, 1.0 / 64.0] {
        let c = chart(h, (-1.0, 1.0), (-1.0, 1.0), |x, y| {
            let l = (0.3 * x + 0.2 * y * y).exp();
            [l, 0.0, l]
        });
        let p = solve_isothermal(&c, [0.0, 0.0], &IsothermalOptions::default()).unwrap();
        assert!(p.jacobian_min > 0.0 && p.weak_norm <= p.weak_bound * (1.0 + 1e-12));
        res.push(affine_fit_residual(&p, Complex64::new));
    }
    // mu vanishes, so the discrete system reproduces w = z up to rounding
    assert!(res.iter().all(|r| *r < 1e-8), "{res:?}");
}

#[test]
fn sequence_constant_has_zero_differences() {
    let m = |x: f64, _: f64| [1.0 + 0.2 * x * x, 0.0, 1.0];
    let limit = chart(1.0 / 32.0, (-1.0, 1.0), (-1.0, 1.0), m);
    let charts: Vec<(f64, GridChart)> = (1..4).map(|j| (j as f64, chart(1.0 / 32.0, (-1.0, 1.0), (-1.0, 1.0), m))).collect();
    let r = patch_sequence_convergence(&charts, &limit, [0.0, 0.0], &IsothermalOptions::default()).unwrap();
    assert!(r.rows.iter().all(|row| row.sup_w == 0.0 && row.sup_lambda == 0.0));
    assert!(r.monotone);
}

#[test]
fn sequence_of_scaled_flat_metrics() {
    let limit = chart(1.0 / 32.0, (-1.0, 1.0), (-1.0, 1.0), |_, _| [1.0, 0.0, 1.0]);
    let charts: Vec<(f64, GridChart)> = [2.0, 4.0, 8.0, 16.0]
        .iter()
        .map(|&j: &f64| {
            let s = 1.0 + 1.0 / j;
            (j, chart(1.0 / 32.0, (-1.0, 1.0), (-1.0, 1.0), move |_, _| [s, 0.0, s]))
        })
        .collect();
    let r = patch_sequence_convergence(&charts, &limit, [0.0, 0.0], &IsothermalOptions::default()).unwrap();
    for row in &r.rows {
        assert!((row.sup_lambda - 1.0 / row.j).abs() < 1e-8, "{row:?}");
    }
    assert!((r.lambda_rate.unwrap() - 1.0).abs() < 0.2);
}

#[test]
fn sequence_of_anisotropic_perturbations() {
    let h = 1.0 / 64.0;
    let limit = chart(h, (-1.0, 1.0), (-1.0, 1.0), |_, _| [1.0, 0.0, 1.0]);
    let charts: Vec<(f64, GridChart)> = [5.0, 10.0, 25.0, 50.0, 100.0]
        .iter()
        .map(|&j: &f64| (j, chart(h, (-1.0, 1.0), (-1.0, 1.0), move |x, _| [1.0 + x * x / j, 0.0, 1.0])))
        .collect();
    let r = patch_sequence_convergence(&charts, &limit, [0.0, 0.0], &IsothermalOptions::default()).unwrap();
    assert!(r.monotone, "{:?}", r.rows);
    let last = r.rows.last().unwrap();
    assert!(last.sup_w < 1e-3 && last.sup_lambda < 1e-3, "{last:?}");
}

#[test]
fn mismatched_grids_are_rejected() {
    let limit = chart(1.0 / 16.0, (-1.0, 1.0), (-1.0, 1.0), |_, _| [1.0, 0.0, 1.0]);
    let other = chart(1.0 / 32.0, (-1.0, 1.0), (-1.0, 1.0), |_, _| [1.0, 0.0, 1.0]);
    assert!(patch_sequence_convergence(&[(1.0, other)], &limit, [0.0, 0.0], &IsothermalOptions::default()).is_err());
}
