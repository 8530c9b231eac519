use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;
use rkl_core::surface::*;
use rkl_core::Error;

fn model(m: ModelSurface) -> SurfaceRef {
    SurfaceRef::Model(Arc::new(m))
}

fn hyperbolic_tensor(x: f64, y: f64) -> [f64; 3] {
    let l = 4.0 / (1.0 - x * x - y * y).powi(2);
    [l, 0.0, l]
}

#[test]
fn metric_examples() {
    assert_eq!(ModelSurface::euclidean().metric_at([3.0, -2.0]).unwrap(), [1.0, 0.0, 1.0]);
    assert_eq!(ModelSurface::hyperbolic().metric_at([0.0, 0.0]).unwrap(), [4.0, 0.0, 4.0]);
    let s = ModelSurface::sphere(1.0).unwrap().metric_at([PI / 2.0, 0.4]).unwrap();
    assert!((s[0] - 1.0).abs() < 1e-15 && s[1] == 0.0 && (s[2] - 1.0).abs() < 1e-15);
    assert!(ModelSurface::hyperbolic().metric_at([0.8, 0.8]).is_err());
}

#[test]
fn chart_metric_interpolates() {
    let c = GridChart::with_spacing((0.0, 1.0), (0.0, 1.0), 1.0 / 16.0, |x, y| [1.0 + x, 0.0, 2.0 + y]).unwrap();
    let t = c.metric_at([0.33, 0.71]).unwrap();
    assert!((t[0] - 1.33).abs() < 1e-12 && (t[2] - 2.71).abs() < 1e-12);
    assert!(c.metric_at([1.5, 0.5]).is_err());
}

#[test]
fn curvature_examples() {
    assert_eq!(ModelSurface::euclidean().gaussian_curvature([1.0, 1.0]).unwrap(), 0.0);
    assert_eq!(ModelSurface::sphere(2.0).unwrap().gaussian_curvature([1.0, 0.0]).unwrap(), 0.25);
    // conformal form of the hyperbolic disc goes through the -(1/2 lambda) Laplacian of log lambda path
    let conf = ModelSurface::conformal_disc(Arc::new(|x, y| hyperbolic_tensor(x, y)[0]), 1.0, true).unwrap();
    assert!((conf.gaussian_curvature([0.3, 0.0]).unwrap() + 1.0).abs() < 1e-6);
    let cyl = ModelSurface::revolution(Revolution::cylinder(1.5, 4.0).unwrap());
    assert_eq!(cyl.gaussian_curvature([1.0, 0.0]).unwrap(), 0.0);
}

#[test]
fn chart_curvature_is_second_order() {
    let mut errs = Vec::new();
    for h in [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0] {
        let c = GridChart::with_spacing((-0.5, 0.5), (-0.5, 0.5), h, hyperbolic_tensor).unwrap();
        let err = [[0.3, 0.0], [0.0, 0.0], [-0.2, 0.25], [0.1, -0.3]]
            .iter()
            .map(|p| (c.gaussian_curvature(*p).unwrap() + 1.0).abs())
            .fold(0.0, f64::max);
        errs.push(err);
    }
    assert!(errs[0] / errs[1] >= 3.0 && errs[1] / errs[2] >= 3.0, "{errs:?}");
}

#[test]
fn chart_curvature_of_sphere_chart() {
    // colatitude/longitude chart away from the poles
    let c = GridChart::with_spacing((0.8, 2.2), (0.0, 1.0), 1.0 / 64.0, |t, _| [1.0, 0.0, t.sin().powi(2)]).unwrap();
    assert!((c.gaussian_curvature([1.5, 0.5]).unwrap() - 1.0).abs() < 1e-3);
}

#[test]
fn distance_examples() {
    assert_eq!(ModelSurface::euclidean().geodesic_distance([0.0, 0.0], [3.0, 4.0]).unwrap().value, 5.0);
    let r: f64 = 0.6;
    let d = ModelSurface::hyperbolic().geodesic_distance([0.0, 0.0], [0.0, r]).unwrap();
    assert!((d.value - ((1.0 + r) / (1.0 - r)).ln()).abs() < 1e-14);
    assert_eq!(d.error_bound, 0.0);
    let s = ModelSurface::sphere(1.0).unwrap().geodesic_distance([0.0, 0.0], [PI / 2.0, 1.0]).unwrap();
    assert!((s.value - PI / 2.0).abs() < 1e-14);
}

#[test]
fn fast_marching_on_flat_chart() {
    let c = GridChart::with_spacing((0.0, 2.0), (0.0, 2.0), 1.0 / 64.0, |_, _| [1.0, 0.0, 1.0]).unwrap();
    let d = c.geodesic_distance([0.25, 0.25], [1.75, 1.25]).unwrap();
    let exact = 1.5f64.hypot(1.0);
    assert!((d.value - exact).abs() <= d.error_bound.max(1e-12), "{} vs {exact} bound {}", d.value, d.error_bound);
    assert!((d.value - exact).abs() < 0.05);
}

#[test]
fn fast_marching_error_shrinks_with_h() {
    let exact = ModelSurface::hyperbolic().geodesic_distance([0.0, 0.0], [0.4, 0.2]).unwrap().value;
    let errs: Vec<f64> = [1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0]
        .iter()
        .map(|&h| {
            let c = GridChart::with_spacing((-0.6, 0.6), (-0.6, 0.6), h, hyperbolic_tensor).unwrap();
            (c.geodesic_distance([0.0, 0.0], [0.4, 0.2]).unwrap().value - exact).abs()
        })
        .collect();
    assert!(errs[2] < errs[0], "{errs:?}");
}

#[test]
fn disconnected_mask_is_rejected() {
    let c = Arc::new(GridChart::with_spacing((0.0, 1.0), (0.0, 1.0), 1.0 / 8.0, |_, _| [1.0, 0.0, 1.0]).unwrap());
    let n = c.nx * c.ny;
    let mut mask = vec![false; n];
    mask[0] = true;
    mask[n - 1] = true;
    let e = Region::new(SurfaceRef::Chart(c), Shape::Mask(mask)).unwrap_err();
    assert!(matches!(e, Error::Domain(_)));
}

#[test]
fn geodesic_ball_examples() {
    let b = geodesic_ball(&model(ModelSurface::hyperbolic()), [0.0, 0.0], 3.0).unwrap();
    match b.shape {
        Shape::ChartDisc { radius, .. } => assert!((radius - 0.90515).abs() < 1e-5),
        ref s => panic!("{s:?}"),
    }
    let e = geodesic_ball(&model(ModelSurface::euclidean()), [0.0, 0.0], 2.0).unwrap();
    assert!((e.area().unwrap() - 4.0 * PI).abs() < 1e-10);
    let hemi = geodesic_ball(&model(ModelSurface::sphere(1.0).unwrap()), [0.0, 0.0], PI / 2.0).unwrap();
    let (a, p) = measure(&hemi).unwrap();
    assert!((a - 2.0 * PI).abs() < 1e-8 && (p - 2.0 * PI).abs() < 1e-8);
    assert!(geodesic_ball(&model(ModelSurface::euclidean()), [0.0, 0.0], 0.0).is_err());
}

#[test]
fn chart_ball_beyond_reach_is_truncated() {
    let c = SurfaceRef::Chart(Arc::new(GridChart::with_spacing((-1.0, 1.0), (-1.0, 1.0), 1.0 / 16.0, |_, _| [1.0, 0.0, 1.0]).unwrap()));
    assert!(matches!(geodesic_ball(&c, [0.0, 0.0], 1.5), Err(Error::Truncation { .. })));
    let b = geodesic_ball(&c, [0.0, 0.0], 0.5).unwrap();
    let (a, p) = measure(&b).unwrap();
    assert!((a - PI * 0.25).abs() < 0.1 && (p - PI).abs() < 0.3, "{a} {p}");
}

#[test]
fn hyperbolic_ball_measures() {
    for r in [0.5, 1.0, 2.0, 3.0, 5.0] {
        let b = geodesic_ball(&model(ModelSurface::hyperbolic()), [0.0, 0.0], r).unwrap();
        let (a, p) = measure(&b).unwrap();
        let (ea, ep) = (2.0 * PI * (r.cosh() - 1.0), 2.0 * PI * r.sinh());
        assert!((a - ea).abs() < 5e-3 * ea && (p - ep).abs() < 5e-3 * ep, "r={r}: {a} {p}");
    }
    let b = Region::new(model(ModelSurface::hyperbolic()), Shape::GeodesicBall { center: [0.0, 0.0], radius: 2.0 }).unwrap();
    // 2 pi (cosh 2 - 1) = 17.355387...
    assert!((b.area().unwrap() - 17.355_387).abs() < 1e-5, "{}", b.area().unwrap());
}

#[test]
fn injectivity_radius_examples() {
    assert_eq!(ModelSurface::hyperbolic().injectivity_radius([0.3, 0.1]).unwrap(), f64::INFINITY);
    assert_eq!(ModelSurface::euclidean().injectivity_radius([0.0, 0.0]).unwrap(), f64::INFINITY);
    assert!((ModelSurface::sphere(1.0).unwrap().injectivity_radius([1.0, 0.0]).unwrap() - PI).abs() < 1e-15);
    let cyl = ModelSurface::revolution(Revolution::cylinder(0.5, 20.0).unwrap());
    assert!((cyl.injectivity_radius([10.0, 0.0]).unwrap() - PI * 0.5).abs() < 1e-12);
    let conf = ModelSurface::conformal_disc(Arc::new(|_, _| 1.0), 1.0, true).unwrap();
    assert!(matches!(conf.injectivity_radius([0.0, 0.0]), Err(Error::Unsupported(_))));
}

#[test]
fn chart_file_format() {
    let text = "nx=8\nny=8\nx0=0\nx1=1\ny0=0\ny1=1\n".to_string() + &"1 0 1\n".repeat(64);
    let c = GridChart::parse(&text).unwrap();
    assert_eq!((c.nx, c.ny), (8, 8));
    let short = "nx=8\nny=8\nx0=0\nx1=1\ny0=0\ny1=1\n".to_string() + &"1 0 1\n".repeat(63);
    assert!(GridChart::parse(&short).is_err());
    let small = "nx=4\nny=4\nx0=0\nx1=1\ny0=0\ny1=1\n".to_string() + &"1 0 1\n".repeat(16);
    assert!(GridChart::parse(&small).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn perturbed_charts_stay_positive_definite(a in -0.3f64..0.3, b in -0.3f64..0.3, c in -0.2f64..0.2) {
        let chart = GridChart::with_spacing((0.0, 1.0), (0.0, 1.0), 1.0 / 16.0, |x, y| [1.0 + a * x, c * x * y, 1.0 + b * y]).unwrap();
        for j in 0..chart.ny {
            for i in 0..chart.nx {
                let t = chart.tensor(i, j);
                prop_assert!(t[0] > 0.0 && t[0] * t[2] - t[1] * t[1] > 0.0);
            }
        }
    }

    #[test]
    fn hyperbolic_distance_is_a_metric(
        p in (-0.7f64..0.7, -0.7f64..0.7), q in (-0.7f64..0.7, -0.7f64..0.7), m in (-0.7f64..0.7, -0.7f64..0.7)
    ) {
        let h = ModelSurface::hyperbolic();
        prop_assume!(p.0.hypot(p.1) < 0.95 && q.0.hypot(q.1) < 0.95 && m.0.hypot(m.1) < 0.95);
        let d = |a: (f64, f64), b: (f64, f64)| h.geodesic_distance([a.0, a.1], [b.0, b.1]).unwrap().value;
        prop_assert_eq!(d(p, q), d(q, p));
        prop_assert!(d(p, q) <= d(p, m) + d(m, q) + 1e-12);
    }

    #[test]
    fn sphere_distance_is_a_metric(p in (0.0f64..PI, 0.0f64..(2.0 * PI)), q in (0.0f64..PI, 0.0f64..(2.0 * PI)), m in (0.0f64..PI, 0.0f64..(2.0 * PI))) {
        let s = ModelSurface::sphere(1.0).unwrap();
        let d = |a: (f64, f64), b: (f64, f64)| s.geodesic_distance([a.0, a.1], [b.0, b.1]).unwrap().value;
        prop_assert!((d(p, q) - d(q, p)).abs() < 1e-14);
        prop_assert!(d(p, q) <= d(p, m) + d(m, q) + 1e-12);
        prop_assert!(d(p, q) <= PI + 1e-12);
    }
}

#[test]
fn chart_distance_triangle_inequality() {
    let c = GridChart::with_spacing((-0.5, 0.5), (-0.5, 0.5), 1.0 / 32.0, hyperbolic_tensor).unwrap();
    let pts = [[0.0, 0.0], [0.3, 0.1], [-0.2, 0.35], [0.1, -0.4]];
    for p in pts {
        for q in pts {
            let d = c.geodesic_distance(p, q).unwrap();
            let back = c.geodesic_distance(q, p).unwrap();
            assert!((d.value - back.value).abs() <= d.error_bound + back.error_bound + 1e-12);
            for m in pts {
                let (a, b) = (c.geodesic_distance(p, m).unwrap(), c.geodesic_distance(m, q).unwrap());
                assert!(d.value <= a.value + b.value + d.error_bound + a.error_bound + b.error_bound);
            }
        }
    }
}
