//! Isothermal coordinates by the Korn-Lichtenstein construction.
//!
//! For ds^2 = E dx^2 + 2F dx dy + G dy^2 write ds^2 = sigma |dz + mu dz̄|^2.
//! A solution u of the divergence-form equation L u = 0 with
//! L = div(A grad), A = sqrt(EG - F^2) g^{-1}, together with its conjugate v
//! from the first-order system, gives w = v + iu with w_z̄ = mu w_z.
//! The metric is then lambda |dw|^2 with lambda = sigma / |w_z|^2.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, spmv, submatrix, SparseBuilder, SpdSolver};
use crate::mesh::{GridSpec, Mesh, Tensor};
use crate::surface::{GridChart, Point};

/// sigma and mu on the chart grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BeltramiData {
    pub sigma: Vec<f64>,
    pub mu: Vec<Complex64>,
}

/// (sigma, mu) of a single tensor.
pub fn beltrami_at(t: Tensor) -> Option<(f64, Complex64)> {
    let [e, f, g] = t;
    let d = e * g - f * f;
    if !(e > 0.0 && d > 0.0) {
        return None;
    }
    let sigma = 0.25 * (e + g) + 0.5 * d.sqrt();
    Some((sigma, Complex64::new(e - g, 2.0 * f) / (4.0 * sigma)))
}

pub fn beltrami_data(chart: &GridChart) -> Result<BeltramiData> {
    let n = chart.nx * chart.ny;
    let mut sigma = Vec::with_capacity(n);
    let mut mu = Vec::with_capacity(n);
    for k in 0..n {
        let (s, m) = beltrami_at([chart.e[k], chart.f[k], chart.g[k]]).ok_or(Error::Metric { i: k % chart.nx, j: k / chart.nx })?;
        if !(m.norm() < 1.0) {
            return Err(Error::Metric { i: k % chart.nx, j: k / chart.nx });
        }
        sigma.push(s);
        mu.push(m);
    }
    Ok(BeltramiData { sigma, mu })
}

/// Principal coefficients (a11, a12, a22) of a tensor; determinant one.
pub fn principal(t: Tensor) -> [f64; 3] {
    let sd = (t[0] * t[2] - t[1] * t[1]).sqrt();
    [t[2] / sd, t[1] / sd, t[0] / sd]
}

/// L u = a11 u_xx - 2 a12 u_xy + a22 u_yy + b1 u_x + b2 u_y.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipticCoefficients {
    pub a11: Vec<f64>,
    pub a12: Vec<f64>,
    pub a22: Vec<f64>,
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
}

pub fn elliptic_coefficients(chart: &GridChart) -> Result<EllipticCoefficients> {
    let n = chart.nx * chart.ny;
    let (mut a11, mut a12, mut a22) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for k in 0..n {
        let [p, q, r] = principal([chart.e[k], chart.f[k], chart.g[k]]);
        a11.push(p);
        a12.push(q);
        a22.push(r);
    }
    let b1: Vec<f64> = chart.d_x(&a11).iter().zip(chart.d_y(&a12)).map(|(a, b)| a - b).collect();
    let b2: Vec<f64> = chart.d_y(&a22).iter().zip(chart.d_x(&a12)).map(|(a, b)| a - b).collect();
    Ok(EllipticCoefficients { a11, a12, a22, b1, b2 })
}

/// Real polynomial in (X, Y) of total degree at most 4; `c[p][q]` multiplies X^p Y^q.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BiPoly {
    pub c: [[f64; 5]; 5],
}

impl BiPoly {
    pub const DEGREE: usize = 4;

    pub fn constant(v: f64) -> Self {
        let mut p = Self::default();
        p.c[0][0] = v;
        p
    }

    pub fn monomial(p: usize, q: usize, v: f64) -> Self {
        let mut r = Self::default();
        r.c[p][q] = v;
        r
    }

    pub fn x() -> Self {
        Self::monomial(1, 0, 1.0)
    }

    pub fn y() -> Self {
        Self::monomial(0, 1, 1.0)
    }

    /// Second-order Taylor polynomial from (f, fx, fy, fxx, fxy, fyy).
    pub fn from_taylor(t: [f64; 6]) -> Self {
        let mut p = Self::default();
        p.c[0][0] = t[0];
        p.c[1][0] = t[1];
        p.c[0][1] = t[2];
        p.c[2][0] = 0.5 * t[3];
        p.c[1][1] = t[4];
        p.c[0][2] = 0.5 * t[5];
        p
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut r = *self;
        for p in 0..5 {
            for q in 0..5 {
                r.c[p][q] += o.c[p][q];
            }
        }
        r
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut r = *self;
        for row in r.c.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        r
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.add(&o.scale(-1.0))
    }

    /// Product truncated at total degree 4.
    pub fn mul(&self, o: &Self) -> Self {
        let mut r = Self::default();
        for p1 in 0..5 {
            for q1 in 0..5 - p1 {
                let a = self.c[p1][q1];
                if a == 0.0 {
                    continue;
                }
                for p2 in 0..5 - p1 - q1 {
                    for q2 in 0..5 - p1 - q1 - p2 {
                        r.c[p1 + p2][q1 + q2] += a * o.c[p2][q2];
                    }
                }
            }
        }
        r
    }

    pub fn dx(&self) -> Self {
        let mut r = Self::default();
        for p in 1..5 {
            for q in 0..5 - p {
                r.c[p - 1][q] = p as f64 * self.c[p][q];
            }
        }
        r
    }

    pub fn dy(&self) -> Self {
        let mut r = Self::default();
        for p in 0..5 {
            for q in 1..5 - p {
                r.c[p][q - 1] = q as f64 * self.c[p][q];
            }
        }
        r
    }

    pub fn truncate(&self, deg: usize) -> Self {
        let mut r = *self;
        for p in 0..5 {
            for q in 0..5 {
                if p + q > deg {
                    r.c[p][q] = 0.0;
                }
            }
        }
        r
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let mut s = 0.0;
        let mut xp = 1.0;
        for p in 0..5 {
            let mut yq = 1.0;
            for q in 0..5 - p {
                s += self.c[p][q] * xp * yq;
                yq *= y;
            }
            xp *= x;
        }
        s
    }

    /// Derivative d^{p+q} / dX^p dY^q at the origin.
    pub fn derivative_at_origin(&self, p: usize, q: usize) -> f64 {
        let fact = |n: usize| (1..=n).product::<usize>() as f64;
        self.c[p][q] * fact(p) * fact(q)
    }
}

/// Second-order Taylor data (f, fx, fy, fxx, fxy, fyy) of the coefficients at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientJet {
    pub a11: [f64; 6],
    pub a12: [f64; 6],
    pub a22: [f64; 6],
    pub b1: [f64; 6],
    pub b2: [f64; 6],
}

fn taylor(f: &dyn Fn(f64, f64) -> f64, c: Point, h: f64) -> [f64; 6] {
    let [x, y] = c;
    let f0 = f(x, y);
    [
        f0,
        (f(x + h, y) - f(x - h, y)) / (2.0 * h),
        (f(x, y + h) - f(x, y - h)) / (2.0 * h),
        (f(x + h, y) - 2.0 * f0 + f(x - h, y)) / (h * h),
        (f(x + h, y + h) - f(x + h, y - h) - f(x - h, y + h) + f(x - h, y - h)) / (4.0 * h * h),
        (f(x, y + h) - 2.0 * f0 + f(x, y - h)) / (h * h),
    ]
}

impl CoefficientJet {
    /// Central differences of the coefficient fields at node (i, j).
    pub fn from_grid(chart: &GridChart, coeffs: &EllipticCoefficients, i: usize, j: usize) -> Result<Self> {
        if i < 1 || j < 1 || i + 1 >= chart.nx || j + 1 >= chart.ny {
            return Err(Error::Stencil(format!("node ({i}, {j}) lacks a one-node margin")));
        }
        let h = chart.h;
        let at = |field: &Vec<f64>| -> [f64; 6] {
            let v = |di: i64, dj: i64| field[chart.idx((i as i64 + di) as usize, (j as i64 + dj) as usize)];
            [
                v(0, 0),
                (v(1, 0) - v(-1, 0)) / (2.0 * h),
                (v(0, 1) - v(0, -1)) / (2.0 * h),
                (v(1, 0) - 2.0 * v(0, 0) + v(-1, 0)) / (h * h),
                (v(1, 1) - v(1, -1) - v(-1, 1) + v(-1, -1)) / (4.0 * h * h),
                (v(0, 1) - 2.0 * v(0, 0) + v(0, -1)) / (h * h),
            ]
        };
        Ok(Self { a11: at(&coeffs.a11), a12: at(&coeffs.a12), a22: at(&coeffs.a22), b1: at(&coeffs.b1), b2: at(&coeffs.b2) })
    }

    /// Nested central differences of a metric given in closed form.
    pub fn from_metric(metric: &dyn Fn(f64, f64) -> Tensor, c: Point, h: f64) -> Self {
        let a = |k: usize| move |x: f64, y: f64| principal(metric(x, y))[k];
        let (a11, a12, a22) = (a(0), a(1), a(2));
        let b1 = |x: f64, y: f64| (a11(x + h, y) - a11(x - h, y) - a12(x, y + h) + a12(x, y - h)) / (2.0 * h);
        let b2 = |x: f64, y: f64| (a22(x, y + h) - a22(x, y - h) - a12(x + h, y) + a12(x - h, y)) / (2.0 * h);
        Self {
            a11: taylor(&a11, c, h),
            a12: taylor(&a12, c, h),
            a22: taylor(&a22, c, h),
            b1: taylor(&b1, c, h),
            b2: taylor(&b2, c, h),
        }
    }
}

/// X = T (x - c) with det T = 1, chosen so that the principal part is the identity at c.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AffineNormalization {
    pub center: Point,
    pub t: [[f64; 2]; 2],
    pub s: [[f64; 2]; 2],
}

impl AffineNormalization {
    /// From principal coefficients at the center: A^{-1} = [[a22, a12], [a12, a11]] = L L^T, T = L^T.
    pub fn from_principal(center: Point, a: [f64; 3]) -> Result<Self> {
        let [a11, a12, a22] = a;
        if !(a22 > 0.0) || !(a11 * a22 - a12 * a12 > 0.0) {
            return Err(Error::Precondition("principal part is not positive definite at the center".into()));
        }
        let l00 = a22.sqrt();
        let l10 = a12 / l00;
        let l11 = (a11 - l10 * l10).sqrt();
        let t = [[l00, l10], [0.0, l11]];
        let d = l00 * l11;
        let s = [[l11 / d, -l10 / d], [0.0, l00 / d]];
        Ok(Self { center, t, s })
    }

    pub fn forward(&self, x: Point) -> Point {
        let (dx, dy) = (x[0] - self.center[0], x[1] - self.center[1]);
        [self.t[0][0] * dx + self.t[0][1] * dy, self.t[1][0] * dx + self.t[1][1] * dy]
    }

    pub fn backward(&self, p: Point) -> Point {
        [self.center[0] + self.s[0][0] * p[0] + self.s[0][1] * p[1], self.center[1] + self.s[1][0] * p[0] + self.s[1][1] * p[1]]
    }

    /// Norms of the rows of S: the x- and y-extent of the unit normalized disc.
    pub fn extents(&self) -> [f64; 2] {
        [self.s[0][0].hypot(self.s[0][1]), self.s[1][0].hypot(self.s[1][1])]
    }
}

/// Operator coefficients in normalized coordinates as polynomials.
#[derive(Debug, Clone, Copy)]
struct NormalizedOperator {
    /// A' = T A T^T entries (00, 01, 11).
    a: [BiPoly; 3],
    b: [BiPoly; 2],
}

impl NormalizedOperator {
    fn new(jet: &CoefficientJet, map: &AffineNormalization) -> Self {
        let s = map.s;
        let dx = BiPoly::x().scale(s[0][0]).add(&BiPoly::y().scale(s[0][1]));
        let dy = BiPoly::x().scale(s[1][0]).add(&BiPoly::y().scale(s[1][1]));
        let sub = |t: [f64; 6]| -> BiPoly {
            BiPoly::constant(t[0])
                .add(&dx.scale(t[1]))
                .add(&dy.scale(t[2]))
                .add(&dx.mul(&dx).scale(0.5 * t[3]))
                .add(&dx.mul(&dy).scale(t[4]))
                .add(&dy.mul(&dy).scale(0.5 * t[5]))
        };
        let (a11, a12, a22) = (sub(jet.a11), sub(jet.a12), sub(jet.a22));
        let (b1, b2) = (sub(jet.b1), sub(jet.b2));
        // A = [[a11, -a12], [-a12, a22]]
        let am = [[a11, a12.scale(-1.0)], [a12.scale(-1.0), a22]];
        let t = map.t;
        let entry = |k: usize, l: usize| -> BiPoly {
            let mut r = BiPoly::default();
            for (m, row) in am.iter().enumerate() {
                for (n, v) in row.iter().enumerate() {
                    r = r.add(&v.scale(t[k][m] * t[l][n]));
                }
            }
            r
        };
        let bb = |k: usize| b1.scale(t[k][0]).add(&b2.scale(t[k][1]));
        Self { a: [entry(0, 0), entry(0, 1), entry(1, 1)], b: [bb(0), bb(1)] }
    }

    fn apply(&self, p: &BiPoly) -> BiPoly {
        let (px, py) = (p.dx(), p.dy());
        self.a[0]
            .mul(&px.dx())
            .add(&self.a[1].mul(&px.dy()).scale(2.0))
            .add(&self.a[2].mul(&py.dy()))
            .add(&self.b[0].mul(&px))
            .add(&self.b[1].mul(&py))
            .truncate(2)
    }
}

/// Quartic approximate solution of L zeta = 0 to second order at the center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JetPolynomial {
    /// zeta in normalized coordinates X = T (x - c).
    #[serde(skip)]
    pub zeta: BiPoly,
    #[serde(skip)]
    pub xi: BiPoly,
    #[serde(skip)]
    pub eta: BiPoly,
    pub map: AffineNormalization,
}

impl JetPolynomial {
    pub fn eval(&self, x: Point) -> f64 {
        let p = self.map.forward(x);
        self.zeta.eval(p[0], p[1])
    }

    /// Gradient with respect to chart coordinates.
    pub fn gradient(&self, x: Point) -> [f64; 2] {
        let p = self.map.forward(x);
        let (gx, gy) = (self.zeta.dx().eval(p[0], p[1]), self.zeta.dy().eval(p[0], p[1]));
        let t = self.map.t;
        [t[0][0] * gx + t[1][0] * gy, t[0][1] * gx + t[1][1] * gy]
    }

    /// Coefficient of X^p Y^q in normalized coordinates.
    pub fn coefficient(&self, p: usize, q: usize) -> f64 {
        self.zeta.c[p][q]
    }
}

/// Builds xi, eta and zeta after the affine normalization at `center`.
pub fn jet_correction(jet: &CoefficientJet, center: Point) -> Result<JetPolynomial> {
    let map = AffineNormalization::from_principal(center, [jet.a11[0], jet.a12[0], jet.a22[0]])?;
    let op = NormalizedOperator::new(jet, &map);
    let (x, y) = (BiPoly::x(), BiPoly::y());
    let b1 = op.b[0].c[0][0];
    let b2 = op.b[1].c[0][0];
    let xi = x.add(&y).sub(&x.mul(&x).scale(0.5 * b1)).sub(&y.mul(&y).scale(0.5 * b2));
    let lxi = op.apply(&xi);
    let eta = xi
        .sub(&BiPoly::monomial(3, 0, lxi.derivative_at_origin(1, 0) / 6.0))
        .sub(&BiPoly::monomial(0, 3, lxi.derivative_at_origin(0, 1) / 6.0));
    let leta = op.apply(&eta);
    let zeta = eta
        .sub(&BiPoly::monomial(4, 0, leta.derivative_at_origin(2, 0) / 24.0))
        .sub(&BiPoly::monomial(0, 4, leta.derivative_at_origin(0, 2) / 24.0))
        .sub(&BiPoly::monomial(3, 1, leta.derivative_at_origin(1, 1) / 12.0))
        .sub(&BiPoly::monomial(1, 3, leta.derivative_at_origin(1, 1) / 12.0));
    Ok(JetPolynomial { zeta, xi, eta, map })
}

/// Taylor data of L zeta at the center in normalized coordinates (value, gradient, Hessian).
pub fn jet_residual(jet: &CoefficientJet, poly: &JetPolynomial) -> [f64; 6] {
    let op = NormalizedOperator::new(jet, &poly.map);
    let r = op.apply(&poly.zeta);
    [
        r.derivative_at_origin(0, 0),
        r.derivative_at_origin(1, 0),
        r.derivative_at_origin(0, 1),
        r.derivative_at_origin(2, 0),
        r.derivative_at_origin(1, 1),
        r.derivative_at_origin(0, 2),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsothermalOptions {
    /// Normalized solve radius; `None` starts from min(eps0, reach)/2.
    pub radius: Option<f64>,
    /// The returned patch covers radius * patch_fraction.
    pub patch_fraction: f64,
    pub eps0: f64,
    pub max_halvings: usize,
}

impl Default for IsothermalOptions {
    fn default() -> Self {
        Self { radius: None, patch_fraction: 0.25, eps0: f64::INFINITY, max_halvings: 4 }
    }
}

/// Isothermal coordinate w = v + iu on a patch, gauge w(c) = 0, w_z(c) = 1.
#[derive(Debug, Clone, Serialize)]
pub struct IsothermalPatch {
    pub center: Point,
    /// Normalized radius of the solve domain.
    pub radius: f64,
    pub halvings: usize,
    /// Chart node indices of the patch.
    pub nodes: Vec<usize>,
    pub points: Vec<Point>,
    #[serde(skip)]
    pub w: Vec<Complex64>,
    #[serde(skip)]
    pub w_z: Vec<Complex64>,
    #[serde(skip)]
    pub w_zbar: Vec<Complex64>,
    pub lambda: Vec<f64>,
    /// Pointwise |w_z̄ - mu w_z| / max |w_z|.
    pub residual: Vec<f64>,
    pub cr_residual: f64,
    pub equation_residual: f64,
    pub jacobian_min: f64,
    /// Discrete W^{1,2} norm of the correction and the bound sqrt(2) ||L zeta||_2.
    pub weak_norm: f64,
    pub weak_bound: f64,
    /// Max deviation of lambda |dw|^2 from (E, F, G), relative to the metric scale.
    pub pullback_error: f64,
    /// Max |K(lambda) - K_input| over patch nodes with a full stencil.
    pub curvature_error: f64,
    pub jet: JetPolynomial,
}

impl IsothermalPatch {
    pub fn u(&self) -> Vec<f64> {
        self.w.iter().map(|w| w.im).collect()
    }

    pub fn v(&self) -> Vec<f64> {
        self.w.iter().map(|w| w.re).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,u,v,lambda,residual\n");
        for k in 0..self.nodes.len() {
            s.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                self.points[k][0], self.points[k][1], self.w[k].im, self.w[k].re, self.lambda[k], self.residual[k]
            ));
        }
        s
    }

    /// Value of w at a chart node index, if it lies in the patch.
    pub fn w_at_node(&self, node: usize) -> Option<Complex64> {
        self.nodes.binary_search(&node).ok().map(|k| self.w[k])
    }
}

/// Largest normalized radius whose disc keeps `margin` nodes inside the chart.
pub fn chart_reach(chart: &GridChart, map: &AffineNormalization, margin: usize) -> f64 {
    let [ex, ey] = map.extents();
    let m = margin as f64 * chart.h;
    let c = map.center;
    let rx = (c[0] - chart.x_range.0 - m).min(chart.x_range.1 - c[0] - m) / ex;
    let ry = (c[1] - chart.y_range.0 - m).min(chart.y_range.1 - c[1] - m) / ey;
    rx.min(ry)
}

struct Prepared<'a> {
    chart: &'a GridChart,
    bel: BeltramiData,
    jet: JetPolynomial,
    mesh: Mesh,
    center_node: usize,
    zeta: Vec<f64>,
    k_zeta: Vec<f64>,
    curvature: Vec<f64>,
}

pub fn solve_isothermal(chart: &GridChart, center: Point, opts: &IsothermalOptions) -> Result<IsothermalPatch> {
    if !chart.contains(center) {
        return Err(Error::Domain("center outside chart".into()));
    }
    let (ic, jc) = chart.nearest(center);
    if ic < 2 || jc < 2 || ic + 2 >= chart.nx || jc + 2 >= chart.ny {
        return Err(Error::Stencil("center needs a two-node margin".into()));
    }
    let c = chart.node(ic, jc);
    let bel = beltrami_data(chart)?;
    let coeffs = elliptic_coefficients(chart)?;
    let cj = CoefficientJet::from_grid(chart, &coeffs, ic, jc)?;
    let jet = jet_correction(&cj, c)?;
    let reach = chart_reach(chart, &jet.map, 2);
    if !(reach > 0.0) {
        return Err(Error::Domain("no room for a solve disc around the center".into()));
    }
    let mut r = match opts.radius {
        Some(r) if !(r > 0.0) => return Err(Error::Domain("radius must be positive".into())),
        Some(r) if r > reach * (1.0 + 1e-12) => {
            return Err(Error::Domain(format!("radius {r} exceeds the chart reach {reach}")));
        }
        Some(r) => r,
        None => 0.5 * opts.eps0.min(reach),
    };
    let metric = |x: f64, y: f64| chart.metric_at([x, y]).unwrap_or_else(|_| chart.tensor(chart.nearest([x, y]).0, chart.nearest([x, y]).1));
    let mesh = Mesh::grid(&GridSpec {
        metric: &metric,
        x0: chart.x_range.0,
        y0: chart.y_range.0,
        h: chart.h,
        nx: chart.nx,
        ny: chart.ny,
        active: &|_, _| true,
        periodic: false,
    })?;
    let zeta: Vec<f64> = (0..chart.nx * chart.ny).map(|k| jet.eval(chart.node(k % chart.nx, k / chart.nx))).collect();
    let k_zeta = spmv(&mesh.stiffness, &zeta);
    let prep = Prepared { chart, bel, jet, mesh, center_node: chart.idx(ic, jc), zeta, k_zeta, curvature: chart.curvature_field() };
    let mut last = None;
    for halvings in 0..=opts.max_halvings {
        match attempt(&prep, r, opts.patch_fraction, halvings) {
            Ok(p) => return Ok(p),
            Err(e @ (Error::PatchTooLarge { .. } | Error::Coercivity { .. } | Error::NotPositiveDefinite)) => {
                last = Some(e);
                r *= 0.5;
            }
            Err(e) => return Err(e),
        }
    }
    Err(match last {
        Some(Error::PatchTooLarge { jacobian_min }) => Error::PatchTooLarge { jacobian_min },
        _ => Error::Coercivity { halvings: opts.max_halvings },
    })
}

fn attempt(p: &Prepared<'_>, r: f64, fraction: f64, halvings: usize) -> Result<IsothermalPatch> {
    let chart = p.chart;
    let (nx, ny, h) = (chart.nx, chart.ny, chart.h);
    let n = nx * ny;
    let map = &p.jet.map;
    let nrm = |k: usize| {
        let q = map.forward(chart.node(k % nx, k / nx));
        q[0].hypot(q[1])
    };
    let in_d: Vec<bool> = (0..n).map(|k| nrm(k) < r).collect();
    let dom: Vec<usize> = (0..n).filter(|&k| in_d[k]).collect();
    if dom.len() < 25 {
        return Err(Error::Resolution { nodes: dom.len(), budget: 25 });
    }
    // correction u_hat on D: K_DD u_hat = -(K zeta)_D
    let kdd = submatrix(&p.mesh.stiffness, &dom);
    let solver = SpdSolver::new(kdd).map_err(|_| Error::Coercivity { halvings })?;
    let rhs: Vec<f64> = dom.iter().map(|&k| -p.k_zeta[k]).collect();
    let uh = solver.solve(&rhs);
    let equation_residual = solver.relative_residual(&uh, &rhs);
    let mut u = p.zeta.clone();
    let mut uhat = vec![0.0; n];
    for (a, &k) in dom.iter().enumerate() {
        u[k] += uh[a];
        uhat[k] = uh[a];
    }

    // Lax-Milgram check in normalized coordinates: the Euclidean energy of X is
    // the energy of the constant metric T^T T in x.
    let t = map.t;
    let g_n = [t[0][0] * t[0][0] + t[1][0] * t[1][0], t[0][0] * t[0][1] + t[1][0] * t[1][1], t[0][1] * t[0][1] + t[1][1] * t[1][1]];
    let flat = Mesh::grid(&GridSpec {
        metric: &move |_, _| g_n,
        x0: chart.x_range.0,
        y0: chart.y_range.0,
        h,
        nx,
        ny,
        active: &|_, _| true,
        periodic: false,
    })?;
    let weak_norm = (h * h * dot(&uhat, &uhat) + flat.energy(&uhat)).sqrt();
    let lzeta_sq: f64 = dom.iter().map(|&k| (p.k_zeta[k] / (h * h)).powi(2)).sum::<f64>() * h * h;
    let weak_bound = 2f64.sqrt() * lzeta_sq.sqrt();
    let uscale = dom.iter().map(|&k| u[k].abs()).fold(0.0, f64::max).max(1e-300);
    if weak_norm > weak_bound + 1e-10 * uscale * r {
        return Err(Error::Coercivity { halvings });
    }

    // gradient targets for v at D nodes
    let grad = |f: &[f64], k: usize| -> [f64; 2] { [(f[k + 1] - f[k - 1]) / (2.0 * h), (f[k + nx] - f[k - nx]) / (2.0 * h)] };
    let mut target = vec![[0.0; 2]; n];
    for &k in &dom {
        let a = principal(chart.tensor(k % nx, k / nx));
        let [ux, uy] = grad(&u, k);
        target[k] = [-a[1] * ux + a[2] * uy, -a[0] * ux + a[1] * uy];
    }
    // least-squares integration over D edges, v(c) = 0
    let local: Vec<Option<usize>> = {
        let mut l = vec![None; n];
        for (a, &k) in dom.iter().enumerate() {
            l[k] = Some(a);
        }
        l
    };
    let mut b = SparseBuilder::new(dom.len());
    let mut rhs = vec![0.0; dom.len()];
    for &k in &dom {
        let pk = local[k].unwrap();
        for (nb, comp) in [(k + 1, 0usize), (k + nx, 1usize)] {
            if nb >= n || (comp == 0 && (k % nx) + 1 >= nx) {
                continue;
            }
            if let Some(q) = local[nb] {
                let tq = 0.5 * h * (target[k][comp] + target[nb][comp]);
                b.add_edge(pk, q, 1.0);
                rhs[pk] -= tq;
                rhs[q] += tq;
            }
        }
    }
    let pin = local[p.center_node].ok_or_else(|| Error::Domain("center not in the solve domain".into()))?;
    let keep: Vec<usize> = (0..dom.len()).filter(|&a| a != pin).collect();
    let lap = submatrix(&b.build(), &keep);
    let vsol = SpdSolver::new(lap).map_err(|_| Error::Domain("solve domain is not connected".into()))?.solve(&keep.iter().map(|&a| rhs[a]).collect::<Vec<_>>());
    let mut v = vec![f64::NAN; n];
    v[p.center_node] = 0.0;
    for (i, &a) in keep.iter().enumerate() {
        v[dom[a]] = vsol[i];
    }

    // derivatives of w on nodes whose 4-neighbours lie in D
    let core: Vec<bool> = (0..n)
        .map(|k| {
            let (i, j) = (k % nx, k / nx);
            in_d[k] && i > 0 && j > 0 && i + 1 < nx && j + 1 < ny && in_d[k - 1] && in_d[k + 1] && in_d[k - nx] && in_d[k + nx]
        })
        .collect();
    let w: Vec<Complex64> = (0..n).map(|k| Complex64::new(v[k], u[k])).collect();
    let c0 = p.center_node;
    let wx = |k: usize| (w[k + 1] - w[k - 1]) / (2.0 * h);
    let wy = |k: usize| (w[k + nx] - w[k - nx]) / (2.0 * h);
    let i_unit = Complex64::new(0.0, 1.0);
    let wz_raw = |k: usize| 0.5 * (wx(k) - i_unit * wy(k));
    let wzb_raw = |k: usize| 0.5 * (wx(k) + i_unit * wy(k));
    if !core[c0] {
        return Err(Error::Domain("solve domain too small around the center".into()));
    }
    let alpha = 1.0 / wz_raw(c0);
    let w0 = w[c0];

    let mut lam_field = vec![f64::NAN; n];
    for k in 0..n {
        if core[k] {
            lam_field[k] = p.bel.sigma[k] / (alpha * wz_raw(k)).norm_sqr();
        }
    }
    let patch_r = r * fraction;
    let nodes: Vec<usize> = (0..n).filter(|&k| core[k] && nrm(k) < patch_r.max(1e-300)).collect();
    let nodes = if nodes.is_empty() { vec![c0] } else { nodes };
    let mut out_w = Vec::with_capacity(nodes.len());
    let mut out_wz = Vec::with_capacity(nodes.len());
    let mut out_wzb = Vec::with_capacity(nodes.len());
    let mut lambda = Vec::with_capacity(nodes.len());
    let mut jac_min = f64::INFINITY;
    let mut pull: f64 = 0.0;
    for &k in &nodes {
        let (wz, wzb) = (alpha * wz_raw(k), alpha * wzb_raw(k));
        out_w.push(alpha * (w[k] - w0));
        out_wz.push(wz);
        out_wzb.push(wzb);
        lambda.push(lam_field[k]);
        jac_min = jac_min.min(wz.norm_sqr() - wzb.norm_sqr());
        let (ax, ay) = (alpha * wx(k), alpha * wy(k));
        let l = lam_field[k];
        let tk = chart.tensor(k % nx, k / nx);
        let sc = tk[0].max(tk[2]);
        let e = [l * ax.norm_sqr() - tk[0], l * (ax * ay.conj()).re - tk[1], l * ay.norm_sqr() - tk[2]];
        pull = pull.max(e.iter().fold(0.0f64, |m, v| m.max(v.abs())) / sc);
    }
    // Jacobian of (v, u) in raw scale: v_x u_y - u_x v_y = (|w_z|^2 - |w_z̄|^2) / |alpha|^2
    let jacobian_min = jac_min / alpha.norm_sqr();
    if !(jacobian_min > 0.0) {
        return Err(Error::PatchTooLarge { jacobian_min });
    }
    let scale = out_wz.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let residual: Vec<f64> = nodes.iter().enumerate().map(|(a, &k)| (out_wzb[a] - p.bel.mu[k] * out_wz[a]).norm() / scale).collect();
    let cr_residual = residual.iter().cloned().fold(0.0, f64::max);

    // curvature of the recovered factor: K = -(1/2 sqrt det) L_h log lambda
    let loglam: Vec<f64> = lam_field.iter().map(|l| if l.is_finite() { l.ln() } else { 0.0 }).collect();
    let kl = spmv(&p.mesh.stiffness, &loglam);
    let mut curvature_error: f64 = 0.0;
    for &k in &nodes {
        let (i, j) = (k % nx, k / nx);
        let full = (-1i64..=1).all(|dj| {
            (-1i64..=1).all(|di| {
                let q = ((j as i64 + dj) as usize) * nx + (i as i64 + di) as usize;
                lam_field[q].is_finite()
            })
        });
        if !full {
            continue;
        }
        let t = chart.tensor(i, j);
        let sd = (t[0] * t[2] - t[1] * t[1]).sqrt();
        let krec = 0.5 * kl[k] / (h * h) / sd;
        curvature_error = curvature_error.max((krec - p.curvature[k]).abs());
    }

    Ok(IsothermalPatch {
        center: map.center,
        radius: r,
        halvings,
        points: nodes.iter().map(|&k| chart.node(k % nx, k / nx)).collect(),
        nodes,
        w: out_w,
        w_z: out_wz,
        w_zbar: out_wzb,
        lambda,
        residual,
        cr_residual,
        equation_residual,
        jacobian_min,
        weak_norm,
        weak_bound,
        pullback_error: pull,
        curvature_error,
        jet: p.jet,
    })
}

/// One row of a sequence comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceRow {
    pub j: f64,
    pub sup_w: f64,
    pub sup_lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceReport {
    pub rows: Vec<SequenceRow>,
    /// Both difference sequences are nonincreasing.
    pub monotone: bool,
    /// -slope of log sup_lambda against log j (None when differences vanish).
    pub lambda_rate: Option<f64>,
    pub w_rate: Option<f64>,
}

/// Compares patches of (j, chart_j) with the patch of the limit chart on common nodes.
pub fn patch_sequence_convergence(charts: &[(f64, GridChart)], limit: &GridChart, center: Point, opts: &IsothermalOptions) -> Result<SequenceReport> {
    let base = solve_isothermal(limit, center, opts)?;
    let fixed = IsothermalOptions { radius: Some(base.radius), max_halvings: 0, ..opts.clone() };
    let mut rows = Vec::new();
    for (idx, (j, chart)) in charts.iter().enumerate() {
        if chart.nx != limit.nx || chart.ny != limit.ny || chart.x_range != limit.x_range || chart.y_range != limit.y_range {
            return Err(Error::Input(format!("chart {idx} does not share the limit grid")));
        }
        let p = solve_isothermal(chart, center, &fixed).map_err(|e| Error::Solver(format!("chart {idx}: {e}")))?;
        let (mut dw, mut dl) = (0.0f64, 0.0f64);
        for (a, &k) in p.nodes.iter().enumerate() {
            if let Ok(b) = base.nodes.binary_search(&k) {
                dw = dw.max((p.w[a] - base.w[b]).norm());
                dl = dl.max((p.lambda[a] - base.lambda[b]).abs());
            }
        }
        rows.push(SequenceRow { j: *j, sup_w: dw, sup_lambda: dl });
    }
    let monotone = rows.windows(2).all(|w| w[1].sup_w <= w[0].sup_w * (1.0 + 1e-9) + 1e-14 && w[1].sup_lambda <= w[0].sup_lambda * (1.0 + 1e-9) + 1e-14);
    let rate = |f: &dyn Fn(&SequenceRow) -> f64| -> Option<f64> {
        let pts: Vec<(f64, f64)> = rows.iter().filter(|r| f(r) > 1e-14 && r.j > 0.0).map(|r| (r.j.ln(), f(r).ln())).collect();
        (pts.len() >= 2).then(|| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            -crate::linalg::linear_fit(&xs, &ys).1
        })
    };
    let lambda_rate = rate(&|r| r.sup_lambda);
    let w_rate = rate(&|r| r.sup_w);
    Ok(SequenceReport { rows, monotone, lambda_rate, w_rate })
}

/// Metric-norm of a complex gradient; helper for callers comparing patches.
pub fn sup_norm(a: &[f64]) -> f64 {
    norm(a) / (a.len().max(1) as f64).sqrt()
}
