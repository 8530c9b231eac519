//! Quadrature rules and the smooth cutoff.

use gauss_quad::legendre::GaussLegendre;
use std::num::NonZeroUsize;

/// Gauss-Legendre nodes and weights mapped to [a, b].
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(NonZeroUsize::new(n.max(1)).unwrap());
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    rule.as_node_weight_pairs().iter().map(|&(x, w)| (mid + half * x, half * w)).collect()
}

/// Integral of f over [a, b] with an n-point Gauss rule on each of `panels` panels.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize, panels: usize) -> f64 {
    let panels = panels.max(1);
    let dx = (b - a) / panels as f64;
    let mut s = 0.0;
    for p in 0..panels {
        let lo = a + dx * p as f64;
        for (x, w) in gauss_legendre(n, lo, lo + dx) {
            s += w * f(x);
        }
    }
    s
}

/// Quintic smoothstep: 0 for t <= 0, 1 for t >= 1, C^2 in between.
pub fn smoothstep(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
    }
}

pub fn smoothstep_deriv(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        30.0 * t * t * (1.0 - t) * (1.0 - t)
    }
}

/// Cutoff chi: 1 on (-inf, 1/2], 0 on [1, inf), quintic in between.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct CutoffProfile;

impl CutoffProfile {
    pub fn value(&self, x: f64) -> f64 {
        1.0 - smoothstep(2.0 * x - 1.0)
    }

    pub fn deriv(&self, x: f64) -> f64 {
        -2.0 * smoothstep_deriv(2.0 * x - 1.0)
    }

    /// sup |chi'| = 2 * 15/8.
    pub fn sup_deriv(&self) -> f64 {
        2.0 * 15.0 / 8.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_exact_for_polynomials() {
        let q = gauss_legendre(5, 0.0, 2.0);
        let s: f64 = q.iter().map(|(x, w)| w * x.powi(9)).sum();
        assert!((s - 2f64.powi(10) / 10.0).abs() < 1e-10);
    }

    #[test]
    fn cutoff_plateau_and_support() {
        let c = CutoffProfile;
        assert_eq!(c.value(0.3), 1.0);
        assert_eq!(c.value(1.2), 0.0);
        let mut prev = 1.0;
        for i in 0..=200 {
            let v = c.value(i as f64 / 200.0 * 1.5);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
        let sup = (0..=1000).map(|i| c.deriv(0.5 + i as f64 / 2000.0).abs()).fold(0.0, f64::max);
        assert!((sup - c.sup_deriv()).abs() < 1e-6);
    }
}
