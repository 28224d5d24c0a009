//! Adaptive Gauss–Kronrod quadrature with error estimates, plus fixed
//! Gauss–Legendre rules for tensor-product integration.

// the tables carry more digits than f64 holds, copied as published
#![allow(clippy::excessive_precision)]

use crate::error::{HypError, Result};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

// 21-point Kronrod extension of the 10-point Gauss rule (abscissae ≥ 0).
const XGK: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077208980029534,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];
// Gauss weights for XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
];

/// Tolerances for [`integrate`]. The target is `max(abs_tol, rel_tol·|I|)`.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Tolerance {
    pub fn relative(rel_tol: f64, max_subdivisions: usize) -> Self {
        Self { abs_tol: 0.0, rel_tol, max_subdivisions }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub panels: usize,
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// One Gauss–Kronrod 21 panel: (Kronrod value, |Kronrod − Gauss|).
///
/// The difference to the embedded Gauss rule bounds the Gauss error and is
/// therefore a conservative estimate for the Kronrod value.
pub fn gk21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut rk = WGK[10] * fc;
    let mut rg = 0.0;
    let mut abs_sum = rk.abs();
    for j in 0..10 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        rk += WGK[j] * s;
        abs_sum += WGK[j] * s.abs();
        if j % 2 == 1 {
            rg += WG[j / 2] * s;
        }
    }
    let value = rk * h;
    let err = ((rk - rg) * h).abs();
    // Floor by the rounding level of the panel sum.
    let floor = 50.0 * f64::EPSILON * (abs_sum * h).abs();
    (value, err.max(floor))
}

/// Adaptive bisection over `[points[0], points[last]]`, with the interior
/// points as initial breakpoints. Non-finite samples are an error.
pub fn integrate<F: Fn(f64) -> f64>(f: F, points: &[f64], tol: &Tolerance) -> Result<QuadResult> {
    if points.len() < 2 || points.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(HypError::Domain(format!("quadrature breakpoints must increase: {points:?}")));
    }
    let mut heap = BinaryHeap::new();
    for w in points.windows(2) {
        let (v, e) = gk21(&f, w[0], w[1]);
        heap.push(Panel { a: w[0], b: w[1], value: v, error: e });
    }
    let mut panels = heap.len();
    loop {
        let (total, err) = heap.iter().fold((0.0, 0.0), |(s, e), p| (s + p.value, e + p.error));
        if !total.is_finite() || !err.is_finite() {
            return Err(HypError::Accuracy {
                estimate: total,
                error_bound: err,
                context: "non-finite integrand".into(),
            });
        }
        let target = tol.abs_tol.max(tol.rel_tol * total.abs());
        if err <= target {
            return Ok(QuadResult { value: total, error: err, panels });
        }
        if panels >= tol.max_subdivisions {
            return Err(HypError::Accuracy {
                estimate: total,
                error_bound: err,
                context: format!("quadrature did not converge in {panels} panels"),
            });
        }
        let worst = heap.pop().expect("heap is non-empty");
        let m = 0.5 * (worst.a + worst.b);
        if !(m > worst.a && m < worst.b) {
            // Panel is at machine resolution; accept what we have.
            heap.push(Panel { error: 0.0, ..worst });
            let (total, err) = heap.iter().fold((0.0, 0.0), |(s, e), p| (s + p.value, e + p.error));
            return Err(HypError::Accuracy {
                estimate: total,
                error_bound: err + worst.error,
                context: "panel width reached machine resolution".into(),
            });
        }
        for (a, b) in [(worst.a, m), (m, worst.b)] {
            let (v, e) = gk21(&f, a, b);
            heap.push(Panel { a, b, value: v, error: e });
        }
        panels += 1;
    }
}

/// Total of independently summed values in a fixed order, to keep results
/// reproducible irrespective of heap layout.
pub fn sum_ordered(values: &[f64]) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for &v in values {
        let y = v - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
    }
    s
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronrod_weights_are_consistent() {
        let total: f64 = 2.0 * WGK[..10].iter().sum::<f64>() + WGK[10];
        assert!((total - 2.0).abs() < 1e-15);
        let g: f64 = 2.0 * WG.iter().sum::<f64>();
        assert!((g - 2.0).abs() < 1e-15);
    }

    #[test]
    fn kronrod_is_exact_for_polynomials_up_to_degree_31() {
        for deg in 0..=31 {
            let f = |x: f64| x.powi(deg);
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            let (v, _) = gk21(&f, -1.0, 1.0);
            assert!((v - exact).abs() < 1e-14, "degree {deg}: {v} vs {exact}");
        }
    }

    #[test]
    fn gauss_part_is_exact_to_degree_19() {
        for deg in (0..=19).step_by(2) {
            let f = |x: f64| x.powi(deg);
            let (_, e) = gk21(&f, -1.0, 1.0);
            assert!(e < 1e-13, "degree {deg}: gauss/kronrod gap {e}");
        }
        let (_, e) = gk21(&|x: f64| x.powi(22), -1.0, 1.0);
        assert!(e > 1e-8);
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let r = integrate(|x: f64| x.sqrt().recip(), &[0.0, 1.0], &Tolerance::relative(1e-10, 500)).unwrap();
        assert!((r.value - 2.0).abs() < 1e-9, "{r:?}");
        assert!((r.value - 2.0).abs() <= r.error.max(1e-12) * 10.0);
    }

    #[test]
    fn adaptive_error_bounds_true_error() {
        let cases: [(fn(f64) -> f64, f64, f64, f64); 3] = [
            (|x| x.exp(), 0.0, 3.0, 3f64.exp() - 1.0),
            (|x| 1.0 / (1.0 + 25.0 * x * x), -1.0, 1.0, 0.4 * 5f64.atan()),
            (|x| (30.0 * x).cos(), 0.0, 1.0, 30f64.sin() / 30.0),
        ];
        for (f, a, b, exact) in cases {
            let r = integrate(f, &[a, b], &Tolerance::relative(1e-12, 200)).unwrap();
            assert!((r.value - exact).abs() <= r.error + 1e-15, "{} vs {exact}", r.value);
        }
    }

    #[test]
    fn non_convergence_reports_best_estimate() {
        let err = integrate(|x: f64| (1.0 / x).sin(), &[1e-6, 1.0], &Tolerance::relative(1e-14, 10)).unwrap_err();
        match err {
            HypError::Accuracy { estimate, error_bound, .. } => {
                assert!(estimate.is_finite() && error_bound > 0.0)
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in [1usize, 2, 5, 8, 16] {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((s - exact).abs() < 1e-13, "n={n} deg={deg}: {s}");
            }
        }
    }
}
