//! Heat kernel of the hyperbolic plane.
//!
//! Two independent evaluators are provided: the McKean integral in distance
//! (any `d`) and the spectral integral on the diagonal. Both return certified
//! relative errors. The module also exposes explicit upper bounds used to
//! certify truncated image sums, the Davies–Mandouvalos envelope and a
//! Chebyshev table for fast repeated evaluation at one time.

use crate::error::{Estimate, HypError, Result};
use crate::quad::{integrate, Tolerance};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};
use std::sync::OnceLock;

const GAMMA_QUARTER: f64 = 3.625_609_908_221_908;
const GAMMA_THREE_QUARTERS: f64 = 1.225_416_702_465_178;

/// Accuracy controls shared by every kernel evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelEvalConfig {
    /// Target relative accuracy.
    pub rel_tol: f64,
    /// Panel budget of the adaptive quadrature.
    pub max_subdivisions: usize,
    /// Gaussian truncation of the integration range, in units of `√(4t)`.
    pub tail_cutoff_sigma: f64,
}

impl Default for KernelEvalConfig {
    fn default() -> Self {
        Self { rel_tol: 1e-11, max_subdivisions: 400, tail_cutoff_sigma: 8.0 }
    }
}

impl KernelEvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol <= 1e-2) {
            return Err(HypError::Domain(format!("rel_tol {} outside (0, 1e-2]", self.rel_tol)));
        }
        if self.max_subdivisions < 8 {
            return Err(HypError::Domain("max_subdivisions must be at least 8".into()));
        }
        if !(self.tail_cutoff_sigma >= 6.0) || !self.tail_cutoff_sigma.is_finite() {
            return Err(HypError::Domain("tail_cutoff_sigma must be at least 6".into()));
        }
        Ok(())
    }

    fn tolerance(&self) -> Tolerance {
        Tolerance::relative(0.5 * self.rel_tol, self.max_subdivisions)
    }
}

fn check_td(t: f64, d: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(HypError::Domain(format!("time must be positive, got {t}")));
    }
    if !(d >= 0.0) || !d.is_finite() {
        return Err(HypError::Domain(format!("distance must be non-negative, got {d}")));
    }
    Ok(())
}

/// `ln sinh(y)` for `y > 0`, without overflow.
fn ln_sinh(y: f64) -> f64 {
    if y > 20.0 {
        y + (-(-2.0 * y).exp_m1()).ln() - std::f64::consts::LN_2
    } else {
        y.sinh().ln()
    }
}

/// Natural log of the heat kernel `p_t(d)` by the McKean integral.
///
/// The returned error is the certified relative error of `p` (equivalently
/// an absolute error on the logarithm).
pub fn ln_p_plane(t: f64, d: f64, cfg: &KernelEvalConfig) -> Result<Estimate> {
    check_td(t, d)?;
    cfg.validate()?;
    // s = d + u² removes the inverse square root at s = d; the factors
    // e^{-d²/4t} and e^{-d/2} are pulled out so nothing underflows.
    let four_t = 4.0 * t;
    let h = |u: f64| -> f64 {
        if u == 0.0 {
            return 2.0 * d.sqrt();
        }
        let v = u * u;
        let expo = -(2.0 * d * v + v * v) / four_t - 0.25 * v;
        let den = (-(-2.0 * d - v).exp_m1()) * (0.5 * v).sinh();
        2.0 * u * (d + v) * expo.exp() / den.sqrt()
    };
    let span = cfg.tail_cutoff_sigma * four_t.sqrt();
    let u_max = span.sqrt();

    // Breakpoints where the exponent reaches 1, 4, 16, 36 plus the
    // transition u² ≈ d of the denominator.
    let a = 1.0 / four_t;
    let b = d / (2.0 * t) + 0.25;
    let mut pts = vec![0.0];
    for k in [1.0, 4.0, 16.0, 36.0] {
        let v = 2.0 * k / (b + (b * b + 4.0 * a * k).sqrt());
        pts.push(v.sqrt());
    }
    pts.push(d.sqrt());
    pts.retain(|&u| u < u_max * (1.0 - 1e-9));
    pts.push(u_max);
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * u_max);

    let q = integrate(h, &pts, &cfg.tolerance()).map_err(|e| rescale_error(e, t, d))?;
    // Tail beyond s_max = d + span, in the same normalization as h.
    let s_max = d + span;
    let ln_tail = (2.0 * t).ln() - (2.0 * d * span + span * span) / four_t + 0.5 * d
        - 0.5 * (std::f64::consts::LN_2 + ln_sinh(0.5 * (s_max + d)) + ln_sinh(0.5 * span));
    let tail = ln_tail.exp();
    let rel = (q.error + tail) / q.value;
    let ln_p = ln_prefactor(t) - d * d / four_t - 0.5 * d + q.value.ln();
    if !(rel <= cfg.rel_tol) {
        return Err(HypError::Accuracy {
            estimate: ln_p.exp(),
            error_bound: rel * ln_p.exp(),
            context: format!("McKean integral at t={t}, d={d}"),
        });
    }
    Ok(Estimate::new(ln_p, rel))
}

fn ln_prefactor(t: f64) -> f64 {
    SQRT_2.ln() - 0.25 * t - 1.5 * (4.0 * PI * t).ln()
}

fn rescale_error(e: HypError, t: f64, d: f64) -> HypError {
    match e {
        HypError::Accuracy { estimate, error_bound, context } => {
            let s = (ln_prefactor(t) - d * d / (4.0 * t) - 0.5 * d).exp();
            HypError::Accuracy { estimate: estimate * s, error_bound: error_bound * s, context }
        }
        other => other,
    }
}

/// Heat kernel `p_t(d)` of the hyperbolic plane with certified relative error.
pub fn p_plane(t: f64, d: f64, cfg: &KernelEvalConfig) -> Result<Estimate> {
    let l = ln_p_plane(t, d, cfg)?;
    let v = l.value.exp();
    Ok(Estimate::new(v, v * l.error))
}

/// `∫_0^∞ r e^{-r²t} / (e^{2πr} + 1) dr`, the correction to the flat part of
/// the spectral density on the diagonal.
fn spectral_correction(t: f64, cfg: &KernelEvalConfig) -> Result<Estimate> {
    let f = |r: f64| r * (-r * r * t).exp() / ((2.0 * PI * r).exp() + 1.0);
    let r_max = 12.0;
    let tol = Tolerance { abs_tol: 0.0, rel_tol: 0.25 * cfg.rel_tol, max_subdivisions: cfg.max_subdivisions };
    let q = integrate(f, &[0.0, 0.5, 1.0, 2.0, 4.0, 8.0, r_max], &tol)?;
    // ∫_R^∞ r e^{-2πr} dr bounds the truncated part.
    let tail = (-2.0 * PI * r_max).exp() * (r_max / (2.0 * PI) + 1.0 / (4.0 * PI * PI));
    Ok(Estimate::new(q.value, q.error + tail))
}

/// `p_t(0) − 1/(4πt)` from the spectral representation, free of cancellation
/// at small `t`.
pub fn spectral_diag_subtracted(t: f64, cfg: &KernelEvalConfig) -> Result<Estimate> {
    check_td(t, 0.0)?;
    cfg.validate()?;
    let j = spectral_correction(t, cfg)?;
    let e = (-0.25 * t).exp();
    let value = (-0.25 * t).exp_m1() / (4.0 * PI * t) - e * j.value / PI;
    Ok(Estimate::new(value, e * j.error / PI + 4.0 * f64::EPSILON * value.abs()))
}

/// Diagonal `p_t(0)` from the spectral resolution
/// `(1/2π) ∫ e^{-(r²+1/4)t} r tanh(πr) dr`.
pub fn p_plane_diag_spectral(t: f64, cfg: &KernelEvalConfig) -> Result<Estimate> {
    check_td(t, 0.0)?;
    cfg.validate()?;
    let e = (-0.25 * t).exp() / (2.0 * PI);
    if t <= 1.0 {
        // r tanh(πr) = r − 2r/(e^{2πr}+1); the first part integrates to 1/(2t).
        let j = spectral_correction(t, cfg)?;
        let value = e * (0.5 / t - 2.0 * j.value);
        let err = e * 2.0 * j.error + 4.0 * f64::EPSILON * value;
        return finish(value, err, cfg, t);
    }
    let r_max = cfg.tail_cutoff_sigma / t.sqrt();
    let f = |r: f64| r * (PI * r).tanh() * (-r * r * t).exp();
    let pts: Vec<f64> = [0.0, 0.125, 0.25, 0.5, 1.0].iter().map(|k| k * r_max).collect();
    let q = integrate(f, &pts, &cfg.tolerance())?;
    // ∫_R^∞ r e^{-r²t} dr, since tanh ≤ 1.
    let tail = (-r_max * r_max * t).exp() / (2.0 * t);
    finish(e * q.value, e * (q.error + tail), cfg, t)
}

fn finish(value: f64, err: f64, cfg: &KernelEvalConfig, t: f64) -> Result<Estimate> {
    if !(err <= cfg.rel_tol * value) {
        return Err(HypError::Accuracy {
            estimate: value,
            error_bound: err,
            context: format!("spectral diagonal at t={t}"),
        });
    }
    Ok(Estimate::new(value, err))
}

/// `ln` of the Gaussian upper bound `e^{-t/4 - d²/4t}/(4πt) ≥ p_t(d)`.
///
/// Follows from `cosh s − cosh d ≥ (s² − d²)/2` inside the McKean integral.
pub fn ln_gaussian_bound(t: f64, d: f64) -> f64 {
    -0.25 * t - d * d / (4.0 * t) - (4.0 * PI * t).ln()
}

/// `ln` of the upper bound obtained from `cosh s − cosh d ≥ sinh(d)(s − d)`.
/// It keeps the `e^{-d/2}` decay the Gaussian bound lacks. Infinite at `d = 0`.
pub fn ln_sinh_bound(t: f64, d: f64) -> f64 {
    if d <= 0.0 {
        return f64::INFINITY;
    }
    let q = (4.0 * t).powf(0.25);
    let bracket = 0.5 * d * q * GAMMA_QUARTER + 0.5 * q * q * q * GAMMA_THREE_QUARTERS;
    ln_prefactor(t) - d * d / (4.0 * t) - 0.5 * ln_sinh(d) + bracket.ln()
}

/// `ln` of the best available rigorous upper bound on `p_t(d)`.
pub fn ln_kernel_upper_bound(t: f64, d: f64) -> f64 {
    ln_gaussian_bound(t, d).min(ln_sinh_bound(t, d))
}

pub fn kernel_upper_bound(t: f64, d: f64) -> f64 {
    ln_kernel_upper_bound(t, d).exp()
}

/// `ln` of the Davies–Mandouvalos profile
/// `(1/t) exp(-t/4 - d²/4t - d/2) (1 + d) (1 + d + t)^{-1/2}`.
pub fn ln_dm_expression(t: f64, d: f64) -> f64 {
    -t.ln() - 0.25 * t - d * d / (4.0 * t) - 0.5 * d + d.ln_1p() - 0.5 * (d + t).ln_1p()
}

/// Two-sided proportionality constants between the kernel and the
/// Davies–Mandouvalos profile, fitted on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmEnvelope {
    pub lower: f64,
    pub upper: f64,
    /// `(t, d)` at which the minimum ratio was attained.
    pub argmin: (f64, f64),
    /// `(t, d)` at which the maximum ratio was attained.
    pub argmax: (f64, f64),
}

impl DmEnvelope {
    /// Extremes of `p / profile` over the tensor grid.
    pub fn fit(t_grid: &[f64], d_grid: &[f64], cfg: &KernelEvalConfig) -> Result<Self> {
        let mut env = DmEnvelope {
            lower: f64::INFINITY,
            upper: 0.0,
            argmin: (f64::NAN, f64::NAN),
            argmax: (f64::NAN, f64::NAN),
        };
        for &t in t_grid {
            for &d in d_grid {
                let r = (ln_p_plane(t, d, cfg)?.value - ln_dm_expression(t, d)).exp();
                if r < env.lower {
                    env.lower = r;
                    env.argmin = (t, d);
                }
                if r > env.upper {
                    env.upper = r;
                    env.argmax = (t, d);
                }
            }
        }
        Ok(env)
    }

    /// The envelope fitted on 60 log-spaced times in `[1e-3, 10]` and 81
    /// distances in `[0, 20]`.
    pub fn standard() -> &'static DmEnvelope {
        static ENV: OnceLock<DmEnvelope> = OnceLock::new();
        ENV.get_or_init(|| {
            let t = log_grid(1e-3, 10.0, 60);
            let d = lin_grid(0.0, 20.0, 81);
            DmEnvelope::fit(&t, &d, &KernelEvalConfig::default()).expect("standard envelope fit")
        })
    }

    pub fn bounds(&self, t: f64, d: f64) -> (f64, f64) {
        let base = ln_dm_expression(t, d).exp();
        (self.lower * base, self.upper * base)
    }
}

/// `(lower, upper)` Davies–Mandouvalos envelope with the standard constants.
pub fn dm_envelope(t: f64, d: f64) -> Result<(f64, f64)> {
    check_td(t, d)?;
    Ok(DmEnvelope::standard().bounds(t, d))
}

/// `n` points spaced evenly in `ln t` from `a` to `b` inclusive.
pub fn log_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let (la, lb) = (a.ln(), b.ln());
    (0..n)
        .map(|k| match k {
            0 => a,
            k if k == n - 1 => b,
            _ => (la + (lb - la) * k as f64 / (n - 1) as f64).exp(),
        })
        .collect()
}

/// `n` evenly spaced points from `a` to `b` inclusive.
pub fn lin_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|k| if k == n - 1 { b } else { a + (b - a) * k as f64 / (n - 1) as f64 }).collect()
}

/// A radial kernel at one fixed time, as consumed by image sums.
pub trait RadialKernel: Sync {
    fn time(&self) -> f64;
    fn value(&self, d: f64) -> Result<f64>;
    /// Uniform relative accuracy of [`RadialKernel::value`].
    fn rel_error(&self) -> f64;
}

/// Direct McKean evaluation, one quadrature per call.
#[derive(Debug, Clone, Copy)]
pub struct DirectKernel {
    pub t: f64,
    pub cfg: KernelEvalConfig,
}

impl RadialKernel for DirectKernel {
    fn time(&self) -> f64 {
        self.t
    }
    fn value(&self, d: f64) -> Result<f64> {
        Ok(p_plane(self.t, d, &self.cfg)?.value)
    }
    fn rel_error(&self) -> f64 {
        self.cfg.rel_tol
    }
}

const CHEB_NODES: usize = 16;
const PANEL_WIDTH: f64 = 0.5;

/// Piecewise Chebyshev interpolant of `ln p_t(d) + d²/4t` on `[0, d_max]`.
///
/// Evaluations past `d_max` fall back to the McKean integral.
#[derive(Debug, Clone)]
pub struct KernelTable {
    t: f64,
    d_max: f64,
    cfg: KernelEvalConfig,
    values: Vec<[f64; CHEB_NODES]>,
    max_rel_error: f64,
}

fn cheb_nodes() -> &'static ([f64; CHEB_NODES], [f64; CHEB_NODES]) {
    static NODES: OnceLock<([f64; CHEB_NODES], [f64; CHEB_NODES])> = OnceLock::new();
    NODES.get_or_init(|| {
        let mut x = [0.0; CHEB_NODES];
        let mut w = [0.0; CHEB_NODES];
        for j in 0..CHEB_NODES {
            let th = (2 * j + 1) as f64 * PI / (2 * CHEB_NODES) as f64;
            x[j] = th.cos();
            w[j] = if j % 2 == 0 { th.sin() } else { -th.sin() };
        }
        (x, w)
    })
}

impl KernelTable {
    pub fn new(t: f64, d_max: f64, cfg: &KernelEvalConfig) -> Result<Self> {
        check_td(t, d_max)?;
        let n_panels = ((d_max / PANEL_WIDTH).ceil() as usize).max(1);
        let (x, _) = cheb_nodes();
        let mut values = Vec::with_capacity(n_panels);
        let shift = |d: f64| d * d / (4.0 * t);
        let mut node_err: f64 = 0.0;
        for k in 0..n_panels {
            let a = k as f64 * PANEL_WIDTH;
            let mut v = [0.0; CHEB_NODES];
            for j in 0..CHEB_NODES {
                let d = a + 0.5 * PANEL_WIDTH * (1.0 + x[j]);
                let l = ln_p_plane(t, d, cfg)?;
                node_err = node_err.max(l.error);
                v[j] = l.value + shift(d);
            }
            values.push(v);
        }
        let d_max = n_panels as f64 * PANEL_WIDTH;
        let mut table = Self { t, d_max, cfg: *cfg, values, max_rel_error: 0.0 };
        // A-posteriori check at panel midpoints, which are not nodes.
        let mut check_err: f64 = 0.0;
        for k in 0..n_panels {
            let d = (k as f64 + 0.5) * PANEL_WIDTH;
            let exact = ln_p_plane(t, d, cfg)?;
            check_err = check_err.max((table.interpolate_ln(d) - exact.value).abs() + exact.error);
        }
        table.max_rel_error = 2.0 * check_err.max(node_err);
        Ok(table)
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    fn interpolate_ln(&self, d: f64) -> f64 {
        let k = ((d / PANEL_WIDTH) as usize).min(self.values.len() - 1);
        let a = k as f64 * PANEL_WIDTH;
        let x = 2.0 * (d - a) / PANEL_WIDTH - 1.0;
        let (nodes, w) = cheb_nodes();
        let v = &self.values[k];
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..CHEB_NODES {
            let diff = x - nodes[j];
            if diff == 0.0 {
                return v[j] - d * d / (4.0 * self.t);
            }
            let c = w[j] / diff;
            num += c * v[j];
            den += c;
        }
        num / den - d * d / (4.0 * self.t)
    }

    /// `ln p_t(d)`.
    pub fn ln_value(&self, d: f64) -> Result<f64> {
        if d <= self.d_max {
            Ok(self.interpolate_ln(d))
        } else {
            Ok(ln_p_plane(self.t, d, &self.cfg)?.value)
        }
    }
}

impl RadialKernel for KernelTable {
    fn time(&self) -> f64 {
        self.t
    }
    #[inline]
    fn value(&self, d: f64) -> Result<f64> {
        if d <= self.d_max {
            Ok(self.interpolate_ln(d).exp())
        } else {
            Ok(p_plane(self.t, d, &self.cfg)?.value)
        }
    }
    fn rel_error(&self) -> f64 {
        self.max_rel_error.max(self.cfg.rel_tol)
    }
}
