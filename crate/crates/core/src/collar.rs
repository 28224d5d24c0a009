//! Collars around short geodesics and heat kernels on hyperbolic cylinders.
//!
//! A cylinder of waist `ℓ` is the quotient of the plane by the axis
//! translation `α = diag(e^{ℓ/2}, e^{-ℓ/2})`. Points are described in Fermi
//! coordinates `(ρ, u)`: signed distance `ρ` from the waist and arclength
//! `u ∈ [0, ℓ)` along it. The area element is `cosh ρ dρ du`.

use crate::error::{domain, Estimate, HypError, Result};
use crate::hyp::PlanePoint;
use crate::plane_kernel::{p_plane, DirectKernel, KernelEvalConfig, KernelTable, RadialKernel};
use crate::quad::{integrate, Tolerance};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Largest waist length covered by the collar estimates, `2 asinh(1)`.
pub fn max_collar_length() -> f64 {
    2.0 * 1f64.asinh()
}

/// A collar around a closed geodesic of length `ell`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollarSpec {
    pub ell: f64,
    pub half_width: f64,
    /// Set when `ell > 2 asinh(1)`, where the collar estimates do not apply.
    pub outside_regime: bool,
}

impl CollarSpec {
    pub fn new(ell: f64) -> Result<Self> {
        Ok(Self {
            ell,
            half_width: collar_width(ell)?,
            outside_regime: ell > max_collar_length() * (1.0 + 1e-15),
        })
    }

    /// Collar area `∫_{-W}^{W} ℓ cosh ρ dρ = 2ℓ sinh W = 2ℓ / sinh(ℓ/2)`.
    pub fn area(&self) -> f64 {
        2.0 * self.ell / (0.5 * self.ell).sinh()
    }
}

/// A point of a cylinder in Fermi coordinates; `theta ∈ [0, 2π)` is the
/// angular coordinate, so the arclength along the waist is `ℓ θ / 2π`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylinderPoint {
    pub rho: f64,
    pub theta: f64,
}

impl CylinderPoint {
    pub fn arclength(&self, ell: f64) -> f64 {
        ell * self.theta / (2.0 * PI)
    }
}

fn check_ell(ell: f64) -> Result<()> {
    if !(ell > 0.0) || !ell.is_finite() {
        return Err(domain(format!("geodesic length must be positive, got {ell}")));
    }
    Ok(())
}

/// Collar half-width `W(ℓ) = asinh(1 / sinh(ℓ/2))`.
pub fn collar_width(ell: f64) -> Result<f64> {
    check_ell(ell)?;
    Ok((0.5 * ell).sinh().recip().asinh())
}

/// Injectivity radius at signed distance `rho` from the waist of a cylinder,
/// `½ acosh(1 + (cosh ℓ − 1) cosh² ρ) = asinh(sinh(ℓ/2) cosh ρ)`.
pub fn inj_radius_cylinder(rho: f64, ell: f64) -> Result<f64> {
    check_ell(ell)?;
    if !rho.is_finite() {
        return Err(domain("rho must be finite"));
    }
    Ok(half_translate(rho, 0.5 * ell))
}

/// `asinh(sinh(h) cosh ρ)` evaluated in log space when it would overflow.
fn half_translate(rho: f64, h: f64) -> f64 {
    let rho = rho.abs();
    if h + rho < 300.0 {
        (h.sinh() * rho.cosh()).asinh()
    } else {
        // asinh(x) = ln(2x) + O(x^{-2}) for huge x.
        let ln_sinh_h = if h > 20.0 { h - std::f64::consts::LN_2 } else { h.sinh().ln() };
        let ln_cosh_rho = rho + (-2.0 * rho).exp().ln_1p() - std::f64::consts::LN_2;
        std::f64::consts::LN_2 + ln_sinh_h + ln_cosh_rho
    }
}

/// Distance from a point at signed distance `rho` from the axis to its
/// image under `α^k`: `2 asinh(sinh(|k|ℓ/2) cosh ρ)`.
pub fn translate_distance(rho: f64, ell: f64, k: i64) -> Result<f64> {
    check_ell(ell)?;
    if k == 0 {
        return Err(domain("translate_distance needs k ≠ 0"));
    }
    Ok(2.0 * half_translate(rho, 0.5 * ell * k.unsigned_abs() as f64))
}

/// Injectivity radius at distance `d` from the collar boundary,
/// `asinh(cosh(ℓ/2) cosh d − sinh d)`.
pub fn boundary_inj(ell: f64, d: f64) -> Result<f64> {
    check_ell(ell)?;
    if !(d >= 0.0) {
        return Err(domain(format!("distance to boundary must be non-negative, got {d}")));
    }
    // cosh(ℓ/2)cosh d − sinh d = e^{-d} + 2 sinh²(ℓ/4) cosh d, no cancellation.
    let s = (0.25 * ell).sinh();
    Ok(((-d).exp() + 2.0 * s * s * d.cosh()).asinh())
}

/// Lift of the cylinder point `(ρ, u)` to the half-plane: distance `ρ` from
/// the imaginary axis, at height `e^u` along it.
pub fn fermi_lift(rho: f64, u: f64) -> PlanePoint {
    PlanePoint { x: u.exp() * rho.tanh(), y: u.exp() / rho.cosh() }
}

/// `sinh²(d/2)` between `(ρ₁, u₁)` and `(ρ₂, u₂)` in the plane, where the
/// second point is displaced by `du` along the axis.
#[inline]
fn half_sinh_sq(rho1: f64, rho2: f64, du: f64) -> f64 {
    let a = (0.5 * du).sinh();
    let b = (0.5 * (rho1 - rho2)).sinh();
    rho1.cosh() * rho2.cosh() * a * a + b * b
}

/// Distance on the cylinder, the minimum over all images.
pub fn cylinder_distance(p: (f64, f64), q: (f64, f64), ell: f64) -> f64 {
    let du = reduce(q.1 - p.1, ell);
    2.0 * half_sinh_sq(p.0, q.0, du).sqrt().asinh()
}

/// Representative of `x` modulo `ell` in `[-ell/2, ell/2]`.
fn reduce(x: f64, ell: f64) -> f64 {
    x - ell * (x / ell).round()
}

/// Bound on `Σ_{j≥0} p_t(d_j)` over images with `d_j ≥ D + jℓ`, from the
/// Gaussian kernel bound summed geometrically.
pub fn image_tail_bound(t: f64, d_next: f64, ell: f64) -> f64 {
    let geometric = 1.0 / -(-d_next * ell / (2.0 * t)).exp_m1();
    let integral = 1.0 + (PI * t).sqrt() / ell;
    (-0.25 * t - d_next * d_next / (4.0 * t)).exp() / (4.0 * PI * t) * geometric.min(integral)
}

const MAX_IMAGES: i64 = 50_000_000;

/// `Σ_{k≠0} p_t(d_k)` at signed distance `rho` from the waist.
///
/// Terms are added in order of increasing `|k|` until the certified tail
/// drops below `rel_tol` times the partial sum.
pub fn cylinder_diag_sum<K: RadialKernel + ?Sized>(kernel: &K, rho: f64, ell: f64, rel_tol: f64) -> Result<Estimate> {
    check_ell(ell)?;
    let t = kernel.time();
    let mut sum = 0.0;
    let mut k = 1i64;
    loop {
        let d = 2.0 * half_translate(rho, 0.5 * ell * k as f64);
        sum += 2.0 * kernel.value(d)?;
        let d_next = 2.0 * half_translate(rho, 0.5 * ell * (k + 1) as f64);
        let tail = 2.0 * image_tail_bound(t, d_next, ell);
        if tail <= rel_tol * sum {
            return Ok(Estimate::new(sum, tail + kernel.rel_error() * sum));
        }
        if k >= MAX_IMAGES {
            return Err(HypError::Accuracy {
                estimate: sum,
                error_bound: tail,
                context: format!("image sum at t={t}, rho={rho}, ell={ell} not converged"),
            });
        }
        k += 1;
    }
}

/// Distance beyond which the Gaussian bound is below `e^{-60}` of `1/(4πt)`.
pub fn table_radius(t: f64) -> f64 {
    (4.0 * t * 60.0).sqrt() + 1.0
}

/// Heat kernel diagonal on the cylinder minus the plane diagonal,
/// `p^C_t(x,x) − p_t(0) = Σ_{k≠0} p_t(d_k)`.
pub fn cylinder_heat_diag(t: f64, rho: f64, ell: f64, cfg: &KernelEvalConfig) -> Result<Estimate> {
    check_ell(ell)?;
    cfg.validate()?;
    let expected_terms = table_radius(t) / ell;
    if expected_terms > 32.0 {
        let table = KernelTable::new(t, table_radius(t), cfg)?;
        cylinder_diag_sum(&table, rho, ell, cfg.rel_tol)
    } else {
        cylinder_diag_sum(&DirectKernel { t, cfg: *cfg }, rho, ell, cfg.rel_tol)
    }
}

/// Full cylinder heat kernel `Σ_k p_t(d(x, α^k y))` between Fermi points.
pub fn cylinder_kernel<K: RadialKernel + ?Sized>(
    kernel: &K,
    p: (f64, f64),
    q: (f64, f64),
    ell: f64,
    rel_tol: f64,
) -> Result<Estimate> {
    check_ell(ell)?;
    let t = kernel.time();
    let du = reduce(q.1 - p.1, ell);
    let term = |shift: f64| -> Result<f64> {
        let d = 2.0 * half_sinh_sq(p.0, q.0, du + shift).sqrt().asinh();
        kernel.value(d)
    };
    let mut sum = term(0.0)?;
    let mut k = 1i64;
    loop {
        let kf = k as f64;
        sum += term(kf * ell)? + term(-kf * ell)?;
        // Remaining displacements are at least (k + ½)ℓ + jℓ on each side.
        let tail = 2.0 * image_tail_bound(t, (kf + 0.5) * ell, ell);
        if tail <= rel_tol * sum {
            return Ok(Estimate::new(sum, tail + kernel.rel_error() * sum));
        }
        if k >= MAX_IMAGES {
            return Err(HypError::Accuracy {
                estimate: sum,
                error_bound: tail,
                context: "off-diagonal image sum not converged".into(),
            });
        }
        k += 1;
    }
}

/// Integrals of `1/inj` and `1/min(inj², 1)` over the collar of waist `ell`.
pub fn collar_inj_integrals(ell: f64) -> Result<(Estimate, Estimate)> {
    check_ell(ell)?;
    if ell > max_collar_length() * (1.0 + 1e-12) {
        return Err(domain(format!("collar integrals need ell ≤ 2 asinh(1), got {ell}")));
    }
    let w = collar_width(ell)?;
    let h = 0.5 * ell;
    let r = |rho: f64| (h.sinh() * rho.cosh()).asinh();
    // Breakpoints at the decades of cosh ρ and at inj = 1.
    let mut pts = vec![0.0, w];
    let mut c = 1.0;
    while c < w {
        pts.push(c);
        c += 1.0;
    }
    let rho_one = (1f64.sinh() / h.sinh()).acosh();
    if rho_one.is_finite() && rho_one > 0.0 && rho_one < w {
        pts.push(rho_one);
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let tol = Tolerance::relative(1e-10, 2000);
    let inv = integrate(|rho: f64| 2.0 * ell * rho.cosh() / r(rho), &pts, &tol)?;
    let inv_sq = integrate(
        |rho: f64| {
            let ri = r(rho);
            2.0 * ell * rho.cosh() / (ri * ri).min(1.0)
        },
        &pts,
        &tol,
    )?;
    Ok((Estimate::new(inv.value, inv.error), Estimate::new(inv_sq.value, inv_sq.error)))
}

/// Area of the ball of radius `r` about the point at signed distance `rho`
/// from the waist of the cylinder of waist `ell`.
pub fn cylinder_ball_volume(rho: f64, r: f64, ell: f64) -> Result<f64> {
    check_ell(ell)?;
    if !(r >= 0.0) {
        return Err(domain("ball radius must be non-negative"));
    }
    if r == 0.0 {
        return Ok(0.0);
    }
    let sr = (0.5 * r).sinh();
    // ρ' = ρ + r sin φ absorbs the square-root endpoints.
    let f = |phi: f64| -> f64 {
        let rp = rho + r * phi.sin();
        let b = (0.5 * (rho - rp)).sinh();
        let num = (sr * sr - b * b).max(0.0);
        let s = (num / (rho.cosh() * rp.cosh())).sqrt();
        let arc = (4.0 * s.asinh()).min(ell);
        rp.cosh() * arc * r * phi.cos()
    };
    let half = 0.5 * PI;
    let q = integrate(f, &[-half, -0.5 * half, 0.0, 0.5 * half, half], &Tolerance::relative(1e-10, 2000))?;
    Ok(q.value)
}

/// Sorted closed-geodesic lengths together with the surface area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthSpectrum {
    pub lengths: Vec<f64>,
    pub volume: f64,
}

impl LengthSpectrum {
    pub fn new(mut lengths: Vec<f64>, volume: f64) -> Result<Self> {
        if !(volume > 0.0) || !volume.is_finite() {
            return Err(domain(format!("volume must be positive, got {volume}")));
        }
        if let Some(bad) = lengths.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
            return Err(domain(format!("lengths must be positive and finite, got {bad}")));
        }
        lengths.sort_by(f64::total_cmp);
        Ok(Self { lengths, volume })
    }

    /// Parse `volume <v>` followed by one length per line. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut volume = None;
        let mut lengths = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = i + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |m: String| HypError::Parse { line: lineno, message: m };
            match volume {
                None => {
                    let rest = line
                        .strip_prefix("volume")
                        .ok_or_else(|| parse_err("expected `volume <real>`".into()))?;
                    let v: f64 = rest.trim().parse().map_err(|e| parse_err(format!("bad volume: {e}")))?;
                    if !(v > 0.0) || !v.is_finite() {
                        return Err(parse_err(format!("volume must be positive, got {v}")));
                    }
                    volume = Some(v);
                }
                Some(_) => {
                    let l: f64 = line.parse().map_err(|e| parse_err(format!("bad length: {e}")))?;
                    if !(l > 0.0) || !l.is_finite() {
                        return Err(parse_err(format!("length must be positive, got {l}")));
                    }
                    lengths.push(l);
                }
            }
        }
        let volume = volume.ok_or(HypError::Parse { line: 1, message: "missing volume line".into() })?;
        Self::new(lengths, volume)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("volume {}\n", self.volume);
        for l in &self.lengths {
            s.push_str(&format!("{l}\n"));
        }
        s
    }
}

/// Volume-normalized sum of `1/ℓ` over lengths `ℓ ≤ eta`.
pub fn l_eta(spec: &LengthSpectrum, eta: f64) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(domain(format!("eta must be positive, got {eta}")));
    }
    let s: f64 = spec.lengths.iter().take_while(|&&l| l <= eta).map(|l| l.recip()).sum();
    Ok(s / spec.volume)
}

/// `∫_C [p^C_t(x,x) − p_t(0)] dx` over the collar `|ρ| ≤ W(ℓ)`.
pub fn collar_trace_diff(ell: f64, t: f64, cfg: &KernelEvalConfig) -> Result<Estimate> {
    let w = collar_width(ell)?;
    let table = KernelTable::new(t, table_radius(t), cfg)?;
    collar_trace_diff_with(&table, ell, w, cfg.rel_tol)
}

/// As [`collar_trace_diff`], integrating over `|ρ| ≤ half_width` with the
/// supplied kernel at its fixed time.
pub fn collar_trace_diff_with<K: RadialKernel + ?Sized>(
    kernel: &K,
    ell: f64,
    half_width: f64,
    rel_tol: f64,
) -> Result<Estimate> {
    let inner_tol = 0.1 * rel_tol;
    let failure = std::cell::Cell::new(None);
    let f = |rho: f64| -> f64 {
        match cylinder_diag_sum(kernel, rho, ell, inner_tol) {
            Ok(e) => 2.0 * ell * rho.cosh() * e.value,
            Err(e) => {
                failure.set(Some(e));
                f64::NAN
            }
        }
    };
    // The integrand decays on the scale where the first translate exceeds √t.
    let mut pts = vec![0.0, half_width];
    let t = kernel.time();
    let s = (0.5 * ell).sinh();
    for scale in [0.5, 2.0, 8.0] {
        let c = (scale * t.sqrt() / s).max(1.0);
        let rho = c.acosh();
        if rho > 0.0 && rho < half_width {
            pts.push(rho);
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let tol = Tolerance { abs_tol: 1e-300, rel_tol, max_subdivisions: 400 };
    let q = integrate(f, &pts, &tol);
    if let Some(e) = failure.take() {
        return Err(e);
    }
    let q = q?;
    Ok(Estimate::new(q.value, q.error + (inner_tol + kernel.rel_error()) * q.value.abs()))
}

/// `p_t(0)` needed alongside image sums; a thin wrapper for callers that only
/// hold a [`KernelEvalConfig`].
pub fn plane_diag(t: f64, cfg: &KernelEvalConfig) -> Result<Estimate> {
    p_plane(t, 0.0, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyp::{dist, Isometry};
    use crate::plane_kernel::{lin_grid, log_grid};
    use proptest::prelude::*;

    fn cfg() -> KernelEvalConfig {
        KernelEvalConfig::default()
    }

    #[test]
    fn collar_width_examples() {
        let w = collar_width(max_collar_length()).unwrap();
        assert!((w - 1f64.asinh()).abs() < 1e-15);
        assert!((w - 0.881373587019543).abs() < 1e-12);
        let ell = 1e-4;
        let ratio = collar_width(ell).unwrap() / (4.0 / ell).ln();
        assert!((0.9..=1.1).contains(&ratio), "{ratio}");
        assert!(collar_width(0.1).unwrap() > collar_width(0.2).unwrap());
        assert!(collar_width(0.0).is_err() && collar_width(-1.0).is_err());
        let spec = CollarSpec::new(2.0).unwrap();
        assert!(spec.outside_regime);
        assert!(!CollarSpec::new(1.0).unwrap().outside_regime);
        assert!((CollarSpec::new(0.5).unwrap().half_width - collar_width(0.5).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn injectivity_examples() {
        for ell in [1e-4, 0.3, 1.7] {
            assert!((inj_radius_cylinder(0.0, ell).unwrap() - 0.5 * ell).abs() < 1e-15 * ell.max(1.0));
        }
        // matches the acosh form
        for (rho, ell) in [(0.3, 0.2), (2.0, 1.0), (5.0, 0.01)] {
            let acosh_form = 0.5 * (1.0 + (f64::cosh(ell) - 1.0) * f64::cosh(rho).powi(2)).acosh();
            assert!((inj_radius_cylinder(rho, ell).unwrap() - acosh_form).abs() < 1e-9);
        }
    }

    #[test]
    fn twice_injectivity_is_first_translate() {
        for rho in lin_grid(-3.0, 3.0, 25) {
            for ell in log_grid(1e-4, 2.0, 20) {
                let a = 2.0 * inj_radius_cylinder(rho, ell).unwrap();
                let b = translate_distance(rho, ell, 1).unwrap();
                assert!((a - b).abs() <= 1e-12 * b.max(1.0));
            }
        }
    }

    #[test]
    fn injectivity_comparable_to_ell_cosh_rho() {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for ell in log_grid(1e-4, max_collar_length(), 30) {
            let w = collar_width(ell).unwrap();
            for rho in lin_grid(0.0, w, 30) {
                let q = inj_radius_cylinder(rho, ell).unwrap() / (ell * rho.cosh());
                lo = lo.min(q);
                hi = hi.max(q);
            }
        }
        assert!(hi / lo <= 4.0, "c1={lo} c2={hi}");
    }

    #[test]
    fn translate_distance_examples() {
        assert!(translate_distance(0.0, 0.3, 0).is_err());
        for k in [-3i64, -1, 1, 2, 7] {
            let d = translate_distance(0.0, 0.3, k).unwrap();
            assert!((d - 0.3 * k.abs() as f64).abs() < 1e-14);
        }
        for rho in lin_grid(0.0, 4.0, 20) {
            for ell in log_grid(1e-3, 2.0, 20) {
                let mut prev = 0.0;
                for k in 1..=5 {
                    let d = translate_distance(rho, ell, k).unwrap();
                    assert!(d >= k as f64 * ell * (1.0 - 1e-14));
                    assert!(d > prev);
                    prev = d;
                }
            }
        }
    }

    #[test]
    fn translate_distance_matches_matrix_oracle() {
        // 10 × 10 × 10 grid of (ρ, ℓ, k).
        for rho in lin_grid(-3.0, 3.0, 10) {
            for ell in log_grid(1e-3, 2.5, 10) {
                for k in 1..=10i64 {
                    let x = fermi_lift(rho, 0.37);
                    let alpha_k = (0..k).fold(Isometry::IDENTITY, |m, _| m.compose(&Isometry::axis_translation(ell)));
                    let oracle = dist(x, alpha_k.apply(x).unwrap()).unwrap();
                    let d = translate_distance(rho, ell, k).unwrap();
                    assert!((oracle - d).abs() <= 1e-10 * d.max(1.0), "{rho} {ell} {k}: {oracle} vs {d}");
                }
            }
        }
    }

    #[test]
    fn fermi_lift_has_the_right_distance_to_axis() {
        for rho in [-2.0, -0.1, 0.0, 0.7, 3.0] {
            let p = fermi_lift(rho, 0.0);
            // distance from the imaginary axis is asinh(|x|/y)
            assert!(((p.x / p.y).asinh() - rho).abs() < 1e-14);
        }
        let d = cylinder_distance((0.3, 0.1), (1.1, 0.9), 10.0);
        let oracle = dist(fermi_lift(0.3, 0.1), fermi_lift(1.1, 0.9)).unwrap();
        assert!((d - oracle).abs() < 1e-13);
    }

    #[test]
    fn boundary_injectivity() {
        for ell in [1e-3, 0.1, 1.0, 1.7] {
            let v = boundary_inj(ell, 0.0).unwrap();
            assert!((v - (0.5 * ell).cosh().asinh()).abs() < 1e-14);
            assert!(boundary_inj(ell, 1.0).unwrap() >= (1f64.cosh() - 1f64.sinh()).asinh() - 1e-15);
        }
        // agrees with the interior formula at d = W − ρ
        for ell in log_grid(1e-3, max_collar_length(), 15) {
            let w = collar_width(ell).unwrap();
            for rho in lin_grid(0.0, w, 15) {
                let r = inj_radius_cylinder(rho, ell).unwrap();
                if r <= 1f64.asinh() {
                    let b = boundary_inj(ell, w - rho).unwrap();
                    assert!((b - r).abs() < 1e-10, "ell={ell} rho={rho}: {b} vs {r}");
                }
            }
        }
    }

    #[test]
    fn cylinder_diag_examples() {
        let far = cylinder_heat_diag(1.0, 20.0, 0.5, &cfg()).unwrap();
        assert!(far.value <= 1e-12 && far.value >= 0.0);
        for t in [0.01, 0.1, 1.0] {
            let a = cylinder_heat_diag(t, 0.0, 0.6, &cfg()).unwrap().value;
            let b = cylinder_heat_diag(t, 0.0, 0.3, &cfg()).unwrap().value;
            assert!(a <= b && a > 0.0);
        }
        // ≳ 1/t in the regime t ∈ [ℓ²/2, ℓ²], |ρ| ≤ 1
        let mut c = f64::INFINITY;
        for ell in [0.3, 0.1, 0.03, 0.01] {
            for t in lin_grid(0.5 * ell * ell, ell * ell, 4) {
                for rho in [0.0, 0.5, 1.0] {
                    c = c.min(t * cylinder_heat_diag(t, rho, ell, &cfg()).unwrap().value);
                }
            }
        }
        assert!(c > 1e-3, "{c}");
    }

    #[test]
    fn tail_certificate_covers_omitted_terms() {
        for (t, rho, ell) in [(0.5, 0.0, 0.5), (0.05, 1.0, 0.1), (2.0, 0.3, 1.0), (1e-3, 0.0, 0.01)] {
            let rel = 1e-6;
            let k = DirectKernel { t, cfg: cfg() };
            let est = cylinder_diag_sum(&k, rho, ell, rel).unwrap();
            // Recount the number of terms used, then add ten more by hand.
            let mut n = 1i64;
            let mut s = 0.0;
            loop {
                s += 2.0 * p_plane(t, translate_distance(rho, ell, n).unwrap(), &cfg()).unwrap().value;
                if (s - est.value).abs() <= 1e-12 * est.value {
                    break;
                }
                n += 1;
                assert!(n < 100_000);
            }
            let extra: f64 = (n + 1..=n + 10)
                .map(|j| 2.0 * p_plane(t, translate_distance(rho, ell, j).unwrap(), &cfg()).unwrap().value)
                .sum();
            assert!(extra <= est.error, "t={t}: omitted {extra} > bound {}", est.error);
        }
    }

    #[test]
    fn chapman_kolmogorov_on_cylinder() {
        let (t, s, ell) = (0.5, 0.5, 0.5);
        let table = KernelTable::new(t, 40.0, &cfg()).unwrap();
        let x = (0.0, 0.0);
        // u-integral is periodic: the trapezoid rule converges geometrically.
        let n_u = 48;
        let inner = |rho: f64| -> f64 {
            let mut acc = 0.0;
            for j in 0..n_u {
                let u = ell * j as f64 / n_u as f64;
                let k = cylinder_kernel(&table, x, (rho, u), ell, 1e-12).unwrap().value;
                acc += k * k;
            }
            acc * ell / n_u as f64 * rho.cosh()
        };
        let lhs = integrate(inner, &[-14.0, -4.0, -1.0, 0.0, 1.0, 4.0, 14.0], &Tolerance::relative(1e-9, 400)).unwrap();
        let rhs = p_plane(t + s, 0.0, &cfg()).unwrap().value + cylinder_heat_diag(t + s, 0.0, ell, &cfg()).unwrap().value;
        let rel = (lhs.value - rhs).abs() / rhs;
        assert!(rel <= 1e-4, "{} vs {rhs}: {rel:e}", lhs.value);
    }

    #[test]
    fn collar_integrals_scale_as_expected() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for ell in [1e-1, 1e-2, 1e-3, 1e-4] {
            let (i1, i2) = collar_inj_integrals(ell).unwrap();
            assert!(i1.rel_error() < 1e-6 && i2.rel_error() < 1e-6);
            a.push(i1.value / (1.0 / ell).ln());
            b.push(i2.value * ell);
        }
        let spread = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max) / v.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread(&a) <= 2.0, "{a:?}");
        assert!(spread(&b) <= 2.0, "{b:?}");
        // ℓ ∫ 1/inj² → 4π for the collar measure
        assert!((b[3] - 4.0 * PI).abs() < 0.05, "{b:?}");
        let (i1, i2) = collar_inj_integrals(max_collar_length()).unwrap();
        assert!(i1.value > 0.0 && i2.value > 0.0 && i1.value.is_finite() && i2.value.is_finite());
        assert!(collar_inj_integrals(2.0).is_err());
    }

    #[test]
    fn collar_integral_matches_closed_form_area() {
        // With 1/inj replaced by 1 the measure integrates to the collar area.
        let ell = 0.2;
        let w = collar_width(ell).unwrap();
        let q = integrate(|r: f64| 2.0 * ell * r.cosh(), &[0.0, w], &Tolerance::relative(1e-13, 50)).unwrap();
        assert!((q.value - CollarSpec::new(ell).unwrap().area()).abs() < 1e-12);
    }

    #[test]
    fn ball_volume_on_cylinder() {
        // Below the injectivity radius the ball is a plane ball.
        for (rho, ell) in [(0.0, 1.0), (1.5, 0.3), (0.2, 0.05)] {
            let r = 0.95 * inj_radius_cylinder(rho, ell).unwrap();
            let v = cylinder_ball_volume(rho, r, ell).unwrap();
            let plane = crate::hyp::ball_volume(r).unwrap();
            assert!((v - plane).abs() < 1e-7 * plane, "{v} vs {plane}");
        }
        // Above it the ball wraps and has less area.
        let v = cylinder_ball_volume(0.0, 2.0, 0.1).unwrap();
        assert!(v < crate::hyp::ball_volume(2.0).unwrap());
        // A large ball about the waist covers the band |ρ| < r almost fully.
        let v = cylinder_ball_volume(0.0, 1.0, 0.01).unwrap();
        assert!((v - 2.0 * 0.01 * 1f64.sinh()).abs() < 1e-3 * v);
    }

    #[test]
    fn length_spectrum_io() {
        let s = LengthSpectrum::parse("volume 10\n0.5\n0.1\n").unwrap();
        assert_eq!(s.lengths, vec![0.1, 0.5]);
        assert!((l_eta(&s, 0.2).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(l_eta(&s, 0.05).unwrap(), 0.0);
        assert_eq!(LengthSpectrum::parse(&s.to_text()).unwrap(), s);
        match LengthSpectrum::parse("volume 4\n0.3\n-1\n") {
            Err(HypError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(LengthSpectrum::parse("0.3\n").is_err());
        assert!(LengthSpectrum::parse("volume 0\n").is_err());
    }

    #[test]
    fn collar_trace_diff_small_time_vanishes() {
        let v = collar_trace_diff(0.5, 1e-6, &cfg()).unwrap();
        assert!(v.value <= 1e-3 && v.value >= 0.0, "{v:?}");
        let v = collar_trace_diff(0.1, 0.05, &cfg()).unwrap();
        assert!(v.value > 0.0);
    }

    proptest! {
        #[test]
        fn l_eta_monotone(e1 in 0.01..3.0f64, e2 in 0.01..3.0f64) {
            let s = LengthSpectrum::new(vec![0.05, 0.2, 0.2, 0.9, 2.5], 12.0).unwrap();
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            prop_assert!(l_eta(&s, lo).unwrap() <= l_eta(&s, hi).unwrap());
        }

        #[test]
        fn injectivity_increases_with_distance_from_waist(rho in 0.0..5.0f64, dr in 0.01..1.0f64, ell in 1e-3..2.0f64) {
            prop_assert!(inj_radius_cylinder(rho + dr, ell).unwrap() > inj_radius_cylinder(rho, ell).unwrap());
            prop_assert_eq!(inj_radius_cylinder(-rho, ell).unwrap(), inj_radius_cylinder(rho, ell).unwrap());
        }
    }
}
