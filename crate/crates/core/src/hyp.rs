//! Upper half-plane geometry: points, distances, Möbius isometries.

use crate::error::{domain, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// A point `x + iy` of the upper half-plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanePoint {
    pub x: f64,
    pub y: f64,
}

impl PlanePoint {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() {
            return Err(domain(format!("non-finite point ({x}, {y})")));
        }
        if y <= 0.0 {
            return Err(domain(format!("point ({x}, {y}) is not in the upper half-plane")));
        }
        Ok(Self { x, y })
    }

    /// The point `i`, used as the default basepoint.
    pub const I: PlanePoint = PlanePoint { x: 0.0, y: 1.0 };

    fn check(&self) -> Result<()> {
        if self.x.is_finite() && self.y.is_finite() && self.y > 0.0 {
            Ok(())
        } else {
            Err(domain(format!("invalid point ({}, {})", self.x, self.y)))
        }
    }
}

/// `sinh(d/2)` for the hyperbolic distance `d` between two points.
///
/// This is the quantity every closed form in the crate is phrased in; it
/// stays accurate when the points nearly coincide.
#[inline]
pub fn half_sinh_dist(p: &PlanePoint, q: &PlanePoint) -> f64 {
    let dx = p.x - q.x;
    let dy = p.y - q.y;
    (dx * dx + dy * dy).sqrt() / (2.0 * (p.y * q.y).sqrt())
}

/// Hyperbolic distance, `2 asinh(|p − q| / (2 √(y_p y_q)))`.
pub fn dist(p: PlanePoint, q: PlanePoint) -> Result<f64> {
    p.check()?;
    q.check()?;
    Ok(dist_unchecked(&p, &q))
}

#[inline]
pub(crate) fn dist_unchecked(p: &PlanePoint, q: &PlanePoint) -> f64 {
    2.0 * half_sinh_dist(p, q).asinh()
}

/// Area of a hyperbolic disc of radius `r`.
pub fn ball_volume(r: f64) -> Result<f64> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(domain(format!("ball radius must be finite and non-negative, got {r}")));
    }
    // 2π(cosh r − 1) = 4π sinh²(r/2), the latter without cancellation.
    let s = (0.5 * r).sinh();
    Ok(4.0 * PI * s * s)
}

/// Renormalize the determinant once this many products have accumulated.
const RENORM_PERIOD: u32 = 32;

/// An orientation-preserving isometry `z ↦ (az + b)/(cz + d)` with `ad − bc = 1`.
///
/// Matrices are only defined up to sign; use [`Isometry::approx_eq`] to compare.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Isometry {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    /// Products accumulated since the last determinant renormalization.
    #[serde(skip)]
    depth: u32,
}

impl Isometry {
    pub const IDENTITY: Isometry = Isometry { a: 1.0, b: 0.0, c: 0.0, d: 1.0, depth: 0 };

    /// Build from entries, checking the unit determinant to `1e-12` relative.
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        let m = Self { a, b, c, d, depth: 0 };
        if ![a, b, c, d].iter().all(|v| v.is_finite()) {
            return Err(domain("non-finite isometry entry"));
        }
        let det = m.det();
        let scale = (a * d).abs().max((b * c).abs()).max(1.0);
        if (det - 1.0).abs() > 1e-12 * scale {
            return Err(domain(format!("determinant {det} is not 1")));
        }
        Ok(m)
    }

    /// Build from entries of any positive determinant, rescaling to `det = 1`.
    pub fn normalized(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        let det = a * d - b * c;
        if !(det > 0.0) || !det.is_finite() {
            return Err(domain(format!("determinant {det} is not positive")));
        }
        let s = det.sqrt().recip();
        Self::new(a * s, b * s, c * s, d * s)
    }

    /// Translation by `length` along the imaginary axis, `diag(e^{ℓ/2}, e^{−ℓ/2})`.
    pub fn axis_translation(length: f64) -> Self {
        let h = 0.5 * length;
        Self { a: h.exp(), b: 0.0, c: 0.0, d: (-h).exp(), depth: 0 }
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn trace(&self) -> f64 {
        self.a + self.d
    }

    pub fn entries(&self) -> [f64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    pub fn inverse(&self) -> Self {
        Self { a: self.d, b: -self.b, c: -self.c, d: self.a, depth: self.depth }
    }

    /// The product `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &Isometry) -> Self {
        let mut m = Self {
            a: self.a * other.a + self.b * other.c,
            b: self.a * other.b + self.b * other.d,
            c: self.c * other.a + self.d * other.c,
            d: self.c * other.b + self.d * other.d,
            depth: self.depth.max(other.depth) + 1,
        };
        if m.depth >= RENORM_PERIOD {
            let s = m.det().sqrt().recip();
            m.a *= s;
            m.b *= s;
            m.c *= s;
            m.d *= s;
            m.depth = 0;
        }
        m
    }

    /// Möbius action on a point.
    pub fn apply(&self, p: PlanePoint) -> Result<PlanePoint> {
        p.check()?;
        let den = self.c * p.x + self.d;
        let q = den * den + self.c * self.c * p.y * p.y;
        if q == 0.0 || !q.is_finite() {
            return Err(domain("Möbius denominator vanishes"));
        }
        Ok(self.apply_unchecked(&p))
    }

    #[inline]
    pub(crate) fn apply_unchecked(&self, p: &PlanePoint) -> PlanePoint {
        let den = self.c * p.x + self.d;
        let cy = self.c * p.y;
        let q = den * den + cy * cy;
        let num = self.a * p.x + self.b;
        PlanePoint {
            x: (num * den + self.a * cy * p.y) / q,
            y: p.y / q,
        }
    }

    /// Equality up to the global sign, entrywise within `tol`.
    pub fn approx_eq(&self, other: &Isometry, tol: f64) -> bool {
        let e = self.entries();
        let f = other.entries();
        let same = e.iter().zip(&f).all(|(x, y)| (x - y).abs() <= tol);
        let flipped = e.iter().zip(&f).all(|(x, y)| (x + y).abs() <= tol);
        same || flipped
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        self.approx_eq(&Isometry::IDENTITY, tol)
    }

    /// Translation length of a hyperbolic element, `2 acosh(|tr|/2)`.
    pub fn translation_length(&self) -> Option<f64> {
        let t = self.trace().abs();
        (t > 2.0).then(|| 2.0 * (0.5 * t).acosh())
    }
}

/// Cayley map from the unit disc to the half-plane, `w ↦ i(1 + w)/(1 − w)`.
pub fn disc_to_plane(re: f64, im: f64) -> Result<PlanePoint> {
    let dr = 1.0 - re;
    let q = dr * dr + im * im;
    if !(re * re + im * im < 1.0) {
        return Err(domain(format!("({re}, {im}) is not inside the unit disc")));
    }
    // i(1+w)(1−w̄)/|1−w|², with (1+w)(1−w̄) = 1 − |w|² + 2i·im.
    let n2 = re * re + im * im;
    PlanePoint::new(-2.0 * im / q, (1.0 - n2) / q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(x: f64, y: f64) -> PlanePoint {
        PlanePoint::new(x, y).unwrap()
    }

    fn random_isometry(rng: &mut impl Rng) -> Isometry {
        let a: f64 = rng.gen_range(0.3..3.0);
        let b: f64 = rng.gen_range(-2.0..2.0);
        let c: f64 = rng.gen_range(-2.0..2.0);
        let d = (1.0 + b * c) / a;
        Isometry::new(a, b, c, d).unwrap()
    }

    fn random_point(rng: &mut impl Rng) -> PlanePoint {
        pt(rng.gen_range(-3.0..3.0), rng.gen_range(0.1..4.0))
    }

    #[test]
    fn distance_examples() {
        assert_eq!(dist(pt(0.0, 1.0), pt(0.0, 1.0)).unwrap(), 0.0);
        assert!((dist(pt(0.0, 1.0), pt(0.0, std::f64::consts::E)).unwrap() - 1.0).abs() < 1e-15);
        let d = dist(pt(0.0, 1.0), pt(1.0, 1.0)).unwrap();
        assert!((d - 1.5f64.acosh()).abs() < 1e-15);
        assert!((d - 0.9624236501192069).abs() < 1e-14);
    }

    #[test]
    fn distance_matches_path_length_along_geodesic() {
        // The geodesic through (0,1) and (1,1) is the circle |z − 1/2| = √5/2.
        // Integrate the metric |dz|/y along it with a fine midpoint rule.
        let rad = 1.25f64.sqrt();
        let (t_a, t_b) = ((0.5 / rad).acos(), (-0.5f64 / rad).acos());
        let n = 200_000;
        let h = (t_b - t_a) / n as f64;
        let mut len = 0.0;
        for k in 0..n {
            let th = t_a + (k as f64 + 0.5) * h;
            let y = rad * th.sin();
            len += rad * h / y;
        }
        assert!((len - 1.5f64.acosh()).abs() < 1e-9, "path length {len}");
    }

    #[test]
    fn non_finite_input_is_a_domain_error() {
        assert!(PlanePoint::new(f64::NAN, 1.0).is_err());
        assert!(PlanePoint::new(0.0, 0.0).is_err());
        let bad = PlanePoint { x: 0.0, y: f64::INFINITY };
        assert!(dist(bad, PlanePoint::I).is_err());
    }

    #[test]
    fn apply_examples() {
        let p = pt(0.3, 2.0);
        assert_eq!(Isometry::IDENTITY.apply(p).unwrap(), p);
        let q = Isometry::axis_translation(1.0).apply(PlanePoint::I).unwrap();
        assert!(q.x.abs() < 1e-15 && (q.y - std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn group_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let t = random_isometry(&mut rng);
            let p = random_point(&mut rng);
            let back = t.apply(t.inverse().apply(p).unwrap()).unwrap();
            assert!((back.x - p.x).abs() < 1e-12 * (1.0 + p.x.abs()) && (back.y - p.y).abs() < 1e-12 * p.y);
            assert!(t.compose(&Isometry::IDENTITY).approx_eq(&t, 1e-12));
            assert!(t.compose(&t.inverse()).is_identity(1e-12));
        }
        let sum = Isometry::axis_translation(0.7).compose(&Isometry::axis_translation(1.1));
        assert!(sum.approx_eq(&Isometry::axis_translation(1.8), 1e-12));
        assert!(Isometry::axis_translation(0.7).approx_eq(
            &Isometry::new(-(0.35f64.exp()), 0.0, 0.0, -((-0.35f64).exp())).unwrap(),
            1e-15
        ));
    }

    #[test]
    fn long_products_keep_unit_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // rotations about i keep entries bounded, so any drift is pure rounding
        let mut m = Isometry::IDENTITY;
        for _ in 0..100_000 {
            let th: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = Isometry::new(th.cos(), -th.sin(), th.sin(), th.cos()).unwrap();
            m = m.compose(&r);
        }
        assert!((m.det() - 1.0).abs() < 1e-13, "det drift {}", m.det() - 1.0);
    }

    #[test]
    fn ball_volume_examples() {
        assert_eq!(ball_volume(0.0).unwrap(), 0.0);
        let v1 = ball_volume(1.0).unwrap();
        assert!((v1 - 2.0 * PI * (1f64.cosh() - 1.0)).abs() < 1e-14);
        assert!((v1 - 3.412276265284902).abs() < 1e-13);
        // polar quadrature of sinh(s) ds dθ
        let n = 2000;
        let h = 1.0 / n as f64;
        let area: f64 = (0..n).map(|k| ((k as f64 + 0.5) * h).sinh() * h).sum::<f64>() * 2.0 * PI;
        assert!((area - v1).abs() < 1e-6);
        let r = 1e-3;
        assert!((ball_volume(r).unwrap() / (PI * r * r) - 1.0).abs() < 1e-5);
        assert!(ball_volume(-0.1).is_err());
    }

    #[test]
    fn ball_volume_dominates_euclidean() {
        let mut prev = 0.0;
        for k in 0..=1000 {
            let r = k as f64 * 0.01;
            let v = ball_volume(r).unwrap();
            assert!(v >= PI * r * r * (1.0 - 1e-15));
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn isometries_preserve_distance_on_many_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let t = random_isometry(&mut rng);
            let (p, q) = (random_point(&mut rng), random_point(&mut rng));
            let d0 = dist(p, q).unwrap();
            let d1 = dist(t.apply(p).unwrap(), t.apply(q).unwrap()).unwrap();
            assert!((d0 - d1).abs() <= 1e-10 * (1.0 + d0), "{d0} vs {d1}");
        }
    }

    #[test]
    fn triangle_inequality_on_many_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10_000 {
            let (p, q, r) = (random_point(&mut rng), random_point(&mut rng), random_point(&mut rng));
            let (a, b, c) = (dist(p, q).unwrap(), dist(q, r).unwrap(), dist(p, r).unwrap());
            assert!(c <= a + b + 1e-10);
        }
    }

    #[test]
    fn cayley_map_sends_centre_to_i() {
        let p = disc_to_plane(0.0, 0.0).unwrap();
        assert!((p.x).abs() < 1e-15 && (p.y - 1.0).abs() < 1e-15);
        // a disc point at hyperbolic distance ρ has Euclidean radius tanh(ρ/2)
        let rho = 1.3f64;
        let q = disc_to_plane((0.5 * rho).tanh() * 0.6, (0.5 * rho).tanh() * 0.8).unwrap();
        assert!((dist(PlanePoint::I, q).unwrap() - rho).abs() < 1e-13);
    }

    proptest! {
        #[test]
        fn distance_is_symmetric_and_nonnegative(
            x1 in -5.0..5.0f64, y1 in 0.01..10.0f64, x2 in -5.0..5.0f64, y2 in 0.01..10.0f64
        ) {
            let (p, q) = (pt(x1, y1), pt(x2, y2));
            let d = dist(p, q).unwrap();
            prop_assert!(d >= 0.0);
            prop_assert_eq!(d, dist(q, p).unwrap());
            prop_assert!((d == 0.0) == (p == q));
        }

        #[test]
        fn apply_stays_in_upper_half_plane(
            a in 0.2..3.0f64, b in -3.0..3.0f64, c in -3.0..3.0f64, x in -5.0..5.0f64, y in 0.01..10.0f64
        ) {
            let t = Isometry::new(a, b, c, (1.0 + b * c) / a).unwrap();
            let q = t.apply(pt(x, y)).unwrap();
            prop_assert!(q.y > 0.0 && q.x.is_finite());
        }
    }
}
