//! Möbius transformations and the upper half-space model of hyperbolic
//! 3-space.
//!
//! A [`MoebiusMap`] is a 2x2 complex matrix normalized to determinant one.
//! It acts on the boundary sphere CP^1 by fractional-linear maps and on the
//! upper half-space `{(x1, x2, y) : y > 0}` by the isometric (quaternionic)
//! extension. The projective sign of the matrix is not tracked: only the
//! actions matter.

use num_complex::Complex64;

/// A point of upper half-space, `y > 0`. The horizontal part is kept as a
/// complex number `x1 + i x2` where convenient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct H3Point {
    pub x1: f64,
    pub x2: f64,
    pub y: f64,
}

impl H3Point {
    pub fn new(x1: f64, x2: f64, y: f64) -> Self {
        assert!(y > 0.0, "H3Point requires y > 0, got y = {y}");
        Self { x1, x2, y }
    }

    /// Horizontal part as a complex number.
    pub fn horizontal(&self) -> Complex64 {
        Complex64::new(self.x1, self.x2)
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.x1, self.x2, self.y]
    }
}

/// A point of the boundary sphere CP^1: a finite complex number or infinity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryPoint {
    Finite(Complex64),
    Infinity,
}

impl BoundaryPoint {
    pub fn finite(re: f64, im: f64) -> Self {
        BoundaryPoint::Finite(Complex64::new(re, im))
    }

    pub fn as_finite(&self) -> Option<Complex64> {
        match self {
            BoundaryPoint::Finite(z) => Some(*z),
            BoundaryPoint::Infinity => None,
        }
    }
}

impl From<Complex64> for BoundaryPoint {
    fn from(z: Complex64) -> Self {
        BoundaryPoint::Finite(z)
    }
}

/// Möbius transformation `z -> (az + b)/(cz + d)`, normalized so `ad - bc = 1`.
#[derive(Debug, Clone, Copy)]
pub struct MoebiusMap {
    pub a: Complex64,
    pub b: Complex64,
    pub c: Complex64,
    pub d: Complex64,
}

impl MoebiusMap {
    /// Builds a map from matrix entries, rescaling so that `ad - bc = 1`.
    ///
    /// Panics if the matrix is singular. The sign of the square root is the
    /// principal branch; the resulting projective ambiguity has no effect on
    /// any action.
    pub fn new(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> Self {
        let det = a * d - b * c;
        assert!(det.norm() > 1e-14, "singular Moebius matrix");
        let s = det.sqrt();
        Self {
            a: a / s,
            b: b / s,
            c: c / s,
            d: d / s,
        }
    }

    pub fn identity() -> Self {
        Self {
            a: Complex64::new(1.0, 0.0),
            b: Complex64::new(0.0, 0.0),
            c: Complex64::new(0.0, 0.0),
            d: Complex64::new(1.0, 0.0),
        }
    }

    /// Determinant of the stored representative (should be 1 after `new`).
    pub fn det(&self) -> Complex64 {
        self.a * self.d - self.b * self.c
    }

    /// Composition: `(m1.compose(m2))(z) = m1(m2(z))`.
    pub fn compose(&self, other: &MoebiusMap) -> MoebiusMap {
        MoebiusMap::new(
            self.a * other.a + self.b * other.c,
            self.a * other.b + self.b * other.d,
            self.c * other.a + self.d * other.c,
            self.c * other.b + self.d * other.d,
        )
    }

    /// Inverse map. For a determinant-one matrix this is `[[d, -b], [-c, a]]`.
    pub fn inverse(&self) -> MoebiusMap {
        MoebiusMap {
            a: self.d,
            b: -self.b,
            c: -self.c,
            d: self.a,
        }
    }

    /// Complex derivative `m'(z) = 1/(cz + d)^2` at a finite point.
    pub fn derivative(&self, z: Complex64) -> Complex64 {
        let w = self.c * z + self.d;
        1.0 / (w * w)
    }

    /// Translation `z -> z + b`.
    pub fn translation(b: Complex64) -> Self {
        MoebiusMap::new(
            Complex64::new(1.0, 0.0),
            b,
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 0.0),
        )
    }

    /// Rotation `z -> e^{i theta} z` about the origin.
    pub fn rotation(theta: f64) -> Self {
        let h = Complex64::from_polar(1.0, theta / 2.0);
        MoebiusMap {
            a: h,
            b: Complex64::new(0.0, 0.0),
            c: Complex64::new(0.0, 0.0),
            d: h.conj(),
        }
    }

    /// Dilation `z -> k z` for real `k > 0`.
    pub fn dilation(k: f64) -> Self {
        assert!(k > 0.0);
        let s = k.sqrt();
        MoebiusMap {
            a: Complex64::new(s, 0.0),
            b: Complex64::new(0.0, 0.0),
            c: Complex64::new(0.0, 0.0),
            d: Complex64::new(1.0 / s, 0.0),
        }
    }

    /// Disc automorphism `z -> (z - p)/(1 - conj(p) z)` sending `p` to the
    /// origin. Requires `|p| < 1`.
    pub fn disc_to_origin(p: Complex64) -> Self {
        assert!(p.norm() < 1.0, "disc_to_origin requires |p| < 1");
        MoebiusMap::new(
            Complex64::new(1.0, 0.0),
            -p,
            -p.conj(),
            Complex64::new(1.0, 0.0),
        )
    }

    /// The unique orientation-preserving disc isometry taking the ordered
    /// pair `(p1, p2)` to `(q1, q2)`. The hyperbolic distances `d(p1, p2)`
    /// and `d(q1, q2)` must agree.
    pub fn disc_two_point(
        p1: Complex64,
        p2: Complex64,
        q1: Complex64,
        q2: Complex64,
    ) -> MoebiusMap {
        let n1 = Self::normalize_pair(p1, p2);
        let n2 = Self::normalize_pair(q1, q2);
        n2.inverse().compose(&n1)
    }

    // Maps p1 to 0 and p2 onto the positive real axis.
    fn normalize_pair(p1: Complex64, p2: Complex64) -> MoebiusMap {
        let t = Self::disc_to_origin(p1);
        let w = t.apply_finite(p2);
        MoebiusMap::rotation(-w.arg()).compose(&t)
    }

    /// Fractional-linear action on a finite point, with the convention that
    /// a vanishing denominator maps to infinity (never an error).
    pub fn apply_finite(&self, z: Complex64) -> Complex64 {
        (self.a * z + self.b) / (self.c * z + self.d)
    }

    /// Whether the map preserves the unit disc (up to tolerance), i.e. is
    /// conjugate into SU(1,1): `d = conj(a)`, `c = conj(b)` after a global
    /// phase.
    pub fn preserves_unit_disc(&self, tol: f64) -> bool {
        // Check on sample boundary points: |m(e^{i t})| = 1.
        for k in 0..8 {
            let t = 2.0 * std::f64::consts::PI * (k as f64) / 8.0;
            let z = Complex64::from_polar(1.0, t);
            if (self.apply_finite(z).norm() - 1.0).abs() > tol {
                return false;
            }
        }
        true
    }
}

/// Action on the boundary sphere. Division by zero maps to infinity.
pub fn apply_boundary(m: &MoebiusMap, z: BoundaryPoint) -> BoundaryPoint {
    match z {
        BoundaryPoint::Infinity => {
            if m.c.norm() < 1e-300 {
                BoundaryPoint::Infinity
            } else {
                BoundaryPoint::Finite(m.a / m.c)
            }
        }
        BoundaryPoint::Finite(z) => {
            let den = m.c * z + m.d;
            if den.norm() < 1e-300 {
                BoundaryPoint::Infinity
            } else {
                BoundaryPoint::Finite((m.a * z + m.b) / den)
            }
        }
    }
}

/// Isometric extension of the boundary action to upper half-space.
///
/// For `w = z + y j` the action is `w -> (aw + b)(cw + d)^{-1}`, which in
/// coordinates reads
///
/// ```text
/// z' = ((az + b) conj(cz + d) + a conj(c) y^2) / Q,   y' = y / Q,
/// Q  = |cz + d|^2 + |c|^2 y^2.
/// ```
pub fn apply_h3(m: &MoebiusMap, p: &H3Point) -> H3Point {
    let z = p.horizontal();
    let y = p.y;
    let czd = m.c * z + m.d;
    let q = czd.norm_sqr() + m.c.norm_sqr() * y * y;
    let znum = (m.a * z + m.b) * czd.conj() + m.a * m.c.conj() * y * y;
    let zp = znum / q;
    H3Point::new(zp.re, zp.im, y / q)
}

/// Hyperbolic distance in the upper half-space model:
/// `cosh d = 1 + (|dz|^2 + dy^2) / (2 y_p y_q)`.
pub fn hyperbolic_distance(p: &H3Point, q: &H3Point) -> f64 {
    let dz = (p.horizontal() - q.horizontal()).norm_sqr();
    let dy = p.y - q.y;
    let c = 1.0 + (dz + dy * dy) / (2.0 * p.y * q.y);
    // acosh, stable near 1
    let t = c - 1.0;
    if t <= 0.0 {
        0.0
    } else {
        (c + (t * (c + 1.0)).sqrt()).ln()
    }
}

/// Conformal density of the visual metric `V_p` at a finite boundary point,
/// relative to `|dz|^2`:
///
/// ```text
/// V_p(z) = (2 y_p / (|z - (x1 + i x2)|^2 + y_p^2))^2 |dz|^2.
/// ```
///
/// Calibration: for `p = (0, 0, 2)` the density at `z = 0` is exactly 1.
pub fn visual_metric_density(p: &H3Point, z: Complex64) -> f64 {
    let d2 = (z - p.horizontal()).norm_sqr();
    let r = 2.0 * p.y / (d2 + p.y * p.y);
    r * r
}

/// Euclidean components of the hyperbolic-unit vector at `p` pointing along
/// the geodesic *away from* the boundary point `zeta` (the positive Busemann
/// gradient). Used to orient finite-difference surface normals.
pub fn away_direction(p: &H3Point, zeta: Complex64) -> [f64; 3] {
    let delta = p.horizontal() - zeta;
    let q = delta.norm_sqr() + p.y * p.y;
    let s = p.y / q;
    [
        s * 2.0 * p.y * delta.re,
        s * 2.0 * p.y * delta.im,
        s * (p.y * p.y - delta.norm_sqr()),
    ]
}

/// Point at hyperbolic-arclength fraction `t` along the disc geodesic from
/// `z1` to `z2` (`t = 0` gives `z1`, `t = 1` gives `z2`).
pub fn disc_geodesic_point(z1: Complex64, z2: Complex64, t: f64) -> Complex64 {
    if (z1 - z2).norm_sqr() < 1e-30 {
        return z1;
    }
    let to_origin = MoebiusMap::disc_to_origin(z1);
    let w = to_origin.apply_finite(z2);
    let r = w.norm();
    let rt = (t * r.atanh()).tanh();
    let wt = w * (rt / r);
    to_origin.inverse().apply_finite(wt)
}

/// Hyperbolic distance between two points of the Poincaré disc:
/// `d = 2 atanh(|z1 - z2| / |1 - conj(z1) z2|)`.
pub fn disc_distance(z1: Complex64, z2: Complex64) -> f64 {
    let num = (z1 - z2).norm();
    let den = (Complex64::new(1.0, 0.0) - z1.conj() * z2).norm();
    2.0 * (num / den).atanh()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    const EPS: f64 = 1e-12;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_map(rng: &mut impl rand::Rng) -> MoebiusMap {
        loop {
            let a = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let b = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let cc = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let d = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if (a * d - b * cc).norm() > 0.1 {
                return MoebiusMap::new(a, b, cc, d);
            }
        }
    }

    #[test]
    fn normalization_gives_unit_determinant() {
        let m = MoebiusMap::new(c(3.0, 1.0), c(0.5, -2.0), c(0.0, 1.0), c(1.0, 1.0));
        assert!((m.det() - c(1.0, 0.0)).norm() < EPS);
    }

    #[test]
    fn boundary_action_identity_fixes_i() {
        let id = MoebiusMap::identity();
        let z = apply_boundary(&id, BoundaryPoint::finite(0.0, 1.0));
        assert_eq!(z.as_finite().unwrap(), c(0.0, 1.0));
    }

    #[test]
    fn boundary_action_inversion_at_two() {
        // [[0, -1], [1, 0]]: z -> -1/z, so 2 -> -0.5.
        let m = MoebiusMap::new(c(0.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0));
        let w = apply_boundary(&m, BoundaryPoint::finite(2.0, 0.0));
        assert!((w.as_finite().unwrap() - c(-0.5, 0.0)).norm() < EPS);
    }

    #[test]
    fn translation_fixes_infinity() {
        let m = MoebiusMap::translation(c(1.0, 0.0));
        assert_eq!(apply_boundary(&m, BoundaryPoint::Infinity), BoundaryPoint::Infinity);
    }

    #[test]
    fn pole_maps_to_infinity() {
        let m = MoebiusMap::new(c(0.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0));
        assert_eq!(
            apply_boundary(&m, BoundaryPoint::finite(0.0, 0.0)),
            BoundaryPoint::Infinity
        );
    }

    #[test]
    fn h3_action_identity() {
        let p = H3Point::new(0.0, 0.0, 1.0);
        let q = apply_h3(&MoebiusMap::identity(), &p);
        assert_eq!(q, p);
    }

    #[test]
    fn h3_action_dilation_is_linear() {
        // diag(sqrt 2, 1/sqrt 2) is z -> 2z on the boundary and scales the
        // half-space model linearly.
        let m = MoebiusMap::dilation(2.0);
        let q = apply_h3(&m, &H3Point::new(0.0, 0.0, 1.0));
        assert!((q.y - 2.0).abs() < EPS && q.horizontal().norm() < EPS);
        let q2 = apply_h3(&m, &H3Point::new(0.3, -0.1, 0.7));
        assert!((q2.x1 - 0.6).abs() < EPS);
        assert!((q2.x2 + 0.2).abs() < EPS);
        assert!((q2.y - 1.4).abs() < EPS);
    }

    #[test]
    fn h3_action_horizontal_translation() {
        let m = MoebiusMap::translation(c(1.0, 0.0));
        let q = apply_h3(&m, &H3Point::new(0.0, 0.0, 1.0));
        assert!((q.x1 - 1.0).abs() < EPS && q.x2.abs() < EPS && (q.y - 1.0).abs() < EPS);
    }

    #[test]
    fn composition_associative_on_actions() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let m1 = random_map(&mut rng);
            let m2 = random_map(&mut rng);
            let m3 = random_map(&mut rng);
            let z = c(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            let left = (m1.compose(&m2)).compose(&m3).apply_finite(z);
            let right = m1.compose(&m2.compose(&m3)).apply_finite(z);
            assert!((left - right).norm() < 1e-10);
        }
    }

    #[test]
    fn h3_action_extends_boundary_action() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..25 {
            let m = random_map(&mut rng);
            let z = c(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            let p = H3Point::new(z.re, z.im, 1e-6);
            let q = apply_h3(&m, &p);
            let w = apply_boundary(&m, BoundaryPoint::Finite(z)).as_finite().unwrap();
            assert!((q.horizontal() - w).norm() < 1e-4);
        }
    }

    #[test]
    fn distance_vertical_geodesic() {
        let p = H3Point::new(0.0, 0.0, 1.0);
        let q = H3Point::new(0.0, 0.0, std::f64::consts::E);
        assert!((hyperbolic_distance(&p, &q) - 1.0).abs() < EPS);
        assert!(hyperbolic_distance(&p, &p).abs() < EPS);
    }

    #[test]
    fn distance_is_moebius_invariant() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for _ in 0..25 {
            let m = random_map(&mut rng);
            let p = H3Point::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.2..2.0));
            let q = H3Point::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.2..2.0));
            let d1 = hyperbolic_distance(&p, &q);
            let d2 = hyperbolic_distance(&apply_h3(&m, &p), &apply_h3(&m, &q));
            assert!((d1 - d2).abs() < 1e-10, "isometry violated: {d1} vs {d2}");
        }
    }

    #[test]
    fn distance_triangle_inequality() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let mut pt = || {
                H3Point::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.1..3.0))
            };
            let (p, q, r) = (pt(), pt(), pt());
            let (dpq, dqr, dpr) = (
                hyperbolic_distance(&p, &q),
                hyperbolic_distance(&q, &r),
                hyperbolic_distance(&p, &r),
            );
            assert!(dpr <= dpq + dqr + 1e-12);
        }
    }

    #[test]
    fn visual_density_calibration() {
        // The visual metric of (0,0,2) at the origin is |dz|^2.
        let d = visual_metric_density(&H3Point::new(0.0, 0.0, 2.0), c(0.0, 0.0));
        assert!((d - 1.0).abs() < EPS);
        // (0,0,1) sees the round metric 4/(1+|z|^2)^2, so 4 at the origin.
        let d = visual_metric_density(&H3Point::new(0.0, 0.0, 1.0), c(0.0, 0.0));
        assert!((d - 4.0).abs() < EPS);
        // Directly below the point: 4/y^2.
        let d = visual_metric_density(&H3Point::new(0.3, -0.2, 0.5), c(0.3, -0.2));
        assert!((d - 16.0).abs() < EPS);
    }

    #[test]
    fn visual_density_pullback_naturality() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(19);
        for _ in 0..25 {
            let m = random_map(&mut rng);
            let p = H3Point::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(0.3..2.0));
            let z = c(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            let lhs = visual_metric_density(&apply_h3(&m, &p), m.apply_finite(z))
                * m.derivative(z).norm_sqr();
            let rhs = visual_metric_density(&p, z);
            assert!((lhs - rhs).abs() < 1e-8 * rhs.max(1.0));
        }
    }

    #[test]
    fn away_direction_is_unit_and_vertical_above() {
        let p = H3Point::new(0.0, 0.0, 0.5);
        let d = away_direction(&p, c(0.0, 0.0));
        // Hyperbolic norm: euclidean norm / y.
        let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() / p.y;
        assert!((norm - 1.0).abs() < EPS);
        assert!(d[2] > 0.0 && d[0].abs() < EPS && d[1].abs() < EPS);
    }

    #[test]
    fn disc_geodesic_endpoints_and_midpoint() {
        let z1 = c(0.3, 0.1);
        let z2 = c(-0.4, 0.2);
        assert!((disc_geodesic_point(z1, z2, 0.0) - z1).norm() < EPS);
        assert!((disc_geodesic_point(z1, z2, 1.0) - z2).norm() < 1e-10);
        let mid = disc_geodesic_point(z1, z2, 0.5);
        let d1 = disc_distance(z1, mid);
        let d2 = disc_distance(mid, z2);
        assert!((d1 - d2).abs() < 1e-10);
    }

    #[test]
    fn disc_two_point_maps_pairs() {
        let p1 = c(0.2, 0.1);
        let p2 = c(0.5, -0.2);
        let q1 = c(-0.3, 0.4);
        // Pick q2 at the same hyperbolic distance from q1.
        let dist = disc_distance(p1, p2);
        let dir = c(0.6, -0.5);
        let q2 = disc_geodesic_point(q1, q1 + dir * 0.3 / dir.norm(), dist / disc_distance(q1, q1 + dir * 0.3 / dir.norm()));
        let m = MoebiusMap::disc_two_point(p1, p2, q1, q2);
        assert!((m.apply_finite(p1) - q1).norm() < 1e-10);
        assert!((m.apply_finite(p2) - q2).norm() < 1e-9);
        assert!(m.preserves_unit_disc(1e-9));
    }
}
