//! The Epstein map from conformal metrics to surfaces in upper half-space,
//! an independent finite-difference geometry oracle, and the algebraic
//! mean-curvature formula. The two mean-curvature routes cross-validate each
//! other; neither is trusted alone.
//!
//! For `sigma = e^{2 eta} |dz|^2` the map is
//!
//! ```text
//! Eps(z) = (z, 0) + 2 / (e^{2 eta} + 4 |eta_z|^2) * (2 eta_zbar, e^eta),
//! ```
//!
//! and it satisfies the defining identity `V_{Eps(z)}(z) = sigma(z)` exactly:
//! the visual metric of the image point restricted to the chart equals the
//! input metric.
//!
//! Sign conventions, frozen by calibration on the umbilical family
//! `e^{2t} * Poincare` (t > 0), where the formula value is `-tanh t`:
//! the stored unit normal points *away* from the boundary point of the
//! chart (positive y-component on that family), and the second fundamental
//! form is `II(X, Y) = -<D_X Y, normal>`. With these choices the
//! finite-difference mean curvature reproduces the algebraic formula with
//! its sign.

use nalgebra::Matrix2;
use num_complex::Complex64;
use thiserror::Error;

use crate::conformal::{ConformalError, ConformalMetric, HoloMap, QuadDifferential};
use crate::moebius::{away_direction, visual_metric_density, H3Point};

#[derive(Debug, Error)]
pub enum EpsteinError {
    #[error(transparent)]
    Conformal(#[from] ConformalError),
    #[error("surface is not immersed at {z}: {detail}")]
    NonImmersion { z: Complex64, detail: String },
}

pub type Result<T> = std::result::Result<T, EpsteinError>;

/// Epstein point of `sigma` over the chart point `z`.
pub fn epstein_point(sigma: &ConformalMetric, z: Complex64) -> Result<H3Point> {
    let j = sigma.jet(z)?;
    let e2 = (2.0 * j.eta).exp();
    let q = e2 + 4.0 * j.eta_z.norm_sqr();
    let horiz = z + (4.0 / q) * j.eta_z.conj();
    Ok(H3Point::new(horiz.re, horiz.im, 2.0 * j.eta.exp() / q))
}

/// Epstein point of the pair `(f, sigma)`: the Epstein map of the local
/// pushforward metric `f_* sigma`, evaluated at `f(z)`.
///
/// Everything is expressed through `sigma`'s jet at `z` and the derivatives
/// of `f` at `z`, so no local inverse of `f` is ever formed: writing
/// `etahat` for the pushforward log-density at `w = f(z)`,
///
/// ```text
/// etahat   = eta - log |f'|,
/// etahat_w = (eta_z - f''/(2 f')) / f'.
/// ```
pub fn epstein_chart(f: &HoloMap, sigma: &ConformalMetric, z: Complex64) -> Result<H3Point> {
    let d1 = f.df(z);
    if d1.norm() < 1e-12 {
        return Err(EpsteinError::Conformal(ConformalError::DegenerateDerivative(z)));
    }
    let j = sigma.jet(z)?;
    let eta_hat = j.eta - d1.norm().ln();
    let eta_hat_w = (j.eta_z - 0.5 * f.d2f(z) / d1) / d1;
    let e2 = (2.0 * eta_hat).exp();
    let q = e2 + 4.0 * eta_hat_w.norm_sqr();
    let horiz = f.f(z) + (4.0 / q) * eta_hat_w.conj();
    Ok(H3Point::new(horiz.re, horiz.im, 2.0 * eta_hat.exp() / q))
}

/// Residual of the defining property of the Epstein map:
/// `| V_{Eps(z)}(z) - e^{2 eta(z)} |`.
pub fn visual_defining_residual(sigma: &ConformalMetric, z: Complex64) -> Result<f64> {
    let p = epstein_point(sigma, z)?;
    Ok((visual_metric_density(&p, z) - sigma.density(z)?).abs())
}

/// Mean curvature of the Epstein surface from curvature and Schwarzian data:
///
/// ```text
/// H = (K^2 - 1 - 16 N) / ((K - 1)^2 - 16 N),
/// N = | B(sigma) - phi_dev / 2 |^2_sigma.
/// ```
///
/// A vanishing denominator is exactly the locus where the Epstein map fails
/// to immerse; it is reported as [`EpsteinError::NonImmersion`], never as an
/// infinite value.
pub fn mean_curvature_formula(
    sigma: &ConformalMetric,
    phi_dev: &QuadDifferential,
    z: Complex64,
) -> Result<f64> {
    let j = sigma.jet(z)?;
    let b = j.eta_zz - j.eta_z * j.eta_z;
    let dev = b - 0.5 * phi_dev.coeff(z)?;
    let n = (-4.0 * j.eta).exp() * dev.norm_sqr();
    let k = -(-2.0 * j.eta).exp() * j.eta_lap;
    let den = (k - 1.0) * (k - 1.0) - 16.0 * n;
    if den.abs() < 1e-10 {
        return Err(EpsteinError::NonImmersion {
            z,
            detail: format!("mean-curvature denominator {den:.3e} below tolerance"),
        });
    }
    Ok((k * k - 1.0 - 16.0 * n) / den)
}

/// Pointwise geometric data of an immersed surface sample.
#[derive(Debug, Clone)]
pub struct EpsteinSample {
    pub z: Complex64,
    pub point: H3Point,
    /// Hyperbolic-unit normal in half-space coordinates (Euclidean
    /// components), oriented away from the boundary point of the chart.
    pub normal: [f64; 3],
    pub first_ff: Matrix2<f64>,
    pub second_ff: Matrix2<f64>,
    pub mean_curv: f64,
    /// Principal curvatures, `principal.0 <= principal.1`.
    pub principal: (f64, f64),
}

struct FdJet {
    p: [f64; 3],
    fa: [f64; 3],
    fb: [f64; 3],
    faa: [f64; 3],
    fab: [f64; 3],
    fbb: [f64; 3],
}

fn fd_jet<F>(sampler: &F, z: Complex64, h: f64) -> Result<FdJet>
where
    F: Fn(Complex64) -> Result<H3Point>,
{
    let at = |a: f64, b: f64| -> Result<[f64; 3]> {
        Ok(sampler(z + Complex64::new(a * h, b * h))?.to_array())
    };
    let p = at(0.0, 0.0)?;
    let pe = at(1.0, 0.0)?;
    let pw = at(-1.0, 0.0)?;
    let pn = at(0.0, 1.0)?;
    let ps = at(0.0, -1.0)?;
    let pne = at(1.0, 1.0)?;
    let pnw = at(-1.0, 1.0)?;
    let pse = at(1.0, -1.0)?;
    let psw = at(-1.0, -1.0)?;
    let mut jet = FdJet {
        p,
        fa: [0.0; 3],
        fb: [0.0; 3],
        faa: [0.0; 3],
        fab: [0.0; 3],
        fbb: [0.0; 3],
    };
    for i in 0..3 {
        jet.fa[i] = (pe[i] - pw[i]) / (2.0 * h);
        jet.fb[i] = (pn[i] - ps[i]) / (2.0 * h);
        jet.faa[i] = (pe[i] - 2.0 * p[i] + pw[i]) / (h * h);
        jet.fbb[i] = (pn[i] - 2.0 * p[i] + ps[i]) / (h * h);
        jet.fab[i] = (pne[i] - pnw[i] - pse[i] + psw[i]) / (4.0 * h * h);
    }
    Ok(jet)
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

// Christoffel contraction Gamma(u, v) of the half-space metric
// (dx1^2 + dx2^2 + dy^2)/y^2 at height y.
fn christoffel(u: &[f64; 3], v: &[f64; 3], y: f64) -> [f64; 3] {
    [
        -(u[0] * v[2] + u[2] * v[0]) / y,
        -(u[1] * v[2] + u[2] * v[1]) / y,
        (u[0] * v[0] + u[1] * v[1] - u[2] * v[2]) / y,
    ]
}

fn geometry_from_jet(jet: &FdJet, z: Complex64, boundary_point: Complex64) -> Result<EpsteinSample> {
    let y = jet.p[2];
    let point = H3Point::new(jet.p[0], jet.p[1], y);
    let y2 = y * y;
    let first = Matrix2::new(
        dot(&jet.fa, &jet.fa) / y2,
        dot(&jet.fa, &jet.fb) / y2,
        dot(&jet.fa, &jet.fb) / y2,
        dot(&jet.fb, &jet.fb) / y2,
    );
    let det_i = first.determinant();
    if det_i < 1e-10 {
        return Err(EpsteinError::NonImmersion {
            z,
            detail: format!("tangent Gram determinant {det_i:.3e} below tolerance"),
        });
    }
    // The metric is conformal to the Euclidean one, so the Euclidean cross
    // product already gives the hyperbolic normal direction.
    let n = cross(&jet.fa, &jet.fb);
    let n_len = dot(&n, &n).sqrt();
    let mut normal = [n[0] / n_len * y, n[1] / n_len * y, n[2] / n_len * y];
    let reference = away_direction(&point, boundary_point);
    if dot(&normal, &reference) < 0.0 {
        for v in &mut normal {
            *v = -*v;
        }
    }
    // II(X, Y) = -<D_X Y, normal>, normal pointing away from the boundary
    // point.
    let ii = |fij: &[f64; 3], ti: &[f64; 3], tj: &[f64; 3]| -> f64 {
        let gamma = christoffel(ti, tj, y);
        let cov = [fij[0] + gamma[0], fij[1] + gamma[1], fij[2] + gamma[2]];
        -dot(&cov, &normal) / y2
    };
    let ii_aa = ii(&jet.faa, &jet.fa, &jet.fa);
    let ii_ab = ii(&jet.fab, &jet.fa, &jet.fb);
    let ii_bb = ii(&jet.fbb, &jet.fb, &jet.fb);
    let second = Matrix2::new(ii_aa, ii_ab, ii_ab, ii_bb);
    let shape = first.try_inverse().unwrap() * second;
    let mean = 0.5 * shape.trace();
    let disc = (mean * mean - shape.determinant()).max(0.0).sqrt();
    Ok(EpsteinSample {
        z,
        point,
        normal,
        first_ff: first,
        second_ff: second,
        mean_curv: mean,
        principal: (mean - disc, mean + disc),
    })
}

/// Finite-difference first and second fundamental forms, mean and principal
/// curvatures of the surface `z -> sampler(z)`.
///
/// Uses second-order central differences at the given step. The chart point
/// `z` doubles as the boundary point used to orient the normal; when the
/// surface is an Epstein image of a chart map `f`, pass `f(z)` through
/// [`fd_geometry_oriented`] instead.
pub fn fd_geometry<F>(sampler: &F, z: Complex64, step: f64) -> Result<EpsteinSample>
where
    F: Fn(Complex64) -> Result<H3Point>,
{
    fd_geometry_oriented(sampler, z, step, z)
}

/// [`fd_geometry`] with an explicit boundary point for normal orientation.
pub fn fd_geometry_oriented<F>(
    sampler: &F,
    z: Complex64,
    step: f64,
    boundary_point: Complex64,
) -> Result<EpsteinSample>
where
    F: Fn(Complex64) -> Result<H3Point>,
{
    let jet = fd_jet(sampler, z, step)?;
    geometry_from_jet(&jet, z, boundary_point)
}

/// Richardson-refined variant: combines steps `h` and `2h` over the 5x5
/// stencil for fourth-order derivative estimates.
pub fn fd_geometry_refined<F>(sampler: &F, z: Complex64, step: f64) -> Result<EpsteinSample>
where
    F: Fn(Complex64) -> Result<H3Point>,
{
    let fine = fd_jet(sampler, z, step)?;
    let coarse = fd_jet(sampler, z, 2.0 * step)?;
    let mut jet = FdJet {
        p: fine.p,
        fa: [0.0; 3],
        fb: [0.0; 3],
        faa: [0.0; 3],
        fab: [0.0; 3],
        fbb: [0.0; 3],
    };
    for i in 0..3 {
        jet.fa[i] = (4.0 * fine.fa[i] - coarse.fa[i]) / 3.0;
        jet.fb[i] = (4.0 * fine.fb[i] - coarse.fb[i]) / 3.0;
        jet.faa[i] = (4.0 * fine.faa[i] - coarse.faa[i]) / 3.0;
        jet.fbb[i] = (4.0 * fine.fbb[i] - coarse.fbb[i]) / 3.0;
        jet.fab[i] = (4.0 * fine.fab[i] - coarse.fab[i]) / 3.0;
    }
    geometry_from_jet(&jet, z, z)
}
