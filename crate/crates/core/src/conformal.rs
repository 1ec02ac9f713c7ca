//! Conformal metrics `e^{2 eta} |dz|^2` on planar charts, curvature, the
//! Schwarzian derivative of holomorphic maps, Schwarzian tensors, and norms
//! of quadratic differentials.
//!
//! Complex-derivative convention, used throughout and never varied:
//!
//! ```text
//! d/dz = (d/dx - i d/dy) / 2,      d/dzbar = (d/dx + i d/dy) / 2.
//! ```
//!
//! Log-densities come in two modes: `Analytic` (exact derivative callables)
//! and `Grid` (uniform-grid samples differentiated by 4th-order central
//! differences, with a hard 2-cell margin; queries inside the margin are
//! errors, never extrapolated).

use std::sync::Arc;

use num_complex::Complex64;
use thiserror::Error;

use crate::moebius::MoebiusMap;

#[derive(Debug, Error)]
pub enum ConformalError {
    #[error("point {0} outside the chart (or inside the finite-difference margin)")]
    OutOfDomain(Complex64),
    #[error("holomorphic derivative below tolerance at {0}")]
    DegenerateDerivative(Complex64),
    #[error("holomorphic image leaves the target chart at {0}")]
    DomainMismatch(Complex64),
    #[error("grid query not aligned with a grid node: {0}")]
    OffGrid(Complex64),
    #[error("malformed grid CSV: {0}")]
    BadCsv(String),
}

pub type Result<T> = std::result::Result<T, ConformalError>;

/// Planar chart descriptor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Chart {
    /// Open disc `|z| < radius` centered at the origin. An infinite radius
    /// stands for the whole plane.
    Disc { radius: f64 },
    /// Upper half-plane `Im z > 0`.
    HalfPlane,
    Rectangle { x0: f64, x1: f64, y0: f64, y1: f64 },
    Annulus { r_inner: f64, r_outer: f64 },
}

impl Chart {
    pub fn unit_disc() -> Chart {
        Chart::Disc { radius: 1.0 }
    }

    pub fn plane() -> Chart {
        Chart::Disc { radius: f64::INFINITY }
    }

    pub fn contains(&self, z: Complex64) -> bool {
        match *self {
            Chart::Disc { radius } => z.norm() < radius,
            Chart::HalfPlane => z.im > 0.0,
            Chart::Rectangle { x0, x1, y0, y1 } => {
                z.re > x0 && z.re < x1 && z.im > y0 && z.im < y1
            }
            Chart::Annulus { r_inner, r_outer } => {
                let r = z.norm();
                r > r_inner && r < r_outer
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivMode {
    Analytic,
    Grid,
}

/// Value and derivatives of a log-density at one point.
#[derive(Debug, Clone, Copy)]
pub struct EtaJet {
    pub eta: f64,
    pub eta_z: Complex64,
    pub eta_zz: Complex64,
    /// Flat Laplacian of eta, i.e. `4 eta_{z zbar}`.
    pub eta_lap: f64,
}

/// A log-density with derivatives, evaluated pointwise.
pub trait LogDensity: Send + Sync {
    fn jet(&self, z: Complex64) -> Result<EtaJet>;
}

// ---------------------------------------------------------------------------
// Analytic log-densities

struct FlatEta;

impl LogDensity for FlatEta {
    fn jet(&self, _z: Complex64) -> Result<EtaJet> {
        Ok(EtaJet { eta: 0.0, eta_z: Complex64::ZERO, eta_zz: Complex64::ZERO, eta_lap: 0.0 })
    }
}

/// Poincaré metric `4 |dz|^2 / (1 - |z|^2)^2` on the unit disc.
struct PoincareEta;

impl LogDensity for PoincareEta {
    fn jet(&self, z: Complex64) -> Result<EtaJet> {
        let s = 1.0 - z.norm_sqr();
        let zb = z.conj();
        Ok(EtaJet {
            eta: (2.0 / s).ln(),
            eta_z: zb / s,
            eta_zz: zb * zb / (s * s),
            eta_lap: 4.0 / (s * s),
        })
    }
}

/// Spherical metric `4 |dz|^2 / (1 + |z|^2)^2`.
struct SphericalEta;

impl LogDensity for SphericalEta {
    fn jet(&self, z: Complex64) -> Result<EtaJet> {
        let s = 1.0 + z.norm_sqr();
        let zb = z.conj();
        Ok(EtaJet {
            eta: (2.0 / s).ln(),
            eta_z: -zb / s,
            eta_zz: zb * zb / (s * s),
            eta_lap: -4.0 / (s * s),
        })
    }
}

struct ScaledEta {
    base: Arc<dyn LogDensity>,
    t: f64,
}

impl LogDensity for ScaledEta {
    fn jet(&self, z: Complex64) -> Result<EtaJet> {
        let mut j = self.base.jet(z)?;
        j.eta += self.t;
        Ok(j)
    }
}

struct SumEta {
    base: Arc<dyn LogDensity>,
    add: Arc<dyn LogDensity>,
}

impl LogDensity for SumEta {
    fn jet(&self, z: Complex64) -> Result<EtaJet> {
        let a = self.base.jet(z)?;
        let b = self.add.jet(z)?;
        Ok(EtaJet {
            eta: a.eta + b.eta,
            eta_z: a.eta_z + b.eta_z,
            eta_zz: a.eta_zz + b.eta_zz,
            eta_lap: a.eta_lap + b.eta_lap,
        })
    }
}

/// Smooth real perturbation `u(z) = sum Re(c_k z^{p_k}) + sum a_m |z|^{2 q_m}`
/// with exact derivatives. Building block for randomized metric families.
#[derive(Debug, Clone, Default)]
pub struct Perturbation {
    /// `(coefficient, power)` terms contributing `Re(c z^p)`.
    pub holo: Vec<(Complex64, u32)>,
    /// `(coefficient, power)` terms contributing `a (z zbar)^q`, `q >= 1`.
    pub radial: Vec<(f64, u32)>,
}

impl Perturbation {
    fn value(&self, z: Complex64) -> f64 {
        let mut u = 0.0;
        for &(c, p) in &self.holo {
            u += (c * z.powu(p)).re;
        }
        for &(a, q) in &self.radial {
            u += a * z.norm_sqr().powi(q as i32);
        }
        u
    }
}

impl LogDensity for Perturbation {
    fn jet(&self, z: Complex64) -> Result<EtaJet> {
        let mut u_z = Complex64::ZERO;
        let mut u_zz = Complex64::ZERO;
        let mut u_lap = 0.0;
        for &(c, p) in &self.holo {
            let p_f = p as f64;
            if p >= 1 {
                u_z += 0.5 * c * p_f * z.powu(p - 1);
            }
            if p >= 2 {
                u_zz += 0.5 * c * p_f * (p_f - 1.0) * z.powu(p - 2);
            }
        }
        let r2 = z.norm_sqr();
        let zb = z.conj();
        for &(a, q) in &self.radial {
            let q_f = q as f64;
            if q >= 1 {
                u_z += a * q_f * r2.powi(q as i32 - 1) * zb;
                u_lap += 4.0 * a * q_f * q_f * r2.powi(q as i32 - 1);
            }
            if q >= 2 {
                u_zz += a * q_f * (q_f - 1.0) * r2.powi(q as i32 - 2) * zb * zb;
            }
        }
        Ok(EtaJet { eta: self.value(z), eta_z: u_z, eta_zz: u_zz, eta_lap: u_lap })
    }
}

struct PullbackEta {
    inner: Arc<dyn LogDensity>,
    inner_chart: Chart,
    map: HoloMap,
}

impl LogDensity for PullbackEta {
    fn jet(&self, z: Complex64) -> Result<EtaJet> {
        let w = self.map.f(z);
        if !self.inner_chart.contains(w) {
            return Err(ConformalError::DomainMismatch(z));
        }
        let d1 = self.map.df(z);
        if d1.norm() < 1e-12 {
            return Err(ConformalError::DegenerateDerivative(z));
        }
        let d2 = self.map.d2f(z);
        let d3 = self.map.d3f(z);
        let j = self.inner.jet(w)?;
        let q = d2 / d1;
        Ok(EtaJet {
            eta: j.eta + d1.norm().ln(),
            eta_z: j.eta_z * d1 + 0.5 * q,
            eta_zz: j.eta_zz * d1 * d1 + j.eta_z * d2 + 0.5 * (d3 / d1 - q * q),
            eta_lap: j.eta_lap * d1.norm_sqr(),
        })
    }
}

// ---------------------------------------------------------------------------
// Grid log-densities

/// Uniform Cartesian grid of eta samples with 4th-order central differences.
///
/// Queries must sit on a grid node at least `MARGIN` cells away from the grid
/// boundary. Nothing is ever extrapolated.
#[derive(Debug, Clone)]
pub struct GridEta {
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
    pub nx: usize,
    pub ny: usize,
    /// Row-major: `values[iy * nx + ix]`.
    pub values: Vec<f64>,
}

pub const GRID_MARGIN: usize = 2;

impl GridEta {
    /// Samples an analytic metric on a uniform grid.
    pub fn sample(metric: &ConformalMetric, x0: f64, y0: f64, dx: f64, dy: f64, nx: usize, ny: usize) -> Result<GridEta> {
        let mut values = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                let z = Complex64::new(x0 + dx * ix as f64, y0 + dy * iy as f64);
                values.push(metric.eta(z)?);
            }
        }
        Ok(GridEta { x0, y0, dx, dy, nx, ny, values })
    }

    fn locate(&self, z: Complex64) -> Result<(usize, usize)> {
        let fx = (z.re - self.x0) / self.dx;
        let fy = (z.im - self.y0) / self.dy;
        let ix = fx.round();
        let iy = fy.round();
        if (fx - ix).abs() > 1e-6 || (fy - iy).abs() > 1e-6 {
            return Err(ConformalError::OffGrid(z));
        }
        let (ix, iy) = (ix as i64, iy as i64);
        let m = GRID_MARGIN as i64;
        if ix < m || iy < m || ix >= self.nx as i64 - m || iy >= self.ny as i64 - m {
            return Err(ConformalError::OutOfDomain(z));
        }
        Ok((ix as usize, iy as usize))
    }

    fn at(&self, ix: i64, iy: i64) -> f64 {
        self.values[iy as usize * self.nx + ix as usize]
    }
}

impl LogDensity for GridEta {
    fn jet(&self, z: Complex64) -> Result<EtaJet> {
        let (ix, iy) = self.locate(z)?;
        let (ix, iy) = (ix as i64, iy as i64);
        // 4th-order central differences.
        let d1 = |s: &dyn Fn(i64) -> f64, h: f64| {
            (-s(2) + 8.0 * s(1) - 8.0 * s(-1) + s(-2)) / (12.0 * h)
        };
        let d2 = |s: &dyn Fn(i64) -> f64, h: f64| {
            (-s(2) + 16.0 * s(1) - 30.0 * s(0) + 16.0 * s(-1) - s(-2)) / (12.0 * h * h)
        };
        let ex = |k: i64| self.at(ix + k, iy);
        let ey = |k: i64| self.at(ix, iy + k);
        let eta_x = d1(&ex, self.dx);
        let eta_y = d1(&ey, self.dy);
        let eta_xx = d2(&ex, self.dx);
        let eta_yy = d2(&ey, self.dy);
        // Mixed derivative: tensor product of two 4th-order first-derivative
        // stencils over the 5x5 patch.
        let w = [1.0, -8.0, 0.0, 8.0, -1.0];
        let mut eta_xy = 0.0;
        for (a, wa) in w.iter().enumerate() {
            if *wa == 0.0 {
                continue;
            }
            for (b, wb) in w.iter().enumerate() {
                if *wb == 0.0 {
                    continue;
                }
                eta_xy += wa * wb * self.at(ix + a as i64 - 2, iy + b as i64 - 2);
            }
        }
        eta_xy /= 144.0 * self.dx * self.dy;
        Ok(EtaJet {
            eta: self.at(ix, iy),
            eta_z: 0.5 * Complex64::new(eta_x, -eta_y),
            eta_zz: 0.25 * Complex64::new(eta_xx - eta_yy, -2.0 * eta_xy),
            eta_lap: eta_xx + eta_yy,
        })
    }
}

// ---------------------------------------------------------------------------
// The metric type and constructors

/// A conformal metric `e^{2 eta} |dz|^2` on a planar chart.
#[derive(Clone)]
pub struct ConformalMetric {
    chart: Chart,
    mode: DerivMode,
    eta: Arc<dyn LogDensity>,
}

impl ConformalMetric {
    pub fn flat(chart: Chart) -> Self {
        Self { chart, mode: DerivMode::Analytic, eta: Arc::new(FlatEta) }
    }

    /// Poincaré metric on the unit disc, curvature -1.
    pub fn poincare_disc() -> Self {
        Self { chart: Chart::unit_disc(), mode: DerivMode::Analytic, eta: Arc::new(PoincareEta) }
    }

    /// Spherical metric `4 |dz|^2 / (1 + |z|^2)^2`, curvature +1.
    pub fn spherical() -> Self {
        Self { chart: Chart::plane(), mode: DerivMode::Analytic, eta: Arc::new(SphericalEta) }
    }

    /// Constant rescaling `e^{2t} sigma`.
    pub fn scaled(&self, t: f64) -> Self {
        Self {
            chart: self.chart,
            mode: self.mode,
            eta: Arc::new(ScaledEta { base: self.eta.clone(), t }),
        }
    }

    /// Conformal change `e^{2u} sigma` for a smooth perturbation `u`.
    pub fn perturbed(&self, u: Perturbation) -> Self {
        Self {
            chart: self.chart,
            mode: self.mode,
            eta: Arc::new(SumEta { base: self.eta.clone(), add: Arc::new(u) }),
        }
    }

    /// Metric backed by custom analytic derivative callables.
    pub fn from_log_density(chart: Chart, eta: Arc<dyn LogDensity>) -> Self {
        Self { chart, mode: DerivMode::Analytic, eta }
    }

    /// Grid-mode metric on the rectangle covered by the samples.
    pub fn from_grid(grid: GridEta) -> Self {
        let chart = Chart::Rectangle {
            x0: grid.x0 - 0.5 * grid.dx,
            x1: grid.x0 + grid.dx * (grid.nx as f64 - 0.5),
            y0: grid.y0 - 0.5 * grid.dy,
            y1: grid.y0 + grid.dy * (grid.ny as f64 - 0.5),
        };
        Self { chart, mode: DerivMode::Grid, eta: Arc::new(grid) }
    }

    pub fn chart(&self) -> Chart {
        self.chart
    }

    pub fn deriv_mode(&self) -> DerivMode {
        self.mode
    }

    pub fn jet(&self, z: Complex64) -> Result<EtaJet> {
        if !self.chart.contains(z) {
            return Err(ConformalError::OutOfDomain(z));
        }
        self.eta.jet(z)
    }

    pub fn eta(&self, z: Complex64) -> Result<f64> {
        Ok(self.jet(z)?.eta)
    }

    /// Density `e^{2 eta}` of the metric relative to `|dz|^2`.
    pub fn density(&self, z: Complex64) -> Result<f64> {
        Ok((2.0 * self.jet(z)?.eta).exp())
    }
}

// ---------------------------------------------------------------------------
// Holomorphic maps

/// A locally injective holomorphic map with exact derivatives up to third
/// order. Derivatives are always analytic callables, never differenced.
#[derive(Clone)]
pub struct HoloMap {
    kind: HoloKind,
    domain: Chart,
}

#[derive(Clone)]
enum HoloKind {
    /// `sum coeffs[k] z^k`.
    Poly(Vec<Complex64>),
    Moebius(MoebiusMap),
    Exp,
    /// `Composed(g, f) = g o f`.
    Composed(Box<HoloMap>, Box<HoloMap>),
}

impl HoloMap {
    pub fn identity(domain: Chart) -> Self {
        Self::poly(vec![Complex64::ZERO, Complex64::new(1.0, 0.0)], domain)
    }

    /// Cubic perturbation of the identity, `z + eps z^3`.
    pub fn cubic(eps: f64, domain: Chart) -> Self {
        Self::poly(
            vec![
                Complex64::ZERO,
                Complex64::new(1.0, 0.0),
                Complex64::ZERO,
                Complex64::new(eps, 0.0),
            ],
            domain,
        )
    }

    pub fn poly(coeffs: Vec<Complex64>, domain: Chart) -> Self {
        Self { kind: HoloKind::Poly(coeffs), domain }
    }

    pub fn moebius(m: MoebiusMap, domain: Chart) -> Self {
        Self { kind: HoloKind::Moebius(m), domain }
    }

    pub fn exp(domain: Chart) -> Self {
        Self { kind: HoloKind::Exp, domain }
    }

    /// Composition `g o f`.
    pub fn compose(g: HoloMap, f: HoloMap) -> Self {
        let domain = f.domain;
        Self { kind: HoloKind::Composed(Box::new(g), Box::new(f)), domain }
    }

    pub fn domain(&self) -> Chart {
        self.domain
    }

    pub fn f(&self, z: Complex64) -> Complex64 {
        match &self.kind {
            HoloKind::Poly(c) => horner(c, z).0,
            HoloKind::Moebius(m) => m.apply_finite(z),
            HoloKind::Exp => z.exp(),
            HoloKind::Composed(g, f) => g.f(f.f(z)),
        }
    }

    pub fn df(&self, z: Complex64) -> Complex64 {
        match &self.kind {
            HoloKind::Poly(c) => horner(c, z).1,
            HoloKind::Moebius(m) => m.derivative(z),
            HoloKind::Exp => z.exp(),
            HoloKind::Composed(g, f) => g.df(f.f(z)) * f.df(z),
        }
    }

    pub fn d2f(&self, z: Complex64) -> Complex64 {
        match &self.kind {
            HoloKind::Poly(c) => horner(c, z).2,
            HoloKind::Moebius(m) => {
                // (cz + d)^{-2} differentiates to -2c (cz + d)^{-3}.
                let w = m.c * z + m.d;
                -2.0 * m.c / (w * w * w)
            }
            HoloKind::Exp => z.exp(),
            HoloKind::Composed(g, f) => {
                let w = f.f(z);
                let (f1, f2) = (f.df(z), f.d2f(z));
                g.d2f(w) * f1 * f1 + g.df(w) * f2
            }
        }
    }

    pub fn d3f(&self, z: Complex64) -> Complex64 {
        match &self.kind {
            HoloKind::Poly(c) => horner(c, z).3,
            HoloKind::Moebius(m) => {
                let w = m.c * z + m.d;
                6.0 * m.c * m.c / (w * w * w * w)
            }
            HoloKind::Exp => z.exp(),
            HoloKind::Composed(g, f) => {
                let w = f.f(z);
                let (f1, f2, f3) = (f.df(z), f.d2f(z), f.d3f(z));
                g.d3f(w) * f1 * f1 * f1 + 3.0 * g.d2f(w) * f1 * f2 + g.df(w) * f3
            }
        }
    }
}

fn horner(coeffs: &[Complex64], z: Complex64) -> (Complex64, Complex64, Complex64, Complex64) {
    let mut p0 = Complex64::ZERO;
    let mut p1 = Complex64::ZERO;
    let mut p2 = Complex64::ZERO;
    let mut p3 = Complex64::ZERO;
    for &c in coeffs.iter().rev() {
        p3 = p3 * z + 3.0 * p2;
        p2 = p2 * z + 2.0 * p1;
        p1 = p1 * z + p0;
        p0 = p0 * z + c;
    }
    (p0, p1, p2, p3)
}

// ---------------------------------------------------------------------------
// Quadratic differentials

/// Coefficient `lambda(z)` of a quadratic differential `lambda(z) dz^2`.
#[derive(Clone)]
pub struct QuadDifferential {
    source: QdSource,
}

#[derive(Clone)]
enum QdSource {
    Zero,
    Analytic(Arc<dyn Fn(Complex64) -> Complex64 + Send + Sync>),
    Schwarzian(HoloMap),
}

impl QuadDifferential {
    pub fn zero() -> Self {
        Self { source: QdSource::Zero }
    }

    pub fn from_fn(f: impl Fn(Complex64) -> Complex64 + Send + Sync + 'static) -> Self {
        Self { source: QdSource::Analytic(Arc::new(f)) }
    }

    pub fn constant(c: Complex64) -> Self {
        Self::from_fn(move |_| c)
    }

    /// The Schwarzian derivative of `f` as a quadratic differential.
    pub fn schwarzian_of(f: HoloMap) -> Self {
        Self { source: QdSource::Schwarzian(f) }
    }

    pub fn coeff(&self, z: Complex64) -> Result<Complex64> {
        match &self.source {
            QdSource::Zero => Ok(Complex64::ZERO),
            QdSource::Analytic(f) => Ok(f(z)),
            QdSource::Schwarzian(f) => schwarzian(f, z),
        }
    }
}

// ---------------------------------------------------------------------------
// Operations

/// Gaussian curvature `K = -e^{-2 eta} (flat Laplacian of eta)`.
pub fn curvature(sigma: &ConformalMetric, z: Complex64) -> Result<f64> {
    let j = sigma.jet(z)?;
    Ok(-(-2.0 * j.eta).exp() * j.eta_lap)
}

/// Schwarzian derivative `(f''/f')' - (1/2)(f''/f')^2` at `z`.
pub fn schwarzian(f: &HoloMap, z: Complex64) -> Result<Complex64> {
    let d1 = f.df(z);
    if d1.norm() < 1e-12 {
        return Err(ConformalError::DegenerateDerivative(z));
    }
    let q = f.d2f(z) / d1;
    Ok(f.d3f(z) / d1 - 1.5 * q * q)
}

/// Schwarzian tensor of `sigma1` with respect to `sigma2`:
/// `(eta2)_zz - ((eta2)_z)^2 - (eta1)_zz + ((eta1)_z)^2`.
pub fn schwarzian_tensor(
    sigma1: &ConformalMetric,
    sigma2: &ConformalMetric,
    z: Complex64,
) -> Result<Complex64> {
    let j1 = sigma1.jet(z)?;
    let j2 = sigma2.jet(z)?;
    Ok(j2.eta_zz - j2.eta_z * j2.eta_z - j1.eta_zz + j1.eta_z * j1.eta_z)
}

/// `B(sigma) = B(|dz|^2, sigma)`, the Schwarzian tensor against the flat
/// Möbius-flat representative: `eta_zz - (eta_z)^2`.
pub fn b_tensor(sigma: &ConformalMetric, z: Complex64) -> Result<Complex64> {
    let j = sigma.jet(z)?;
    Ok(j.eta_zz - j.eta_z * j.eta_z)
}

/// Norm of a quadratic differential against a metric:
/// `|phi|_sigma(z) = e^{-2 eta(z)} |lambda(z)|`.
pub fn qd_norm(phi: &QuadDifferential, sigma: &ConformalMetric, z: Complex64) -> Result<f64> {
    let j = sigma.jet(z)?;
    Ok((-2.0 * j.eta).exp() * phi.coeff(z)?.norm())
}

/// Pullback metric `f^* sigma` with log-density `eta o f + log |f'|`.
pub fn pullback_metric(f: &HoloMap, sigma: &ConformalMetric) -> ConformalMetric {
    ConformalMetric {
        chart: f.domain(),
        mode: sigma.mode,
        eta: Arc::new(PullbackEta {
            inner: sigma.eta.clone(),
            inner_chart: sigma.chart,
            map: f.clone(),
        }),
    }
}

// ---------------------------------------------------------------------------
// Grid CSV format

/// Writes a grid metric as CSV with a uniform-grid header:
///
/// ```text
/// # uniform-grid nx=.. ny=.. x0=.. y0=.. dx=.. dy=..
/// re_z,im_z,eta
/// ```
pub fn grid_to_csv(grid: &GridEta, w: &mut impl std::io::Write) -> std::io::Result<()> {
    writeln!(
        w,
        "# uniform-grid nx={} ny={} x0={:.17e} y0={:.17e} dx={:.17e} dy={:.17e}",
        grid.nx, grid.ny, grid.x0, grid.y0, grid.dx, grid.dy
    )?;
    writeln!(w, "re_z,im_z,eta")?;
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let x = grid.x0 + grid.dx * ix as f64;
            let y = grid.y0 + grid.dy * iy as f64;
            writeln!(w, "{:.17e},{:.17e},{:.17e}", x, y, grid.values[iy * grid.nx + ix])?;
        }
    }
    Ok(())
}

pub fn grid_from_csv(input: &str) -> Result<GridEta> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| ConformalError::BadCsv("empty input".into()))?;
    if !header.starts_with("# uniform-grid") {
        return Err(ConformalError::BadCsv("missing uniform-grid header".into()));
    }
    let mut nx = 0usize;
    let mut ny = 0usize;
    let mut x0 = f64::NAN;
    let mut y0 = f64::NAN;
    let mut dx = f64::NAN;
    let mut dy = f64::NAN;
    for tok in header.trim_start_matches("# uniform-grid").split_whitespace() {
        let (key, val) = tok
            .split_once('=')
            .ok_or_else(|| ConformalError::BadCsv(format!("bad header token {tok}")))?;
        match key {
            "nx" => nx = val.parse().map_err(|_| ConformalError::BadCsv("bad nx".into()))?,
            "ny" => ny = val.parse().map_err(|_| ConformalError::BadCsv("bad ny".into()))?,
            "x0" => x0 = val.parse().map_err(|_| ConformalError::BadCsv("bad x0".into()))?,
            "y0" => y0 = val.parse().map_err(|_| ConformalError::BadCsv("bad y0".into()))?,
            "dx" => dx = val.parse().map_err(|_| ConformalError::BadCsv("bad dx".into()))?,
            "dy" => dy = val.parse().map_err(|_| ConformalError::BadCsv("bad dy".into()))?,
            other => return Err(ConformalError::BadCsv(format!("unknown header key {other}"))),
        }
    }
    if nx < 2 * GRID_MARGIN + 1 || ny < 2 * GRID_MARGIN + 1 {
        return Err(ConformalError::BadCsv("grid too small for the FD margin".into()));
    }
    let column_line = lines
        .next()
        .ok_or_else(|| ConformalError::BadCsv("missing column header".into()))?;
    if column_line.trim() != "re_z,im_z,eta" {
        return Err(ConformalError::BadCsv("expected columns re_z,im_z,eta".into()));
    }
    let mut values = Vec::with_capacity(nx * ny);
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split(',');
        let x: f64 = it
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| ConformalError::BadCsv(format!("bad row: {line}")))?;
        let y: f64 = it
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| ConformalError::BadCsv(format!("bad row: {line}")))?;
        let eta: f64 = it
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| ConformalError::BadCsv(format!("bad row: {line}")))?;
        let i = values.len();
        let (ix, iy) = (i % nx, i / nx);
        let xe = x0 + dx * ix as f64;
        let ye = y0 + dy * iy as f64;
        if (x - xe).abs() > 1e-9 * dx.abs().max(1.0) || (y - ye).abs() > 1e-9 * dy.abs().max(1.0) {
            return Err(ConformalError::BadCsv(format!(
                "row {i} coordinates ({x}, {y}) disagree with the declared grid"
            )));
        }
        values.push(eta);
    }
    if values.len() != nx * ny {
        return Err(ConformalError::BadCsv(format!(
            "expected {} rows, found {}",
            nx * ny,
            values.len()
        )));
    }
    Ok(GridEta { x0, y0, dx, dy, nx, ny, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn curvature_closed_forms() {
        let poincare = ConformalMetric::poincare_disc();
        let k = curvature(&poincare, c(0.3, 0.1)).unwrap();
        assert!((k + 1.0).abs() < 1e-12);

        let flat = ConformalMetric::flat(Chart::plane());
        assert!(curvature(&flat, c(1.7, -2.0)).unwrap().abs() < 1e-15);

        let sph = ConformalMetric::spherical();
        assert!((curvature(&sph, c(0.5, 0.0)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn curvature_scaling_law() {
        // K(e^{2t} sigma) = e^{-2t} K(sigma).
        let m = ConformalMetric::poincare_disc().scaled(0.7);
        let k = curvature(&m, c(0.2, -0.3)).unwrap();
        assert!((k + (-1.4f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn schwarzian_of_moebius_vanishes() {
        let m = MoebiusMap::new(c(1.0, 0.2), c(0.3, 0.0), c(0.1, -0.1), c(1.0, 0.0));
        let f = HoloMap::moebius(m, Chart::unit_disc());
        let s = schwarzian(&f, c(0.2, 0.1)).unwrap();
        assert!(s.norm() < 1e-12);
    }

    #[test]
    fn schwarzian_of_exp_is_minus_half() {
        let f = HoloMap::exp(Chart::plane());
        let s = schwarzian(&f, c(0.4, -1.1)).unwrap();
        assert!((s - c(-0.5, 0.0)).norm() < 1e-13);
    }

    #[test]
    fn schwarzian_cocycle() {
        // S(g o f) = S(g)(f) f'^2 + S(f) for Moebius g and a cubic f.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..40 {
            let g = MoebiusMap::new(
                c(rng.gen_range(0.5..1.5), rng.gen_range(-0.3..0.3)),
                c(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)),
                c(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)),
                c(rng.gen_range(0.5..1.5), rng.gen_range(-0.3..0.3)),
            );
            let f = HoloMap::cubic(0.05, Chart::unit_disc());
            let gf = HoloMap::compose(HoloMap::moebius(g, Chart::plane()), f.clone());
            let z = c(rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6));
            let lhs = schwarzian(&gf, z).unwrap();
            let g_map = HoloMap::moebius(g, Chart::plane());
            let fp = f.df(z);
            let rhs = schwarzian(&g_map, f.f(z)).unwrap() * fp * fp + schwarzian(&f, z).unwrap();
            assert!((lhs - rhs).norm() < 1e-10);
        }
    }

    #[test]
    fn tensor_vanishes_on_equal_arguments_and_antisymmetry() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(29);
        let p1 = Perturbation {
            holo: vec![(c(0.1, 0.05), 2)],
            radial: vec![(0.03, 2)],
        };
        let p2 = Perturbation {
            holo: vec![(c(-0.07, 0.02), 3)],
            radial: vec![(0.05, 1)],
        };
        let s1 = ConformalMetric::poincare_disc().perturbed(p1);
        let s2 = ConformalMetric::poincare_disc().perturbed(p2);
        for _ in 0..20 {
            let z = c(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            assert!(schwarzian_tensor(&s1, &s1, z).unwrap().norm() < 1e-14);
            let b12 = schwarzian_tensor(&s1, &s2, z).unwrap();
            let b21 = schwarzian_tensor(&s2, &s1, z).unwrap();
            assert!((b12 + b21).norm() < 1e-13);
        }
    }

    #[test]
    fn schwarzian_equals_twice_tensor_of_pullback() {
        // S(f) = 2 B(|dz|^2, f^* |dz|^2).
        let f = HoloMap::cubic(0.05, Chart::unit_disc());
        let flat = ConformalMetric::flat(Chart::plane());
        let pulled = pullback_metric(&f, &flat);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let z = c(rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6));
            let lhs = schwarzian(&f, z).unwrap();
            let rhs =
                2.0 * schwarzian_tensor(&ConformalMetric::flat(Chart::unit_disc()), &pulled, z).unwrap();
            assert!((lhs - rhs).norm() < 1e-11);
        }
    }

    #[test]
    fn tensor_cocycle_property() {
        // B(s1, s3) = B(s1, s2) + B(s2, s3).
        let s1 = ConformalMetric::poincare_disc();
        let s2 = ConformalMetric::poincare_disc().perturbed(Perturbation {
            holo: vec![(c(0.12, -0.04), 2)],
            radial: vec![],
        });
        let s3 = ConformalMetric::flat(Chart::unit_disc()).perturbed(Perturbation {
            holo: vec![(c(0.0, 0.08), 3)],
            radial: vec![(0.02, 1)],
        });
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(37);
        for _ in 0..20 {
            let z = c(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            let b13 = schwarzian_tensor(&s1, &s3, z).unwrap();
            let b12 = schwarzian_tensor(&s1, &s2, z).unwrap();
            let b23 = schwarzian_tensor(&s2, &s3, z).unwrap();
            assert!((b13 - b12 - b23).norm() < 1e-12);
        }
    }

    #[test]
    fn b_tensor_vanishes_on_moebius_flat_families() {
        let families = [
            ConformalMetric::flat(Chart::unit_disc()),
            ConformalMetric::poincare_disc(),
            ConformalMetric::poincare_disc().scaled(0.9),
            ConformalMetric::spherical(),
            ConformalMetric::spherical().scaled(-0.4),
        ];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        for m in &families {
            for _ in 0..10 {
                let z = c(rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6));
                assert!(b_tensor(m, z).unwrap().norm() < 1e-12);
            }
        }
    }

    #[test]
    fn b_tensor_scale_invariance() {
        let m = ConformalMetric::poincare_disc().perturbed(Perturbation {
            holo: vec![(c(0.1, 0.0), 2)],
            radial: vec![(0.04, 2)],
        });
        let scaled = m.scaled(0.7);
        let z = c(0.25, -0.15);
        let b1 = b_tensor(&m, z).unwrap();
        let b2 = b_tensor(&scaled, z).unwrap();
        assert!((b1 - b2).norm() < 1e-13);
    }

    #[test]
    fn qd_norm_values_and_scaling() {
        let flat = ConformalMetric::flat(Chart::plane());
        let unit = QuadDifferential::constant(c(1.0, 0.0));
        assert!((qd_norm(&unit, &flat, c(2.0, 1.0)).unwrap() - 1.0).abs() < 1e-15);
        assert!(qd_norm(&QuadDifferential::zero(), &flat, c(0.1, 0.2)).unwrap() == 0.0);
        // |phi|_{e^{2t} sigma} = e^{-2t} |phi|_sigma.
        let m = ConformalMetric::poincare_disc();
        let phi = QuadDifferential::from_fn(|z| z * z + c(0.3, 0.1));
        let z = c(0.3, 0.4);
        let n1 = qd_norm(&phi, &m.scaled(0.3), z).unwrap();
        let n2 = (-0.6f64).exp() * qd_norm(&phi, &m, z).unwrap();
        assert!((n1 - n2).abs() < 1e-14);
    }

    #[test]
    fn pullback_identity_is_identity() {
        let m = ConformalMetric::poincare_disc();
        let id = HoloMap::identity(Chart::unit_disc());
        let pulled = pullback_metric(&id, &m);
        let z = c(0.2, -0.3);
        let j1 = m.jet(z).unwrap();
        let j2 = pulled.jet(z).unwrap();
        assert!((j1.eta - j2.eta).abs() < 1e-14);
        assert!((j1.eta_z - j2.eta_z).norm() < 1e-14);
        assert!((j1.eta_zz - j2.eta_zz).norm() < 1e-14);
    }

    #[test]
    fn tensor_naturality_under_moebius_pullback() {
        // B(f* s1, f* s2)(z) = B(s1, s2)(f(z)) f'(z)^2.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(43);
        let s1 = ConformalMetric::poincare_disc();
        let s2 = ConformalMetric::poincare_disc().perturbed(Perturbation {
            holo: vec![(c(0.1, 0.02), 2)],
            radial: vec![(0.03, 1)],
        });
        for _ in 0..15 {
            // A small disc-preserving Moebius map.
            let p = c(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
            let m = MoebiusMap::disc_to_origin(p);
            let f = HoloMap::moebius(m, Chart::unit_disc());
            let z = c(rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4));
            let lhs = schwarzian_tensor(&pullback_metric(&f, &s1), &pullback_metric(&f, &s2), z).unwrap();
            let fp = f.df(z);
            let rhs = schwarzian_tensor(&s1, &s2, f.f(z)).unwrap() * fp * fp;
            assert!((lhs - rhs).norm() < 1e-11);
        }
    }

    #[test]
    fn norm_naturality_under_pullback() {
        // |f* phi|_{f* sigma}(z) = |phi|_sigma(f(z)).
        let m = MoebiusMap::disc_to_origin(c(0.15, -0.1));
        let f = HoloMap::moebius(m, Chart::unit_disc());
        let sigma = ConformalMetric::poincare_disc();
        let phi = QuadDifferential::from_fn(|z| z * z - c(0.2, 0.05));
        let z = c(0.3, 0.2);
        let fp = f.df(z);
        let fz = f.f(z);
        // f* phi has coefficient phi(f(z)) f'(z)^2.
        let pulled_phi = QuadDifferential::from_fn(move |w| {
            let mp = m.derivative(w);
            (m.apply_finite(w) * m.apply_finite(w) - c(0.2, 0.05)) * mp * mp
        });
        let lhs = qd_norm(&pulled_phi, &pullback_metric(&f, &sigma), z).unwrap();
        let rhs = qd_norm(&phi, &sigma, fz).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
        let _ = fp;
    }

    #[test]
    fn curvature_invariant_under_moebius_pullback() {
        let m = MoebiusMap::disc_to_origin(c(0.2, 0.1));
        let f = HoloMap::moebius(m, Chart::unit_disc());
        let sigma = ConformalMetric::poincare_disc().perturbed(Perturbation {
            holo: vec![(c(0.08, -0.03), 2)],
            radial: vec![(0.02, 2)],
        });
        let pulled = pullback_metric(&f, &sigma);
        let z = c(0.25, -0.2);
        let k1 = curvature(&pulled, z).unwrap();
        let k2 = curvature(&sigma, f.f(z)).unwrap();
        assert!((k1 - k2).abs() < 1e-8 * k2.abs().max(1.0));
    }

    #[test]
    fn grid_mode_matches_analytic_at_fourth_order() {
        let metric = ConformalMetric::poincare_disc().perturbed(Perturbation {
            holo: vec![(c(0.15, 0.1), 3)],
            radial: vec![(0.05, 2)],
        });
        let mut errors = Vec::new();
        for &n in &[41usize, 81] {
            let h = 0.8 / (n as f64 - 1.0);
            let grid = GridEta::sample(&metric, -0.4, -0.4, h, h, n, n).unwrap();
            let gm = ConformalMetric::from_grid(grid);
            let mut worst: f64 = 0.0;
            for iy in (GRID_MARGIN..n - GRID_MARGIN).step_by(4) {
                for ix in (GRID_MARGIN..n - GRID_MARGIN).step_by(4) {
                    let z = c(-0.4 + h * ix as f64, -0.4 + h * iy as f64);
                    let ja = metric.jet(z).unwrap();
                    let jg = gm.jet(z).unwrap();
                    worst = worst
                        .max((ja.eta_z - jg.eta_z).norm())
                        .max((ja.eta_zz - jg.eta_zz).norm())
                        .max((ja.eta_lap - jg.eta_lap).abs());
                }
            }
            errors.push(worst);
        }
        let order = (errors[0] / errors[1]).log2();
        assert!(order >= 3.5, "observed grid FD order {order} (errors {errors:?})");
    }

    #[test]
    fn grid_margin_and_alignment_are_enforced() {
        let metric = ConformalMetric::poincare_disc();
        let grid = GridEta::sample(&metric, -0.4, -0.4, 0.1, 0.1, 9, 9).unwrap();
        let gm = ConformalMetric::from_grid(grid);
        assert!(gm.jet(c(-0.4, -0.4)).is_err(), "margin query must fail");
        assert!(gm.jet(c(0.05, 0.0)).is_err(), "off-node query must fail");
        assert!(gm.jet(c(0.0, 0.0)).is_ok());
        assert_eq!(gm.deriv_mode(), DerivMode::Grid);
    }

    #[test]
    fn grid_csv_round_trip() {
        let metric = ConformalMetric::poincare_disc();
        let grid = GridEta::sample(&metric, -0.3, -0.2, 0.05, 0.05, 11, 9).unwrap();
        let mut buf = Vec::new();
        grid_to_csv(&grid, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let back = grid_from_csv(&text).unwrap();
        assert_eq!(back.nx, grid.nx);
        assert_eq!(back.ny, grid.ny);
        for (a, b) in grid.values.iter().zip(back.values.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
