//! The CMC conformal-factor equation and its continuation in the mean
//! curvature H over (-1, 1).
//!
//! After the change of variables `u = v - (1/2) log((1+H)/(1-H))` the
//! constant-mean-curvature condition for the Epstein surface of
//! `e^{2u} h` becomes a semilinear equation in `v` whose residual we take,
//! normalized, as
//!
//! ```text
//! G(H, v) = (1-H)/2 * [ 1 - H - 2 H K(t(v))
//!                       + (-1-H) (K(t(v))^2 - 16 |B(t(v)) - phi/2|^2_{t(v)}) ],
//! t(v) = e^{2v} h.
//! ```
//!
//! The normalization pins the linearization at the flat anchors
//! `(H, phi = 0, v = 0)` to `(1-H)(2 id - lap)` for every H, matching the
//! degeneracy at H = +1 (the equation dies there and Newton must refuse),
//! and `2(2 id - lap)` at the end anchor H = -1. `v = 0` solves the
//! equation identically in H when `phi = 0`.
//!
//! Two discretizations share the residual algebra:
//! - disc mode: a staggered polar grid on a truncated disc, second-order
//!   finite differences, Dirichlet `v = 0` outside the rim (the true
//!   conformal factor decays like `(1 - |z|^2)^2` toward the boundary);
//! - closed-surface mode: the genus-2 mesh, with chart derivatives of `v`
//!   from the unfolded least-squares stencils.
//!
//! The curvature part of the Jacobian is assembled exactly; the B-norm part
//! is finite-differenced directionally (it vanishes quadratically at the
//! anchors, where Newton's quadratic convergence matters).

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::conformal::{Chart, ConformalMetric, HoloMap, LogDensity};
use crate::epstein::{epstein_chart, fd_geometry_oriented, EpsteinError};
use crate::mesh::{ChartDerivatives, MeshError, QDField, SurfaceMesh};
use crate::numerics::{fit_poly2, Poly2};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("mean curvature {0} outside [-1, 1]")]
    OutOfRange(f64),
    #[error("linearization is singular at H = {0} (the equation degenerates at H = 1)")]
    SingularLinearization(f64),
    #[error("Newton diverged at H = {h}: residual {residual:.3e} after {iters} iterations")]
    NewtonDiverged { h: f64, residual: f64, iters: usize },
    #[error("continuation stalled at H = {0}: step underflow")]
    ContinuationStalled(f64),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Epstein(#[from] EpsteinError),
}

pub type Result<T> = std::result::Result<T, SolverError>;

/// Newton and continuation controls.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Stopping tolerance on the mass-weighted L2 residual norm.
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Initial continuation step (in H, or in the end parameter t where the
    /// square-root reparameterization is active).
    pub h_step: f64,
    pub h_step_min: f64,
    /// March uniformly in t = sqrt(1+H) below H = -0.9 and in sqrt(1-H)
    /// above H = 0.9.
    pub use_t_param: bool,
    /// Backtracking factor of the damped Newton line search.
    pub damping: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            newton_tol: 1e-11,
            max_newton: 25,
            h_step: 0.05,
            h_step_min: 1e-4,
            use_t_param: true,
            damping: 0.5,
        }
    }
}

/// `(1/2) log((1+H)/(1-H))`, the constant relating `u` and `v`.
pub fn log_scale(h: f64) -> Result<f64> {
    if h.abs() >= 1.0 {
        return Err(SolverError::OutOfRange(h));
    }
    Ok(0.5 * ((1.0 + h) / (1.0 - h)).ln())
}

pub fn u_from_v(h: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
    let k = log_scale(h)?;
    Ok(v.map(|x| x - k))
}

pub fn v_from_u(h: f64, u: &DVector<f64>) -> Result<DVector<f64>> {
    let k = log_scale(h)?;
    Ok(u.map(|x| x + k))
}

// ---------------------------------------------------------------------------
// Disc mode

/// Staggered polar grid on a truncated disc: unknown rings
/// `r_j = (j + 1/2) h_r`, `j = 0..n_r-1`, periodic angles, and `v = 0`
/// outside the rim.
#[derive(Debug, Clone, Copy)]
pub struct DiscGrid {
    pub n_r: usize,
    pub n_theta: usize,
    pub radius: f64,
}

impl Default for DiscGrid {
    fn default() -> Self {
        DiscGrid { n_r: 20, n_theta: 40, radius: 0.85 }
    }
}

pub struct DiscContext {
    pub grid: DiscGrid,
    pub f: HoloMap,
    /// Cubic coefficient when the developing map is `z + eps z^3`; drives
    /// the ramp ladder. `None` for general maps.
    pub eps: Option<f64>,
    z: Vec<Complex64>,
    rho: Vec<f64>,
    rho_z: Vec<Complex64>,
    lambda_phi: Vec<Complex64>,
    mass: DVector<f64>,
    /// Flat FD Laplacian on the unknowns (Dirichlet outside the rim).
    lap_flat: DMatrix<f64>,
    h_r: f64,
    h_theta: f64,
}

impl DiscContext {
    /// Context for the developing map `f(z) = z + eps z^3`; `eps = 0` is the
    /// umbilical (Fuchsian) configuration.
    pub fn new_cubic(grid: DiscGrid, eps: f64) -> Result<DiscContext> {
        let mut ctx = Self::new(grid, HoloMap::cubic(eps, Chart::unit_disc()))?;
        ctx.eps = Some(eps);
        Ok(ctx)
    }

    pub fn new(grid: DiscGrid, f: HoloMap) -> Result<DiscContext> {
        assert!(grid.n_theta % 2 == 0, "n_theta must be even for the pole stencil");
        assert!(grid.radius < 1.0 && grid.radius > 0.0);
        let n = grid.n_r * grid.n_theta;
        let h_r = grid.radius / grid.n_r as f64;
        let h_theta = 2.0 * std::f64::consts::PI / grid.n_theta as f64;
        let mut z = Vec::with_capacity(n);
        let mut rho = Vec::with_capacity(n);
        let mut rho_z = Vec::with_capacity(n);
        let mut lambda_phi = Vec::with_capacity(n);
        let mut mass = DVector::zeros(n);
        for j in 0..grid.n_r {
            let r = (j as f64 + 0.5) * h_r;
            for k in 0..grid.n_theta {
                let theta = h_theta * k as f64;
                let zz = Complex64::from_polar(r, theta);
                let s = 1.0 - zz.norm_sqr();
                z.push(zz);
                rho.push((2.0 / s).ln());
                rho_z.push(zz.conj() / s);
                lambda_phi
                    .push(crate::conformal::schwarzian(&f, zz).map_err(EpsteinError::from)?);
                mass[j * grid.n_theta + k] = (2.0 / s) * (2.0 / s) * r * h_r * h_theta;
            }
        }
        let lap_flat = assemble_polar_laplacian(&grid, h_r, h_theta);
        Ok(DiscContext {
            grid,
            f,
            eps: None,
            z,
            rho,
            rho_z,
            lambda_phi,
            mass,
            lap_flat,
            h_r,
            h_theta,
        })
    }

    /// Same grid with the cubic coefficient rescaled; used by the ramp
    /// ladder from the umbilical configuration.
    pub fn with_eps(&self, eps: f64) -> Result<DiscContext> {
        Self::new_cubic(self.grid, eps)
    }

    pub fn n_unknowns(&self) -> usize {
        self.z.len()
    }

    pub fn positions(&self) -> &[Complex64] {
        &self.z
    }

    fn idx(&self, j: usize, k: usize) -> usize {
        j * self.grid.n_theta + k
    }

    // d/dz of a real scalar field, on rings 0..=n_r (one ghost ring past the
    // rim, where the Dirichlet extension is zero).
    fn dz_scalar(&self, v: &DVector<f64>) -> Vec<Complex64> {
        let (nr, nt) = (self.grid.n_r, self.grid.n_theta);
        let at = |j: i64, k: i64| -> f64 {
            if j >= nr as i64 {
                return 0.0;
            }
            let kk = k.rem_euclid(nt as i64) as usize;
            if j < 0 {
                // Through the pole: (-r, theta) is (r, theta + pi).
                v[self.idx(0, (kk + nt / 2) % nt)]
            } else {
                v[self.idx(j as usize, kk)]
            }
        };
        let mut out = vec![Complex64::ZERO; (nr + 1) * nt];
        for j in 0..=nr {
            let r = (j as f64 + 0.5) * self.h_r;
            for k in 0..nt {
                let (ji, ki) = (j as i64, k as i64);
                let vr = (at(ji + 1, ki) - at(ji - 1, ki)) / (2.0 * self.h_r);
                let vt = (at(ji, ki + 1) - at(ji, ki - 1)) / (2.0 * self.h_theta);
                let phase = Complex64::from_polar(1.0, -(self.h_theta * k as f64));
                out[j * nt + k] = 0.5 * phase * Complex64::new(vr, -vt / r);
            }
        }
        out
    }

    // d/dz of a complex field given on rings 0..=n_r; result on the unknown
    // rings only.
    fn dz_complex(&self, w: &[Complex64]) -> Vec<Complex64> {
        let (nr, nt) = (self.grid.n_r, self.grid.n_theta);
        let at = |j: i64, k: i64| -> Complex64 {
            let kk = k.rem_euclid(nt as i64) as usize;
            if j < 0 {
                w[(kk + nt / 2) % nt]
            } else {
                w[j as usize * nt + kk]
            }
        };
        let mut out = vec![Complex64::ZERO; nr * nt];
        for j in 0..nr {
            let r = (j as f64 + 0.5) * self.h_r;
            for k in 0..nt {
                let (ji, ki) = (j as i64, k as i64);
                let wr = (at(ji + 1, ki) - at(ji - 1, ki)) / (2.0 * self.h_r);
                let wt = (at(ji, ki + 1) - at(ji, ki - 1)) / (2.0 * self.h_theta);
                let phase = Complex64::from_polar(1.0, -(self.h_theta * k as f64));
                out[j * nt + k] = 0.5 * phase * (wr - Complex64::i() * wt / r);
            }
        }
        out
    }

    fn chart_derivs(&self, v: &DVector<f64>) -> (Vec<Complex64>, Vec<Complex64>) {
        let vz_ext = self.dz_scalar(v);
        let vzz = self.dz_complex(&vz_ext);
        let vz: Vec<Complex64> = vz_ext[..self.n_unknowns()].to_vec();
        (vz, vzz)
    }

    fn lap_h(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = &self.lap_flat * v;
        for i in 0..out.len() {
            out[i] *= (-2.0 * self.rho[i]).exp();
        }
        out
    }
}

fn assemble_polar_laplacian(grid: &DiscGrid, h_r: f64, h_theta: f64) -> DMatrix<f64> {
    let (nr, nt) = (grid.n_r, grid.n_theta);
    let n = nr * nt;
    let mut a = DMatrix::zeros(n, n);
    for j in 0..nr {
        let r = (j as f64 + 0.5) * h_r;
        for k in 0..nt {
            let i = j * nt + k;
            a[(i, i)] += -2.0 / (h_r * h_r) - 2.0 / (r * r * h_theta * h_theta);
            if j + 1 < nr {
                a[(i, (j + 1) * nt + k)] += 1.0 / (h_r * h_r) + 1.0 / (2.0 * h_r * r);
            }
            if j >= 1 {
                a[(i, (j - 1) * nt + k)] += 1.0 / (h_r * h_r) - 1.0 / (2.0 * h_r * r);
            }
            // At j = 0 the inward coefficient 1/h^2 - 1/(2 h r_0) vanishes
            // identically on the staggered grid (r_0 = h/2), so the pole
            // needs no special row.
            a[(i, j * nt + (k + 1) % nt)] += 1.0 / (r * r * h_theta * h_theta);
            a[(i, j * nt + (k + nt - 1) % nt)] += 1.0 / (r * r * h_theta * h_theta);
        }
    }
    a
}

// ---------------------------------------------------------------------------
// Closed-surface mode

pub struct ClosedContext {
    pub mesh: Arc<SurfaceMesh>,
    pub phi: QDField,
    derivs: ChartDerivatives,
    rho: Vec<f64>,
    rho_z: Vec<Complex64>,
    mass: DVector<f64>,
    /// Dense hyperbolic Laplacian `-mass^{-1} stiffness`.
    lap: DMatrix<f64>,
}

impl ClosedContext {
    pub fn new(mesh: Arc<SurfaceMesh>, phi: QDField) -> Result<ClosedContext> {
        let derivs = mesh.chart_derivative_operators()?;
        let n = mesh.node_count();
        let mut rho = Vec::with_capacity(n);
        let mut rho_z = Vec::with_capacity(n);
        for &z in mesh.positions() {
            let s = 1.0 - z.norm_sqr();
            rho.push((2.0 / s).ln());
            rho_z.push(z.conj() / s);
        }
        let mut lap = -mesh.stiffness.clone();
        for i in 0..n {
            let mi = mesh.mass[i];
            for j in 0..n {
                lap[(i, j)] /= mi;
            }
        }
        let mass = mesh.mass.clone();
        Ok(ClosedContext { mesh, phi, derivs, rho, rho_z, mass, lap })
    }

    pub fn with_phi_scale(&self, s: f64) -> Result<ClosedContext> {
        ClosedContext::new(self.mesh.clone(), self.phi.scaled(s))
    }

    pub fn n_unknowns(&self) -> usize {
        self.mesh.node_count()
    }
}

// ---------------------------------------------------------------------------
// The context wrapper and the shared residual algebra

/// Problem context: disc mode (developing map on a truncated disc grid) or
/// closed-surface mode (genus-2 mesh with a quadratic-differential field).
pub enum CmcContext {
    Disc(DiscContext),
    Closed(ClosedContext),
}

impl CmcContext {
    pub fn n_unknowns(&self) -> usize {
        match self {
            CmcContext::Disc(c) => c.n_unknowns(),
            CmcContext::Closed(c) => c.n_unknowns(),
        }
    }

    pub fn positions(&self) -> Vec<Complex64> {
        match self {
            CmcContext::Disc(c) => c.z.clone(),
            CmcContext::Closed(c) => c.mesh.positions().to_vec(),
        }
    }

    pub fn mode_name(&self) -> &'static str {
        match self {
            CmcContext::Disc(_) => "disc",
            CmcContext::Closed(_) => "closed_surface",
        }
    }

    pub fn masses(&self) -> &DVector<f64> {
        match self {
            CmcContext::Disc(c) => &c.mass,
            CmcContext::Closed(c) => &c.mass,
        }
    }

    fn rho(&self) -> &[f64] {
        match self {
            CmcContext::Disc(c) => &c.rho,
            CmcContext::Closed(c) => &c.rho,
        }
    }

    fn rho_z(&self) -> &[Complex64] {
        match self {
            CmcContext::Disc(c) => &c.rho_z,
            CmcContext::Closed(c) => &c.rho_z,
        }
    }

    fn half_phi(&self, i: usize) -> Complex64 {
        match self {
            CmcContext::Disc(c) => 0.5 * c.lambda_phi[i],
            CmcContext::Closed(c) => 0.5 * c.phi.values[i],
        }
    }

    fn lap_h(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            CmcContext::Disc(c) => c.lap_h(v),
            CmcContext::Closed(c) => &c.lap * v,
        }
    }

    fn chart_derivs(&self, v: &DVector<f64>) -> (Vec<Complex64>, Vec<Complex64>) {
        match self {
            CmcContext::Disc(c) => c.chart_derivs(v),
            CmcContext::Closed(c) => c.derivs.apply(v),
        }
    }

    /// Dense matrix of the hyperbolic Laplacian on the unknowns.
    pub fn lap_matrix(&self) -> DMatrix<f64> {
        match self {
            CmcContext::Disc(c) => {
                let mut m = c.lap_flat.clone();
                for i in 0..c.n_unknowns() {
                    let s = (-2.0 * c.rho[i]).exp();
                    for j in 0..c.n_unknowns() {
                        m[(i, j)] *= s;
                    }
                }
                m
            }
            CmcContext::Closed(c) => c.lap.clone(),
        }
    }

    /// Mass-weighted L2 norm, the solver's stopping metric.
    pub fn mass_norm(&self, v: &DVector<f64>) -> f64 {
        let m = self.masses();
        let mut s = 0.0;
        for i in 0..v.len() {
            s += m[i] * v[i] * v[i];
        }
        s.sqrt()
    }

    /// Curvature field `K(e^{2v} h) = e^{-2v} (-lap v - 1)`.
    pub fn curvature_field(&self, v: &DVector<f64>) -> DVector<f64> {
        let lap = self.lap_h(v);
        DVector::from_fn(v.len(), |i, _| (-2.0 * v[i]).exp() * (-lap[i] - 1.0))
    }

    /// Squared deviation norm `W = |B(e^{2v} h) - phi/2|^2_{e^{2v} h}`, with
    /// `B = v_zz - 2 rho_z v_z - v_z^2` in the disc chart (the Poincaré
    /// contribution cancels identically).
    pub fn w_field(&self, v: &DVector<f64>) -> DVector<f64> {
        let (vz, vzz) = self.chart_derivs(v);
        let rho = self.rho();
        let rho_z = self.rho_z();
        DVector::from_fn(v.len(), |i, _| {
            let b = vzz[i] - 2.0 * rho_z[i] * vz[i] - vz[i] * vz[i];
            let dev = b - self.half_phi(i);
            (-4.0 * (rho[i] + v[i])).exp() * dev.norm_sqr()
        })
    }

    /// The normalized residual field.
    pub fn residual_g(&self, h: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
        if h.abs() > 1.0 {
            return Err(SolverError::OutOfRange(h));
        }
        let k = self.curvature_field(v);
        let w = self.w_field(v);
        let p = 0.5 * (1.0 - h);
        Ok(DVector::from_fn(v.len(), |i, _| {
            p * (1.0 - h - 2.0 * h * k[i] + (-1.0 - h) * (k[i] * k[i] - 16.0 * w[i]))
        }))
    }

    /// Assembled Jacobian of the residual in `v`. The curvature part is
    /// exact. The B-norm part is assembled through the chain rule over the
    /// linear chart-derivative operators,
    ///
    /// ```text
    /// dW[w] = -4 w W + 2 e^{-4(rho+v)} Re( conj(B - phi/2)
    ///         (Dzz w - 2 rho_z Dz w - 2 (Dz v)(Dz w)) ),
    /// ```
    ///
    /// column by column; a directional finite difference at step 1e-6
    /// pollutes the anchor operator above the 1e-10 agreement bar because
    /// basis spikes have `1/h^2`-sized chart derivatives.
    pub fn linearize_g(&self, h: f64, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        if h.abs() > 1.0 {
            return Err(SolverError::OutOfRange(h));
        }
        let n = v.len();
        let p = 0.5 * (1.0 - h);
        let k = self.curvature_field(v);
        let lapm = self.lap_matrix();
        // dK[w] = -2 w K - e^{-2v} lap w, and
        // dG[w] = p (-2H - 2(1+H) K) dK[w] + 16 p (1+H) dW[w].
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            let c = p * (-2.0 * h - 2.0 * (1.0 + h) * k[i]);
            let e = (-2.0 * v[i]).exp();
            for j in 0..n {
                m[(i, j)] = -c * e * lapm[(i, j)];
            }
            m[(i, i)] += c * (-2.0) * k[i];
        }
        let wcoef = 16.0 * p * (1.0 + h);
        if wcoef != 0.0 {
            let (vz, vzz) = self.chart_derivs(v);
            let rho = self.rho();
            let rho_z = self.rho_z();
            let w_vals = self.w_field(v);
            let mut basis = DVector::zeros(n);
            for j in 0..n {
                basis[j] = 1.0;
                let (wz, wzz) = self.chart_derivs(&basis);
                basis[j] = 0.0;
                for i in 0..n {
                    let db = wzz[i] - 2.0 * rho_z[i] * wz[i] - 2.0 * vz[i] * wz[i];
                    let mut dw = if db.norm_sqr() > 0.0 {
                        let b = vzz[i] - 2.0 * rho_z[i] * vz[i] - vz[i] * vz[i];
                        let dev = b - self.half_phi(i);
                        2.0 * (-4.0 * (rho[i] + v[i])).exp() * (dev.conj() * db).re
                    } else {
                        0.0
                    };
                    if i == j {
                        dw -= 4.0 * w_vals[i];
                    }
                    if dw != 0.0 {
                        m[(i, j)] += wcoef * dw;
                    }
                }
            }
        }
        Ok(m)
    }
}

// ---------------------------------------------------------------------------
// Newton and continuation

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub v: DVector<f64>,
    pub iters: usize,
    pub residual_norm: f64,
    /// Mass-weighted residual norms per iteration, starting with the seed.
    pub history: Vec<f64>,
}

/// Damped Newton on `G(H, .) = 0` from the given seed.
pub fn newton_solve(
    h: f64,
    ctx: &CmcContext,
    v_init: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<NewtonOutcome> {
    if h.abs() > 1.0 {
        return Err(SolverError::OutOfRange(h));
    }
    if h >= 1.0 - 1e-12 {
        // The (1-H) prefactor kills the equation and its derivative.
        return Err(SolverError::SingularLinearization(h));
    }
    let mut v = v_init.clone();
    let mut g = ctx.residual_g(h, &v)?;
    let mut gn = ctx.mass_norm(&g);
    let mut history = vec![gn];
    for it in 0..cfg.max_newton {
        if gn < cfg.newton_tol {
            return Ok(NewtonOutcome { v, iters: it, residual_norm: gn, history });
        }
        let l = ctx.linearize_g(h, &v)?;
        let lu = l.lu();
        let step = match lu.solve(&(-&g)) {
            Some(s) if s.iter().all(|x| x.is_finite()) => s,
            _ => return Err(SolverError::SingularLinearization(h)),
        };
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let trial = &v + alpha * &step;
            let gt = ctx.residual_g(h, &trial)?;
            let gtn = ctx.mass_norm(&gt);
            if gtn < gn {
                v = trial;
                g = gt;
                gn = gtn;
                accepted = true;
                break;
            }
            alpha *= cfg.damping;
        }
        history.push(gn);
        if !accepted {
            return Err(SolverError::NewtonDiverged { h, residual: gn, iters: it + 1 });
        }
    }
    if gn < cfg.newton_tol {
        Ok(NewtonOutcome { v, iters: cfg.max_newton, residual_norm: gn, history })
    } else {
        Err(SolverError::NewtonDiverged { h, residual: gn, iters: cfg.max_newton })
    }
}

#[derive(Debug, Clone)]
pub struct ContinuationEntry {
    pub h: f64,
    pub v: DVector<f64>,
    pub residual_norm: f64,
    pub newton_iters: usize,
}

#[derive(Debug, Clone)]
pub struct ContinuationResult {
    pub entries: Vec<ContinuationEntry>,
    /// Description of the starting solution.
    pub anchors: String,
    /// Per-entry Newton histories for the convergence log.
    pub logs: Vec<(f64, Vec<f64>)>,
}

impl ContinuationResult {
    pub fn entry_nearest(&self, h: f64) -> &ContinuationEntry {
        self.entries
            .iter()
            .min_by(|a, b| (a.h - h).abs().partial_cmp(&(b.h - h).abs()).unwrap())
            .expect("continuation produced entries")
    }
}

fn propose_next(h: f64, step: f64, h_hi: f64, cfg: &SolverConfig) -> f64 {
    let next = if cfg.use_t_param && h < -0.9 {
        let t = (1.0 + h).sqrt();
        -1.0 + (t + step) * (t + step)
    } else if cfg.use_t_param && h > 0.9 {
        let s = (1.0 - h).sqrt();
        let s2 = (s - step).max(0.0);
        1.0 - s2 * s2
    } else {
        h + step
    };
    next.min(h_hi)
}

/// Marches H across the range, seeding each corrector solve from the
/// previous solution. The first solve is seeded with `v = 0` (exact at the
/// anchors when `phi = 0`, within the perturbative basin for small data).
/// Steps halve on Newton failure; the march aborts below `h_step_min`.
pub fn continuation(
    range: (f64, f64),
    ctx: &CmcContext,
    cfg: &SolverConfig,
) -> Result<ContinuationResult> {
    let (h_lo, h_hi) = range;
    if !(h_lo > -1.0 && h_hi < 1.0 && h_lo <= h_hi) {
        return Err(SolverError::OutOfRange(if h_lo <= -1.0 { h_lo } else { h_hi }));
    }
    let mut entries = Vec::new();
    let mut logs = Vec::new();
    let zero = DVector::zeros(ctx.n_unknowns());
    let first = newton_solve(h_lo, ctx, &zero, cfg)?;
    logs.push((h_lo, first.history.clone()));
    entries.push(ContinuationEntry {
        h: h_lo,
        v: first.v,
        residual_norm: first.residual_norm,
        newton_iters: first.iters,
    });
    let mut h = h_lo;
    let mut step = cfg.h_step;
    while h < h_hi {
        let h_next = propose_next(h, step, h_hi, cfg);
        if h_next <= h {
            return Err(SolverError::ContinuationStalled(h));
        }
        let seed = &entries.last().unwrap().v;
        match newton_solve(h_next, ctx, seed, cfg) {
            Ok(out) => {
                logs.push((h_next, out.history.clone()));
                entries.push(ContinuationEntry {
                    h: h_next,
                    v: out.v,
                    residual_norm: out.residual_norm,
                    newton_iters: out.iters,
                });
                h = h_next;
                step = (step * 1.5).min(cfg.h_step);
            }
            Err(SolverError::NewtonDiverged { .. })
            | Err(SolverError::SingularLinearization(_)) => {
                step *= 0.5;
                if step < cfg.h_step_min {
                    return Err(SolverError::ContinuationStalled(h));
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(ContinuationResult { entries, anchors: format!("seeded v = 0 at H = {h_lo}"), logs })
}

/// Corrector solves at explicitly requested H values, each seeded from the
/// nearest continuation entry (never interpolated).
pub fn solve_at(
    requested: &[f64],
    result: &ContinuationResult,
    ctx: &CmcContext,
    cfg: &SolverConfig,
) -> Result<Vec<ContinuationEntry>> {
    let mut out = Vec::with_capacity(requested.len());
    for &h in requested {
        let seed = result.entry_nearest(h);
        let sol = newton_solve(h, ctx, &seed.v, cfg)?;
        out.push(ContinuationEntry {
            h,
            v: sol.v,
            residual_norm: sol.residual_norm,
            newton_iters: sol.iters,
        });
    }
    Ok(out)
}

/// Solution at a fixed interior H reached by ramping the deformation data up
/// from the umbilical configuration in equal steps; cross-checks the march
/// from the end anchor.
pub fn fuchsian_ramp_solve(
    ctx: &CmcContext,
    h: f64,
    ramp_steps: usize,
    cfg: &SolverConfig,
) -> Result<DVector<f64>> {
    let mut v = DVector::zeros(ctx.n_unknowns());
    for step in 1..=ramp_steps {
        let s = step as f64 / ramp_steps as f64;
        let scaled = match ctx {
            CmcContext::Disc(c) => {
                let eps = c.eps.ok_or_else(|| {
                    SolverError::Epstein(EpsteinError::NonImmersion {
                        z: Complex64::ZERO,
                        detail: "ramp ladder needs a cubic developing map".into(),
                    })
                })?;
                CmcContext::Disc(c.with_eps(eps * s)?)
            }
            CmcContext::Closed(c) => CmcContext::Closed(c.with_phi_scale(s)?),
        };
        v = newton_solve(h, &scaled, &v, cfg)?.v;
    }
    Ok(v)
}

// ---------------------------------------------------------------------------
// Geometric cross-check (disc mode)

/// Log-density of `e^{2u} h0` with `u` given by a local polynomial fit.
struct FittedEta {
    center: Complex64,
    poly: Poly2,
}

impl LogDensity for FittedEta {
    fn jet(&self, z: Complex64) -> crate::conformal::Result<crate::conformal::EtaJet> {
        let s = 1.0 - z.norm_sqr();
        let zb = z.conj();
        let d = z - self.center;
        let (u, ux, uy, uxx, uxy, uyy) = self.poly.jet(d.re, d.im);
        Ok(crate::conformal::EtaJet {
            eta: (2.0 / s).ln() + u,
            eta_z: zb / s + 0.5 * Complex64::new(ux, -uy),
            eta_zz: zb * zb / (s * s) + 0.25 * Complex64::new(uxx - uyy, -2.0 * uxy),
            eta_lap: 4.0 / (s * s) + uxx + uyy,
        })
    }
}

#[derive(Debug, Clone)]
pub struct GeomCheckReport {
    pub max_deviation: f64,
    pub samples: Vec<(Complex64, f64)>,
}

impl DiscContext {
    /// Analytic metric `e^{2u} h0` with `u` fitted locally around `center`
    /// from the solved field (degree-4 fit over the nearby grid nodes).
    pub fn fitted_metric(
        &self,
        u: &DVector<f64>,
        center: Complex64,
        fit_radius: f64,
    ) -> Result<ConformalMetric> {
        let mut samples = Vec::new();
        for (i, &z) in self.z.iter().enumerate() {
            let d = z - center;
            if d.norm() <= fit_radius {
                samples.push((d.re, d.im, u[i]));
            }
        }
        let poly = fit_poly2(&samples, 4).ok_or_else(|| {
            SolverError::Mesh(MeshError::SolverFailure(format!(
                "local fit around {center} has only {} samples",
                samples.len()
            )))
        })?;
        Ok(ConformalMetric::from_log_density(
            Chart::unit_disc(),
            Arc::new(FittedEta { center, poly }),
        ))
    }

    pub fn default_fit_radius(&self) -> f64 {
        4.5 * self.h_r
    }

    /// Samples the Epstein surface of `e^{2u} h0` through the developing map
    /// on an interior polar subgrid and reports the worst deviation of the
    /// finite-difference mean curvature from the target `h`.
    pub fn geometric_mean_curvature_check(
        &self,
        h: f64,
        u: &DVector<f64>,
        fd_step: f64,
        sample_count: usize,
    ) -> Result<GeomCheckReport> {
        let fit_radius = self.default_fit_radius();
        let r_max = 0.55 * self.grid.radius;
        let mut samples = Vec::new();
        let mut max_dev: f64 = 0.0;
        let rings = 3.max(sample_count / 8);
        for jr in 1..=rings {
            let r = r_max * jr as f64 / rings as f64;
            for ka in 0..8 {
                let theta = 2.0 * std::f64::consts::PI * (ka as f64 + 0.37) / 8.0;
                let z = Complex64::from_polar(r, theta);
                let metric = self.fitted_metric(u, z, fit_radius)?;
                let sampler = |w: Complex64| epstein_chart(&self.f, &metric, w);
                let s = fd_geometry_oriented(&sampler, z, fd_step, self.f.f(z))?;
                let dev = (s.mean_curv - h).abs();
                max_dev = max_dev.max(dev);
                samples.push((z, s.mean_curv));
            }
        }
        Ok(GeomCheckReport { max_deviation: max_dev, samples })
    }
}

/// Discrete mean-curvature-equation residual before the change of
/// variables: the cross-multiplied form of `H(Eps) = H` evaluated at
/// `u = v - log_scale(H)`. Vanishes exactly where the renormalized residual
/// vanishes; the two are related by the fixed factor `-2(1+H)/(1-H)^2`.
pub fn residual_mean_curvature_equation(
    ctx: &CmcContext,
    h: f64,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    if h.abs() >= 1.0 {
        return Err(SolverError::OutOfRange(h));
    }
    let k = ctx.curvature_field(u);
    let w = ctx.w_field(u);
    Ok(DVector::from_fn(u.len(), |i, _| {
        let n = w[i];
        k[i] * k[i] - 1.0 - 16.0 * n - h * ((k[i] - 1.0) * (k[i] - 1.0) - 16.0 * n)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::FundamentalDomain;
    use rand::Rng;
    use rand::SeedableRng;

    fn small_disc_ctx(eps: f64) -> CmcContext {
        CmcContext::Disc(
            DiscContext::new_cubic(DiscGrid { n_r: 12, n_theta: 24, radius: 0.8 }, eps).unwrap(),
        )
    }

    fn small_mesh_ctx(amp: f64) -> CmcContext {
        let mesh = Arc::new(SurfaceMesh::build(&FundamentalDomain::regular_octagon(), 4).unwrap());
        let phi = QDField::from_generator(&mesh, &move |z: Complex64| {
            let s2 = 2.0 * 0.25 * 0.25;
            amp * z * z * (-z.norm_sqr() / s2).exp()
        });
        CmcContext::Closed(ClosedContext::new(mesh, phi).unwrap())
    }

    #[test]
    fn anchor_residual_vanishes_for_all_h() {
        for ctx in [small_disc_ctx(0.0), small_mesh_ctx(0.0)] {
            let zero = DVector::zeros(ctx.n_unknowns());
            for k in 0..=20 {
                let h = -1.0 + 1.99 * k as f64 / 20.0;
                let g = ctx.residual_g(h, &zero).unwrap();
                assert!(g.amax() < 1e-13, "mode {}, H = {h}: {}", ctx.mode_name(), g.amax());
            }
        }
    }

    #[test]
    fn anchor_linearization_matches_reference_operator() {
        for ctx in [small_disc_ctx(0.0), small_mesh_ctx(0.0)] {
            let n = ctx.n_unknowns();
            let zero = DVector::zeros(n);
            let lapm = ctx.lap_matrix();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(101);
            for &h in &[-1.0, -0.5, 0.3, 0.9] {
                let l = ctx.linearize_g(h, &zero).unwrap();
                let w = DVector::from_fn(n, |i, _| {
                    let z = ctx.positions()[i];
                    (1.0 + z.re).sin() * (0.7 + z.im).cos() + 0.1 * rng.gen_range(-1.0..1.0)
                });
                let lw = &l * &w;
                let reference = (1.0 - h) * (2.0 * &w - &lapm * &w);
                let err = (&lw - &reference).amax() / reference.amax();
                assert!(err < 1e-10, "mode {}, H = {h}: rel err {err:.3e}", ctx.mode_name());
            }
        }
    }

    #[test]
    fn linearization_is_consistent_with_directional_quotients() {
        let ctx = small_disc_ctx(0.05);
        let n = ctx.n_unknowns();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(103);
        let v = DVector::from_fn(n, |i, _| {
            let z = ctx.positions()[i];
            0.05 * (2.0 * z.re).cos() * (1.5 * z.im).sin()
        });
        let w = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let h = 0.4;
        let l = ctx.linearize_g(h, &v).unwrap();
        let lw = &l * &w;
        let g0 = ctx.residual_g(h, &v).unwrap();
        let mut errs = Vec::new();
        for &eps in &[1e-4, 1e-5, 1e-6] {
            let g1 = ctx.residual_g(h, &(&v + eps * &w)).unwrap();
            let quotient = (&g1 - &g0) / eps;
            errs.push((&quotient - &lw).amax() / lw.amax());
        }
        assert!(errs[1] < 0.3 * errs[0], "forward-quotient errors {errs:?}");
        assert!(errs[2] < 0.3 * errs[1], "forward-quotient errors {errs:?}");
    }

    #[test]
    fn newton_recovers_the_flat_solution_quadratically() {
        let ctx = small_disc_ctx(0.0);
        let n = ctx.n_unknowns();
        let cfg = SolverConfig::default();
        // A gentle bump: sharp spikes of the same amplitude carry their
        // curvature field across the other branch of the pointwise quadratic
        // (K = (1-H)/(1+H)), which is a genuine second root of the equation,
        // not a solver artifact.
        let v0 = DVector::from_fn(n, |i, _| {
            let z = ctx.positions()[i];
            0.05 * (-(z - Complex64::new(0.2, 0.1)).norm_sqr() / 0.5).exp()
        });
        let out = newton_solve(0.3, &ctx, &v0, &cfg).unwrap();
        assert!(out.v.amax() < 1e-9, "limit {}", out.v.amax());
        assert!(out.residual_norm < cfg.newton_tol);
        // Quadratic convergence: r_{k+1} / r_k^2 stays bounded over the
        // decreasing phase.
        let h = &out.history;
        assert!(h.len() >= 3);
        for k in 0..h.len() - 1 {
            if h[k] > 1e-13 && h[k + 1] > 1e-15 {
                let ratio = h[k + 1] / (h[k] * h[k]);
                assert!(ratio < 100.0, "history {h:?}");
            }
        }
    }

    #[test]
    fn newton_refuses_the_degenerate_endpoint() {
        let ctx = small_disc_ctx(0.0);
        let v0 = DVector::from_element(ctx.n_unknowns(), 0.01);
        match newton_solve(1.0, &ctx, &v0, &SolverConfig::default()) {
            Err(SolverError::SingularLinearization(_)) => {}
            other => panic!("expected SingularLinearization, got {other:?}"),
        }
    }

    #[test]
    fn change_of_variables_round_trip_and_tau_relation() {
        let ctx = small_disc_ctx(0.0);
        let n = ctx.n_unknowns();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(107);
        let v = DVector::from_fn(n, |_, _| rng.gen_range(-0.5..0.5));
        for &h in &[0.0, 0.5, -0.7] {
            let u = u_from_v(h, &v).unwrap();
            let back = v_from_u(h, &u).unwrap();
            assert!((&back - &v).amax() < 1e-15);
            if h == 0.0 {
                assert!((&u - &v).amax() < 1e-15);
            }
            // e^{2v} = (1+H)/(1-H) e^{2u} pointwise.
            let c = (1.0 + h) / (1.0 - h);
            for i in 0..n {
                let lhs = (2.0 * v[i]).exp();
                let rhs = c * (2.0 * u[i]).exp();
                assert!((lhs - rhs).abs() < 1e-12 * lhs.max(1.0));
            }
        }
        let u = u_from_v(0.5, &v).unwrap();
        assert!((u[0] - (v[0] - 0.5 * 3.0f64.ln())).abs() < 1e-15);
        assert!(u_from_v(1.0, &v).is_err());
    }

    #[test]
    fn renormalized_and_raw_residuals_share_zero_sets() {
        // On the closed surface the identity E_us = -2(1+H)/(1-H)^2 G holds
        // at every node (no artificial boundary); on the disc grid the
        // zero-Dirichlet extension encodes v-type decay, so the u-form
        // residual is comparable away from the rim stencils only.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(109);
        for (ctx, interior_only) in [(small_mesh_ctx(0.3), false), (small_disc_ctx(0.02), true)] {
            let n = ctx.n_unknowns();
            for _ in 0..3 {
                let h: f64 = rng.gen_range(-0.8..0.8);
                let v = DVector::from_fn(n, |i, _| {
                    let z = ctx.positions()[i];
                    0.1 * (3.0 * z.re).sin() * (2.0 * z.im).cos() + 0.02 * rng.gen_range(-1.0..1.0)
                });
                let g = ctx.residual_g(h, &v).unwrap();
                let u = u_from_v(h, &v).unwrap();
                let e_us = residual_mean_curvature_equation(&ctx, h, &u).unwrap();
                let factor = -2.0 * (1.0 + h) / ((1.0 - h) * (1.0 - h));
                let interior_cut = match &ctx {
                    CmcContext::Disc(c) => c.grid.radius - 3.5 * c.h_r,
                    CmcContext::Closed(_) => f64::INFINITY,
                };
                for i in 0..n {
                    if interior_only && ctx.positions()[i].norm() > interior_cut {
                        continue;
                    }
                    let err = (e_us[i] - factor * g[i]).abs();
                    assert!(
                        err < 1e-9 * e_us[i].abs().max(1.0),
                        "mode {}, i = {i}: {err:.3e}",
                        ctx.mode_name()
                    );
                }
            }
        }
    }

    #[test]
    fn continuation_reproduces_the_closed_form_family() {
        let ctx = small_disc_ctx(0.0);
        let cfg = SolverConfig::default();
        let res = continuation((-0.99, 0.99), &ctx, &cfg).unwrap();
        assert!(res.entries.len() > 10);
        for pair in res.entries.windows(2) {
            assert!(pair[1].h > pair[0].h);
        }
        for e in &res.entries {
            assert!(e.residual_norm < cfg.newton_tol);
            assert!(e.v.amax() < 1e-10, "H = {}: |v| = {}", e.h, e.v.amax());
            let u = u_from_v(e.h, &e.v).unwrap();
            let exact = -0.5 * ((1.0 + e.h) / (1.0 - e.h)).ln();
            assert!((u[0] - exact).abs() < 1e-10);
        }
    }

    #[test]
    fn continuation_rejects_endpoint_ranges() {
        let ctx = small_disc_ctx(0.0);
        match continuation((-0.5, 1.0), &ctx, &SolverConfig::default()) {
            Err(SolverError::OutOfRange(_)) => {}
            other => panic!("expected OutOfRange, got {other:?}"),
        }
    }

    #[test]
    fn small_phi_continuation_completes_in_both_modes() {
        let cfg = SolverConfig::default();
        for ctx in [small_disc_ctx(0.01), small_mesh_ctx(0.3)] {
            let res = continuation((-0.9, 0.9), &ctx, &cfg)
                .unwrap_or_else(|e| panic!("{} continuation failed: {e}", ctx.mode_name()));
            for e in &res.entries {
                assert!(
                    e.residual_norm < 1e-11,
                    "mode {}: {}",
                    ctx.mode_name(),
                    e.residual_norm
                );
            }
            // u decreases pointwise in H (monotone family proxy).
            for pair in res.entries.windows(2) {
                let u0 = u_from_v(pair[0].h, &pair[0].v).unwrap();
                let u1 = u_from_v(pair[1].h, &pair[1].v).unwrap();
                for i in 0..u0.len() {
                    assert!(u1[i] < u0[i], "mode {}: node {i}", ctx.mode_name());
                }
            }
        }
    }

    #[test]
    fn reseeded_solutions_are_locally_unique() {
        let ctx = small_disc_ctx(0.01);
        let cfg = SolverConfig::default();
        let res = continuation((-0.3, 0.3), &ctx, &cfg).unwrap();
        let e = res.entry_nearest(0.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(113);
        // Smooth random perturbations of sup-norm 1e-3; grid-scale noise of
        // the same amplitude has O(1e-3 / h^2) discrete curvature and lands
        // outside every root's basin.
        let (a, b, c) = (
            rng.gen_range(1.0..3.0),
            rng.gen_range(1.0..3.0),
            rng.gen_range(-1.0..1.0),
        );
        let perturbed = DVector::from_fn(e.v.len(), |i, _| {
            let z = ctx.positions()[i];
            e.v[i] + 1e-3 * (a * z.re + c).sin() * (b * z.im).cos()
        });
        let out = newton_solve(e.h, &ctx, &perturbed, &cfg).unwrap();
        assert!((&out.v - &e.v).amax() < 1e-8, "mismatch {:.3e}", (&out.v - &e.v).amax());
    }

    #[test]
    fn fuchsian_ramp_crosschecks_the_end_march() {
        let ctx = small_disc_ctx(0.01);
        let cfg = SolverConfig::default();
        let res = continuation((-0.5, 0.5), &ctx, &cfg).unwrap();
        let marched = solve_at(&[0.25], &res, &ctx, &cfg).unwrap();
        let ramped = fuchsian_ramp_solve(&ctx, 0.25, 4, &cfg).unwrap();
        assert!((&marched[0].v - &ramped).amax() < 1e-8);
    }

    #[test]
    fn geometric_check_on_the_umbilical_anchor() {
        let disc =
            DiscContext::new_cubic(DiscGrid { n_r: 12, n_theta: 24, radius: 0.8 }, 0.0).unwrap();
        let h = 0.5f64;
        let u0 = -0.5 * ((1.0 + h) / (1.0 - h)).ln();
        let u = DVector::from_element(disc.n_unknowns(), u0);
        let report = disc.geometric_mean_curvature_check(h, &u, 1e-3, 24).unwrap();
        assert!(report.max_deviation < 1e-4, "deviation {}", report.max_deviation);
    }

    #[test]
    fn geometric_check_on_a_perturbed_solve() {
        let disc =
            DiscContext::new_cubic(DiscGrid { n_r: 16, n_theta: 32, radius: 0.85 }, 0.01).unwrap();
        let ctx = CmcContext::Disc(disc);
        let cfg = SolverConfig::default();
        let res = continuation((-0.5, 0.5), &ctx, &cfg).unwrap();
        let entry = solve_at(&[0.5], &res, &ctx, &cfg).unwrap().remove(0);
        let u = u_from_v(0.5, &entry.v).unwrap();
        let disc = match &ctx {
            CmcContext::Disc(d) => d,
            _ => unreachable!(),
        };
        let report = disc.geometric_mean_curvature_check(0.5, &u, 1e-3, 24).unwrap();
        assert!(report.max_deviation < 5e-4, "deviation {}", report.max_deviation);
        // Halving the FD step improves the agreement.
        let report2 = disc.geometric_mean_curvature_check(0.5, &u, 5e-4, 24).unwrap();
        assert!(
            report2.max_deviation < report.max_deviation / 1.5,
            "step halving: {} -> {}",
            report.max_deviation,
            report2.max_deviation
        );
    }
}
