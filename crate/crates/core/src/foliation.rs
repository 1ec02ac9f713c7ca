//! Foliation assembly and the geometric verification layer: the equidistant
//! mean-curvature law, integrated envelope bounds, leaf monotonicity and
//! disjointness windows, and principal-curvature flags.
//!
//! Conventions: the signed distance r from a leaf increases with the mean
//! curvature (equidistants on the positive side have strictly larger H), so
//! the measured signed distance of leaf H' from leaf H carries the sign of
//! H' - H. Principal curvatures of an equidistant at distance r are
//! `tanh(mu_i + r)` with `mu_i = artanh(lambda_i)` on the base leaf.

use nalgebra::DVector;
use num_complex::Complex64;
use thiserror::Error;

use crate::epstein::{fd_geometry_oriented, EpsteinError, EpsteinSample};
use crate::moebius::{hyperbolic_distance, H3Point};
use crate::numerics::{nelder_mead2, Pchip};
use crate::solver::{u_from_v, ContinuationEntry, DiscContext, SolverError};

#[derive(Debug, Error)]
pub enum FoliationError {
    #[error("leaf at H = {h} has non-constant sampled mean curvature (spread {spread:.3e})")]
    NonConstantH { h: f64, spread: f64 },
    #[error("need at least two leaves, found {0}")]
    TooFewLeaves(usize),
    #[error("principal curvature {0} outside (-1, 1); no equidistant envelope")]
    PrincipalOutOfRange(f64),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Epstein(#[from] EpsteinError),
}

pub type Result<T> = std::result::Result<T, FoliationError>;

/// Samples are flagged when a principal curvature leaves the open interval
/// (-1, 1) by more than FD noise; umbilical boundary cases (horospheres, at
/// exactly 1) land outside this margin and are reported.
pub const PRINCIPAL_FLAG_MARGIN: f64 = 1e-4;

/// Mean curvature of the equidistant surface at signed distance `r` from a
/// point with principal curvatures `tanh(mu1), tanh(mu2)`:
/// `(tanh(mu1 + r) + tanh(mu2 + r)) / 2`.
pub fn equidistant_mean_curvature(mu1: f64, mu2: f64, r: f64) -> f64 {
    0.5 * ((mu1 + r).tanh() + (mu2 + r).tanh())
}

/// One leaf of a foliation: the solved conformal factor and, in disc mode,
/// its sampled Epstein geometry.
#[derive(Debug, Clone)]
pub struct Leaf {
    pub h: f64,
    pub u: DVector<f64>,
    pub residual_norm: f64,
    pub samples: Vec<EpsteinSample>,
}

/// A family of leaves ordered by mean curvature.
#[derive(Debug, Clone)]
pub struct Foliation {
    pub leaves: Vec<Leaf>,
}

/// Envelope functions `f-` and `f+` sandwiching the mean curvature of every
/// equidistant: `f-(r) <= H_p(r) <= f+(r)` for all r, both strictly
/// increasing with `f(0) = H`. Inverses are taken by monotone cubic
/// interpolation.
pub struct FBounds {
    pub f_minus: Pchip,
    pub f_plus: Pchip,
}

/// Integrated envelopes from the per-point principal data `(mu1, mu2)` of a
/// constant-H leaf. The integrand of `f+` is the pointwise maximum of
/// `dH_p/dr` on r > 0 and the minimum on r < 0 (and conversely for `f-`),
/// which keeps the sandwich valid on both sides of the leaf.
pub fn f_bounds(principal: &[(f64, f64)], h: f64, r_max: f64, n_grid: usize) -> Result<FBounds> {
    assert!(r_max > 0.0 && n_grid >= 8);
    let rate = |mu: (f64, f64), r: f64| {
        let s1 = 1.0 / (mu.0 + r).cosh();
        let s2 = 1.0 / (mu.1 + r).cosh();
        0.5 * (s1 * s1 + s2 * s2)
    };
    let g_bounds = |r: f64| {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &mu in principal {
            let d = rate(mu, r);
            lo = lo.min(d);
            hi = hi.max(d);
        }
        (lo, hi)
    };
    let n = n_grid;
    let dr = r_max / n as f64;
    let mut rs = Vec::with_capacity(2 * n + 1);
    for k in -(n as i64)..=(n as i64) {
        rs.push(k as f64 * dr);
    }
    let mut f_minus = vec![0.0; rs.len()];
    let mut f_plus = vec![0.0; rs.len()];
    let mid = n;
    f_minus[mid] = h;
    f_plus[mid] = h;
    // March outward with trapezoidal accumulation.
    for k in mid..rs.len() - 1 {
        let (lo0, hi0) = g_bounds(rs[k]);
        let (lo1, hi1) = g_bounds(rs[k + 1]);
        f_minus[k + 1] = f_minus[k] + 0.5 * dr * (lo0 + lo1);
        f_plus[k + 1] = f_plus[k] + 0.5 * dr * (hi0 + hi1);
    }
    for k in (1..=mid).rev() {
        let (lo0, hi0) = g_bounds(rs[k]);
        let (lo1, hi1) = g_bounds(rs[k - 1]);
        // Going left, f- sheds the larger rate and f+ the smaller one.
        f_minus[k - 1] = f_minus[k] - 0.5 * dr * (hi0 + hi1);
        f_plus[k - 1] = f_plus[k] - 0.5 * dr * (lo0 + lo1);
    }
    Ok(FBounds {
        f_minus: Pchip::new(rs.clone(), f_minus),
        f_plus: Pchip::new(rs, f_plus),
    })
}

/// Extracts `(mu1, mu2) = (artanh lambda1, artanh lambda2)` from a leaf's
/// samples, verifying constant mean curvature and small principal
/// curvatures.
pub fn principal_parameters(leaf: &Leaf) -> Result<Vec<(f64, f64)>> {
    let mut spread: f64 = 0.0;
    let mut out = Vec::with_capacity(leaf.samples.len());
    for s in &leaf.samples {
        spread = spread.max((s.mean_curv - leaf.h).abs());
        for lam in [s.principal.0, s.principal.1] {
            if lam.abs() >= 1.0 {
                return Err(FoliationError::PrincipalOutOfRange(lam));
            }
        }
        out.push((s.principal.0.atanh(), s.principal.1.atanh()));
    }
    // The leaf must actually be CMC before an equidistant analysis makes
    // sense; FD noise allows a small spread.
    if spread > 1e-4 {
        return Err(FoliationError::NonConstantH { h: leaf.h, spread });
    }
    Ok(out)
}

/// Full report of the foliation checks.
#[derive(Debug, Clone)]
pub struct FoliationReport {
    /// Strict pointwise monotonicity of u across consecutive leaves.
    pub monotone: bool,
    /// Leaves arrive strictly ordered by H.
    pub ordering_ok: bool,
    /// Smallest measured hyperbolic gap between consecutive leaves (disc
    /// mode with samples only).
    pub min_leaf_gap: Option<f64>,
    /// Global principal-curvature range over all sampled leaves.
    pub principal_range: Option<(f64, f64)>,
    /// Number of samples with a principal curvature outside the open
    /// interval (-1, 1) at the flag margin.
    pub principal_flags: usize,
    /// Worst violation of the disjointness window
    /// `[f+^{-1}(H'), f-^{-1}(H')]` across consecutive pairs; zero when all
    /// measured distances sit inside.
    pub window_violation: Option<f64>,
    /// Sampled leaf pairs closer than the resolution tolerance.
    pub intersection_flags: usize,
    pub per_leaf: Vec<LeafDiagnostics>,
}

#[derive(Debug, Clone)]
pub struct LeafDiagnostics {
    pub h: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub max_residual: f64,
    pub gap_to_previous: Option<f64>,
}

impl Foliation {
    /// Builds disc-mode leaves from continuation entries: converts v to u
    /// and samples the Epstein geometry on an interior polar subgrid.
    pub fn assemble_disc(
        disc: &DiscContext,
        entries: &[ContinuationEntry],
        fd_step: f64,
        sample_rings: usize,
    ) -> Result<Foliation> {
        let mut leaves = Vec::with_capacity(entries.len());
        for e in entries {
            let u = u_from_v(e.h, &e.v)?;
            let samples = sample_leaf(disc, &u, fd_step, sample_rings)?;
            leaves.push(Leaf { h: e.h, u, residual_norm: e.residual_norm, samples });
        }
        Ok(Foliation { leaves })
    }

    /// Closed-surface leaves carry the conformal factor only; the signed
    /// distance function needs the ambient quotient and is out of reach of
    /// the mesh model.
    pub fn assemble_closed(entries: &[ContinuationEntry]) -> Result<Foliation> {
        let mut leaves = Vec::with_capacity(entries.len());
        for e in entries {
            let u = u_from_v(e.h, &e.v)?;
            leaves.push(Leaf { h: e.h, u, residual_norm: e.residual_norm, samples: Vec::new() });
        }
        Ok(Foliation { leaves })
    }

    /// Monotonicity, disjointness windows, and gap measurements. Failures
    /// are reported, never panicked: a violated window is data.
    ///
    /// `disc` supplies the leaf surfaces for distance measurements; pass
    /// `None` in closed-surface mode to run the conformal-factor checks
    /// only. The window check allows `10 * fd_step` of sampling slack.
    pub fn monotonicity_check(
        &self,
        disc: Option<&DiscContext>,
        fd_step: f64,
    ) -> Result<FoliationReport> {
        if self.leaves.len() < 2 {
            return Err(FoliationError::TooFewLeaves(self.leaves.len()));
        }
        let ordering_ok = self.leaves.windows(2).all(|p| p[1].h > p[0].h);
        let mut monotone = ordering_ok;
        for pair in self.leaves.windows(2) {
            for i in 0..pair[0].u.len() {
                if pair[1].u[i] >= pair[0].u[i] {
                    monotone = false;
                }
            }
        }
        let mut min_gap: Option<f64> = None;
        let mut window_violation: Option<f64> = None;
        let mut intersections = 0usize;
        if let Some(disc) = disc {
            if ordering_ok {
                let tol = 10.0 * fd_step;
                let mut worst = 0.0f64;
                for pair in self.leaves.windows(2) {
                    let (base, upper) = (&pair[0], &pair[1]);
                    let mus = principal_parameters(base)?;
                    let r_reach =
                        1.5 * (atanh_clamped(upper.h) - atanh_clamped(base.h)).abs() + 0.5;
                    let bounds = f_bounds(&mus, base.h, r_reach, 400)?;
                    let lo = bounds.f_plus.inverse(upper.h);
                    let hi = bounds.f_minus.inverse(upper.h);
                    for s in &upper.samples {
                        let d = leaf_distance(disc, &base.u, &s.point, s.z)?;
                        if d < 1e-9 {
                            intersections += 1;
                        }
                        min_gap = Some(min_gap.map_or(d, |g: f64| g.min(d)));
                        // Signed distance: positive toward larger H.
                        let r = d * (upper.h - base.h).signum();
                        if let (Some(lo), Some(hi)) = (lo, hi) {
                            let viol = (lo - tol - r).max(r - (hi + tol)).max(0.0);
                            worst = worst.max(viol);
                        }
                    }
                }
                window_violation = Some(worst);
            }
        }
        let (principal_range, principal_flags) = self.principal_summary();
        let per_leaf = self.per_leaf_diagnostics(disc)?;
        Ok(FoliationReport {
            monotone,
            ordering_ok,
            min_leaf_gap: min_gap,
            principal_range,
            principal_flags,
            window_violation,
            intersection_flags: intersections,
            per_leaf,
        })
    }

    /// Principal-curvature report over all sampled leaves: the global range
    /// and the count of samples outside the open interval (-1, 1).
    pub fn principal_curvature_check(&self) -> FoliationReport {
        let (principal_range, principal_flags) = self.principal_summary();
        let per_leaf = self
            .leaves
            .iter()
            .map(|l| {
                let (lo, hi) = leaf_lambda_range(l);
                LeafDiagnostics {
                    h: l.h,
                    lambda_min: lo,
                    lambda_max: hi,
                    max_residual: l.residual_norm,
                    gap_to_previous: None,
                }
            })
            .collect();
        FoliationReport {
            monotone: true,
            ordering_ok: self.leaves.windows(2).all(|p| p[1].h > p[0].h),
            min_leaf_gap: None,
            principal_range,
            principal_flags,
            window_violation: None,
            intersection_flags: 0,
            per_leaf,
        }
    }

    fn principal_summary(&self) -> (Option<(f64, f64)>, usize) {
        let mut range: Option<(f64, f64)> = None;
        let mut flags = 0usize;
        for l in &self.leaves {
            for s in &l.samples {
                let (lo, hi) = s.principal;
                range = Some(match range {
                    None => (lo, hi),
                    Some((a, b)) => (a.min(lo), b.max(hi)),
                });
                if lo.abs() > 1.0 - PRINCIPAL_FLAG_MARGIN
                    || hi.abs() > 1.0 - PRINCIPAL_FLAG_MARGIN
                {
                    flags += 1;
                }
            }
        }
        (range, flags)
    }

    fn per_leaf_diagnostics(&self, disc: Option<&DiscContext>) -> Result<Vec<LeafDiagnostics>> {
        let mut out = Vec::with_capacity(self.leaves.len());
        for (i, l) in self.leaves.iter().enumerate() {
            let (lambda_min, lambda_max) = leaf_lambda_range(l);
            let gap = if i == 0 {
                None
            } else if let Some(disc) = disc {
                let prev = &self.leaves[i - 1];
                let mut g = f64::INFINITY;
                for s in l.samples.iter().take(8) {
                    g = g.min(leaf_distance(disc, &prev.u, &s.point, s.z)?);
                }
                if g.is_finite() {
                    Some(g)
                } else {
                    None
                }
            } else {
                None
            };
            out.push(LeafDiagnostics {
                h: l.h,
                lambda_min,
                lambda_max,
                max_residual: l.residual_norm,
                gap_to_previous: gap,
            });
        }
        Ok(out)
    }
}

fn leaf_lambda_range(l: &Leaf) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in &l.samples {
        lo = lo.min(s.principal.0);
        hi = hi.max(s.principal.1);
    }
    if l.samples.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (lo, hi)
    }
}

fn atanh_clamped(h: f64) -> f64 {
    h.clamp(-0.999999, 0.999999).atanh()
}

/// Epstein geometry of a leaf on an interior polar subgrid.
pub fn sample_leaf(
    disc: &DiscContext,
    u: &DVector<f64>,
    fd_step: f64,
    rings: usize,
) -> Result<Vec<EpsteinSample>> {
    let r_max = 0.5 * disc.grid.radius;
    let mut out = Vec::new();
    for jr in 1..=rings {
        let r = r_max * jr as f64 / rings as f64;
        for ka in 0..8 {
            let theta = 2.0 * std::f64::consts::PI * (ka as f64 + 0.29) / 8.0;
            let z = Complex64::from_polar(r, theta);
            let metric = disc.fitted_metric(u, z, disc.default_fit_radius())?;
            let sampler = |w: Complex64| crate::epstein::epstein_chart(&disc.f, &metric, w);
            out.push(fd_geometry_oriented(&sampler, z, fd_step, disc.f.f(z))?);
        }
    }
    Ok(out)
}

/// Hyperbolic distance from a point to the leaf surface of `u`, minimized
/// over the chart with a Nelder-Mead refinement seeded at `z_start`.
pub fn leaf_distance(
    disc: &DiscContext,
    u: &DVector<f64>,
    p: &H3Point,
    z_start: Complex64,
) -> Result<f64> {
    let r_cap = 0.8 * disc.grid.radius;
    let mut objective = |x: f64, y: f64| -> f64 {
        let w = Complex64::new(x, y);
        if w.norm() > r_cap {
            return 1e6 + w.norm();
        }
        let metric = match disc.fitted_metric(u, w, disc.default_fit_radius()) {
            Ok(m) => m,
            Err(_) => return 1e6,
        };
        match crate::epstein::epstein_chart(&disc.f, &metric, w) {
            Ok(q) => hyperbolic_distance(p, &q),
            Err(_) => 1e6,
        }
    };
    let (_, _, d) = nelder_mead2(&mut objective, (z_start.re, z_start.im), 0.02, 1e-10, 400);
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{continuation, solve_at, CmcContext, DiscGrid, SolverConfig};

    #[test]
    fn equidistant_law_values_and_symmetry() {
        assert!((equidistant_mean_curvature(0.3, 0.3, 0.0) - 0.3f64.tanh()).abs() < 1e-15);
        assert!(
            (equidistant_mean_curvature(0.0, 0.0, 0.4) - 0.4f64.tanh()).abs() < 1e-15,
            "matches the umbilical cap oracle tanh(0.4) = 0.379949..."
        );
        // Odd symmetry under (mu1, mu2, r) -> (-mu1, -mu2, -r).
        for &(m1, m2, r) in &[(0.2, -0.5, 1.3), (0.9, 0.1, -2.0)] {
            let a = equidistant_mean_curvature(m1, m2, r);
            let b = equidistant_mean_curvature(-m1, -m2, -r);
            assert!((a + b).abs() < 1e-15);
        }
        // Derivative in r lies in (0, 1).
        for k in 0..=60 {
            let r = -3.0 + 0.1 * k as f64;
            let d = (equidistant_mean_curvature(0.4, -0.2, r + 5e-7)
                - equidistant_mean_curvature(0.4, -0.2, r - 5e-7))
                / 1e-6;
            assert!(d > 0.0 && d < 1.0, "r = {r}: dH/dr = {d}");
        }
    }

    #[test]
    fn f_bounds_umbilical_family_collapses_to_tanh() {
        let mu = 0.25f64;
        let bounds = f_bounds(&[(mu, mu), (mu, mu)], mu.tanh(), 2.0, 600).unwrap();
        for &r in &[-1.5, -0.4, 0.0, 0.7, 1.8] {
            let exact = (mu + r).tanh();
            assert!((bounds.f_minus.eval(r) - exact).abs() < 1e-6);
            assert!((bounds.f_plus.eval(r) - exact).abs() < 1e-6);
        }
        // Inverse returns the distance to the target curvature.
        let target = (mu + 0.6).tanh();
        let back = bounds.f_plus.inverse(target).unwrap();
        assert!((back - 0.6).abs() < 1e-6);
    }

    #[test]
    fn f_bounds_sandwich_sampled_equidistants() {
        let mus = [(0.3, 0.1), (-0.2, 0.25), (0.05, -0.4)];
        let h = mus
            .iter()
            .map(|&(a, b): &(f64, f64)| 0.5 * (a.tanh() + b.tanh()))
            .sum::<f64>()
            / 3.0;
        let bounds = f_bounds(&mus, h, 2.5, 500).unwrap();
        for &mu in &mus {
            for k in 0..=50 {
                let r = -2.0 + 0.08 * k as f64;
                let hp = h + equidistant_mean_curvature(mu.0, mu.1, r)
                    - equidistant_mean_curvature(mu.0, mu.1, 0.0);
                // The envelopes bracket the accumulated change of any
                // member's mean curvature.
                let lo = bounds.f_minus.eval(r);
                let hi = bounds.f_plus.eval(r);
                // Slack covers the trapezoid accumulation error of the
                // envelopes (about dr^2 over the r-range).
                assert!(
                    hp >= lo - 1e-5 && hp <= hi + 1e-5,
                    "r = {r}: {lo} <= {hp} <= {hi}"
                );
            }
        }
        // Strictly increasing and f- <= f+.
        for k in 0..50 {
            let r0 = -2.0 + 0.08 * k as f64;
            let r1 = r0 + 0.08;
            assert!(bounds.f_minus.eval(r1) > bounds.f_minus.eval(r0));
            assert!(bounds.f_plus.eval(r1) > bounds.f_plus.eval(r0));
            assert!(bounds.f_minus.eval(r0) <= bounds.f_plus.eval(r0) + 1e-12);
        }
    }

    fn fuchsian_foliation(hs: &[f64]) -> (DiscContext, Foliation) {
        let disc =
            DiscContext::new_cubic(DiscGrid { n_r: 12, n_theta: 24, radius: 0.8 }, 0.0).unwrap();
        let ctx = CmcContext::Disc(disc);
        let cfg = SolverConfig::default();
        let res = continuation((hs[0], *hs.last().unwrap()), &ctx, &cfg).unwrap();
        let entries = solve_at(hs, &res, &ctx, &cfg).unwrap();
        let disc = match ctx {
            CmcContext::Disc(d) => d,
            _ => unreachable!(),
        };
        let fol = Foliation::assemble_disc(&disc, &entries, 1e-3, 2).unwrap();
        (disc, fol)
    }

    #[test]
    fn fuchsian_leaves_are_umbilical_at_their_h() {
        let (_, fol) = fuchsian_foliation(&[-0.4, 0.0, 0.4]);
        for leaf in &fol.leaves {
            for s in &leaf.samples {
                assert!((s.mean_curv - leaf.h).abs() < 1e-4);
                assert!((s.principal.1 - s.principal.0).abs() < 1e-5, "umbilical");
            }
        }
    }

    #[test]
    fn fuchsian_gaps_reproduce_artanh_differences() {
        let (disc, fol) = fuchsian_foliation(&[0.1, 0.3]);
        let exact = 0.3f64.atanh() - 0.1f64.atanh();
        for s in fol.leaves[1].samples.iter().take(6) {
            let d = leaf_distance(&disc, &fol.leaves[0].u, &s.point, s.z).unwrap();
            assert!((d - exact).abs() < 1e-6, "measured {d}, exact {exact}");
        }
    }

    #[test]
    fn monotonicity_check_on_the_fuchsian_family() {
        let (disc, fol) = fuchsian_foliation(&[-0.3, 0.0, 0.3]);
        let report = fol.monotonicity_check(Some(&disc), 1e-3).unwrap();
        assert!(report.ordering_ok && report.monotone);
        assert_eq!(report.intersection_flags, 0);
        assert_eq!(report.principal_flags, 0);
        assert!(report.window_violation.unwrap() == 0.0);
        let gap = report.min_leaf_gap.unwrap();
        let exact = 0.3f64.atanh();
        assert!((gap - exact).abs() < 1e-5, "gap {gap} vs {exact}");
        if let Some((lo, hi)) = report.principal_range {
            assert!(lo > -1.0 && hi < 1.0);
        }
    }

    #[test]
    fn shuffled_family_is_flagged_non_monotone() {
        let (disc, fol) = fuchsian_foliation(&[-0.3, 0.0, 0.3]);
        let mut shuffled = fol.clone();
        shuffled.leaves.swap(0, 2);
        let report = shuffled.monotonicity_check(Some(&disc), 1e-3).unwrap();
        assert!(!report.ordering_ok);
        assert!(!report.monotone);
    }

    #[test]
    fn horosphere_like_leaf_is_flagged() {
        // A leaf with principal curvatures at the boundary of (-1, 1) must
        // be flagged by the tolerance rule; build a doctored sample.
        let (_, fol) = fuchsian_foliation(&[-0.2, 0.2]);
        let mut doctored = fol.clone();
        for s in &mut doctored.leaves[1].samples {
            s.principal = (0.999995, 1.000003);
        }
        let report = doctored.principal_curvature_check();
        assert!(report.principal_flags > 0);
    }
}
