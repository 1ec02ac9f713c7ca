//! Shared validation suites: one function per acceptance area, producing
//! structured pass/fail results with the measured quantity and its frozen
//! threshold. The acceptance test target asserts on these; the command-line
//! `validate` command prints them as a table.

use std::sync::Arc;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conformal::{
    b_tensor, pullback_metric, qd_norm, schwarzian, schwarzian_tensor, Chart, ConformalMetric,
    HoloMap, Perturbation, QuadDifferential,
};
use crate::epstein::{
    epstein_chart, fd_geometry, fd_geometry_oriented, mean_curvature_formula,
    visual_defining_residual,
};
use crate::foliation::{leaf_distance, Foliation};
use crate::mesh::{FundamentalDomain, QDField, SurfaceMesh};
use crate::moebius::MoebiusMap;
use crate::solver::{
    continuation, newton_solve, solve_at, u_from_v, ClosedContext, CmcContext, DiscContext,
    DiscGrid, SolverConfig, SolverError,
};

/// Frozen validation thresholds.
pub mod tolerances {
    /// Schwarzian and tensor identities on randomized analytic inputs.
    pub const SCHWARZIAN_RESIDUAL: f64 = 1e-9;
    /// Epstein defining property on randomized perturbed disc metrics.
    pub const DEFINING_PERTURBED: f64 = 1e-7;
    /// Epstein defining property on the spherical and Poincaré closed forms.
    pub const DEFINING_CLOSED_FORM: f64 = 1e-10;
    /// Mean-curvature cross-oracle at FD step 1e-3.
    pub const CROSS_ORACLE: f64 = 1e-4;
    /// Minimal observed convergence order of the cross-oracle under step
    /// refinement.
    pub const CROSS_ORACLE_ORDER: f64 = 1.8;
    /// Helmholtz manufactured-solution round trip.
    pub const HELMHOLTZ_ROUNDTRIP: f64 = 1e-9;
    /// Relative Gauss-Bonnet area defect at subdivision 3.
    pub const AREA_RELATIVE: f64 = 5e-3;
    /// Anchor residual `G(H, phi = 0, v = 0)` in floating point.
    pub const ANCHOR_RESIDUAL: f64 = 1e-13;
    /// Relative operator-application error of the anchor linearization
    /// against `(1 - H)(2 id - lap)`.
    pub const ANCHOR_OPERATOR: f64 = 1e-10;
    /// Sup-norm of the recovered flat solution after Newton.
    pub const NEWTON_RECOVERY: f64 = 1e-9;
    /// Agreement of the continued family with the closed form
    /// `u(H) = -(1/2) log((1+H)/(1-H))` at `phi = 0`.
    pub const CONTINUATION_CLOSED_FORM: f64 = 1e-10;
    /// Residual bound for the small-deformation continuation runs.
    pub const SMALL_PHI_RESIDUAL: f64 = 1e-11;
    /// Fuchsian leaf gaps against `|artanh H - artanh H'|`.
    pub const FUCHSIAN_GAP: f64 = 1e-6;
    /// Equivariance tolerance for sampled quadratic-differential data.
    pub const QD_EQUIVARIANCE: f64 = 1e-6;
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
    pub note: String,
}

impl CheckResult {
    fn below(name: &str, measured: f64, threshold: f64, note: &str) -> CheckResult {
        CheckResult {
            name: name.into(),
            passed: measured < threshold && measured.is_finite(),
            measured,
            threshold,
            note: note.into(),
        }
    }

    fn at_least(name: &str, measured: f64, threshold: f64, note: &str) -> CheckResult {
        CheckResult {
            name: name.into(),
            passed: measured >= threshold && measured.is_finite(),
            measured,
            threshold,
            note: note.into(),
        }
    }

    fn flag(name: &str, ok: bool, note: &str) -> CheckResult {
        CheckResult {
            name: name.into(),
            passed: ok,
            measured: if ok { 1.0 } else { 0.0 },
            threshold: 1.0,
            note: note.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ValidateOptions {
    pub seed: u64,
    /// FD step of the geometric oracle; the cross-oracle bound is calibrated
    /// for 1e-3 and genuinely fails at coarse steps.
    pub fd_step: f64,
    pub subdiv: usize,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions { seed: 12345, fd_step: 1e-3, subdiv: 3 }
    }
}

/// Runs every acceptance suite in order.
pub fn run_all(opts: &ValidateOptions) -> Vec<CheckResult> {
    let mut out = Vec::new();
    out.extend(schwarzian_suite(opts.seed));
    out.extend(epstein_defining_suite(opts.seed + 1));
    out.extend(cross_oracle_suite(opts.fd_step, opts.seed + 2));
    out.extend(mesh_suite(opts.subdiv));
    out.extend(anchor_suite());
    out.extend(newton_continuation_suite());
    out.extend(foliation_suite(opts.fd_step));
    out.extend(negative_controls_suite());
    out
}

fn random_perturbation(rng: &mut ChaCha8Rng) -> Perturbation {
    let mut holo = Vec::new();
    for p in 2..=4u32 {
        holo.push((
            Complex64::new(rng.gen_range(-0.12..0.12), rng.gen_range(-0.12..0.12)),
            p,
        ));
    }
    Perturbation { holo, radial: vec![(rng.gen_range(-0.05..0.05), rng.gen_range(1..3))] }
}

fn random_metric(rng: &mut ChaCha8Rng) -> ConformalMetric {
    let base = if rng.gen_bool(0.5) {
        ConformalMetric::poincare_disc()
    } else {
        ConformalMetric::flat(Chart::unit_disc())
    };
    base.perturbed(random_perturbation(rng)).scaled(rng.gen_range(-0.3..0.3))
}

fn random_disc_moebius(rng: &mut ChaCha8Rng) -> MoebiusMap {
    let p = Complex64::new(rng.gen_range(-0.25..0.25), rng.gen_range(-0.25..0.25));
    MoebiusMap::rotation(rng.gen_range(0.0..6.28)).compose(&MoebiusMap::disc_to_origin(p))
}

fn random_moebius(rng: &mut ChaCha8Rng) -> MoebiusMap {
    loop {
        let e = |rng: &mut ChaCha8Rng| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        };
        let (a, b, c, d) = (e(rng), e(rng), e(rng), e(rng));
        if (a * d - b * c).norm() > 0.2 {
            return MoebiusMap::new(a, b, c, d);
        }
    }
}

fn rand_z(rng: &mut ChaCha8Rng, r: f64) -> Complex64 {
    Complex64::new(rng.gen_range(-r..r), rng.gen_range(-r..r))
}

/// Criterion 1: Schwarzian algebra identities on randomized inputs.
pub fn schwarzian_suite(seed: u64) -> Vec<CheckResult> {
    use tolerances::SCHWARZIAN_RESIDUAL as TOL;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trials = 120;

    let mut cocycle: f64 = 0.0;
    for _ in 0..trials {
        let g = random_moebius(&mut rng);
        let f = HoloMap::cubic(rng.gen_range(0.02..0.08), Chart::unit_disc());
        let z = rand_z(&mut rng, 0.55);
        let gf = HoloMap::compose(HoloMap::moebius(g, Chart::plane()), f.clone());
        let fp = f.df(z);
        let lhs = schwarzian(&gf, z).unwrap();
        let rhs = schwarzian(&HoloMap::moebius(g, Chart::plane()), f.f(z)).unwrap() * fp * fp
            + schwarzian(&f, z).unwrap();
        cocycle = cocycle.max((lhs - rhs).norm());
    }

    let mut tensor_cocycle: f64 = 0.0;
    let mut antisym: f64 = 0.0;
    for _ in 0..trials {
        let s1 = random_metric(&mut rng);
        let s2 = random_metric(&mut rng);
        let s3 = random_metric(&mut rng);
        let z = rand_z(&mut rng, 0.5);
        let b13 = schwarzian_tensor(&s1, &s3, z).unwrap();
        let b12 = schwarzian_tensor(&s1, &s2, z).unwrap();
        let b23 = schwarzian_tensor(&s2, &s3, z).unwrap();
        tensor_cocycle = tensor_cocycle.max((b13 - b12 - b23).norm());
        antisym = antisym.max((b12 + schwarzian_tensor(&s2, &s1, z).unwrap()).norm());
    }

    let mut naturality: f64 = 0.0;
    for _ in 0..trials {
        let m = random_disc_moebius(&mut rng);
        let f = HoloMap::moebius(m, Chart::unit_disc());
        let s1 = random_metric(&mut rng);
        let s2 = random_metric(&mut rng);
        let z = rand_z(&mut rng, 0.4);
        let lhs =
            schwarzian_tensor(&pullback_metric(&f, &s1), &pullback_metric(&f, &s2), z).unwrap();
        let fp = f.df(z);
        let rhs = schwarzian_tensor(&s1, &s2, f.f(z)).unwrap() * fp * fp;
        naturality = naturality.max((lhs - rhs).norm());
    }

    let mut as_tensor: f64 = 0.0;
    for _ in 0..trials {
        let f = HoloMap::cubic(rng.gen_range(0.02..0.08), Chart::unit_disc());
        let z = rand_z(&mut rng, 0.55);
        let flat_disc = ConformalMetric::flat(Chart::unit_disc());
        let pulled = pullback_metric(&f, &ConformalMetric::flat(Chart::plane()));
        let lhs = schwarzian(&f, z).unwrap();
        let rhs = 2.0 * schwarzian_tensor(&flat_disc, &pulled, z).unwrap();
        as_tensor = as_tensor.max((lhs - rhs).norm());
    }

    let mut scale_b: f64 = 0.0;
    let mut scale_norm: f64 = 0.0;
    for _ in 0..trials {
        let s = random_metric(&mut rng);
        let t = rng.gen_range(-0.7..0.7);
        let z = rand_z(&mut rng, 0.5);
        scale_b = scale_b.max((b_tensor(&s.scaled(t), z).unwrap() - b_tensor(&s, z).unwrap()).norm());
        let phi = QuadDifferential::from_fn(|w| w * w + Complex64::new(0.3, 0.1));
        let lhs = qd_norm(&phi, &s.scaled(t), z).unwrap();
        let rhs = (-2.0 * t).exp() * qd_norm(&phi, &s, z).unwrap();
        scale_norm = scale_norm.max((lhs - rhs).abs());
    }

    vec![
        CheckResult::below("1a schwarzian cocycle", cocycle, TOL, "S(g.f) = f*S(g) + S(f)"),
        CheckResult::below("1b tensor cocycle", tensor_cocycle, TOL, "B13 = B12 + B23"),
        CheckResult::below("1c tensor antisymmetry", antisym, TOL, "B21 = -B12"),
        CheckResult::below("1d pullback naturality", naturality, TOL, "f*B(s1,s2) = B(f*s1,f*s2)"),
        CheckResult::below("1e schwarzian as tensor", as_tensor, TOL, "S(f) = 2B(flat, f*flat)"),
        CheckResult::below("1f B scale invariance", scale_b, TOL, "B(e^{2t} s) = B(s)"),
        CheckResult::below("1g norm scale law", scale_norm, TOL, "|phi| scales by e^{-2t}"),
    ]
}

/// Criterion 2: the Epstein defining property.
pub fn epstein_defining_suite(seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perturbed: f64 = 0.0;
    for _ in 0..120 {
        let m = ConformalMetric::poincare_disc().perturbed(random_perturbation(&mut rng));
        let z = rand_z(&mut rng, 0.55);
        perturbed = perturbed.max(visual_defining_residual(&m, z).unwrap());
    }
    let mut closed: f64 = 0.0;
    for _ in 0..120 {
        let z = rand_z(&mut rng, 0.6);
        closed = closed.max(visual_defining_residual(&ConformalMetric::spherical(), z).unwrap());
        closed = closed.max(visual_defining_residual(&ConformalMetric::poincare_disc(), z).unwrap());
    }
    vec![
        CheckResult::below(
            "2a defining property (perturbed)",
            perturbed,
            tolerances::DEFINING_PERTURBED,
            "V_{Eps(z)}(z) = sigma(z) on random smooth disc metrics",
        ),
        CheckResult::below(
            "2b defining property (closed forms)",
            closed,
            tolerances::DEFINING_CLOSED_FORM,
            "spherical and Poincaré metrics",
        ),
    ]
}

/// Criterion 3: algebraic mean curvature against FD fundamental forms.
pub fn cross_oracle_suite(fd_step: f64, seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut umbilical_dev: f64 = 0.0;
    let mut formula_exact: f64 = 0.0;
    for &h0 in &[-0.9f64, -0.5, 0.0, 0.5, 0.9] {
        let u0 = -0.5 * ((1.0 + h0) / (1.0 - h0)).ln();
        let sigma = ConformalMetric::poincare_disc().scaled(u0);
        let z = rand_z(&mut rng, 0.3);
        let hf = mean_curvature_formula(&sigma, &QuadDifferential::zero(), z).unwrap();
        formula_exact = formula_exact.max((hf - h0).abs());
        let sampler = |w: Complex64| crate::epstein::epstein_point(&sigma, w);
        let s = fd_geometry(&sampler, z, fd_step).unwrap();
        umbilical_dev = umbilical_dev.max((s.mean_curv - h0).abs());
    }

    let mut chart_dev: f64 = 0.0;
    {
        let f = HoloMap::cubic(0.01, Chart::unit_disc());
        let phi = QuadDifferential::schwarzian_of(f.clone());
        for &h0 in &[-0.5f64, 0.0, 0.5] {
            let u0 = -0.5 * ((1.0 + h0) / (1.0 - h0)).ln();
            let sigma = ConformalMetric::poincare_disc().scaled(u0);
            for _ in 0..4 {
                let z = rand_z(&mut rng, 0.3);
                let hf = mean_curvature_formula(&sigma, &phi, z).unwrap();
                let sampler = |w: Complex64| epstein_chart(&f, &sigma, w);
                let s = fd_geometry_oriented(&sampler, z, fd_step, f.f(z)).unwrap();
                chart_dev = chart_dev.max((s.mean_curv - hf).abs());
            }
        }
    }

    // Observed order under step refinement, on a perturbed metric.
    let sigma = ConformalMetric::poincare_disc().perturbed(Perturbation {
        holo: vec![(Complex64::new(0.15, 0.05), 2)],
        radial: vec![],
    });
    let z = Complex64::new(0.23, -0.11);
    let h_ref = mean_curvature_formula(&sigma, &QuadDifferential::zero(), z).unwrap();
    let sampler = |w: Complex64| crate::epstein::epstein_point(&sigma, w);
    let mut errs = Vec::new();
    for &s in &[4.0 * fd_step, 2.0 * fd_step, fd_step] {
        let g = fd_geometry(&sampler, z, s).unwrap();
        errs.push((g.mean_curv - h_ref).abs().max(1e-16));
    }
    let order = (errs[0] / errs[2]).log2() / 2.0;

    vec![
        CheckResult::below(
            "3a formula exact on umbilical family",
            formula_exact,
            1e-13,
            "H0 in {-0.9, -0.5, 0, 0.5, 0.9}",
        ),
        CheckResult::below(
            "3b cross-oracle umbilical",
            umbilical_dev,
            tolerances::CROSS_ORACLE,
            &format!("FD step {fd_step:.1e}"),
        ),
        CheckResult::below(
            "3c cross-oracle cubic chart map",
            chart_dev,
            tolerances::CROSS_ORACLE,
            "f(z) = z + 0.01 z^3",
        ),
        CheckResult::at_least(
            "3d cross-oracle refinement order",
            order,
            tolerances::CROSS_ORACLE_ORDER,
            &format!("errors {errs:?}"),
        ),
    ]
}

/// Criterion 4: the discrete operator theory on the genus-2 mesh.
pub fn mesh_suite(subdiv: usize) -> Vec<CheckResult> {
    let subdiv = subdiv.max(2);
    let fd = FundamentalDomain::regular_octagon();
    let mesh = SurfaceMesh::build(&fd, subdiv).unwrap();
    let n = mesh.node_count();
    let f4 = DVector::from_element(n, 4.0);
    let eig = mesh.smallest_eigenvalue(&f4).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let u_star = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let fpos = DVector::from_fn(n, |_, _| rng.gen_range(1.0..4.0));
    let lap = mesh.laplacian(&u_star).unwrap();
    let rhs = DVector::from_fn(n, |i, _| fpos[i] * u_star[i] - lap[i]);
    let u = mesh.solve_helmholtz(&fpos, &rhs).unwrap();
    let roundtrip = (&u - &u_star).amax();

    let mesh3 = SurfaceMesh::build(&fd, 3).unwrap();
    let four_pi = 4.0 * std::f64::consts::PI;
    let area_rel = (mesh3.total_mass() - four_pi).abs() / four_pi;

    vec![
        CheckResult::at_least(
            "4a helmholtz operator positive",
            eig,
            1e-12,
            &format!("smallest mass-weighted eigenvalue at subdiv {subdiv}, f = 4"),
        ),
        CheckResult::below(
            "4b helmholtz manufactured round trip",
            roundtrip,
            tolerances::HELMHOLTZ_ROUNDTRIP,
            "(f id - lap) u* recovered",
        ),
        CheckResult::below(
            "4c gauss-bonnet area",
            area_rel,
            tolerances::AREA_RELATIVE,
            "total mass vs 4 pi at subdiv 3",
        ),
    ]
}

fn validate_disc_ctx(eps: f64) -> CmcContext {
    CmcContext::Disc(
        DiscContext::new_cubic(DiscGrid { n_r: 16, n_theta: 32, radius: 0.85 }, eps).unwrap(),
    )
}

fn validate_mesh_ctx(amp: f64) -> CmcContext {
    let mesh = Arc::new(SurfaceMesh::build(&FundamentalDomain::regular_octagon(), 4).unwrap());
    let phi = QDField::from_generator(&mesh, &move |z: Complex64| {
        let s2 = 2.0 * 0.25 * 0.25;
        amp * z * z * (-z.norm_sqr() / s2).exp()
    });
    CmcContext::Closed(ClosedContext::new(mesh, phi).unwrap())
}

/// Criterion 5: anchor identities and the anchor linearization.
pub fn anchor_suite() -> Vec<CheckResult> {
    let mut residual_worst: f64 = 0.0;
    let mut operator_worst: f64 = 0.0;
    for ctx in [validate_disc_ctx(0.0), validate_mesh_ctx(0.0)] {
        let n = ctx.n_unknowns();
        let zero = DVector::zeros(n);
        for k in 0..20 {
            let h = -1.0 + 1.99 * k as f64 / 19.0;
            let g = ctx.residual_g(h, &zero).unwrap();
            residual_worst = residual_worst.max(g.amax());
        }
        let lapm = ctx.lap_matrix();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for &h in &[-1.0, -0.5, 0.3, 0.9] {
            let l = ctx.linearize_g(h, &zero).unwrap();
            let w = DVector::from_fn(n, |i, _| {
                let z = ctx.positions()[i];
                (1.0 + z.re).sin() * (0.7 + z.im).cos() + 0.1 * rng.gen_range(-1.0..1.0)
            });
            let lw = &l * &w;
            let reference = (1.0 - h) * (2.0 * &w - &lapm * &w);
            operator_worst = operator_worst.max((&lw - &reference).amax() / reference.amax());
        }
    }
    vec![
        CheckResult::below(
            "5a anchor residual",
            residual_worst,
            tolerances::ANCHOR_RESIDUAL,
            "G(H, phi = 0, v = 0) over 20 values of H in [-1, 0.99], both modes",
        ),
        CheckResult::below(
            "5b anchor linearization",
            operator_worst,
            tolerances::ANCHOR_OPERATOR,
            "matches (1 - H)(2 id - lap)",
        ),
    ]
}

/// Criterion 6: Newton recovery, the closed-form family, and the
/// small-deformation continuation runs.
pub fn newton_continuation_suite() -> Vec<CheckResult> {
    let cfg = SolverConfig::default();
    let mut out = Vec::new();

    // Newton from a gentle perturbed seed at phi = 0.
    {
        let ctx = validate_disc_ctx(0.0);
        let n = ctx.n_unknowns();
        let v0 = DVector::from_fn(n, |i, _| {
            let z = ctx.positions()[i];
            0.05 * (-(z - Complex64::new(0.2, 0.1)).norm_sqr() / 0.5).exp()
        });
        let sol = newton_solve(0.3, &ctx, &v0, &cfg).unwrap();
        out.push(CheckResult::below(
            "6a newton recovers v = 0",
            sol.v.amax(),
            tolerances::NEWTON_RECOVERY,
            &format!("{} iterations", sol.iters),
        ));
        let hist = &sol.history;
        let mut worst_ratio: f64 = 0.0;
        let mut quadratic_drops = 0;
        for k in 0..hist.len() - 1 {
            if hist[k] > 1e-12 && hist[k + 1] > 1e-15 {
                worst_ratio = worst_ratio.max(hist[k + 1] / (hist[k] * hist[k]));
                if hist[k + 1] < hist[k] * hist[k] * 100.0 {
                    quadratic_drops += 1;
                }
            }
        }
        out.push(CheckResult::flag(
            "6b newton quadratic convergence",
            worst_ratio < 100.0 && quadratic_drops >= 2,
            &format!("max r_k+1 / r_k^2 = {worst_ratio:.2}, history {hist:?}"),
        ));
    }

    // Closed-form family at phi = 0.
    {
        let ctx = validate_disc_ctx(0.0);
        let res = continuation((-0.99, 0.99), &ctx, &cfg).unwrap();
        let mut dev: f64 = 0.0;
        for e in &res.entries {
            let u = u_from_v(e.h, &e.v).unwrap();
            let exact = -0.5 * ((1.0 + e.h) / (1.0 - e.h)).ln();
            for i in 0..u.len() {
                dev = dev.max((u[i] - exact).abs());
            }
        }
        out.push(CheckResult::below(
            "6c closed-form family",
            dev,
            tolerances::CONTINUATION_CLOSED_FORM,
            &format!("u(H) = -artanh H over {} entries in [-0.99, 0.99]", res.entries.len()),
        ));
    }

    // Small-deformation runs in both modes.
    for (name, ctx) in [
        ("6d small-phi disc run", validate_disc_ctx(0.01)),
        ("6e small-phi mesh run", validate_mesh_ctx(0.3)),
    ] {
        match continuation((-0.9, 0.9), &ctx, &cfg) {
            Ok(res) => {
                let max_res =
                    res.entries.iter().map(|e| e.residual_norm).fold(0.0f64, f64::max);
                out.push(CheckResult::below(
                    name,
                    max_res,
                    tolerances::SMALL_PHI_RESIDUAL,
                    &format!("{} entries over [-0.9, 0.9]", res.entries.len()),
                ));
            }
            Err(e) => out.push(CheckResult::flag(name, false, &format!("did not complete: {e}"))),
        }
    }
    out
}

/// Criterion 7: foliation properties of the small-deformation disc family.
/// A coarse FD step can abort the sampling outright (the stencil leaves the
/// local fits' validity); that is reported as a failed check, not a panic.
pub fn foliation_suite(fd_step: f64) -> Vec<CheckResult> {
    match foliation_suite_inner(fd_step) {
        Ok(results) => results,
        Err(e) => vec![CheckResult::flag(
            "7 foliation suite",
            false,
            &format!("aborted: {e}"),
        )],
    }
}

fn foliation_suite_inner(fd_step: f64) -> Result<Vec<CheckResult>, String> {
    let cfg = SolverConfig::default();
    let mut out = Vec::new();

    let disc = DiscContext::new_cubic(DiscGrid { n_r: 16, n_theta: 32, radius: 0.85 }, 0.01)
        .map_err(|e| e.to_string())?;
    let ctx = CmcContext::Disc(disc);
    let hs: Vec<f64> = (-3..=3).map(|k| 0.25 * k as f64).collect();
    let res =
        continuation((hs[0], *hs.last().unwrap()), &ctx, &cfg).map_err(|e| e.to_string())?;
    let entries = solve_at(&hs, &res, &ctx, &cfg).map_err(|e| e.to_string())?;
    let disc = match &ctx {
        CmcContext::Disc(d) => d,
        _ => unreachable!(),
    };
    let fol =
        Foliation::assemble_disc(disc, &entries, fd_step, 2).map_err(|e| e.to_string())?;
    let report = fol.monotonicity_check(Some(disc), fd_step).map_err(|e| e.to_string())?;
    out.push(CheckResult::flag(
        "7a pointwise u-monotonicity",
        report.monotone && report.ordering_ok,
        "every node, every consecutive leaf pair",
    ));
    out.push(CheckResult::below(
        "7b leaf distance window",
        report.window_violation.unwrap_or(f64::INFINITY),
        1e-12,
        &format!("within [f+^-1, f-^-1] at {}x FD-step slack", 10.0),
    ));
    let (lo, hi) = report.principal_range.unwrap_or((f64::NAN, f64::NAN));
    out.push(CheckResult::flag(
        "7c small principal curvatures",
        report.principal_flags == 0 && lo > -1.0 && hi < 1.0,
        &format!("range [{lo:.4}, {hi:.4}], {} flags", report.principal_flags),
    ));
    out.push(CheckResult::flag(
        "7d no leaf intersections",
        report.intersection_flags == 0,
        &format!("min gap {:?}", report.min_leaf_gap),
    ));

    // Fuchsian gaps against artanh differences.
    {
        let disc0 = DiscContext::new_cubic(DiscGrid { n_r: 16, n_theta: 32, radius: 0.85 }, 0.0)
            .map_err(|e| e.to_string())?;
        let ctx0 = CmcContext::Disc(disc0);
        let pairs = [(-0.5f64, -0.2f64), (0.1, 0.3)];
        let mut dev: f64 = 0.0;
        for (ha, hb) in pairs {
            let res = continuation((ha, hb), &ctx0, &cfg).map_err(|e| e.to_string())?;
            let entries = solve_at(&[ha, hb], &res, &ctx0, &cfg).map_err(|e| e.to_string())?;
            let disc0 = match &ctx0 {
                CmcContext::Disc(d) => d,
                _ => unreachable!(),
            };
            let fol = Foliation::assemble_disc(disc0, &entries, fd_step, 2)
                .map_err(|e| e.to_string())?;
            let exact = (hb.atanh() - ha.atanh()).abs();
            for s in fol.leaves[1].samples.iter().take(6) {
                let d = leaf_distance(disc0, &fol.leaves[0].u, &s.point, s.z)
                    .map_err(|e| e.to_string())?;
                dev = dev.max((d - exact).abs());
            }
        }
        out.push(CheckResult::below(
            "7e fuchsian leaf gaps",
            dev,
            tolerances::FUCHSIAN_GAP,
            "|artanh H - artanh H'|",
        ));
    }
    Ok(out)
}

/// Criterion 8: negative controls. Each check passes when the failure
/// manifests as specified.
pub fn negative_controls_suite() -> Vec<CheckResult> {
    let cfg = SolverConfig::default();
    let mut out = Vec::new();

    let ctx = validate_disc_ctx(0.0);
    let endpoint_rejected = matches!(
        continuation((-0.5, 1.0), &ctx, &cfg),
        Err(SolverError::OutOfRange(_))
    ) && matches!(
        continuation((-1.0, 0.5), &ctx, &cfg),
        Err(SolverError::OutOfRange(_))
    );
    let newton_singular = matches!(
        newton_solve(1.0, &ctx, &DVector::zeros(ctx.n_unknowns()), &cfg),
        Err(SolverError::SingularLinearization(_))
    );
    out.push(CheckResult::flag(
        "8a endpoints rejected",
        endpoint_rejected && newton_singular,
        "H = 1 ranges refused; Newton at H = 1 reports a singular linearization",
    ));

    // Shuffled foliation flagged non-monotone.
    {
        let res = continuation((-0.3, 0.3), &ctx, &cfg).unwrap();
        let entries = solve_at(&[-0.3, 0.0, 0.3], &res, &ctx, &cfg).unwrap();
        let disc = match &ctx {
            CmcContext::Disc(d) => d,
            _ => unreachable!(),
        };
        let mut fol = Foliation::assemble_disc(disc, &entries, 1e-3, 2).unwrap();
        fol.leaves.swap(0, 2);
        let report = fol.monotonicity_check(Some(disc), 1e-3).unwrap();
        out.push(CheckResult::flag(
            "8b shuffled family flagged",
            !report.monotone && !report.ordering_ok,
            "deliberately reordered leaves",
        ));
    }

    // A coarse FD step genuinely breaks the cross-oracle bound.
    {
        let sigma = ConformalMetric::poincare_disc().scaled(0.4);
        let z = Complex64::new(0.2, 0.1);
        let h_ref = mean_curvature_formula(&sigma, &QuadDifferential::zero(), z).unwrap();
        let sampler = |w: Complex64| crate::epstein::epstein_point(&sigma, w);
        let coarse = fd_geometry(&sampler, z, 0.1).unwrap();
        out.push(CheckResult::at_least(
            "8c coarse FD step fails the oracle",
            (coarse.mean_curv - h_ref).abs(),
            tolerances::CROSS_ORACLE,
            "step 1e-1 exceeds the 1e-4 bound",
        ));
    }

    // Non-equivariant quadratic-differential data is rejected.
    {
        let mesh = Arc::new(SurfaceMesh::build(&FundamentalDomain::regular_octagon(), 3).unwrap());
        let rejected = QDField::from_samples(
            &mesh,
            &|_z| Complex64::new(0.01, 0.0),
            tolerances::QD_EQUIVARIANCE,
        )
        .is_err();
        let accepted = QDField::from_samples(
            &mesh,
            &|z| {
                let s2 = 2.0 * 0.08 * 0.08;
                0.4 * z * z * (-z.norm_sqr() / s2).exp()
            },
            tolerances::QD_EQUIVARIANCE,
        )
        .is_ok();
        out.push(CheckResult::flag(
            "8d non-equivariant data rejected",
            rejected && accepted,
            "constant coefficient fails the cocycle; a localized generator passes",
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_result_constructors() {
        assert!(CheckResult::below("x", 1e-12, 1e-10, "").passed);
        assert!(!CheckResult::below("x", 1e-8, 1e-10, "").passed);
        assert!(CheckResult::at_least("x", 2.0, 1.8, "").passed);
        assert!(!CheckResult::flag("x", false, "").passed);
    }
}
