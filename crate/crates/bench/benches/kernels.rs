//! Criterion benchmarks for the hot kernels: Epstein evaluation, the
//! finite-difference geometry oracle, the Helmholtz solve on the genus-2
//! mesh, and one disc-mode Newton step.

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::DVector;
use num_complex::Complex64;
use std::hint::black_box;

use cmcfol_core::conformal::{ConformalMetric, Perturbation, QuadDifferential};
use cmcfol_core::epstein::{epstein_point, fd_geometry, mean_curvature_formula};
use cmcfol_core::mesh::{FundamentalDomain, SurfaceMesh};
use cmcfol_core::solver::{CmcContext, DiscContext, DiscGrid};

fn perturbed_metric() -> ConformalMetric {
    ConformalMetric::poincare_disc().perturbed(Perturbation {
        holo: vec![(Complex64::new(0.1, 0.05), 2), (Complex64::new(-0.04, 0.02), 3)],
        radial: vec![(0.03, 2)],
    })
}

fn bench_epstein(c: &mut Criterion) {
    let sigma = perturbed_metric();
    let z = Complex64::new(0.21, -0.13);
    c.bench_function("epstein_point", |b| {
        b.iter(|| epstein_point(&sigma, black_box(z)).unwrap())
    });
    c.bench_function("mean_curvature_formula", |b| {
        b.iter(|| mean_curvature_formula(&sigma, &QuadDifferential::zero(), black_box(z)).unwrap())
    });
    c.bench_function("fd_geometry_sample", |b| {
        let sampler = |w: Complex64| epstein_point(&sigma, w);
        b.iter(|| fd_geometry(&sampler, black_box(z), 1e-3).unwrap())
    });
}

fn bench_mesh(c: &mut Criterion) {
    let mesh = SurfaceMesh::build(&FundamentalDomain::regular_octagon(), 6).unwrap();
    let n = mesh.node_count();
    let f = DVector::from_element(n, 4.0);
    let rhs = DVector::from_fn(n, |i, _| (i as f64 * 0.37).sin());
    c.bench_function("helmholtz_solve_subdiv6", |b| {
        b.iter(|| mesh.solve_helmholtz(black_box(&f), black_box(&rhs)).unwrap())
    });
}

fn bench_newton_step(c: &mut Criterion) {
    let ctx = CmcContext::Disc(
        DiscContext::new_cubic(DiscGrid { n_r: 12, n_theta: 24, radius: 0.8 }, 0.01).unwrap(),
    );
    let n = ctx.n_unknowns();
    let v = DVector::from_fn(n, |i, _| {
        let z = ctx.positions()[i];
        0.01 * (2.0 * z.re).cos() * z.im.sin()
    });
    c.bench_function("residual_eval_disc", |b| {
        b.iter(|| ctx.residual_g(0.3, black_box(&v)).unwrap())
    });
    c.bench_function("linearize_disc", |b| {
        b.iter(|| ctx.linearize_g(0.3, black_box(&v)).unwrap())
    });
}

criterion_group!(benches, bench_epstein, bench_mesh, bench_newton_step);
criterion_main!(benches);
