use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fpme_core::extension::dtn;
use fpme_core::random::random_band_limited;
use fpme_core::solver::step;
use fpme_core::{
    Cylinder, EvolvingGeometry, Family, ManifoldSnapshot, NonlinearitySpec, RadiusLaw, SolverConfig, SolverState,
    SpectralField, SpectralTransform, Stepper,
};

fn transforms(c: &mut Criterion) {
    let mut group = c.benchmark_group("transform");
    for (family, modes) in [(Family::Circle, 64), (Family::Circle, 256), (Family::SphereZonal, 64)] {
        let snap = ManifoldSnapshot::new(family, 1.0, modes).unwrap();
        let u = random_band_limited(snap, modes, 1, 1.0);
        let plan = SpectralTransform::new(family, modes, snap.dealiased_grid(2.0)).unwrap();
        let values = plan.synthesize(u.coeffs(), 1.0);
        let id = format!("{family:?}/{modes}");
        group.bench_with_input(BenchmarkId::new("synthesize", &id), &u, |b, u| {
            b.iter(|| plan.synthesize(black_box(u.coeffs()), 1.0))
        });
        group.bench_with_input(BenchmarkId::new("analyze", &id), &values, |b, v| {
            b.iter(|| plan.analyze(black_box(v), 1.0))
        });
        group.bench_with_input(BenchmarkId::new("sup_norm", &id), &u, |b, u| b.iter(|| black_box(u).sup_norm()));
    }
    group.finish();
}

fn dtn_maps(c: &mut Criterion) {
    let snap = ManifoldSnapshot::circle(1.0, 256).unwrap();
    let u = random_band_limited(snap, 256, 2, 1.0);
    c.bench_function("dtn/full/256", |b| b.iter(|| dtn(black_box(&u), Cylinder::Full)));
    c.bench_function("dtn/truncated/256", |b| b.iter(|| dtn(black_box(&u), Cylinder::Truncated(2.0))));
}

fn steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("implicit_step");
    let g = EvolvingGeometry::new(Family::Circle, RadiusLaw::Linear { r0: 1.0, rate: 0.5 }, 1.0).unwrap();
    for m in [1.0, 2.0, 3.0] {
        let s = g.snapshot_at(0.0, 64).unwrap();
        let u0 = SpectralField::constant(s, 0.6).add(&random_band_limited(s, 6, 3, 1.0).scale(0.4)).unwrap();
        let cfg = SolverConfig::new(
            g,
            NonlinearitySpec::power_law(m).unwrap(),
            u0,
            Cylinder::Full,
            1e-3,
            1.0,
            Stepper::ImplicitEuler { newton_tol: 1e-10, max_iter: 30 },
        )
        .unwrap();
        let state = SolverState::initial(&cfg);
        group.bench_with_input(BenchmarkId::new("m", m), &state, |b, st| b.iter(|| step(&cfg, black_box(st)).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, transforms, dtn_maps, steps);
criterion_main!(benches);
