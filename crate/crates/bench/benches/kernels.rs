//! Timings of the kernels that dominate the continuation runs: the
//! integrator, the characteristic-root solver, collocation Jacobians with
//! their sparse factorization, and the monodromy operator.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use delaycont::integrate::integrate;
use delaycont::linalg::SparseMatrix;
use delaycont::periodic::collocation::orbit_jacobian_entries;
use delaycont::spectra::{equilibrium_spectrum, DEFAULT_ROOT_FLOOR};
use delaycont::{CollocationMesh, Enso, History, Parameters, PeriodicOrbit};
use nalgebra::DVector;

fn params(k0: f64, d_k: f64) -> Parameters {
    Enso::parameters().with("k0", k0).unwrap().with("d_k", d_k).unwrap()
}

/// A smooth forced profile with the period of `l` forcing cycles.
fn profile(p: &Parameters, intervals: usize, l: usize) -> PeriodicOrbit {
    let period = 12.0 * l as f64;
    PeriodicOrbit::from_function(1, CollocationMesh::uniform(intervals, 4), period, p.values().to_vec(), false, |t| {
        vec![0.3 * (2.0 * std::f64::consts::PI * t / period).sin()]
    })
}

fn integrator(c: &mut Criterion) {
    let p = params(1.8, 1.5);
    c.bench_function("integrate/600-months", |b| {
        b.iter(|| integrate(&Enso, black_box(p.values()), &History::Constant(vec![0.5]), 600.0, 0.01).unwrap())
    });
}

fn spectrum(c: &mut Criterion) {
    let p = params(1.8, 0.0);
    c.bench_function("equilibrium-spectrum", |b| {
        b.iter(|| equilibrium_spectrum(&Enso, &[0.0], black_box(p.values()), DEFAULT_ROOT_FLOOR).unwrap())
    });
}

fn collocation(c: &mut Criterion) {
    let p = params(1.8, 1.5);
    let mut group = c.benchmark_group("collocation");
    for (intervals, l) in [(60, 1), (90, 3), (180, 6)] {
        let orbit = profile(&p, intervals, l);
        group.bench_with_input(BenchmarkId::new("jacobian", intervals), &orbit, |b, o| {
            b.iter(|| orbit_jacobian_entries(&Enso, &o.mesh, &o.values, o.period, &o.params).unwrap())
        });
        let entries = orbit_jacobian_entries(&Enso, &orbit.mesh, &orbit.values, orbit.period, &orbit.params).unwrap();
        let mut a = SparseMatrix::new(orbit.values.len());
        for (r, col, v) in entries {
            a.push(r, col, v);
        }
        let rhs = DVector::from_element(a.n, 1.0);
        group.bench_with_input(BenchmarkId::new("sparse-lu-solve", intervals), &a, |b, a| {
            b.iter(|| a.lu().unwrap().solve_vec(&rhs).unwrap())
        });
        let dense = a.to_dense();
        group.bench_with_input(BenchmarkId::new("dense-lu-solve", intervals), &dense, |b, d| {
            b.iter(|| d.clone().lu().solve(&rhs).unwrap())
        });
    }
    group.finish();
}

fn monodromy(c: &mut Criterion) {
    let p = params(1.8, 1.5);
    let orbit = profile(&p, 60, 1);
    c.bench_function("floquet-multipliers/60", |b| b.iter(|| orbit.multipliers(&Enso, 12).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = integrator, spectrum, collocation, monodromy
}
criterion_main!(benches);
