use std::f64::consts::PI;

use delaycont::eqbif::{continue_equilibrium, EquilibriumOptions};
use delaycont::engine::EventKind;
use delaycont::integrate::{integrate, rotation_number};
use delaycont::periodic::{
    branch_off_hopf, continue_periodic, solve_periodic, CollocationMesh, OrbitBranch, OrbitOptions, SolveOptions,
    DEFAULT_DEGREE, DEFAULT_INTERVALS,
};
use delaycont::{Enso, FnModel, History, Parameters, PeriodicOrbit};

fn enso_params() -> Parameters {
    Enso::parameters().with("k0", 0.0).unwrap().with("d_k", 0.0).unwrap()
}

fn autonomous_branch(to: f64) -> OrbitBranch {
    let p = enso_params();
    let eq = continue_equilibrium(&Enso, &[0.0], &p, "k0", (0.0, 2.0), &EquilibriumOptions::default()).unwrap();
    let hopf = eq.events.iter().find(|e| e.kind == EventKind::Hopf).unwrap();
    let mesh = CollocationMesh::uniform(DEFAULT_INTERVALS, DEFAULT_DEGREE);
    let orbit = branch_off_hopf(&Enso, &p, "k0", hopf, 0.05, mesh).unwrap();
    continue_periodic(&Enso, &orbit, &p, "k0", (1.0, to), &OrbitOptions::default()).unwrap()
}

#[test]
fn forced_linear_equation_matches_closed_form() {
    let params = Parameters::new(["d", "a", "t_f"], vec![0.16, 0.1, 12.0]);
    let model = FnModel::new(1, params.clone(), |t, x, _, _, p, out| {
        out[0] = -p[0] * x[0] + p[1] * (2.0 * PI * t / p[2]).sin();
    })
    .with_forcing_period_param(2, 1);
    let guess = PeriodicOrbit::from_function(1, CollocationMesh::uniform(40, 5), 12.0, params.values().to_vec(), false, |_| vec![0.0]);
    let orbit = solve_periodic(&model, &guess, &SolveOptions::default()).unwrap();
    let (d, w) = (0.16, 2.0 * PI / 12.0);
    for k in 0..240 {
        let t = 12.0 * k as f64 / 240.0;
        let exact = 0.1 * (d * (w * t).sin() - w * (w * t).cos()) / (d * d + w * w);
        assert!((orbit.eval(t)[0] - exact).abs() < 1e-8, "t = {t}");
    }
}

#[test]
fn enso_autonomous_orbit() {
    let br = autonomous_branch(2.0);
    let last = br.len() - 1;
    let orbit = br.orbit(&Enso, last).unwrap();
    assert!((orbit.params[0] - 2.0).abs() < 1e-9);

    // period agrees with the mean inter-peak interval of a simulation
    let traj = integrate(&Enso, &orbit.params, &History::Constant(vec![0.5]), 9000.0, 0.05).unwrap();
    let alpha = rotation_number(&traj, 12.0, 2000.0).unwrap();
    let interval = 12.0 / alpha;
    assert!(((interval - orbit.period) / orbit.period).abs() < 0.01, "{interval} vs {}", orbit.period);

    // trivial multiplier: loose on the fixed continuation mesh, tight once
    // the solver has refined the mesh
    let trivial = |mu: &[num_complex::Complex64]| mu.iter().map(|z| (z - 1.0).norm()).fold(f64::INFINITY, f64::min);
    for i in 0..br.len() {
        assert!(trivial(br.multipliers[i].as_ref().unwrap()) < 1e-4, "point {i}");
        assert_eq!(br.unstable_count(i), Some(0));
    }
    let orbit = solve_periodic(&Enso, &orbit, &SolveOptions::default()).unwrap();
    assert!(orbit.error_indicator(&Enso).unwrap() <= 1e-7);
    assert!(trivial(&orbit.multipliers(&Enso, 12).unwrap()) < 1e-6);

    // mesh doubling changes the orbit very little
    let refined = solve_periodic(&Enso, &orbit.remeshed(orbit.mesh.doubled()), &SolveOptions::default()).unwrap();
    assert!((refined.period - orbit.period).abs() < 1e-7, "{}", refined.period - orbit.period);
    assert!(refined.sup_distance(&orbit) < 1e-6, "{}", refined.sup_distance(&orbit));

    // time shifts leave period and range unchanged
    let shifted = solve_periodic(&Enso, &orbit.shifted(13.7), &SolveOptions::default()).unwrap();
    let (lo0, hi0) = orbit.range(0);
    let (lo1, hi1) = shifted.range(0);
    assert!((shifted.period - orbit.period).abs() < 1e-8);
    assert!((lo1 - lo0).abs() < 1e-8 && (hi1 - hi0).abs() < 1e-8);
}

#[test]
fn hopf_normal_form_amplitude() {
    let br = autonomous_branch(1.5);
    let k_hopf = 1.4254816;
    // amplitude^2 is linear in the parameter offset near the Hopf point
    let pts: Vec<(f64, f64)> = (0..5)
        .map(|i| {
            let o = br.orbit(&Enso, i).unwrap();
            (o.params[0], o.amplitude(0).powi(2))
        })
        .collect();
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / n, sy / n);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let root = mx - my / slope;
    assert!(slope > 0.0);
    assert!((root - k_hopf).abs() < 2e-3, "fitted onset {root}");
}

#[test]
fn continuation_flags_one_to_six() {
    let br = autonomous_branch(3.1);
    let e = br.events.iter().find(|e| e.data == vec![1.0, 6.0]).expect("1:6 resonance");
    assert!((e.value - 2.982).abs() < 5e-3, "{}", e.value);
    let orbit = delaycont::periodic::OrbitProblem::new(&Enso, &br.orbit(&Enso, 0).unwrap(), 0)
        .unwrap()
        .orbit_at(&nalgebra::DVector::from_column_slice(&e.u))
        .unwrap();
    assert!((orbit.period - 72.0).abs() < 1e-8);
}

#[test]
fn hopf_branch_off_rejects_zero_amplitude() {
    let p = enso_params();
    let eq = continue_equilibrium(&Enso, &[0.0], &p, "k0", (0.0, 2.0), &EquilibriumOptions::default()).unwrap();
    let hopf = eq.events.iter().find(|e| e.kind == EventKind::Hopf).unwrap();
    let mesh = CollocationMesh::uniform(DEFAULT_INTERVALS, DEFAULT_DEGREE);
    assert!(matches!(
        branch_off_hopf(&Enso, &p, "k0", hopf, 0.0, mesh),
        Err(delaycont::Error::Degenerate(_))
    ));
}
