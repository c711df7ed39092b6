use std::sync::OnceLock;

use delaycont::engine::{ContinuationSettings, Event, EventKind};
use delaycont::integrate::integrate;
use delaycont::periodic::{continue_periodic, CollocationMesh, OrbitBranch, OrbitOptions};
use delaycont::pobif::{
    continue_bif_curve, detect_po_bifurcations, multiplier_collisions, rational_points_on_curve, BifCurve,
    DetectOptions,
};
use delaycont::{Enso, History, Parameters, PeriodicOrbit};
use nalgebra::DVector;

struct Setup {
    branch: OrbitBranch,
    events: Vec<Event>,
    torus: BifCurve,
    pd: BifCurve,
}

fn trivial_branch(k0: f64) -> OrbitBranch {
    let p = Enso::parameters().with("k0", k0).unwrap().with("d_k", 0.0).unwrap();
    let orbit = PeriodicOrbit::from_function(1, CollocationMesh::uniform(60, 4), 12.0, p.values().to_vec(), false, |_| vec![0.0]);
    continue_periodic(&Enso, &orbit, &p, "d_k", (0.0, 2.2), &OrbitOptions::default()).unwrap()
}

fn setup() -> &'static Setup {
    static CELL: OnceLock<Setup> = OnceLock::new();
    CELL.get_or_init(|| {
        let branch = trivial_branch(1.8);
        let events = detect_po_bifurcations(&Enso, &branch, &DetectOptions::default()).unwrap();
        let settings = ContinuationSettings::default();
        let ranges = ((0.0, 3.0), (0.5, 3.5));
        let find = |k| events.iter().find(|e| e.kind == k).unwrap();
        let torus = continue_bif_curve(&Enso, &branch, find(EventKind::Torus), "k0", ranges, &settings).unwrap();
        let pd = continue_bif_curve(&Enso, &branch, find(EventKind::PeriodDoubling), "k0", ranges, &settings).unwrap();
        Setup { branch, events, torus, pd }
    })
}

fn multipliers_at(params: &[f64]) -> Vec<num_complex::Complex64> {
    let orbit = PeriodicOrbit::from_function(1, CollocationMesh::uniform(60, 4), 12.0, params.to_vec(), false, |_| vec![0.0]);
    orbit.multipliers(&Enso, 12).unwrap()
}

#[test]
fn events_on_forced_trivial_branch() {
    let s = setup();
    let torus: Vec<_> = s.events.iter().filter(|e| e.kind == EventKind::Torus).collect();
    let pd: Vec<_> = s.events.iter().filter(|e| e.kind == EventKind::PeriodDoubling).collect();
    assert_eq!(torus.len(), 1);
    assert_eq!(pd.len(), 1);
    assert!(!torus[0].degenerate && !pd[0].degenerate);
    assert!((torus[0].value - 1.659).abs() < 0.01, "{}", torus[0].value);
    assert!((pd[0].value - 1.814).abs() < 0.01, "{}", pd[0].value);
    let collisions = multiplier_collisions(&Enso, &s.branch, 12).unwrap();
    assert_eq!(collisions.len(), 1);
    assert!((collisions[0] - 1.810).abs() < 0.02);
    // the collision is not reported as an event
    assert!(s.events.iter().all(|e| (e.value - collisions[0]).abs() > 1e-3));

    let problem = s.branch.problem(&Enso).unwrap();
    let at = |e: &Event| problem.orbit_at(&DVector::from_column_slice(&e.u)).unwrap().multipliers(&Enso, 12).unwrap();
    let mu = at(torus[0]);
    assert!(mu.iter().any(|z| z.im.abs() > 1e-3 && (z.norm() - 1.0).abs() < 1e-8));
    let mu = at(pd[0]);
    assert!(mu.iter().any(|z| (z + 1.0).norm() < 1e-8));
}

#[test]
fn torus_curve_invariants() {
    let s = setup();
    let c = &s.torus;
    let (d0, k0) = c.params(0);
    assert!(d0.abs() < 1e-9);
    assert!((k0 - 1.426).abs() < 0.01);
    // rotation at the unforced end matches the Hopf frequency
    let omega_h = 0.1315364;
    let expected = (omega_h * 12.0 / std::f64::consts::TAU).rem_euclid(1.0);
    assert!((c.alpha(0).unwrap() - expected).abs() < 1e-4);
    for i in 1..c.len() {
        assert!(c.alpha(i).unwrap() > c.alpha(i - 1).unwrap());
    }
    assert!((c.alpha(c.len() - 1).unwrap() - 0.5).abs() < 1e-3);
    assert!(matches!(&c.status.1, delaycont::engine::BranchStatus::Terminated(r) if r == "strong-resonance-end"));

    let problem = c.problem(&Enso).unwrap();
    for i in (0..c.len()).step_by(4) {
        let u = DVector::from_column_slice(&c.points[i]);
        let orbit = problem.orbit_at(&u).unwrap();
        let target = num_complex::Complex64::from_polar(1.0, std::f64::consts::TAU * c.alpha(i).unwrap());
        let mu = orbit.multipliers(&Enso, 12).unwrap();
        let closest = mu.iter().min_by(|a, b| (*a - target).norm().total_cmp(&(*b - target).norm())).unwrap();
        assert!((closest.norm() - 1.0).abs() < 1e-8, "point {i}: {}", closest.norm());
    }
}

#[test]
fn pd_curve_has_multiplier_minus_one() {
    let s = setup();
    let problem = s.pd.problem(&Enso).unwrap();
    for i in (0..s.pd.len()).step_by(5) {
        let orbit = problem.orbit_at(&DVector::from_column_slice(&s.pd.points[i])).unwrap();
        let mu = orbit.multipliers(&Enso, 12).unwrap();
        assert!(mu.iter().any(|z| (z + 1.0).norm() < 1e-8), "point {i}");
    }
}

#[test]
fn rational_points_of_torus_curve() {
    let s = setup();
    let pts = rational_points_on_curve(&Enso, &s.torus, 11).unwrap();
    let fractions: Vec<(usize, usize)> = pts.iter().map(|p| (p.k, p.l)).collect();
    assert_eq!(
        fractions,
        vec![(3, 11), (2, 7), (3, 10), (1, 3), (4, 11), (3, 8), (2, 5), (3, 7), (4, 9), (5, 11)]
    );
    let third = pts.iter().find(|p| p.l == 3).unwrap();
    assert!((third.orbit.params[1] - 1.495).abs() < 0.01);
    assert!((third.orbit.params[0] - 1.73).abs() < 0.01);
    let back = delaycont::pobif::TorusPoint::from_json(&third.to_json().unwrap()).unwrap();
    assert_eq!(back.z.len(), third.z.len());
    assert_eq!(back.orbit.params, third.orbit.params);
}

#[test]
fn stability_layout_around_torus_and_pd_curves() {
    let base = Enso::parameters();
    let at = |d_k: f64, k0: f64| -> Parameters { base.clone().with("k0", k0).unwrap().with("d_k", d_k).unwrap() };
    let unstable = |p: &Parameters| multipliers_at(p.values()).iter().filter(|z| z.norm() > 1.0).count();
    // below the torus curve and left of the PD curve: stable
    assert_eq!(unstable(&at(0.5, 1.3)), 0);
    assert_eq!(unstable(&at(1.2, 1.5)), 0);
    // above the torus curve: a complex pair outside
    assert_eq!(unstable(&at(1.0, 1.7)), 2);
    // right of the PD curve at k0 = 1: one real multiplier below -1
    let p = at(1.6, 1.0);
    let mu = multipliers_at(p.values());
    assert_eq!(mu.iter().filter(|z| z.norm() > 1.0 && z.re < -1.0 && z.im.abs() < 1e-12).count(), 1);

    // the simulation settles onto a 24-month response
    let traj = integrate(&Enso, p.values(), &History::Constant(vec![0.1]), 2400.0, 0.05).unwrap();
    let h = |t: f64| {
        let mut out = [0.0];
        traj.eval(t, &mut out).unwrap();
        out[0]
    };
    let (mut d12, mut d24, mut amp) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..480 {
        let t = 2000.0 + 0.1 * k as f64;
        d12 = d12.max((h(t + 12.0) - h(t)).abs());
        d24 = d24.max((h(t + 24.0) - h(t)).abs());
        amp = amp.max(h(t).abs());
    }
    assert!(amp > 0.05, "response amplitude {amp}");
    assert!(d24 < 1e-6 * (1.0 + amp), "not 24-periodic: {d24}");
    assert!(d12 > 0.1 * amp, "12-periodic: {d12}");
}
