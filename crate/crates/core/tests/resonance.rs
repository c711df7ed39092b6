use std::sync::OnceLock;

use delaycont::engine::{ContinuationSettings, EventKind};
use delaycont::eqbif::{continue_equilibrium, EquilibriumOptions};
use delaycont::periodic::{
    branch_off_hopf, continue_periodic, CollocationMesh, OrbitBranch, OrbitOptions, DEFAULT_DEGREE, DEFAULT_INTERVALS,
};
use delaycont::pobif::{continue_bif_curve, detect_po_bifurcations, rational_points_on_curve, DetectOptions, TorusPoint};
use delaycont::resonance::{
    grow_surface, init_circle_from_autonomous, init_circle_from_torus, project_tongue, shift_symmetry_defect,
    stability_scan, write_surface_jsonl, CircleOptions, GrowOptions, ResonanceSurface, Side, Tongue,
};
use delaycont::{Enso, Error, PeriodicOrbit};
use num_complex::Complex64;

struct Grown {
    surface: ResonanceSurface,
    tongue: Tongue,
}

struct Setup {
    roots: Vec<TorusPoint>,
    one_three: Grown,
    three_ten: Grown,
}

fn grow(point: &TorusPoint, circles: usize) -> Grown {
    let mut surface = init_circle_from_torus(&Enso, point, &CircleOptions::default()).unwrap();
    grow_surface(&Enso, &mut surface, &GrowOptions { max_circles: circles, ..Default::default() }).unwrap();
    let tongue = project_tongue(&Enso, &mut surface).unwrap();
    Grown { surface, tongue }
}

fn setup() -> &'static Setup {
    static CELL: OnceLock<Setup> = OnceLock::new();
    CELL.get_or_init(|| {
        let p = Enso::parameters().with("k0", 1.8).unwrap().with("d_k", 0.0).unwrap();
        let orbit =
            PeriodicOrbit::from_function(1, CollocationMesh::uniform(60, 4), 12.0, p.values().to_vec(), false, |_| vec![0.0]);
        let branch = continue_periodic(&Enso, &orbit, &p, "d_k", (0.0, 2.2), &OrbitOptions::default()).unwrap();
        let events = detect_po_bifurcations(&Enso, &branch, &DetectOptions::default()).unwrap();
        let torus = events.iter().find(|e| e.kind == EventKind::Torus).unwrap();
        let curve =
            continue_bif_curve(&Enso, &branch, torus, "k0", ((0.0, 3.0), (0.5, 3.5)), &ContinuationSettings::default())
                .unwrap();
        let roots = rational_points_on_curve(&Enso, &curve, 11).unwrap();
        let find = |k, l| roots.iter().find(|r| r.k == k && r.l == l).unwrap();
        let one_three = grow(find(1, 3), 6);
        let three_ten = grow(find(3, 10), 6);
        Setup { roots, one_three, three_ten }
    })
}

fn autonomous_branch() -> OrbitBranch {
    let p = Enso::parameters().with("k0", 0.0).unwrap().with("d_k", 0.0).unwrap();
    let eq = continue_equilibrium(&Enso, &[0.0], &p, "k0", (0.0, 2.0), &EquilibriumOptions::default()).unwrap();
    let hopf = eq.events.iter().find(|e| e.kind == EventKind::Hopf).unwrap();
    let mesh = CollocationMesh::uniform(DEFAULT_INTERVALS, DEFAULT_DEGREE);
    let orbit = branch_off_hopf(&Enso, &p, "k0", hopf, 0.05, mesh).unwrap();
    continue_periodic(&Enso, &orbit, &p, "k0", (1.0, 1.6), &OrbitOptions::default()).unwrap()
}

#[test]
fn locked_orbits_satisfy_the_bvp_with_pinned_period() {
    let s = &setup().one_three.surface;
    assert_eq!(s.period, 36.0);
    assert!(s.circles.len() >= 6);
    assert!(s.max_residual(&Enso).unwrap() <= 1e-9);
    for c in &s.circles {
        assert_eq!(c.points.len(), 40);
        assert!(c.points.iter().all(|p| p.phi >= 0.0 && p.phi < std::f64::consts::TAU / 3.0));
    }
}

#[test]
fn initial_circle_stays_near_root() {
    let s = &setup().one_three.surface;
    for p in &s.circles[0].points {
        let d = ((p.eta[0] - s.root[0]).powi(2) + (p.eta[1] - s.root[1]).powi(2)).sqrt();
        assert!(d <= 1.5 * s.rho, "{d}");
    }
}

#[test]
fn shift_symmetry_holds_on_every_circle() {
    let s = &setup().one_three.surface;
    for c in 0..s.circles.len() {
        let d = shift_symmetry_defect(&Enso, s, c, 3).unwrap();
        assert!(d <= 1e-8, "circle {c}: {d}");
    }
}

#[test]
fn fold_points_have_unit_multiplier() {
    let g = &setup().one_three;
    assert!(g.tongue.flagged.is_empty());
    for f in &g.tongue.folds {
        let mut params = g.surface.params.clone();
        params[g.surface.free.0] = f.point.eta[0];
        params[g.surface.free.1] = f.point.eta[1];
        let orbit = PeriodicOrbit {
            dim: 1,
            mesh: g.surface.mesh.clone(),
            values: f.point.values.clone(),
            period: g.surface.period,
            params,
            param_names: g.surface.param_names.clone(),
            autonomous: false,
        };
        let mu = orbit.multipliers(&Enso, 6).unwrap();
        let d = mu.iter().map(|m| (m - Complex64::new(1.0, 0.0)).norm()).fold(f64::INFINITY, f64::min);
        assert!(d < 1e-3, "circle {} {:?}: {d}", f.circle, f.side);
    }
}

#[test]
fn tongue_opens_from_the_root() {
    let t = &setup().one_three.tongue;
    for side in [Side::Left, Side::Right] {
        assert_eq!(t.folds.iter().filter(|f| f.side == side).count(), 6);
    }
    let widths: Vec<f64> = (0..6).map(|c| t.width_at_circle(c).unwrap()).collect();
    assert!(widths.windows(2).all(|w| w[1] > w[0]), "{widths:?}");
    // the boundary near the root passes within 2 rho of it
    let root = t.boundary[0][0];
    let first = t.boundary[0][1];
    assert!(((first[0] - root[0]).powi(2) + (first[1] - root[1]).powi(2)).sqrt() < 2e-2);
    let mut csv = Vec::new();
    t.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("d_k,k0,side\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 7);
}

#[test]
fn high_order_tongues_are_narrower() {
    let s = setup();
    for c in 1..6 {
        let narrow = s.three_ten.tongue.width_at_circle(c).unwrap();
        let wide = s.one_three.tongue.width_at_circle(c).unwrap();
        assert!(narrow < wide, "circle {c}: {narrow} vs {wide}");
    }
}

#[test]
fn circles_split_into_stable_and_unstable_arcs() {
    let mut surface = setup().one_three.surface.clone();
    let labels = stability_scan(&Enso, &mut surface, 12).unwrap();
    for l in labels.iter().skip(1) {
        assert!(l.iter().any(|&s| s) && l.iter().any(|&s| !s));
        // two arcs on the closed circle: at most two label changes
        let changes = (0..l.len()).filter(|&i| l[i] != l[(i + 1) % l.len()]).count();
        assert!(changes <= 2, "{l:?}");
    }
    let mut out = Vec::new();
    write_surface_jsonl(&surface, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["l"], 3);
    assert_eq!(first["period"], 36.0);
    assert_eq!(text.lines().count(), surface.circles.len() * 40);
}

#[test]
fn initial_circle_converges_to_root_with_rho() {
    let root = setup().roots.iter().find(|r| r.k == 1 && r.l == 3).unwrap();
    let offsets: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
        .iter()
        .map(|&rho| {
            let opts = CircleOptions { rho, n_phi: 12, ..Default::default() };
            let s = init_circle_from_torus(&Enso, root, &opts).unwrap();
            let n = s.circles[0].points.len() as f64;
            let c = s.circles[0].points.iter().fold([0.0, 0.0], |a, p| [a[0] + p.eta[0] / n, a[1] + p.eta[1] / n]);
            ((c[0] - s.root[0]).powi(2) + (c[1] - s.root[1]).powi(2)).sqrt()
        })
        .collect();
    assert!(offsets[0] < 1e-2);
    assert!(offsets[1] < 0.6 * offsets[0] && offsets[2] < 0.6 * offsets[1], "{offsets:?}");
}

#[test]
fn non_coprime_resonance_is_rejected() {
    let mut root = setup().roots[0].clone();
    root.k = 2;
    root.l = 4;
    root.alpha = 0.5;
    assert!(matches!(init_circle_from_torus(&Enso, &root, &CircleOptions::default()), Err(Error::Contract(_))));
}

#[test]
fn autonomous_one_to_four_root() {
    let branch = autonomous_branch();
    let e = branch.events.iter().find(|e| e.data == vec![1.0, 4.0]).expect("1:4 resonance");
    let orbit = branch.event_orbit(&Enso, e).unwrap();
    assert!((orbit.period - 48.0).abs() < 1e-8);

    let s = init_circle_from_autonomous(&Enso, &orbit, 1, 4, 1, 0, &CircleOptions { n_phi: 12, ..Default::default() })
        .unwrap();
    assert_eq!(s.period, 48.0);
    assert!(s.max_residual(&Enso).unwrap() <= 1e-9);
    assert!(s.circles[0].points.iter().all(|p| (p.eta[0] - s.rho).abs() < 1e-12));
    assert!(shift_symmetry_defect(&Enso, &s, 0, 3).unwrap() <= 1e-8);

    // zero radius: every angle reproduces the autonomous orbit, time-shifted
    let s0 = init_circle_from_autonomous(&Enso, &orbit, 1, 4, 1, 0, &CircleOptions { rho: 0.0, n_phi: 4, ..Default::default() })
        .unwrap();
    for (i, p) in s0.circles[0].points.iter().enumerate() {
        assert!(p.eta[0].abs() < 1e-14);
        assert!((p.eta[1] - orbit.params[0]).abs() < 1e-6);
        let locked = s0.orbit(0, i);
        let theta = p.phi / std::f64::consts::TAU;
        let worst = (0..50)
            .map(|q| {
                let t = q as f64 / 50.0;
                (locked.eval_scaled(t)[0] - orbit.eval_scaled((t + theta).rem_euclid(1.0))[0]).abs()
            })
            .fold(0.0, f64::max);
        assert!(worst < 1e-6, "{worst}");
    }
}
