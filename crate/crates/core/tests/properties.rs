use delaycont::integrate::integrate;
use delaycont::io::fmt_num;
use delaycont::model::{coupling_g, kappa};
use delaycont::periodic::branch::{crossed_fractions, gcd, wrap_delayed_argument};
use delaycont::periodic::collocation::eval_periodic;
use delaycont::{CollocationMesh, DelayModel, Enso, History};
use proptest::prelude::*;

fn enso_params() -> impl Strategy<Value = Vec<f64>> {
    (0.0..3.0f64, 0.0..2.5f64, 0.5..6.0f64, -6.0..-0.5f64).prop_map(|(k0, d_k, bp, bm)| {
        let mut p = Enso::parameters().values().to_vec();
        p[0] = k0;
        p[1] = d_k;
        p[7] = bp;
        p[8] = bm;
        p
    })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #[test]
    fn coupling_is_bounded_monotone_and_tangent(x in -50.0..50.0f64, dx in 1e-6..1.0f64,
                                                 bp in 0.5..6.0f64, bm in -6.0..-0.5f64) {
        let g = coupling_g(x, bp, bm);
        prop_assert!(g <= bp && g >= bm);
        prop_assert!(g.abs() <= x.abs() + 1e-15);
        prop_assert!(coupling_g(x + dx, bp, bm) >= g);
        prop_assert!(g * x >= 0.0);
        let h = 1e-4;
        prop_assert!(close(coupling_g(h, bp, bm) / h, 1.0, 1e-6));
    }

    #[test]
    fn kappa_is_forcing_periodic(t in -100.0..100.0f64, k0 in 0.0..3.0f64, d_k in 0.0..2.5f64,
                                 tf in 1.0..24.0f64, n in -5i32..5) {
        let a = kappa(t, k0, d_k, tf);
        prop_assert!(close(a, kappa(t + n as f64 * tf, k0, d_k, tf), 1e-10));
        prop_assert!((a - k0).abs() <= d_k + 1e-12);
    }

    #[test]
    fn zero_is_a_solution(p in enso_params(), t in 0.0..120.0f64) {
        let mut out = [1.0];
        Enso.rhs(t, &[0.0], &[0.0], &[0.0], &p, &mut out);
        prop_assert_eq!(out[0], 0.0);
    }

    #[test]
    fn partials_match_finite_differences(p in enso_params(), t in 0.0..24.0f64,
                                         x in -3.0..3.0f64, y1 in -3.0..3.0f64, y2 in -3.0..3.0f64) {
        let f = |x: f64, y1: f64, y2: f64, p: &[f64]| {
            let mut out = [0.0];
            Enso.rhs(t, &[x], &[y1], &[y2], p, &mut out);
            out[0]
        };
        let h = 1e-6;
        let d = Enso.partials(t, &[x], &[y1], &[y2], &p);
        let fd = |a: f64, b: f64| (a - b) / (2.0 * h);
        prop_assert!(close(d.dx[(0, 0)], fd(f(x + h, y1, y2, &p), f(x - h, y1, y2, &p)), 1e-5));
        prop_assert!(close(d.dxd1[(0, 0)], fd(f(x, y1 + h, y2, &p), f(x, y1 - h, y2, &p)), 1e-5));
        prop_assert!(close(d.dxd2[(0, 0)], fd(f(x, y1, y2 + h, &p), f(x, y1, y2 - h, &p)), 1e-5));
        for j in 0..p.len() {
            let mut out = [0.0];
            Enso.param_partial(t, &[x], &[y1], &[y2], &p, j, &mut out);
            let hj = h * (1.0 + p[j].abs());
            let (mut up, mut dn) = (p.clone(), p.clone());
            up[j] += hj;
            dn[j] -= hj;
            let num = (f(x, y1, y2, &up) - f(x, y1, y2, &dn)) / (2.0 * hj);
            prop_assert!(close(out[0], num, 1e-5), "parameter {}: {} vs {}", j, out[0], num);
        }
    }

    #[test]
    fn crossed_fractions_match_brute_force(a in 0.0..1.5f64, b in 0.0..1.5f64, max_den in 1usize..14) {
        let found = crossed_fractions(a, b, max_den);
        let mut brute = Vec::new();
        for l in 1..=max_den {
            for k in 1..=(2 * l) {
                let v = k as f64 / l as f64;
                let inside = if a <= b { v > a && v <= b } else { v >= b && v < a };
                if inside && gcd(k, l) == 1 {
                    brute.push((k, l));
                }
            }
        }
        let mut sorted = found.clone();
        sorted.sort();
        brute.sort();
        prop_assert_eq!(sorted, brute);
        // ordered from a towards b
        for w in found.windows(2) {
            let (u, v) = (w[0].0 as f64 / w[0].1 as f64, w[1].0 as f64 / w[1].1 as f64);
            let ordered = if a <= b { u < v } else { u > v };
            prop_assert!(ordered);
        }
    }

    #[test]
    fn wrapped_delays_land_in_unit_interval(t in 0.0..1.0f64, tau in 0.0..40.0f64, period in 0.5..80.0f64) {
        let (w, nu) = wrap_delayed_argument(t, tau, period).unwrap();
        prop_assert!((0.0..1.0).contains(&w));
        prop_assert!(nu >= 0);
        prop_assert!((t - tau / period + nu as f64 - w).abs() < 1e-12);
    }

    #[test]
    fn node_weights_integrate_trigonometric_profiles(intervals in 2usize..40, degree in 2usize..7, k in 1usize..3) {
        let mesh = CollocationMesh::uniform(intervals, degree);
        let w = mesh.node_integral_weights();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-13);
        prop_assert!(w.iter().all(|&q| q > -1e-14));
        let s: f64 = (0..mesh.periodic_nodes())
            .map(|g| w[g] * (2.0 * std::f64::consts::PI * k as f64 * mesh.node_time(g)).cos())
            .sum();
        // interpolation error of order h^(m+1) in the scaled frequency
        let bound = (2.0 * std::f64::consts::PI * k as f64 / intervals as f64).powi(degree as i32 + 1);
        prop_assert!(s.abs() <= 0.1 * bound + 1e-14);
    }

    #[test]
    fn profiles_interpolate_their_nodes(intervals in 2usize..20, degree in 2usize..7, seed in any::<u64>()) {
        let mesh = CollocationMesh::uniform(intervals, degree);
        let np = mesh.periodic_nodes();
        let x: Vec<f64> = (0..np).map(|g| ((g as u64 ^ seed) % 97) as f64 / 97.0).collect();
        for g in 0..np {
            let v = eval_periodic(&mesh, &x, 1, mesh.node_time(g));
            prop_assert!((v[0] - x[g]).abs() < 1e-12);
        }
        // periodic wrap
        let a = eval_periodic(&mesh, &x, 1, 0.0);
        let b = eval_periodic(&mesh, &x, 1, 1.0);
        prop_assert!((a[0] - b[0]).abs() < 1e-12);
    }

    #[test]
    fn csv_numbers_keep_fifteen_digits(x in prop::num::f64::NORMAL) {
        let s = fmt_num(x);
        let y: f64 = s.parse().unwrap();
        prop_assert!(((y - x) / x).abs() <= 5e-15);
        prop_assert!(!s.contains(' '));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn integrator_keeps_the_trivial_solution(p in enso_params()) {
        let traj = integrate(&Enso, &p, &History::Constant(vec![0.0]), 60.0, 0.05).unwrap();
        prop_assert!((0..traj.len()).all(|k| traj.state(k)[0] == 0.0));
    }

    #[test]
    fn integrator_is_deterministic(p in enso_params(), h0 in 0.1..1.0f64) {
        let a = integrate(&Enso, &p, &History::Constant(vec![h0]), 48.0, 0.05).unwrap();
        let b = integrate(&Enso, &p, &History::Constant(vec![h0]), 48.0, 0.05).unwrap();
        prop_assert_eq!(a.times(), b.times());
        prop_assert!((0..a.len()).all(|k| a.state(k) == b.state(k)));
    }
}
