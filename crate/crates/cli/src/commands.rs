//! The subcommands. Each computes its results, stages them in an
//! [`Output`] and reports whether the result is complete.

use std::path::Path;

use anyhow::Result;
use delaycont::engine::{write_branch_csv, BranchStatus, ContinuationSettings, Event, EventKind};
use delaycont::eqbif::{continue_equilibrium, spectral_merges, EquilibriumOptions};
use delaycont::integrate::{integrate, peak_phases, rotation_number};
use delaycont::io::{fmt_num, write_restart};
use delaycont::periodic::{branch_off_hopf, continue_periodic, CollocationMesh, OrbitBranch, OrbitOptions};
use delaycont::pobif::{
    continue_bif_curve, detect_po_bifurcations, rational_points_on_curve, DetectOptions, TorusPoint,
};
use delaycont::resonance::{
    grow_surface, init_circle_from_autonomous, init_circle_from_torus, project_tongue, stability_scan,
    write_surface_jsonl, CircleOptions, GrowOptions, ResonanceSurface,
};
use delaycont::spectra::{equilibrium_spectrum, find_equilibrium, DEFAULT_ROOT_FLOOR};
use delaycont::{DelayModel, Enso, Error, History, PeriodicOrbit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{read_input, CliError};
use crate::output::Output;

/// Whether a command produced its complete result.
pub enum Completion {
    Complete,
    /// Partial result; the message explains why.
    Partial(CliError),
}

fn model(_cfg: &RunConfig) -> &'static dyn DelayModel {
    // `RunConfig::new` rejects every other model name
    &Enso
}

fn settings(cfg: &RunConfig) -> Result<ContinuationSettings> {
    Ok(ContinuationSettings {
        initial_step: cfg.setting("step"),
        max_step: cfg.setting("max_step"),
        max_points: cfg.count("max_points")?,
        tolerance: cfg.setting("tolerance"),
        ..Default::default()
    })
}

fn mesh(cfg: &RunConfig) -> Result<CollocationMesh> {
    let n = cfg.count("intervals")?;
    let boundaries = (0..=n).map(|i| i as f64 / n as f64).collect();
    Ok(CollocationMesh::from_boundaries(boundaries, cfg.count("degree")?)?)
}

fn orbit_options(cfg: &RunConfig, direction: f64) -> Result<OrbitOptions> {
    Ok(OrbitOptions {
        settings: settings(cfg)?,
        multiplier_count: cfg.count("multipliers")?,
        max_denominator: cfg.count("max_denominator")?,
        direction,
        ..Default::default()
    })
}

fn status_completion(status: &BranchStatus) -> Completion {
    match status {
        BranchStatus::Stalled(why) => Completion::Partial(CliError::from(Error::Stalled(why.clone()))),
        _ => Completion::Complete,
    }
}

fn param_names(cfg: &RunConfig) -> Vec<String> {
    cfg.params.iter().map(|p| p.0.clone()).collect()
}

/// Sets the free parameter to the start of its range.
fn start_at(cfg: &mut RunConfig, free: &str, range: (f64, f64)) -> Result<()> {
    cfg.param(free)?;
    cfg.assign(free, &format!("{:?}", range.0))?;
    Ok(())
}

fn equilibrium_options(cfg: &RunConfig) -> Result<EquilibriumOptions> {
    let defaults = EquilibriumOptions::default();
    Ok(EquilibriumOptions {
        settings: ContinuationSettings {
            max_step: cfg.setting("max_step").min(defaults.settings.max_step),
            ..settings(cfg)?
        },
        ..defaults
    })
}

pub fn eq_branch(cfg: &mut RunConfig, free: &str, range: (f64, f64), out: &mut Output) -> Result<Completion> {
    start_at(cfg, free, range)?;
    let m = model(cfg);
    let p = cfg.parameters();
    let x0 = find_equilibrium(m, &vec![0.0; m.dim()], p.values())?;
    let opts = equilibrium_options(cfg)?;
    let eq = continue_equilibrium(m, &x0, &p, free, range, &opts)?;
    let names = param_names(cfg);
    let rows = eq.rows();
    out.add_with("branch.csv", |w| {
        write_branch_csv(w, &names, &delaycont::eqbif::EquilibriumBranch::test_names(), &rows)
    })?;
    out.add_with("spectra.csv", |w| {
        use std::io::Write;
        writeln!(w, "index,{free},re,im")?;
        for (i, pt) in eq.points.iter().enumerate() {
            if let Some(s) = &pt.spectrum {
                for z in &s.values {
                    writeln!(w, "{i},{},{},{}", fmt_num(pt.params[eq.free]), fmt_num(z.re), fmt_num(z.im))?;
                }
            }
        }
        Ok(())
    })?;
    let merges = spectral_merges(&eq, m, &opts)?;
    out.add("merges.csv", format!("{free}\n{}", merges.iter().map(|v| fmt_num(*v) + "\n").collect::<String>()));
    let records: Vec<Vec<f64>> = (0..eq.branch.len()).map(|i| eq.branch.u(i).as_slice().to_vec()).collect();
    out.add_with("branch.restart", |w| write_restart(w, &records))?;
    for e in &eq.events {
        eprintln!("{}", e.tag());
    }
    Ok(status_completion(&eq.branch.status))
}

pub fn spectrum(cfg: &RunConfig, out: &mut Output) -> Result<Completion> {
    let m = model(cfg);
    let p = cfg.parameters();
    let x0 = find_equilibrium(m, &vec![0.0; m.dim()], p.values())?;
    let s = equilibrium_spectrum(m, &x0, p.values(), DEFAULT_ROOT_FLOOR)?;
    out.add_with("spectrum.csv", |w| s.write_csv(w))?;
    Ok(Completion::Complete)
}

fn first_hopf(cfg: &RunConfig, free: &str, range: (f64, f64)) -> Result<(delaycont::Parameters, Event)> {
    let m = model(cfg);
    let p = cfg.parameters();
    let x0 = find_equilibrium(m, &vec![0.0; m.dim()], p.values())?;
    let eq = continue_equilibrium(m, &x0, &p, free, range, &equilibrium_options(cfg)?)?;
    let hopf = eq
        .events
        .iter()
        .find(|e| e.kind == EventKind::Hopf)
        .cloned()
        .ok_or_else(|| CliError::config(format!("no Hopf point for {free} in {}:{}", range.0, range.1)))?;
    Ok((p, hopf))
}

fn orbit_json(model: &dyn DelayModel, orbit: &PeriodicOrbit, count: usize) -> Result<String> {
    let mu = orbit.multipliers(model, count)?;
    let mut v = serde_json::to_value(orbit)?;
    v["multipliers"] = serde_json::json!(mu.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>());
    Ok(serde_json::to_string_pretty(&v)?)
}

fn write_orbit_branch(
    cfg: &RunConfig,
    branch: &OrbitBranch,
    extra_events: &[Event],
    out: &mut Output,
) -> Result<()> {
    let m = model(cfg);
    let mut with_events = branch.clone();
    with_events.events.extend(extra_events.iter().cloned());
    with_events.events.sort_by(|a, b| a.segment.cmp(&b.segment).then(a.value.total_cmp(&b.value)));
    let rows = with_events.rows(m)?;
    let names = param_names(cfg);
    out.add_with("branch.csv", |w| write_branch_csv(w, &names, &OrbitBranch::test_names(), &rows))?;
    let free = branch.free;
    let problem = branch.problem(m)?;
    out.add_with("multipliers.csv", |w| {
        use std::io::Write;
        writeln!(w, "index,{},re,im", names[free])?;
        for i in 0..branch.len() {
            if let Some(mu) = &branch.multipliers[i] {
                let value = problem.params_at(&branch.branch.u(i))[free];
                for z in mu {
                    writeln!(w, "{i},{},{},{}", fmt_num(value), fmt_num(z.re), fmt_num(z.im))?;
                }
            }
        }
        Ok(())
    })?;
    let records: Vec<Vec<f64>> = (0..branch.len()).map(|i| branch.branch.u(i).as_slice().to_vec()).collect();
    out.add_with("branch.restart", |w| write_restart(w, &records))?;
    let count = cfg.count("multipliers")?;
    let last = branch.orbit(m, branch.len() - 1)?;
    out.add("orbits/last.json", orbit_json(m, &last, count)?);
    for e in with_events.events.iter() {
        let orbit = branch.event_orbit(m, e)?;
        let name = match e.kind {
            EventKind::Resonance => format!("resonance-{}-{}", e.data[0] as usize, e.data[1] as usize),
            k => format!("{}-{}", k.label(), e.segment),
        };
        out.add(format!("orbits/{name}.json"), orbit_json(m, &orbit, count)?);
        out.add_with(format!("profiles/{name}.csv"), |w| orbit.write_profile_csv(w))?;
        eprintln!("{}", e.tag());
    }
    Ok(())
}

pub fn po_branch(
    cfg: &mut RunConfig,
    free: &str,
    range: (f64, f64),
    orbit_file: Option<&Path>,
    reverse: bool,
    out: &mut Output,
) -> Result<Completion> {
    let m = model(cfg);
    let direction = if reverse { -1.0 } else { 1.0 };
    let start = match orbit_file {
        Some(path) => {
            let orbit = PeriodicOrbit::from_json(&read_input(path)?)?;
            for (name, value) in orbit.param_names.iter().zip(&orbit.params) {
                cfg.assign(name, &format!("{value:?}"))?;
            }
            orbit
        }
        None => {
            let amplitude = m.forcing_amplitude_index().map(|i| cfg.params[i].1).unwrap_or(0.0);
            if amplitude == 0.0 {
                start_at(cfg, free, range)?;
                let (p, hopf) = first_hopf(cfg, free, range)?;
                branch_off_hopf(m, &p, free, &hopf, cfg.setting("hopf_amplitude"), mesh(cfg)?)?
            } else {
                start_at(cfg, free, range)?;
                trivial_orbit(cfg)?
            }
        }
    };
    let p = cfg.parameters();
    let branch = continue_periodic(m, &start, &p, free, range, &orbit_options(cfg, direction)?)?;
    write_orbit_branch(cfg, &branch, &[], out)?;
    Ok(status_completion(&branch.branch.status))
}

fn trivial_orbit(cfg: &RunConfig) -> Result<PeriodicOrbit> {
    let m = model(cfg);
    let p = cfg.parameters();
    let period = m
        .forcing_period(p.values())
        .ok_or_else(|| CliError::config("the model has no forcing period"))?;
    let mut orbit = PeriodicOrbit::from_function(m.dim(), mesh(cfg)?, period, p.values().to_vec(), false, |_| {
        vec![0.0; m.dim()]
    });
    orbit.param_names = param_names(cfg);
    Ok(orbit)
}

/// Forced trivial-orbit branch with its bifurcation events.
fn forced_branch(cfg: &mut RunConfig, free: &str, range: (f64, f64)) -> Result<(OrbitBranch, Vec<Event>)> {
    start_at(cfg, free, range)?;
    let m = model(cfg);
    let orbit = trivial_orbit(cfg)?;
    let branch = continue_periodic(m, &orbit, &cfg.parameters(), free, range, &orbit_options(cfg, 1.0)?)?;
    let detect = DetectOptions { settings: settings(cfg)?, multiplier_count: cfg.count("multipliers")? };
    let events = detect_po_bifurcations(m, &branch, &detect)?;
    Ok((branch, events))
}

pub fn floquet(cfg: &mut RunConfig, free: &str, range: (f64, f64), out: &mut Output) -> Result<Completion> {
    let (branch, events) = forced_branch(cfg, free, range)?;
    write_orbit_branch(cfg, &branch, &events, out)?;
    Ok(status_completion(&branch.branch.status))
}

#[allow(clippy::too_many_arguments)]
pub fn bif_curve(
    cfg: &mut RunConfig,
    free: &str,
    range: (f64, f64),
    kind: EventKind,
    second: &str,
    window: ((f64, f64), (f64, f64)),
    out: &mut Output,
) -> Result<Completion> {
    let (branch, events) = forced_branch(cfg, free, range)?;
    let m = model(cfg);
    let event = events
        .iter()
        .find(|e| e.kind == kind)
        .ok_or_else(|| CliError::config(format!("no {} point on the branch", kind.label())))?;
    let curve = continue_bif_curve(m, &branch, event, second, window, &settings(cfg)?)?;
    out.add_with("curve.csv", |w| curve.write_csv(m, w).map_err(std::io::Error::other))?;
    if kind == EventKind::Torus {
        let roots = rational_points_on_curve(m, &curve, cfg.count("max_denominator")?)?;
        let mut index = String::from("k,l,alpha,");
        index.push_str(&format!("{},{}\n", cfg.params[curve.free.0].0, cfg.params[curve.free.1].0));
        for r in &roots {
            out.add(format!("roots/{}-{}.json", r.k, r.l), r.to_json()?);
            index.push_str(&format!(
                "{},{},{},{},{}\n",
                r.k,
                r.l,
                fmt_num(r.alpha),
                fmt_num(r.orbit.params[curve.free.0]),
                fmt_num(r.orbit.params[curve.free.1])
            ));
        }
        out.add("roots.csv", index);
    }
    Ok(match (status_completion(&curve.status.0), status_completion(&curve.status.1)) {
        (Completion::Partial(e), _) | (_, Completion::Partial(e)) => Completion::Partial(e),
        _ => Completion::Complete,
    })
}

pub struct TongueSource<'a> {
    pub root: Option<&'a Path>,
    pub orbit: Option<&'a Path>,
    pub resonance: Option<(usize, usize)>,
    pub other: &'a str,
    pub window: Option<((f64, f64), (f64, f64))>,
}

pub fn tongue(cfg: &mut RunConfig, src: &TongueSource, out: &mut Output) -> Result<Completion> {
    let m = model(cfg);
    let opts = CircleOptions { rho: cfg.setting("rho"), n_phi: cfg.count("n_phi")?, ..Default::default() };
    let mut surface: ResonanceSurface = match (src.root, src.orbit) {
        (Some(path), None) => {
            let root = TorusPoint::from_json(&read_input(path)?)?;
            for (name, value) in root.orbit.param_names.iter().zip(&root.orbit.params) {
                cfg.assign(name, &format!("{value:?}"))?;
            }
            init_circle_from_torus(m, &root, &opts)?
        }
        (None, Some(path)) => {
            let mut orbit = PeriodicOrbit::from_json(&read_input(path)?)?;
            orbit.autonomous = true;
            let (k, l) = src.resonance.ok_or_else(|| CliError::config("--orbit needs --resonance k:l"))?;
            let amplitude = m.forcing_amplitude_index().ok_or_else(|| CliError::config("the model is not forced"))?;
            let other = cfg.parameters().index_or_err(src.other)?;
            init_circle_from_autonomous(m, &orbit, k, l, amplitude, other, &opts)?
        }
        _ => return Err(CliError::config("give exactly one of --root or --orbit").into()),
    };
    let grow = GrowOptions {
        delta: cfg.setting("delta"),
        max_circles: cfg.count("circles")?,
        bounds: src
            .window
            .map(|(a, b)| [a, b])
            .unwrap_or([(f64::NEG_INFINITY, f64::INFINITY); 2]),
        ..Default::default()
    };
    let grown = grow_surface(m, &mut surface, &grow);
    stability_scan(m, &mut surface, cfg.count("multipliers")?)?;
    out.add_with("surface.jsonl", |w| write_surface_jsonl(&surface, w).map_err(std::io::Error::other))?;
    out.add("phases.csv", phases_csv(&surface));
    if surface.circles.len() >= 2 {
        let tongue = project_tongue(m, &mut surface)?;
        out.add_with("tongue.csv", |w| tongue.write_csv(w))?;
        if !tongue.flagged.is_empty() {
            eprintln!("circles without folds: {:?}", tongue.flagged);
        }
    }
    Ok(match grown {
        Ok(_) => Completion::Complete,
        Err(e @ Error::SurfaceFront(_)) => Completion::Partial(e.into()),
        Err(e) => return Err(e.into()),
    })
}

/// `<eta1>,<eta2>,phase,stable`: time of the maximum of the first component
/// modulo the forcing period, per locked orbit.
fn phases_csv(surface: &ResonanceSurface) -> String {
    let tf = surface.period / surface.l as f64;
    let mut s = format!(
        "{},{},phase,stable\n",
        surface.param_names[surface.free.0], surface.param_names[surface.free.1]
    );
    for (c, circle) in surface.circles.iter().enumerate() {
        for (i, p) in circle.points.iter().enumerate() {
            let phase = surface.orbit(c, i).argmax(0).rem_euclid(tf);
            let stable = match p.stable {
                Some(true) => "1",
                Some(false) => "0",
                None => "",
            };
            s.push_str(&format!("{},{},{},{stable}\n", fmt_num(p.eta[0]), fmt_num(p.eta[1]), fmt_num(phase)));
        }
    }
    s
}

/// History from `const:v[,v...]`, `orbit:<file.json>` or `csv:<file>` (`s,x...`
/// rows on `[-tau2, 0]`, linearly interpolated).
pub fn parse_history(spec: &str, dim: usize) -> Result<History> {
    let (kind, arg) = spec
        .split_once(':')
        .ok_or_else(|| CliError::config(format!("history must be const:, orbit: or csv:, got '{spec}'")))?;
    match kind {
        "const" => {
            let v: Vec<f64> = arg
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| CliError::config(format!("bad constant history '{arg}'")))?;
            if v.len() != dim {
                return Err(CliError::config(format!("history needs {dim} values")).into());
            }
            Ok(History::Constant(v))
        }
        "orbit" => {
            let orbit = PeriodicOrbit::from_json(&read_input(Path::new(arg))?)?;
            Ok(History::function(move |s, out| out.copy_from_slice(&orbit.eval(s))))
        }
        "csv" => {
            let text = read_input(Path::new(arg))?;
            let mut reader = csv::Reader::from_reader(text.as_bytes());
            let mut rows: Vec<Vec<f64>> = Vec::new();
            for rec in reader.records() {
                let rec = rec.map_err(|e| CliError::config(format!("history csv: {e}")))?;
                let row: Vec<f64> = rec
                    .iter()
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| CliError::config("history csv: non-numeric entry"))?;
                if row.len() != dim + 1 {
                    return Err(CliError::config(format!("history csv rows need {} columns", dim + 1)).into());
                }
                rows.push(row);
            }
            rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
            if rows.is_empty() {
                return Err(CliError::config("empty history csv").into());
            }
            Ok(History::function(move |s, out| {
                let j = rows.partition_point(|r| r[0] <= s);
                if j == 0 || j == rows.len() {
                    let r = if j == 0 { &rows[0] } else { &rows[rows.len() - 1] };
                    out.copy_from_slice(&r[1..]);
                    return;
                }
                let (a, b) = (&rows[j - 1], &rows[j]);
                let f = if b[0] > a[0] { (s - a[0]) / (b[0] - a[0]) } else { 0.0 };
                for c in 0..out.len() {
                    out[c] = a[c + 1] + f * (b[c + 1] - a[c + 1]);
                }
            }))
        }
        other => Err(CliError::config(format!("unknown history kind '{other}'")).into()),
    }
}

pub fn simulate(cfg: &RunConfig, history: &str, out: &mut Output) -> Result<Completion> {
    let m = model(cfg);
    let p = cfg.parameters();
    let hist = parse_history(history, m.dim())?;
    let traj = integrate(m, p.values(), &hist, cfg.setting("t_end"), cfg.setting("dt"))?;
    out.add_with("trajectory.csv", |w| traj.write_csv(w))?;
    let tf = m.forcing_period(p.values()).unwrap_or(12.0);
    let transient = cfg.setting("transient");
    let alpha = rotation_number(&traj, tf, transient).ok();
    let phases = peak_phases(&traj, tf, transient).unwrap_or_default();
    let summary = serde_json::json!({ "rotation_number": alpha, "peak_phases": phases });
    out.add("summary.json", serde_json::to_string_pretty(&summary)? + "\n");
    Ok(Completion::Complete)
}

/// Rotation number against one parameter; every sample integrates from
/// a constant history drawn from the seeded generator.
pub fn staircase(cfg: &mut RunConfig, free: &str, range: (f64, f64), out: &mut Output) -> Result<Completion> {
    let m = model(cfg);
    let idx = cfg.parameters().index_or_err(free)?;
    let n = cfg.count("samples")?;
    let seed = cfg.setting("seed") as u64;
    let base = cfg.parameters().values().to_vec();
    let (t_end, dt, transient) = (cfg.setting("t_end"), cfg.setting("dt"), cfg.setting("transient"));
    let tf = m.forcing_period(&base).ok_or_else(|| CliError::config("staircase needs a forced model"))?;
    let values: Vec<f64> =
        (0..n).map(|i| if n == 1 { range.0 } else { range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64 }).collect();
    let alphas: Vec<Option<f64>> = values
        .par_iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut p = base.clone();
            p[idx] = v;
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let h0: Vec<f64> = (0..m.dim()).map(|_| rng.gen_range(0.2..1.0)).collect();
            let traj = integrate(m, &p, &History::Constant(h0), t_end, dt).ok()?;
            rotation_number(&traj, tf, transient).ok()
        })
        .collect();
    let mut s = format!("{free},alpha\n");
    for (v, a) in values.iter().zip(&alphas) {
        s.push_str(&format!("{},{}\n", fmt_num(*v), a.map(fmt_num).unwrap_or_default()));
    }
    out.add("staircase.csv", s);
    Ok(Completion::Complete)
}

