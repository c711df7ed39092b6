//! Equilibrium branches: continuation, stability, Hopf / fold / branch-point
//! detection, branch switching and two-parameter Hopf curves.

use std::cell::Cell;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::engine::{
    self, Branch, BranchRow, ContinuationProblem, ContinuationSettings, Event, EventKind,
};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{linearize_at_constant, DelayModel, Parameters};
use crate::spectra::{LinearizedDde, Spectrum, SpectrumKind, DEFAULT_ROOT_FLOOR};

/// Equilibria `f(x, x, x, eta) = 0` with one free parameter; `u = (x, eta_free)`.
pub struct EquilibriumProblem<'a> {
    pub model: &'a dyn DelayModel,
    pub params: Vec<f64>,
    pub free: usize,
}

impl EquilibriumProblem<'_> {
    /// Full parameter vector for the unknowns `u`.
    pub fn params_at(&self, u: &DVector<f64>) -> Vec<f64> {
        let mut p = self.params.clone();
        p[self.free] = u[self.model.dim()];
        p
    }

    fn state(&self, u: &DVector<f64>) -> Vec<f64> {
        u.rows(0, self.model.dim()).iter().copied().collect()
    }

    /// `A + B + C` at the equilibrium.
    fn state_jacobian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let p = self.params_at(u);
        let x = self.state(u);
        let d = self.model.partials(0.0, &x, &x, &x, &p);
        d.dx + d.dxd1 + d.dxd2
    }

    pub fn linearization(&self, u: &DVector<f64>) -> Result<LinearizedDde> {
        linearize_at_constant(self.model, &self.state(u), &self.params_at(u))
    }
}

impl ContinuationProblem for EquilibriumProblem<'_> {
    fn dim(&self) -> usize {
        self.model.dim() + 1
    }

    fn residual(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.model.dim();
        let p = self.params_at(u);
        let x = self.state(u);
        let mut f = vec![0.0; n];
        self.model.rhs(0.0, &x, &x, &x, &p, &mut f);
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite equilibrium residual".into()));
        }
        Ok(DVector::from_vec(f))
    }

    fn jacobian(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.model.dim();
        let p = self.params_at(u);
        let x = self.state(u);
        let mut j = DMatrix::zeros(n, n + 1);
        j.view_mut((0, 0), (n, n)).copy_from(&self.state_jacobian(u));
        let mut col = vec![0.0; n];
        self.model.param_partial(0.0, &x, &x, &x, &p, self.free, &mut col);
        for i in 0..n {
            j[(i, n)] = col[i];
        }
        Ok(j)
    }

    fn primary_index(&self) -> usize {
        self.model.dim()
    }
}

/// One stored equilibrium with its spectrum.
#[derive(Debug, Clone)]
pub struct EquilibriumPoint {
    pub x: Vec<f64>,
    pub params: Vec<f64>,
    pub spectrum: Option<Spectrum>,
}

#[derive(Debug, Clone)]
pub struct EquilibriumOptions {
    pub settings: ContinuationSettings,
    pub root_floor: f64,
    /// Compute spectra at every `spectra_every`-th point (and at the ends).
    pub spectra_every: usize,
    pub event_tolerance: f64,
    pub direction: f64,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        Self {
            settings: ContinuationSettings { initial_step: 0.02, max_step: 0.05, ..Default::default() },
            root_floor: DEFAULT_ROOT_FLOOR,
            spectra_every: 1,
            event_tolerance: 1e-8,
            direction: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EquilibriumBranch {
    pub param_names: Vec<String>,
    pub free: usize,
    pub base_params: Vec<f64>,
    pub branch: Branch,
    pub points: Vec<EquilibriumPoint>,
    pub events: Vec<Event>,
}

fn complex_unstable(s: &Spectrum) -> usize {
    s.values.iter().filter(|z| z.re > 1e-9 && z.im != 0.0).count()
}

/// Continues equilibria in parameter `free` over `range`, computing spectra
/// and localizing Hopf, fold and branch points.
pub fn continue_equilibrium(
    model: &dyn DelayModel,
    x0: &[f64],
    params: &Parameters,
    free: &str,
    range: (f64, f64),
    opts: &EquilibriumOptions,
) -> Result<EquilibriumBranch> {
    let free_idx = params.index_or_err(free)?;
    let n = model.dim();
    if !model.is_autonomous(params.values()) {
        return Err(Error::Contract("equilibria require an autonomous system (zero forcing)".into()));
    }
    let mut problem = EquilibriumProblem { model, params: params.values().to_vec(), free: free_idx };
    let mut u0 = DVector::zeros(n + 1);
    for i in 0..n {
        u0[i] = x0[i];
    }
    u0[n] = params.values()[free_idx];
    let r0 = problem.residual(&u0)?;
    if r0.amax() > 1e-6 {
        return Err(Error::Contract(format!("start is not an equilibrium (residual {:.3e})", r0.amax())));
    }
    let mut settings = opts.settings.clone();
    settings.bounds.push((n, range.0, range.1));
    let branch = engine::continue_branch(&mut problem, &u0, opts.direction, &settings)?;
    finish_branch(&problem, params, branch, opts)
}

/// Computes spectra and events for an already continued branch.
fn finish_branch(
    problem: &EquilibriumProblem<'_>,
    params: &Parameters,
    branch: Branch,
    opts: &EquilibriumOptions,
) -> Result<EquilibriumBranch> {
    let n = problem.model.dim();
    let every = opts.spectra_every.max(1);
    let mut points = Vec::with_capacity(branch.len());
    for i in 0..branch.len() {
        let u = branch.u(i);
        let spectrum = if i % every == 0 || i + 1 == branch.len() {
            let lin = problem.linearization(&u)?;
            Some(Spectrum { kind: SpectrumKind::Characteristic, values: lin.leading_roots(opts.root_floor)? })
        } else {
            None
        };
        points.push(EquilibriumPoint { x: u.rows(0, n).iter().copied().collect(), params: problem.params_at(&u), spectrum });
    }
    let mut events = Vec::new();
    let spectral: Vec<usize> = (0..points.len()).filter(|&i| points[i].spectrum.is_some()).collect();
    for w in spectral.windows(2) {
        let (i, j) = (w[0], w[1]);
        let (si, sj) = (points[i].spectrum.as_ref().unwrap(), points[j].spectrum.as_ref().unwrap());
        // a complex pair merging into two real roots changes the complex
        // count but not the unstable count
        if complex_unstable(si) != complex_unstable(sj) && si.unstable_count() != sj.unstable_count() {
            let seg = locate_segment(problem, &branch, i, j, |u| hopf_test_sign(problem, u))?;
            if let Some(ev) = locate_hopf(problem, &branch, seg, opts)? {
                events.push(ev);
            }
        }
    }
    // real roots through zero: sign of det(A + B + C)
    for i in 0..branch.len().saturating_sub(1) {
        let (a, b) = (branch.u(i), branch.u(i + 1));
        let da = linalg::det_sign(problem.state_jacobian(&a));
        let db = linalg::det_sign(problem.state_jacobian(&b));
        if da != db {
            let test = |u: &DVector<f64>| Ok(problem.state_jacobian(u).determinant());
            let u = engine::locate_event(problem, &a, &b, test, opts.event_tolerance, &opts.settings)?;
            let kind = if is_branch_point(problem, &u)? { EventKind::BranchPoint } else { EventKind::Fold };
            events.push(Event { kind, segment: i, value: u[n], u: u.iter().copied().collect(), data: Vec::new(), degenerate: false });
        }
    }
    events.sort_by_key(|e| e.segment);
    Ok(EquilibriumBranch {
        param_names: params.names().to_vec(),
        free: problem.free,
        base_params: problem.params.clone(),
        branch,
        points,
        events,
    })
}

/// Narrows a spectral change between stored points `i < j` (which may be
/// several steps apart) to one segment.
fn locate_segment(
    _problem: &EquilibriumProblem<'_>,
    branch: &Branch,
    i: usize,
    j: usize,
    sign: impl Fn(&DVector<f64>) -> Result<usize>,
) -> Result<usize> {
    let target = sign(&branch.u(i))?;
    for k in i..j {
        if sign(&branch.u(k + 1))? != target {
            return Ok(k);
        }
    }
    Ok(j - 1)
}

fn hopf_test_sign(problem: &EquilibriumProblem<'_>, u: &DVector<f64>) -> Result<usize> {
    let lin = problem.linearization(u)?;
    let roots = lin.leading_roots(-0.5)?;
    Ok(roots.iter().filter(|z| z.re > 1e-9 && z.im != 0.0).count())
}

fn locate_hopf(
    problem: &EquilibriumProblem<'_>,
    branch: &Branch,
    seg: usize,
    opts: &EquilibriumOptions,
) -> Result<Option<Event>> {
    let n = problem.model.dim();
    let (a, b) = (branch.u(seg), branch.u(seg + 1));
    let la = problem.linearization(&a)?.leading_roots(-1.0)?;
    // the complex root nearest the imaginary axis is the crossing one
    let Some(start) = la
        .iter()
        .filter(|z| z.im > 0.0)
        .min_by(|x, y| x.re.abs().total_cmp(&y.re.abs()))
        .copied()
    else {
        return Ok(None);
    };
    let tracked = Cell::new(start);
    let test = |u: &DVector<f64>| -> Result<f64> {
        let lin = problem.linearization(u)?;
        let lam = lin
            .refine_root(tracked.get(), 60)
            .ok_or_else(|| Error::Localization("lost track of the critical root".into()))?;
        tracked.set(lam);
        Ok(lam.re)
    };
    let u = match engine::locate_event(problem, &a, &b, test, opts.event_tolerance, &opts.settings) {
        Ok(u) => u,
        Err(Error::Localization(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let omega = tracked.get().im.abs();
    Ok(Some(Event {
        kind: EventKind::Hopf,
        segment: seg,
        value: u[n],
        u: u.iter().copied().collect(),
        data: vec![omega],
        degenerate: omega < 1e-6,
    }))
}

/// Smallest singular value of `[f_x | f_eta]` below `1e-6` marks a branch point.
fn is_branch_point(problem: &EquilibriumProblem<'_>, u: &DVector<f64>) -> Result<bool> {
    let j = problem.jacobian(u)?;
    let n = j.nrows();
    let mut sq = DMatrix::zeros(n + 1, n + 1);
    sq.view_mut((0, 0), (n, n + 1)).copy_from(&j);
    let sv = sq.singular_values();
    // one singular value of the padded matrix is structurally zero
    let mut s: Vec<f64> = sv.iter().copied().collect();
    s.sort_by(|a, b| a.total_cmp(b));
    Ok(s.get(1).copied().unwrap_or(0.0) < 1e-6)
}

/// Parameter values where the two leading roots switch between a complex
/// pair and two real roots (spectral feature, not an event).
pub fn spectral_merges(eq: &EquilibriumBranch, model: &dyn DelayModel, opts: &EquilibriumOptions) -> Result<Vec<f64>> {
    let problem = EquilibriumProblem { model, params: eq.base_params.clone(), free: eq.free };
    let leading_complex = |u: &DVector<f64>| -> Result<bool> {
        let roots = problem.linearization(u)?.leading_roots(opts.root_floor)?;
        Ok(roots.first().map(|z| z.im != 0.0).unwrap_or(false))
    };
    let mut out = Vec::new();
    for i in 0..eq.branch.len().saturating_sub(1) {
        let (a, b) = (eq.branch.u(i), eq.branch.u(i + 1));
        if leading_complex(&a)? != leading_complex(&b)? {
            let u = engine::locate_switch(&problem, &a, &b, leading_complex, 1e-9, &opts.settings)?;
            out.push(u[model.dim()]);
        }
    }
    Ok(out)
}

/// Two seeds on the secondary branch through a branch point, with the
/// tangent of the secondary branch.
#[derive(Debug, Clone)]
pub struct SwitchSeeds {
    pub seeds: Vec<DVector<f64>>,
    pub tangents: Vec<DVector<f64>>,
}

/// Branch switching at a localized branch point: seeds are corrected onto
/// the secondary branch on hyperplanes `v . (u - u*) = +-eps`, where `v`
/// spans the kernel direction transverse to the primary branch.
pub fn switch_branch(eq: &EquilibriumBranch, model: &dyn DelayModel, event: &Event, eps: Option<f64>) -> Result<SwitchSeeds> {
    if event.kind != EventKind::BranchPoint {
        return Err(Error::Contract("branch switching requires a branch-point event".into()));
    }
    let problem = EquilibriumProblem { model, params: eq.base_params.clone(), free: eq.free };
    let n = model.dim();
    let u_star = DVector::from_column_slice(&event.u);
    let j = problem.jacobian(&u_star)?;
    let mut sq = DMatrix::zeros(n + 1, n + 1);
    sq.view_mut((0, 0), (n, n + 1)).copy_from(&j);
    let svd = sq.svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::Numerical("svd failed".into()))?;
    let mut order: Vec<usize> = (0..n + 1).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let k1: DVector<f64> = vt.row(order[0]).transpose();
    let k2: DVector<f64> = vt.row(order[1]).transpose();
    // primary-branch tangent at the event
    let t_old = DVector::from_column_slice(&eq.branch.points[event.segment].tangent);
    // kernel vector orthogonal to the old tangent
    let c1 = k1.dot(&t_old);
    let c2 = k2.dot(&t_old);
    let mut v = &k1 * c2 - &k2 * c1;
    if v.norm() < 1e-12 {
        v = k1.clone();
    }
    let v = v.normalize();
    let x_norm = u_star.rows(0, n).norm();
    let eps = eps.unwrap_or(1e-3 * (1.0 + x_norm));
    let mut seeds = Vec::new();
    let mut tangents = Vec::new();
    for sign in [1.0, -1.0] {
        let anchor = &u_star + &v * (sign * eps);
        let Ok((u, _)) = engine::correct(&problem, &anchor, &v, &anchor, 30, 1e-11) else { continue };
        // reject seeds that fell back onto the primary branch
        let off = (&u - &u_star).dot(&v).abs();
        let along_old = (&u - &u_star) - &t_old * (&u - &u_star).dot(&t_old);
        if off < 0.5 * eps || along_old.norm() < 0.5 * eps {
            continue;
        }
        let jt = problem.jacobian(&u)?;
        let t = linalg::null_vector(&jt, &(&u - &u_star))?;
        seeds.push(u);
        tangents.push(t);
    }
    if seeds.is_empty() {
        return Err(Error::SwitchFailure("both seeds converged back to the primary branch".into()));
    }
    Ok(SwitchSeeds { seeds, tangents })
}

/// Continues the secondary branch from a switch seed, moving away from the
/// branch point.
pub fn continue_from_seed(
    eq: &EquilibriumBranch,
    model: &dyn DelayModel,
    seed: &DVector<f64>,
    tangent: &DVector<f64>,
    range: (f64, f64),
    opts: &EquilibriumOptions,
) -> Result<EquilibriumBranch> {
    let n = model.dim();
    let mut problem = EquilibriumProblem { model, params: eq.base_params.clone(), free: eq.free };
    problem.params[eq.free] = seed[n];
    let mut settings = opts.settings.clone();
    settings.bounds.push((n, range.0, range.1));
    let branch = engine::continue_branch_with(&mut problem, seed, Some(tangent), 1.0, &settings, |_, _, _| Ok(()))?;
    let mut params = Parameters::new(eq.param_names.clone(), eq.base_params.clone());
    params.values_mut()[eq.free] = seed[n];
    finish_branch(&problem, &params, branch, opts)
}

/// Hopf curve in two parameters: unknowns `(x, omega, eta1, eta2)`, equations
/// `f(x, x, x, eta) = 0`, `Re chi(i omega) = Im chi(i omega) = 0`.
pub struct HopfProblem<'a> {
    pub model: &'a dyn DelayModel,
    pub params: Vec<f64>,
    pub free: (usize, usize),
}

impl HopfProblem<'_> {
    pub fn params_at(&self, u: &DVector<f64>) -> Vec<f64> {
        let n = self.model.dim();
        let mut p = self.params.clone();
        p[self.free.0] = u[n + 1];
        p[self.free.1] = u[n + 2];
        p
    }
}

impl ContinuationProblem for HopfProblem<'_> {
    fn dim(&self) -> usize {
        self.model.dim() + 3
    }

    fn residual(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.model.dim();
        let p = self.params_at(u);
        let x: Vec<f64> = u.rows(0, n).iter().copied().collect();
        let mut f = vec![0.0; n];
        self.model.rhs(0.0, &x, &x, &x, &p, &mut f);
        let lin = linearize_at_constant(self.model, &x, &p)?;
        let chi = lin.char_value(Complex64::new(0.0, u[n]));
        let mut r = DVector::zeros(n + 2);
        for i in 0..n {
            r[i] = f[i];
        }
        r[n] = chi.re;
        r[n + 1] = chi.im;
        Ok(r)
    }

    fn primary_index(&self) -> usize {
        self.model.dim() + 1
    }
}

/// Continues a Hopf point in the branch parameter and `second`.
pub fn continue_hopf(
    eq: &EquilibriumBranch,
    model: &dyn DelayModel,
    event: &Event,
    second: &str,
    range1: (f64, f64),
    range2: (f64, f64),
    settings: &ContinuationSettings,
) -> Result<Branch> {
    if event.kind != EventKind::Hopf {
        return Err(Error::Contract("Hopf continuation requires a Hopf event".into()));
    }
    let params = Parameters::new(eq.param_names.clone(), eq.base_params.clone());
    let i2 = params.index_or_err(second)?;
    if i2 == eq.free {
        return Err(Error::Config("the two free parameters must differ".into()));
    }
    let n = model.dim();
    let mut problem = HopfProblem { model, params: eq.base_params.clone(), free: (eq.free, i2) };
    let mut u0 = DVector::zeros(n + 3);
    for i in 0..n {
        u0[i] = event.u[i];
    }
    u0[n] = event.data[0];
    u0[n + 1] = event.value;
    u0[n + 2] = eq.base_params[i2];
    let mut s = settings.clone();
    s.bounds.push((n + 1, range1.0, range1.1));
    s.bounds.push((n + 2, range2.0, range2.1));
    s.bounds.push((n, 1e-9, f64::INFINITY));
    let branch = engine::continue_branch(&mut problem, &u0, 1.0, &s)?;
    Ok(branch)
}

impl EquilibriumBranch {
    /// CSV rows with events inserted after their bracketing segment start.
    pub fn rows(&self) -> Vec<BranchRow> {
        let n = self.points.first().map(|p| p.x.len()).unwrap_or(0);
        let mut rows = Vec::new();
        let row_for = |x: &[f64], params: Vec<f64>, spectrum: Option<&Spectrum>, event: String| BranchRow {
            norm: x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            params,
            period: None,
            unstable_count: spectrum.map(|s| s.unstable_count()),
            tests: vec![spectrum.and_then(|s| s.values.first().map(|z| z.re)).unwrap_or(f64::NAN)],
            event,
        };
        for (i, p) in self.points.iter().enumerate() {
            rows.push(row_for(&p.x, p.params.clone(), p.spectrum.as_ref(), String::new()));
            for e in self.events.iter().filter(|e| e.segment == i) {
                let mut params = self.base_params.clone();
                params[self.free] = e.value;
                rows.push(row_for(&e.u[..n], params, None, e.tag()));
            }
        }
        rows
    }

    pub fn test_names() -> Vec<String> {
        vec!["max_re".into()]
    }

    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.kind == kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Enso, FnModel};

    fn enso_branch() -> EquilibriumBranch {
        let p = Enso::parameters().with("k0", 0.0).unwrap().with("d_k", 0.0).unwrap();
        continue_equilibrium(&Enso, &[0.0], &p, "k0", (0.0, 3.0), &EquilibriumOptions::default()).unwrap()
    }

    #[test]
    fn enso_trivial_branch_events() {
        let eq = enso_branch();
        assert!(eq.branch.points.iter().all(|p| p.u[0].abs() <= 1e-12));
        let hopf: Vec<_> = eq.events_of(EventKind::Hopf).collect();
        let bp: Vec<_> = eq.events_of(EventKind::BranchPoint).collect();
        assert_eq!(hopf.len(), 1);
        assert_eq!(bp.len(), 1);
        assert!((hopf[0].value - 1.4255).abs() < 1e-3, "{}", hopf[0].value);
        assert!((bp[0].value - 480.0 / 190.0).abs() < 1e-6, "{}", bp[0].value);
        assert_eq!(eq.events_of(EventKind::Fold).count(), 0);
        let merges = spectral_merges(&eq, &Enso, &EquilibriumOptions::default()).unwrap();
        // the leading pair forms from two real roots at small k0 and
        // splits back onto the real axis past the Hopf point
        let late: Vec<f64> = merges.into_iter().filter(|&k| k > 1.4255).collect();
        assert_eq!(late.len(), 1);
        assert!((late[0] - 2.158).abs() < 5e-3, "{}", late[0]);
    }

    #[test]
    fn no_events_without_feedback() {
        let p = Enso::parameters().with("k0", 0.0).unwrap().with("d_k", 0.0).unwrap().with("b", 0.0).unwrap().with("c", 0.0).unwrap();
        let eq = continue_equilibrium(&Enso, &[0.0], &p, "k0", (0.0, 3.0), &EquilibriumOptions::default()).unwrap();
        assert!(eq.events.is_empty());
    }

    #[test]
    fn fold_of_normal_form_and_switch_to_other_leg() {
        // x' = -(x^2 + p - 1) has a fold at p = 1
        let model = FnModel::new(1, Parameters::new(["p"], vec![0.0]), |_, x, _, _, p, out| {
            out[0] = -(x[0] * x[0] + p[0] - 1.0);
        })
        .with_delays(0.0, 0.0);
        let params = Parameters::new(["p"], vec![0.0]);
        let eq = continue_equilibrium(&model, &[1.0], &params, "p", (-1.0, 2.0), &EquilibriumOptions::default()).unwrap();
        let folds: Vec<_> = eq.events_of(EventKind::Fold).collect();
        assert_eq!(folds.len(), 1);
        assert!((folds[0].value - 1.0).abs() < 1e-8);
        // the branch continues around the fold onto the lower leg
        assert!(eq.branch.last_u()[0] < 0.0);
    }

    #[test]
    fn switching_at_enso_branch_point() {
        let eq = enso_branch();
        let bp = eq.events_of(EventKind::BranchPoint).next().unwrap().clone();
        let seeds = switch_branch(&eq, &Enso, &bp, None).unwrap();
        assert_eq!(seeds.seeds.len(), 2);
        for (s, t) in seeds.seeds.iter().zip(&seeds.tangents) {
            assert!(s[0].abs() > 5e-4);
            let sec = continue_from_seed(&eq, &Enso, s, t, (0.0, 3.0), &EquilibriumOptions::default()).unwrap();
            // the secondary equilibria exist past the branch point and are unstable
            let last = sec.points.last().unwrap();
            assert!(last.params[0] > 480.0 / 190.0);
            assert!(last.x[0].abs() > 1e-3);
            let spec = last.spectrum.as_ref().unwrap();
            assert!(spec.unstable_count() >= 1);
        }
    }

    #[test]
    fn hopf_curve_of_scalar_delayed_feedback() {
        // x' = -a x(t - tau): Hopf at a tau = pi / 2
        let model = FnModel::new(1, Parameters::new(["a", "tau"], vec![1.0, 1.0]), |_, _, x1, _, p, out| {
            out[0] = -p[0] * x1[0];
        })
        .with_delay_params(1, 1);
        let params = Parameters::new(["a", "tau"], vec![1.0, 1.0]);
        let eq = continue_equilibrium(&model, &[0.0], &params, "a", (1.0, 2.0), &EquilibriumOptions::default()).unwrap();
        let hopf = eq.events_of(EventKind::Hopf).next().unwrap().clone();
        assert!((hopf.value - std::f64::consts::FRAC_PI_2).abs() < 1e-6);
        let curve = continue_hopf(&eq, &model, &hopf, "tau", (0.5, 3.0), (0.5, 3.0), &ContinuationSettings::default()).unwrap();
        assert!(curve.len() > 5);
        for p in &curve.points {
            assert!((p.u[2] * p.u[3] - std::f64::consts::FRAC_PI_2).abs() < 1e-8);
        }
    }
}
