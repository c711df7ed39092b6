//! Continuation of periodic orbits in one parameter and branching off Hopf
//! points.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::collocation;
use super::mesh::CollocationMesh;
use super::orbit::{phase_row, truncate_closed, PeriodicOrbit};
use crate::engine::{self, Branch, BranchRow, ContinuationProblem, ContinuationSettings, Event, EventKind};
use crate::error::{Error, Result};
use crate::model::{DelayModel, Parameters};
use crate::spectra::DEFAULT_MULTIPLIER_COUNT;

/// Wraps a delayed argument into the unit interval: returns `(t', nu)` with
/// `t' = t - tau / period + nu` in `[0, 1)`.
pub fn wrap_delayed_argument(t: f64, tau: f64, period: f64) -> Result<(f64, i64)> {
    if !(period > 0.0) {
        return Err(Error::Domain("period must be positive".into()));
    }
    let s = t - tau / period;
    let nu = -s.floor();
    let mut w = s + nu;
    let mut nu = nu as i64;
    if w >= 1.0 {
        w -= 1.0;
        nu -= 1;
    }
    Ok((w, nu))
}

/// Periodic orbits with one free parameter.
///
/// Unknowns: node values, the period (autonomous orbits only) and the free
/// parameter. Forced orbits have period `multiple * T_f(eta)`.
pub struct OrbitProblem<'a> {
    pub model: &'a dyn DelayModel,
    pub mesh: CollocationMesh,
    pub params: Vec<f64>,
    pub free: usize,
    pub autonomous: bool,
    /// Number of forcing periods per orbit period (forced orbits).
    pub multiple: usize,
    reference: Vec<f64>,
    phase: Vec<f64>,
    weights: DVector<f64>,
}

impl<'a> OrbitProblem<'a> {
    pub fn new(model: &'a dyn DelayModel, orbit: &PeriodicOrbit, free: usize) -> Result<Self> {
        let multiple = if orbit.autonomous {
            0
        } else {
            let tf = model
                .forcing_period(&orbit.params)
                .ok_or_else(|| Error::Contract("forced orbit for a model without forcing".into()))?;
            let r = orbit.period / tf;
            if (r - r.round()).abs() > 1e-9 || r.round() < 1.0 {
                return Err(Error::Contract("forced orbit period is not a multiple of the forcing period".into()));
            }
            r.round() as usize
        };
        let mut p = Self {
            model,
            mesh: orbit.mesh.clone(),
            params: orbit.params.clone(),
            free,
            autonomous: orbit.autonomous,
            multiple,
            reference: Vec::new(),
            phase: Vec::new(),
            weights: DVector::zeros(0),
        };
        p.set_reference(&orbit.values);
        p.weights = p.block_weights(orbit);
        Ok(p)
    }

    fn nx(&self) -> usize {
        self.mesh.periodic_nodes() * self.model.dim()
    }

    fn set_reference(&mut self, x: &[f64]) {
        self.reference = x.to_vec();
        if self.autonomous {
            self.phase = phase_row(&self.mesh, x, self.model.dim());
        }
    }

    /// Each block scaled by its norm + 1, nodes weighted by quadrature.
    fn block_weights(&self, orbit: &PeriodicOrbit) -> DVector<f64> {
        let n = self.model.dim();
        let q = self.mesh.node_integral_weights();
        let xn = orbit.l2_norm();
        let mut w = Vec::with_capacity(self.dim());
        for g in 0..self.mesh.periodic_nodes() {
            for _ in 0..n {
                w.push(q[g] / (1.0 + xn).powi(2));
            }
        }
        if self.autonomous {
            w.push(1.0 / (1.0 + orbit.period).powi(2));
        }
        let pv = self.params[self.free];
        w.push(1.0 / (1.0 + pv.abs()).powi(2).max(1.0));
        DVector::from_vec(w)
    }

    pub fn params_at(&self, u: &DVector<f64>) -> Vec<f64> {
        let mut p = self.params.clone();
        p[self.free] = u[self.dim() - 1];
        p
    }

    pub fn period_at(&self, u: &DVector<f64>) -> Result<f64> {
        if self.autonomous {
            Ok(u[self.nx()])
        } else {
            let p = self.params_at(u);
            let tf = self
                .model
                .forcing_period(&p)
                .ok_or_else(|| Error::Contract("model lost its forcing period".into()))?;
            Ok(self.multiple as f64 * tf)
        }
    }

    /// Index of the period in `u` (autonomous only).
    pub fn period_index(&self) -> Option<usize> {
        self.autonomous.then(|| self.nx())
    }

    pub fn orbit_at(&self, u: &DVector<f64>) -> Result<PeriodicOrbit> {
        Ok(PeriodicOrbit {
            dim: self.model.dim(),
            mesh: self.mesh.clone(),
            values: u.rows(0, self.nx()).iter().copied().collect(),
            period: self.period_at(u)?,
            params: self.params_at(u),
            param_names: Vec::new(),
            autonomous: self.autonomous,
        })
    }

    pub fn pack(&self, orbit: &PeriodicOrbit) -> DVector<f64> {
        let mut u = DVector::zeros(self.dim());
        u.rows_mut(0, self.nx()).copy_from_slice(&orbit.values);
        if self.autonomous {
            u[self.nx()] = orbit.period;
        }
        u[self.dim() - 1] = orbit.params[self.free];
        u
    }
}

impl ContinuationProblem for OrbitProblem<'_> {
    fn dim(&self) -> usize {
        self.nx() + usize::from(self.autonomous) + 1
    }

    fn residual(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let nx = self.nx();
        let p = self.params_at(u);
        let period = self.period_at(u)?;
        let r = collocation::orbit_residual(self.model, &self.mesh, &u.as_slice()[..nx], period, &p)?;
        if !self.autonomous {
            return Ok(r);
        }
        let mut out = DVector::zeros(nx + 1);
        out.rows_mut(0, nx).copy_from(&r);
        out[nx] = self.phase.iter().zip(u.iter()).zip(&self.reference).map(|((a, x), r)| a * (x - r)).sum();
        Ok(out)
    }

    fn jacobian(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        let nx = self.nx();
        let dim = self.dim();
        let p = self.params_at(u);
        let period = self.period_at(u)?;
        let x = &u.as_slice()[..nx];
        let mut j = DMatrix::zeros(dim - 1, dim);
        let jx = collocation::orbit_jacobian(self.model, &self.mesh, x, period, &p)?;
        j.view_mut((0, 0), (nx, nx)).copy_from(&jx);
        let r0 = collocation::orbit_residual(self.model, &self.mesh, x, period, &p)?;
        let mut extra = vec![dim - 1];
        if self.autonomous {
            extra.insert(0, nx);
        }
        for col in extra {
            let h = 1e-7 * (1.0 + u[col].abs());
            let mut v = u.clone();
            v[col] += h;
            let pv = self.params_at(&v);
            let tv = self.period_at(&v)?;
            let rv = collocation::orbit_residual(self.model, &self.mesh, x, tv, &pv)?;
            j.view_mut((0, col), (nx, 1)).copy_from(&((rv - &r0) / h));
        }
        if self.autonomous {
            for (k, a) in self.phase.iter().enumerate() {
                j[(nx, k)] = *a;
            }
        }
        Ok(j)
    }

    fn weights(&self) -> DVector<f64> {
        self.weights.clone()
    }

    fn primary_index(&self) -> usize {
        self.dim() - 1
    }

    fn accept(&mut self, u: &DVector<f64>) -> Result<()> {
        let nx = self.nx();
        self.set_reference(&u.as_slice()[..nx]);
        Ok(())
    }
}

/// Options for periodic-orbit continuation.
#[derive(Debug, Clone)]
pub struct OrbitOptions {
    pub settings: ContinuationSettings,
    /// Multipliers at every `spectra_every`-th point (and the last one).
    pub spectra_every: usize,
    pub multiplier_count: usize,
    /// Largest denominator of flagged resonances `T_f / T = k / l`.
    pub max_denominator: usize,
    pub direction: f64,
}

impl Default for OrbitOptions {
    fn default() -> Self {
        Self {
            settings: ContinuationSettings { initial_step: 0.02, max_step: 0.1, ..Default::default() },
            spectra_every: 1,
            multiplier_count: DEFAULT_MULTIPLIER_COUNT,
            max_denominator: 11,
            direction: 1.0,
        }
    }
}

/// A continued branch of periodic orbits.
#[derive(Debug, Clone)]
pub struct OrbitBranch {
    pub param_names: Vec<String>,
    pub free: usize,
    pub base_params: Vec<f64>,
    pub mesh: CollocationMesh,
    pub autonomous: bool,
    pub multiple: usize,
    pub branch: Branch,
    pub multipliers: Vec<Option<Vec<Complex64>>>,
    pub events: Vec<Event>,
}

impl OrbitBranch {
    /// Problem in the state it had when the branch was computed.
    pub fn problem<'a>(&self, model: &'a dyn DelayModel) -> Result<OrbitProblem<'a>> {
        let orbit = self.orbit_with(model, 0)?;
        OrbitProblem::new(model, &orbit, self.free)
    }

    fn orbit_with(&self, model: &dyn DelayModel, i: usize) -> Result<PeriodicOrbit> {
        let u = self.branch.u(i);
        let n = model.dim();
        let nx = self.mesh.periodic_nodes() * n;
        let mut params = self.base_params.clone();
        params[self.free] = u[u.len() - 1];
        let period = if self.autonomous {
            u[nx]
        } else {
            self.multiple as f64
                * model.forcing_period(&params).ok_or_else(|| Error::Contract("model lost its forcing".into()))?
        };
        Ok(PeriodicOrbit {
            dim: n,
            mesh: self.mesh.clone(),
            values: u.rows(0, nx).iter().copied().collect(),
            period,
            params,
            param_names: self.param_names.clone(),
            autonomous: self.autonomous,
        })
    }

    /// Orbit stored at branch point `i`.
    pub fn orbit(&self, model: &dyn DelayModel, i: usize) -> Result<PeriodicOrbit> {
        self.orbit_with(model, i)
    }

    /// Orbit at a located event of this branch.
    pub fn event_orbit(&self, model: &dyn DelayModel, event: &Event) -> Result<PeriodicOrbit> {
        let mut orbit = self.problem(model)?.orbit_at(&DVector::from_column_slice(&event.u))?;
        orbit.param_names = self.param_names.clone();
        Ok(orbit)
    }

    pub fn len(&self) -> usize {
        self.branch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.branch.is_empty()
    }

    /// Multipliers with the trivial one removed for autonomous orbits.
    pub fn nontrivial_multipliers(&self, i: usize) -> Option<Vec<Complex64>> {
        self.multipliers[i].as_ref().map(|m| nontrivial(m, self.autonomous))
    }

    pub fn unstable_count(&self, i: usize) -> Option<usize> {
        self.nontrivial_multipliers(i).map(|m| m.iter().filter(|z| z.norm() > 1.0 + 1e-7).count())
    }

    pub fn test_names() -> Vec<String> {
        vec!["max_abs_mu".into(), "min".into(), "max".into()]
    }

    pub fn rows(&self, model: &dyn DelayModel) -> Result<Vec<BranchRow>> {
        let mut rows = Vec::new();
        let problem = self.problem(model)?;
        let row_for = |u: &DVector<f64>, mu: Option<Vec<Complex64>>, event: String| -> Result<BranchRow> {
            let orbit = problem.orbit_at(u)?;
            let (lo, hi) = orbit.range(0);
            Ok(BranchRow {
                params: orbit.params.clone(),
                norm: orbit.l2_norm(),
                period: Some(orbit.period),
                unstable_count: mu.as_ref().map(|m| m.iter().filter(|z| z.norm() > 1.0 + 1e-7).count()),
                tests: vec![
                    mu.as_ref().and_then(|m| m.first().map(|z| z.norm())).unwrap_or(f64::NAN),
                    lo,
                    hi,
                ],
                event,
            })
        };
        for i in 0..self.len() {
            rows.push(row_for(&self.branch.u(i), self.nontrivial_multipliers(i), String::new())?);
            for e in self.events.iter().filter(|e| e.segment == i) {
                rows.push(row_for(&DVector::from_column_slice(&e.u), None, e.tag())?);
            }
        }
        Ok(rows)
    }
}

/// Removes the multiplier closest to `+1` for autonomous orbits.
pub fn nontrivial(mu: &[Complex64], autonomous: bool) -> Vec<Complex64> {
    let mut out = mu.to_vec();
    if autonomous {
        if let Some((k, _)) = out
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 1.0).norm().total_cmp(&(b.1 - 1.0).norm()))
        {
            out.remove(k);
        }
    }
    out
}

/// Continues `orbit` in parameter `free` over `range`, with Floquet
/// multipliers and (for autonomous orbits) rational period-ratio flags.
pub fn continue_periodic(
    model: &dyn DelayModel,
    orbit: &PeriodicOrbit,
    params: &Parameters,
    free: &str,
    range: (f64, f64),
    opts: &OrbitOptions,
) -> Result<OrbitBranch> {
    let free_idx = params.index_or_err(free)?;
    let r = orbit.residual(model)?.amax();
    if r > 1e-6 {
        return Err(Error::Contract(format!("start orbit is not converged (residual {r:.3e})")));
    }
    let mut problem = OrbitProblem::new(model, orbit, free_idx)?;
    let u0 = problem.pack(orbit);
    let mut settings = opts.settings.clone();
    settings.bounds.push((problem.dim() - 1, range.0, range.1));
    let every = opts.spectra_every.max(1);
    let count = opts.multiplier_count;
    let mut multipliers: Vec<Option<Vec<Complex64>>> = Vec::new();
    let mut events = Vec::new();
    let max_den = opts.max_denominator;
    let branch = engine::continue_branch_with(&mut problem, &u0, None, opts.direction, &settings, |prob, br, idx| {
        let u = br.u(idx);
        let mu = if idx % every == 0 {
            let o = prob.orbit_at(&u)?;
            let mut m = o.monodromy(model)?.multipliers()?;
            truncate_closed(&mut m, count);
            Some(m)
        } else {
            None
        };
        multipliers.push(mu);
        // rational period ratios, located while the phase reference still
        // belongs to the segment start
        if idx > 0 && prob.autonomous {
            let a = br.u(idx - 1);
            let tf = model.forcing_period(&prob.params_at(&u));
            if let Some(tf) = tf {
                let ti = prob.period_index().unwrap();
                for (k, l) in crossed_fractions(tf / a[ti], tf / u[ti], max_den) {
                    let target = l as f64 * tf / k as f64;
                    let v = engine::locate_value(&*prob, &a, &u, ti, target, &settings)?;
                    events.push(Event {
                        kind: EventKind::Resonance,
                        segment: idx - 1,
                        value: v[v.len() - 1],
                        u: v.iter().copied().collect(),
                        data: vec![k as f64, l as f64],
                        degenerate: false,
                    });
                }
            }
        }
        Ok(())
    })?;
    // the final point always carries multipliers
    let last = branch.len() - 1;
    if multipliers[last].is_none() {
        let o = problem.orbit_at(&branch.u(last))?;
        multipliers[last] = Some(o.multipliers(model, count)?);
    }
    Ok(OrbitBranch {
        param_names: params.names().to_vec(),
        free: free_idx,
        base_params: orbit.params.clone(),
        mesh: orbit.mesh.clone(),
        autonomous: orbit.autonomous,
        multiple: problem.multiple,
        branch,
        multipliers,
        events,
    })
}

/// Reduced fractions `k / l` with `l <= max_den` in the half-open interval
/// between `a` (excluded) and `b` (included), ordered from `a` to `b`.
pub fn crossed_fractions(a: f64, b: f64, max_den: usize) -> Vec<(usize, usize)> {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let mut out = Vec::new();
    for l in 1..=max_den {
        let kmin = (lo * l as f64).floor() as i64;
        let kmax = (hi * l as f64).ceil() as i64;
        for k in kmin.max(1)..=kmax {
            let v = k as f64 / l as f64;
            let inside = if a <= b { v > a && v <= b } else { v >= b && v < a };
            if inside && gcd(k as usize, l) == 1 {
                out.push((k as usize, l));
            }
        }
    }
    out.sort_by(|x, y| {
        let (vx, vy) = (x.0 as f64 / x.1 as f64, y.0 as f64 / y.1 as f64);
        if a <= b { vx.total_cmp(&vy) } else { vy.total_cmp(&vx) }
    });
    out
}

pub fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Initial guess and first orbit of the branch emanating from a Hopf point.
///
/// The guess `x0 + eps (Re v cos 2 pi t - Im v sin 2 pi t)` with period
/// `2 pi / omega` is corrected with the parameter free, the amplitude of the
/// `cos` mode pinned and an integral phase condition. On failure `eps` is
/// halved up to four times.
pub fn branch_off_hopf(
    model: &dyn DelayModel,
    params: &Parameters,
    free: &str,
    hopf: &Event,
    eps: f64,
    mesh: CollocationMesh,
) -> Result<PeriodicOrbit> {
    if hopf.kind != EventKind::Hopf {
        return Err(Error::Contract("branching requires a Hopf event".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::Degenerate("zero amplitude reproduces the equilibrium".into()));
    }
    let free_idx = params.index_or_err(free)?;
    let n = model.dim();
    let x0: Vec<f64> = hopf.u[..n].to_vec();
    let omega = hopf.data[0];
    let mut p = params.values().to_vec();
    p[free_idx] = hopf.value;
    let lin = crate::model::linearize_at_constant(model, &x0, &p)?;
    let v = critical_vector(&lin, omega)?;
    let period = 2.0 * std::f64::consts::PI / omega;
    let mut eps = eps;
    let mut last_err = None;
    for _ in 0..5 {
        let guess = PeriodicOrbit::from_function(n, mesh.clone(), period, p.clone(), true, |t| {
            let th = 2.0 * std::f64::consts::PI * t / period;
            (0..n).map(|c| x0[c] + eps * (v[c].re * th.cos() - v[c].im * th.sin())).collect()
        });
        match correct_hopf_guess(model, &guess, free_idx, &v) {
            Ok(o) => return Ok(o),
            Err(e) => last_err = Some(e),
        }
        eps *= 0.5;
    }
    Err(last_err.unwrap())
}

fn critical_vector(lin: &crate::spectra::LinearizedDde, omega: f64) -> Result<Vec<Complex64>> {
    let m = lin.char_matrix(Complex64::new(0.0, omega));
    let n = m.nrows();
    if n == 1 {
        return Ok(vec![Complex64::new(1.0, 0.0)]);
    }
    let svd = m.svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::Numerical("svd failed".into()))?;
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    let v: Vec<Complex64> = vt.row(k).iter().map(|z| z.conj()).collect();
    // rotate so the largest component is real
    let (imax, _) = v.iter().enumerate().fold((0, 0.0), |acc, (i, z)| if z.norm() > acc.1 { (i, z.norm()) } else { acc });
    let rot = v[imax].conj() / v[imax].norm();
    Ok(v.into_iter().map(|z| z * rot).collect())
}

fn correct_hopf_guess(
    model: &dyn DelayModel,
    guess: &PeriodicOrbit,
    free: usize,
    v: &[Complex64],
) -> Result<PeriodicOrbit> {
    let problem = OrbitProblem::new(model, guess, free)?;
    let n = model.dim();
    let start = problem.pack(guess);
    // amplitude row: projection of x - x0 onto the cos mode
    let mut row = DVector::zeros(problem.dim());
    let q = guess.mesh.node_integral_weights();
    for g in 0..guess.node_count() {
        let th = 2.0 * std::f64::consts::PI * guess.mesh.node_time(g);
        for c in 0..n {
            row[g * n + c] = q[g] * v[c].re * th.cos();
        }
    }
    let (u, _) = engine::correct(&problem, &start, &row, &start, 30, 1e-10)?;
    let orbit = problem.orbit_at(&u)?;
    if (0..n).map(|c| orbit.amplitude(c)).fold(0.0, f64::max) < 1e-8 {
        return Err(Error::Degenerate("Hopf branch-off collapsed onto the equilibrium".into()));
    }
    Ok(orbit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_examples() {
        let (t, nu) = wrap_delayed_argument(0.5, 0.2, 1.0).unwrap();
        assert!((t - 0.3).abs() < 1e-15 && nu == 0);
        let (t, nu) = wrap_delayed_argument(0.1, 0.2, 1.0).unwrap();
        assert!((t - 0.9).abs() < 1e-15 && nu == 1);
        let (t, nu) = wrap_delayed_argument(0.1, 2.35, 1.0).unwrap();
        assert!((t - 0.75).abs() < 1e-14 && nu == 3);
        let (t, nu) = wrap_delayed_argument(0.5, 0.5, 1.0).unwrap();
        assert!(t == 0.0 && nu == 0);
    }

    #[test]
    fn fractions_between() {
        let f = crossed_fractions(0.2512, 0.5, 11);
        assert_eq!(f.len(), 11);
        assert_eq!(f[0], (3, 11));
        assert_eq!(*f.last().unwrap(), (1, 2));
        assert!(crossed_fractions(0.3, 0.3, 11).is_empty());
        let down = crossed_fractions(0.26, 0.16, 11);
        assert_eq!(down, vec![(1, 4), (2, 9), (1, 5), (2, 11), (1, 6)]);
    }
}
