//! Bifurcations of periodic orbits: detection along orbit branches and
//! two-parameter continuation of torus, period-doubling and fold curves.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::engine::{self, Branch, BranchStatus, ContinuationProblem, ContinuationSettings, Event, EventKind};
use crate::error::{Error, Result};
use crate::io::fmt_num;
use crate::model::{DelayModel, Parameters};
use crate::periodic::branch::{gcd, nontrivial, OrbitBranch};
use crate::periodic::collocation::{
    node_coloring, orbit_jacobian, orbit_residual, point_dependencies, variational_matrix, variational_residual,
};
use crate::periodic::{CollocationMesh, PeriodicOrbit};

/// Multipliers closer than this to the real axis count as real.
const REAL_TOL: f64 = 1e-9;
/// `|mu| - 1` tolerance of event localization.
const EVENT_TOL: f64 = 1e-11;

fn is_real(z: &Complex64) -> bool {
    z.im.abs() <= REAL_TOL * (1.0 + z.norm())
}

/// Numbers of nontrivial multipliers outside the unit circle, by kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Census {
    complex: usize,
    below_minus_one: usize,
    above_one: usize,
}

fn census(mu: &[Complex64]) -> Census {
    let mut c = Census { complex: 0, below_minus_one: 0, above_one: 0 };
    for z in mu.iter().filter(|z| z.norm() > 1.0) {
        if !is_real(z) {
            c.complex += 1;
        } else if z.re < 0.0 {
            c.below_minus_one += 1;
        } else {
            c.above_one += 1;
        }
    }
    c
}

/// `|mu| - 1` of the complex multiplier closest to the unit circle.
fn torus_test(mu: &[Complex64]) -> Result<f64> {
    mu.iter()
        .filter(|z| !is_real(z))
        .map(|z| z.norm() - 1.0)
        .min_by(|a, b| a.abs().total_cmp(&b.abs()))
        .ok_or_else(|| Error::Localization("complex multiplier pair collapsed onto the real axis".into()))
}

fn real_test(mu: &[Complex64], target: f64) -> Result<f64> {
    mu.iter()
        .filter(|z| is_real(z) && z.re * target > 0.0)
        .map(|z| (z.re - target) * target)
        .min_by(|a, b| a.abs().total_cmp(&b.abs()))
        .ok_or_else(|| Error::Localization("no real multiplier near the critical value".into()))
}

/// Options for [`detect_po_bifurcations`].
#[derive(Debug, Clone)]
pub struct DetectOptions {
    pub settings: ContinuationSettings,
    pub multiplier_count: usize,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self { settings: ContinuationSettings::default(), multiplier_count: 12 }
    }
}

/// Fold, period-doubling and torus points along a branch of periodic orbits,
/// located where the test function of the corresponding multiplier class
/// vanishes. A torus bracket in which the pair reaches the real axis is
/// reported with `degenerate` set.
pub fn detect_po_bifurcations(model: &dyn DelayModel, branch: &OrbitBranch, opts: &DetectOptions) -> Result<Vec<Event>> {
    let mut problem = branch.problem(model)?;
    let count = opts.multiplier_count;
    let autonomous = branch.autonomous;
    let mut events = Vec::new();
    let mut prev: Option<(usize, Census)> = None;
    for i in 0..branch.len() {
        let Some(mu) = branch.nontrivial_multipliers(i) else { continue };
        let c = census(&mu);
        if let Some((j, pc)) = prev {
            let a = branch.branch.u(j);
            let b = branch.branch.u(i);
            problem.accept(&a)?;
            let multipliers = |problem: &crate::periodic::OrbitProblem<'_>, u: &DVector<f64>| -> Result<Vec<Complex64>> {
                let o = problem.orbit_at(u)?;
                Ok(nontrivial(&o.multipliers(model, count)?, autonomous))
            };
            let kinds = [
                (EventKind::Torus, pc.complex != c.complex),
                (EventKind::PeriodDoubling, pc.below_minus_one != c.below_minus_one),
                (EventKind::Fold, pc.above_one != c.above_one),
            ];
            for (kind, changed) in kinds {
                if !changed {
                    continue;
                }
                let n_dim = a.len();
                match localize(&problem, &a, &b, kind, &multipliers, &opts.settings, 4) {
                    Ok(u) => {
                        let m = multipliers(&problem, &u)?;
                        let mut data = Vec::new();
                        if kind == EventKind::Torus {
                            if let Some(z) = m.iter().filter(|z| !is_real(z)).min_by(|x, y| {
                                (x.norm() - 1.0).abs().total_cmp(&(y.norm() - 1.0).abs())
                            }) {
                                data.push(z.arg().abs() / std::f64::consts::TAU);
                            }
                        }
                        events.push(Event {
                            kind,
                            segment: j,
                            value: u[n_dim - 1],
                            u: u.iter().copied().collect(),
                            data,
                            degenerate: false,
                        });
                    }
                    Err(Error::Localization(_)) => {
                        // ambiguous classification: report the bracket midpoint
                        let mid = (&a + &b) * 0.5;
                        events.push(Event {
                            kind,
                            segment: j,
                            value: mid[n_dim - 1],
                            u: mid.iter().copied().collect(),
                            data: Vec::new(),
                            degenerate: true,
                        });
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        prev = Some((i, c));
    }
    Ok(events)
}

fn class_count(c: &Census, kind: EventKind) -> usize {
    match kind {
        EventKind::Torus => c.complex,
        EventKind::PeriodDoubling => c.below_minus_one,
        _ => c.above_one,
    }
}

/// Locates the event of `kind` on `[a, b]`. When the test function is not
/// defined on the whole bracket (another multiplier class changes nearby),
/// the bracket is halved towards the half where the count of `kind` changes.
fn localize<P, M>(
    problem: &P,
    a: &DVector<f64>,
    b: &DVector<f64>,
    kind: EventKind,
    multipliers: &M,
    settings: &ContinuationSettings,
    depth: usize,
) -> Result<DVector<f64>>
where
    P: ContinuationProblem,
    M: Fn(&P, &DVector<f64>) -> Result<Vec<Complex64>>,
{
    let test = |u: &DVector<f64>| -> Result<f64> {
        let m = multipliers(problem, u)?;
        match kind {
            EventKind::Torus => torus_test(&m),
            EventKind::PeriodDoubling => real_test(&m, -1.0),
            _ => real_test(&m, 1.0),
        }
    };
    match engine::locate_event(problem, a, b, test, EVENT_TOL, settings) {
        Err(Error::Localization(msg)) => {
            if depth == 0 {
                return Err(Error::Localization(msg));
            }
            let k = a.len() - 1;
            let mid = engine::locate_value(problem, a, b, k, 0.5 * (a[k] + b[k]), settings)?;
            let ca = class_count(&census(&multipliers(problem, a)?), kind);
            let cm = class_count(&census(&multipliers(problem, &mid)?), kind);
            if ca != cm {
                localize(problem, a, &mid, kind, multipliers, settings, depth - 1)
            } else {
                localize(problem, &mid, b, kind, multipliers, settings, depth - 1)
            }
        }
        other => other,
    }
}

/// Parameter values where the dominant multiplier switches between a
/// complex pair and a real value (collisions on the real axis). These are
/// spectral features, not bifurcations.
pub fn multiplier_collisions(model: &dyn DelayModel, branch: &OrbitBranch, count: usize) -> Result<Vec<f64>> {
    let mut problem = branch.problem(model)?;
    let settings = ContinuationSettings::default();
    let dominant_complex = |mu: &[Complex64]| mu.first().map(|z| !is_real(z)).unwrap_or(false);
    let mut out = Vec::new();
    let mut prev: Option<(usize, bool)> = None;
    for i in 0..branch.len() {
        let Some(mu) = branch.nontrivial_multipliers(i) else { continue };
        let flag = dominant_complex(&mu);
        if let Some((j, pf)) = prev {
            if pf != flag {
                let a = branch.branch.u(j);
                let b = branch.branch.u(i);
                problem.accept(&a)?;
                let u = engine::locate_switch(
                    &problem,
                    &a,
                    &b,
                    |u| {
                        let o = problem.orbit_at(u)?;
                        Ok(dominant_complex(&nontrivial(&o.multipliers(model, count)?, branch.autonomous)))
                    },
                    1e-7,
                    &settings,
                )?;
                out.push(u[u.len() - 1]);
            }
        }
        prev = Some((i, flag));
    }
    Ok(out)
}

/// Kind of a two-parameter curve of periodic-orbit bifurcations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurveKind {
    Torus,
    PeriodDoubling,
    Fold,
}

impl CurveKind {
    pub fn label(&self) -> &'static str {
        match self {
            CurveKind::Torus => "torus",
            CurveKind::PeriodDoubling => "period-doubling",
            CurveKind::Fold => "fold",
        }
    }

    fn multiplier(&self) -> f64 {
        match self {
            CurveKind::PeriodDoubling => -1.0,
            _ => 1.0,
        }
    }
}

/// Extended system for a periodic orbit with a critical multiplier, free in
/// two parameters.
///
/// Unknowns: `[Gamma, z, (alpha), eta1, eta2]`. For torus curves `z` is
/// complex (real parts then imaginary parts) with multiplier
/// `exp(2 pi i alpha)`; otherwise `z` is real with multiplier `-1` or `+1`.
/// `z` is normalised against a reference updated at every accepted point.
pub struct CurveProblem<'a> {
    pub model: &'a dyn DelayModel,
    pub mesh: CollocationMesh,
    pub params: Vec<f64>,
    pub free: (usize, usize),
    pub kind: CurveKind,
    /// Orbit period in forcing periods.
    pub multiple: usize,
    reference: Vec<Complex64>,
    weights: DVector<f64>,
}

impl<'a> CurveProblem<'a> {
    pub fn nx(&self) -> usize {
        self.mesh.periodic_nodes() * self.model.dim()
    }

    pub fn nz(&self) -> usize {
        (self.mesh.periodic_nodes() + 1) * self.model.dim()
    }

    fn complex(&self) -> bool {
        self.kind == CurveKind::Torus
    }

    /// Index of `alpha` (torus curves).
    pub fn alpha_index(&self) -> Option<usize> {
        self.complex().then(|| self.nx() + 2 * self.nz())
    }

    pub fn param_indices(&self) -> (usize, usize) {
        let d = self.dim();
        (d - 2, d - 1)
    }

    pub fn params_at(&self, u: &DVector<f64>) -> Vec<f64> {
        let mut p = self.params.clone();
        let (i1, i2) = self.param_indices();
        p[self.free.0] = u[i1];
        p[self.free.1] = u[i2];
        p
    }

    pub fn period_at(&self, u: &DVector<f64>) -> Result<f64> {
        let p = self.params_at(u);
        Ok(self.multiple as f64
            * self.model.forcing_period(&p).ok_or_else(|| Error::Contract("model has no forcing period".into()))?)
    }

    pub fn orbit_at(&self, u: &DVector<f64>) -> Result<PeriodicOrbit> {
        Ok(PeriodicOrbit {
            dim: self.model.dim(),
            mesh: self.mesh.clone(),
            values: u.rows(0, self.nx()).iter().copied().collect(),
            period: self.period_at(u)?,
            params: self.params_at(u),
            param_names: Vec::new(),
            autonomous: false,
        })
    }

    pub fn z_at(&self, u: &DVector<f64>) -> Vec<Complex64> {
        let (nx, nz) = (self.nx(), self.nz());
        (0..nz)
            .map(|k| Complex64::new(u[nx + k], if self.complex() { u[nx + nz + k] } else { 0.0 }))
            .collect()
    }

    pub fn alpha_at(&self, u: &DVector<f64>) -> Option<f64> {
        self.alpha_index().map(|i| u[i])
    }

    fn mu_at(&self, u: &DVector<f64>) -> Complex64 {
        match self.alpha_at(u) {
            Some(a) => Complex64::from_polar(1.0, std::f64::consts::TAU * a),
            None => Complex64::new(self.kind.multiplier(), 0.0),
        }
    }

    /// Reference `z / |z|^2`, so that `<ref, z> = 1` holds at `z`.
    fn set_reference(&mut self, z: &[Complex64]) {
        let sq = z.iter().map(|v| v.norm_sqr()).sum::<f64>();
        self.reference = z.iter().map(|v| v / sq).collect();
    }

    fn pack(&self, orbit: &PeriodicOrbit, z: &[Complex64], alpha: Option<f64>) -> DVector<f64> {
        let (nx, nz) = (self.nx(), self.nz());
        let mut u = DVector::zeros(self.dim());
        u.rows_mut(0, nx).copy_from_slice(&orbit.values);
        for (k, v) in z.iter().enumerate() {
            u[nx + k] = v.re;
            if self.complex() {
                u[nx + nz + k] = v.im;
            }
        }
        if let (Some(i), Some(a)) = (self.alpha_index(), alpha) {
            u[i] = a;
        }
        let (i1, i2) = self.param_indices();
        u[i1] = orbit.params[self.free.0];
        u[i2] = orbit.params[self.free.1];
        u
    }

    /// Sets up the problem at a critical orbit. `z` is the Floquet solution
    /// of the critical multiplier (nodes on `[0, 1]`), `alpha` its rotation.
    pub fn new(
        model: &'a dyn DelayModel,
        orbit: &PeriodicOrbit,
        z: &[Complex64],
        alpha: Option<f64>,
        kind: CurveKind,
        free: (usize, usize),
    ) -> Result<(Self, DVector<f64>)> {
        if orbit.autonomous {
            return Err(Error::Contract("bifurcation curves are continued for forced orbits only".into()));
        }
        let tf = model
            .forcing_period(&orbit.params)
            .ok_or_else(|| Error::Contract("model has no forcing period".into()))?;
        let multiple = (orbit.period / tf).round() as usize;
        if kind == CurveKind::Torus && alpha.is_none() {
            return Err(Error::Contract("torus curves need the rotation alpha".into()));
        }
        let mut problem = Self {
            model,
            mesh: orbit.mesh.clone(),
            params: orbit.params.clone(),
            free,
            kind,
            multiple,
            reference: Vec::new(),
            weights: DVector::zeros(0),
        };
        if z.len() != problem.nz() {
            return Err(Error::Domain(format!("Floquet solution has {} entries, expected {}", z.len(), problem.nz())));
        }
        // real curves: rotate the eigenfunction to be real
        let z: Vec<Complex64> = if problem.complex() {
            z.to_vec()
        } else {
            let (k, _) = z.iter().enumerate().fold((0, 0.0), |acc, (k, v)| if v.norm() > acc.1 { (k, v.norm()) } else { acc });
            let rot = z[k].conj() / z[k].norm();
            z.iter().map(|v| Complex64::new((v * rot).re, 0.0)).collect()
        };
        let norm = z.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let z: Vec<Complex64> = z.iter().map(|v| v / norm).collect();
        problem.set_reference(&z);
        let u = problem.pack(orbit, &z, alpha);
        let xn = orbit.l2_norm();
        let q = problem.mesh.node_integral_weights();
        let n = model.dim();
        let mut w = Vec::with_capacity(problem.dim());
        for g in 0..problem.mesh.periodic_nodes() {
            for _ in 0..n {
                w.push(q[g] / (1.0 + xn).powi(2));
            }
        }
        let zcount = if problem.complex() { 2 * problem.nz() } else { problem.nz() };
        w.extend(std::iter::repeat(0.25).take(zcount));
        if let Some(a) = alpha {
            w.push(1.0 / (1.0 + a).powi(2));
        }
        for i in [free.0, free.1] {
            w.push(1.0 / (1.0 + orbit.params[i].abs()).powi(2));
        }
        problem.weights = DVector::from_vec(w);
        Ok((problem, u))
    }

    fn blocks(&self, u: &DVector<f64>) -> Result<(DVector<f64>, Vec<Complex64>)> {
        let nx = self.nx();
        let p = self.params_at(u);
        let period = self.period_at(u)?;
        let x = &u.as_slice()[..nx];
        let r = orbit_residual(self.model, &self.mesh, x, period, &p)?;
        let v = variational_residual(self.model, &self.mesh, x, period, &p, &self.z_at(u), self.mu_at(u))?;
        Ok((r, v))
    }
}

impl ContinuationProblem for CurveProblem<'_> {
    fn dim(&self) -> usize {
        let z = if self.complex() { 2 * self.nz() + 1 } else { self.nz() };
        self.nx() + z + 2
    }

    fn residual(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let (nx, nz) = (self.nx(), self.nz());
        let (r, v) = self.blocks(u)?;
        let z = self.z_at(u);
        let c: Complex64 = self.reference.iter().zip(&z).map(|(r, v)| r.conj() * v).sum::<Complex64>() - 1.0;
        let mut out = DVector::zeros(self.dim() - 1);
        out.rows_mut(0, nx).copy_from(&r);
        for k in 0..nz {
            out[nx + k] = v[k].re;
        }
        if self.complex() {
            for k in 0..nz {
                out[nx + nz + k] = v[k].im;
            }
            out[nx + 2 * nz] = c.re;
            out[nx + 2 * nz + 1] = c.im;
        } else {
            out[nx + nz] = c.re;
        }
        Ok(out)
    }

    fn jacobian(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (nx, nz) = (self.nx(), self.nz());
        let dim = self.dim();
        let p = self.params_at(u);
        let period = self.period_at(u)?;
        let x = &u.as_slice()[..nx];
        let mu = self.mu_at(u);
        let mut j = DMatrix::zeros(dim - 1, dim);
        j.view_mut((0, 0), (nx, nx)).copy_from(&orbit_jacobian(self.model, &self.mesh, x, period, &p)?);
        let m = variational_matrix(self.model, &self.mesh, x, period, &p, mu)?;
        for a in 0..nz {
            for b in 0..nz {
                j[(nx + a, nx + b)] = m[(a, b)].re;
                if self.complex() {
                    j[(nx + a, nx + nz + b)] = -m[(a, b)].im;
                    j[(nx + nz + a, nx + b)] = m[(a, b)].im;
                    j[(nx + nz + a, nx + nz + b)] = m[(a, b)].re;
                }
            }
        }
        let row = if self.complex() { nx + 2 * nz } else { nx + nz };
        for (k, r) in self.reference.iter().enumerate() {
            j[(row, nx + k)] = r.re;
            if self.complex() {
                j[(row, nx + nz + k)] = r.im;
                j[(row + 1, nx + k)] = -r.im;
                j[(row + 1, nx + nz + k)] = r.re;
            }
        }
        // orbit nodes by grouped differences: a node only enters the rows of
        // the collocation points that depend on it
        let r0 = self.residual(u)?;
        let n = self.model.dim();
        let (tau1, tau2) = self.model.delays(&p);
        let deps = point_dependencies(&self.mesh, period, tau1, tau2);
        for group in node_coloring(&self.mesh, period, tau1, tau2) {
            for c in 0..n {
                let mut v = u.clone();
                for &g in &group {
                    v[g * n + c] += 1e-7 * (1.0 + u[g * n + c].abs());
                }
                let rv = self.residual(&v)?;
                for (q, nodes) in deps.iter().enumerate() {
                    let Some(&g) = nodes.iter().find(|&&g| group.binary_search(&g).is_ok()) else { continue };
                    let h = v[g * n + c] - u[g * n + c];
                    for a in 0..n {
                        for row in [nx + q * n + a, nx + nz + q * n + a] {
                            if row < nx + nz || self.complex() {
                                j[(row, g * n + c)] = (rv[row] - r0[row]) / h;
                            }
                        }
                    }
                }
            }
        }
        // alpha and parameters by differences
        let mut cols = Vec::new();
        if let Some(i) = self.alpha_index() {
            cols.push(i);
        }
        let (i1, i2) = self.param_indices();
        cols.extend([i1, i2]);
        for col in cols {
            let h = 1e-7 * (1.0 + u[col].abs());
            let mut v = u.clone();
            v[col] += h;
            let rv = self.residual(&v)?;
            for r in 0..dim - 1 {
                j[(r, col)] = (rv[r] - r0[r]) / h;
            }
        }
        Ok(j)
    }

    fn weights(&self) -> DVector<f64> {
        self.weights.clone()
    }

    fn primary_index(&self) -> usize {
        self.param_indices().0
    }

    fn accept(&mut self, u: &DVector<f64>) -> Result<()> {
        let z = self.z_at(u);
        self.set_reference(&z);
        Ok(())
    }

    fn stop_reason(&self, u: &DVector<f64>) -> Option<String> {
        let a = self.alpha_at(u)?;
        ((a - 0.5).abs() < ALPHA_END || a < ALPHA_END).then(|| "strong-resonance-end".to_string())
    }
}

/// Distance of `alpha` from `0` or `1/2` at which torus curves end.
pub const ALPHA_END: f64 = 1e-4;

/// A continued curve of periodic-orbit bifurcations.
#[derive(Debug, Clone)]
pub struct BifCurve {
    pub kind: CurveKind,
    pub param_names: Vec<String>,
    pub free: (usize, usize),
    pub base_params: Vec<f64>,
    pub mesh: CollocationMesh,
    pub multiple: usize,
    /// Points ordered along the curve.
    pub points: Vec<Vec<f64>>,
    /// Status at the start and at the end of the curve.
    pub status: (BranchStatus, BranchStatus),
}

impl BifCurve {
    pub fn problem<'a>(&self, model: &'a dyn DelayModel) -> Result<CurveProblem<'a>> {
        let u = DVector::from_column_slice(&self.points[0]);
        let probe = CurveProblem {
            model,
            mesh: self.mesh.clone(),
            params: self.base_params.clone(),
            free: self.free,
            kind: self.kind,
            multiple: self.multiple,
            reference: Vec::new(),
            weights: DVector::zeros(0),
        };
        let orbit = probe.orbit_at(&u)?;
        let z = probe.z_at(&u);
        let alpha = probe.alpha_at(&u);
        let (mut p, _) = CurveProblem::new(model, &orbit, &z, alpha, self.kind, self.free)?;
        p.set_reference(&z);
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn dim(&self) -> usize {
        self.points[0].len()
    }

    /// `(eta1, eta2)` at point `i`.
    pub fn params(&self, i: usize) -> (f64, f64) {
        let d = self.dim();
        (self.points[i][d - 2], self.points[i][d - 1])
    }

    /// Rotation `alpha` at point `i` (torus curves).
    pub fn alpha(&self, i: usize) -> Option<f64> {
        (self.kind == CurveKind::Torus).then(|| self.points[i][self.dim() - 3])
    }

    /// Writes `index,<params>,norm,period,unstable_count,event,alpha,kind`.
    pub fn write_csv<W: Write>(&self, model: &dyn DelayModel, mut w: W) -> Result<()> {
        let problem = self.problem(model)?;
        let mut header = vec!["index".to_string()];
        header.extend(self.param_names.iter().cloned());
        header.extend(["norm", "period", "unstable_count", "event", "alpha", "kind"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        let last = self.len() - 1;
        for i in 0..self.len() {
            let u = DVector::from_column_slice(&self.points[i]);
            let orbit = problem.orbit_at(&u)?;
            let mut cols = vec![i.to_string()];
            cols.extend(orbit.params.iter().map(|&v| fmt_num(v)));
            cols.push(fmt_num(orbit.l2_norm()));
            cols.push(fmt_num(orbit.period));
            cols.push(String::new());
            let event = match (i, &self.status) {
                (0, (BranchStatus::Terminated(r), _)) => r.clone(),
                (i, (_, BranchStatus::Terminated(r))) if i == last => r.clone(),
                _ => String::new(),
            };
            cols.push(event);
            cols.push(self.alpha(i).map(fmt_num).unwrap_or_default());
            cols.push(self.kind.label().to_string());
            writeln!(w, "{}", cols.join(","))?;
        }
        Ok(())
    }
}

/// Continues the bifurcation of `event` (a torus, period-doubling or fold
/// point on the forced branch `branch`) in the parameters `(free1, free2)`,
/// where `free1` is the branch parameter. Both directions are traced and
/// joined: the curve starts at the end reached by decreasing `free1` from
/// the event.
pub fn continue_bif_curve(
    model: &dyn DelayModel,
    branch: &OrbitBranch,
    event: &Event,
    second: &str,
    ranges: ((f64, f64), (f64, f64)),
    settings: &ContinuationSettings,
) -> Result<BifCurve> {
    let kind = match event.kind {
        EventKind::Torus => CurveKind::Torus,
        EventKind::PeriodDoubling => CurveKind::PeriodDoubling,
        EventKind::Fold => CurveKind::Fold,
        _ => return Err(Error::Contract("event is not a periodic-orbit bifurcation".into())),
    };
    if event.degenerate {
        return Err(Error::Degenerate("cannot continue a degenerate event".into()));
    }
    let params = Parameters::new(branch.param_names.clone(), branch.base_params.clone());
    let second_idx = params.index_or_err(second)?;
    let problem = branch.problem(model)?;
    let orbit = problem.orbit_at(&DVector::from_column_slice(&event.u))?;
    let mono = orbit.monodromy(model)?;
    let mu = mono.multipliers()?;
    let critical = match kind {
        CurveKind::Torus => mu
            .iter()
            .filter(|z| z.im > 0.0 && !is_real(z))
            .min_by(|a, b| (a.norm() - 1.0).abs().total_cmp(&(b.norm() - 1.0).abs())),
        _ => mu.iter().filter(|z| is_real(z)).min_by(|a, b| {
            (a.re - kind.multiplier()).abs().total_cmp(&(b.re - kind.multiplier()).abs())
        }),
    }
    .copied()
    .ok_or_else(|| Error::Localization("critical multiplier not found at the event".into()))?;
    let z = mono.eigenfunction(critical)?;
    let alpha = (kind == CurveKind::Torus).then(|| critical.arg() / std::f64::consts::TAU);
    let free = (branch.free, second_idx);
    let trace = |direction: f64| -> Result<Branch> {
        let (mut p, u0) = CurveProblem::new(model, &orbit, &z, alpha, kind, free)?;
        let mut s = settings.clone();
        let (i1, i2) = p.param_indices();
        s.bounds.push((i1, ranges.0 .0, ranges.0 .1));
        s.bounds.push((i2, ranges.1 .0, ranges.1 .1));
        if let Some(ia) = p.alpha_index() {
            s.bounds.push((ia, ALPHA_END * 0.5, 0.5 - ALPHA_END * 0.5));
        }
        let mut b = engine::continue_branch(&mut p, &u0, direction, &s)?;
        // leaving the box through the alpha bound is the strong-resonance end
        if let (Some(ia), BranchStatus::Boundary) = (p.alpha_index(), &b.status) {
            let a = b.last_u()[ia];
            if a < ALPHA_END || (a - 0.5).abs() < ALPHA_END {
                b.status = BranchStatus::Terminated("strong-resonance-end".into());
            }
        }
        Ok(b)
    };
    let back = trace(-1.0)?;
    let fwd = trace(1.0)?;
    let mut points: Vec<Vec<f64>> = back.points.iter().rev().map(|p| p.u.clone()).collect();
    points.extend(fwd.points.iter().skip(1).map(|p| p.u.clone()));
    let (p, _) = CurveProblem::new(model, &orbit, &z, alpha, kind, free)?;
    Ok(BifCurve {
        kind,
        param_names: branch.param_names.clone(),
        free,
        base_params: branch.base_params.clone(),
        mesh: branch.mesh.clone(),
        multiple: p.multiple,
        points,
        status: (back.status, fwd.status),
    })
}

/// A point on a torus curve with rational rotation `alpha = k / l`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TorusPoint {
    pub k: usize,
    pub l: usize,
    pub alpha: f64,
    /// Indices of the curve's free parameters.
    pub free: (usize, usize),
    pub orbit: PeriodicOrbit,
    /// Floquet solution of `exp(2 pi i alpha)` on `[0, 1]`.
    pub z: Vec<Complex64>,
}

impl TorusPoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut p: Self = serde_json::from_str(text)?;
        p.orbit.mesh = p.orbit.mesh.rebuilt()?;
        Ok(p)
    }
}

/// Points of a torus curve where `alpha = k / l` with `l <= l_max`, located
/// on the curve segments.
pub fn rational_points_on_curve(model: &dyn DelayModel, curve: &BifCurve, l_max: usize) -> Result<Vec<TorusPoint>> {
    if curve.kind != CurveKind::Torus {
        return Err(Error::Contract("rational points exist on torus curves only".into()));
    }
    let mut problem = curve.problem(model)?;
    let ia = problem.alpha_index().unwrap();
    let settings = ContinuationSettings::default();
    let mut out = Vec::new();
    for i in 1..curve.len() {
        let a = DVector::from_column_slice(&curve.points[i - 1]);
        let b = DVector::from_column_slice(&curve.points[i]);
        let (lo, hi) = (a[ia].min(b[ia]), a[ia].max(b[ia]));
        for l in 1..=l_max {
            for k in 1..l {
                let v = k as f64 / l as f64;
                if gcd(k, l) != 1 || !(v > lo && v <= hi) || out.iter().any(|p: &TorusPoint| p.k == k && p.l == l) {
                    continue;
                }
                problem.accept(&a)?;
                let u = engine::locate_value(&problem, &a, &b, ia, v, &settings)?;
                let mut orbit = problem.orbit_at(&u)?;
                orbit.param_names = curve.param_names.clone();
                out.push(TorusPoint { k, l, alpha: v, free: curve.free, orbit, z: problem.z_at(&u) });
            }
        }
    }
    out.sort_by(|x, y| (x.k as f64 / x.l as f64).total_cmp(&(y.k as f64 / y.l as f64)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Enso;

    #[test]
    fn curve_jacobian_matches_differences() {
        let p = Enso::parameters().with("k0", 1.7).unwrap().with("d_k", 0.8).unwrap();
        let mesh = CollocationMesh::uniform(12, 3);
        let orbit = PeriodicOrbit::from_function(1, mesh, 12.0, p.values().to_vec(), false, |t| {
            vec![0.4 * (std::f64::consts::TAU * t / 12.0).sin() + 0.1]
        });
        let nz = orbit.node_count() + 1;
        let z: Vec<Complex64> = (0..nz).map(|k| Complex64::new((k as f64 * 0.4).cos(), (k as f64 * 0.9).sin())).collect();
        for (kind, alpha) in [(CurveKind::Torus, Some(0.31)), (CurveKind::PeriodDoubling, None)] {
            let (problem, u) = CurveProblem::new(&Enso, &orbit, &z, alpha, kind, (1, 0)).unwrap();
            let j = problem.jacobian(&u).unwrap();
            let r0 = problem.residual(&u).unwrap();
            for col in 0..u.len() {
                let h = 1e-7 * (1.0 + u[col].abs());
                let mut v = u.clone();
                v[col] += h;
                let fd = (problem.residual(&v).unwrap() - &r0) / h;
                for row in 0..r0.len() {
                    assert!((fd[row] - j[(row, col)]).abs() < 1e-5 * (1.0 + fd[row].abs()), "{kind:?} ({row}, {col})");
                }
            }
        }
    }
}
