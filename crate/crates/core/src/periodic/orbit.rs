use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::collocation::{self, eval_periodic, eval_periodic_deriv, Monodromy};
use super::mesh::CollocationMesh;
use crate::error::{Error, Result};
use crate::io::fmt_num;
use crate::model::{eval_rhs, DelayModel};

/// Default number of mesh intervals.
pub const DEFAULT_INTERVALS: usize = 60;
/// Default collocation degree.
pub const DEFAULT_DEGREE: usize = 4;

/// A periodic solution represented on the unit interval: `x(t) = profile(t / T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub dim: usize,
    pub mesh: CollocationMesh,
    /// Node values, node-major (`values[g * dim + c]`), periodic nodes only.
    pub values: Vec<f64>,
    pub period: f64,
    pub params: Vec<f64>,
    #[serde(default)]
    pub param_names: Vec<String>,
    /// Whether the period is an unknown (autonomous orbit).
    pub autonomous: bool,
}

/// Options for [`solve_periodic`].
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Re-equidistribute the mesh once the orbit has converged.
    pub adapt: bool,
    /// Re-mesh when the defect indicator exceeds this value.
    pub remesh_threshold: f64,
    /// Upper bound on the number of intervals reached by re-meshing.
    pub max_intervals: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { max_iterations: 30, tolerance: 1e-10, adapt: false, remesh_threshold: 1e-7, max_intervals: 320 }
    }
}

impl PeriodicOrbit {
    /// Samples `f` (a function of physical time) on the mesh nodes.
    pub fn from_function(
        dim: usize,
        mesh: CollocationMesh,
        period: f64,
        params: Vec<f64>,
        autonomous: bool,
        f: impl Fn(f64) -> Vec<f64>,
    ) -> Self {
        let values = (0..mesh.periodic_nodes()).flat_map(|g| f(period * mesh.node_time(g))).collect();
        Self { dim, mesh, values, period, params, param_names: Vec::new(), autonomous }
    }

    /// State at physical time `t`.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        eval_periodic(&self.mesh, &self.values, self.dim, t / self.period)
    }

    /// State at scaled time `s` in units of the period.
    pub fn eval_scaled(&self, s: f64) -> Vec<f64> {
        eval_periodic(&self.mesh, &self.values, self.dim, s)
    }

    /// Time derivative at physical time `t`.
    pub fn eval_deriv(&self, t: f64) -> Vec<f64> {
        eval_periodic_deriv(&self.mesh, &self.values, self.dim, t / self.period)
            .into_iter()
            .map(|v| v / self.period)
            .collect()
    }

    pub fn node_count(&self) -> usize {
        self.mesh.periodic_nodes()
    }

    /// Minimum and maximum of component `c` on a fine sampling.
    pub fn range(&self, c: usize) -> (f64, f64) {
        let (_, hi) = self.extremum(c, 1.0);
        let (_, lo) = self.extremum(c, -1.0);
        (-lo, hi)
    }

    /// Scaled time and value of the maximum of `sign * x_c`, from a sampled
    /// bracket refined by golden-section search on the polynomial.
    fn extremum(&self, c: usize, sign: f64) -> (f64, f64) {
        let samples = 20 * self.node_count();
        let f = |s: f64| sign * self.eval_scaled(s)[c];
        let (k, _) = (0..samples)
            .map(|k| f(k as f64 / samples as f64))
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, v)| if v > acc.1 { (k, v) } else { acc });
        let h = 1.0 / samples as f64;
        let (mut a, mut b) = (k as f64 * h - h, k as f64 * h + h);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let mut x1 = b - g * (b - a);
        let mut x2 = a + g * (b - a);
        let (mut f1, mut f2) = (f(x1), f(x2));
        while b - a > 1e-13 {
            if f1 >= f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - g * (b - a);
                f1 = f(x1);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + g * (b - a);
                f2 = f(x2);
            }
        }
        let s = 0.5 * (a + b);
        (s.rem_euclid(1.0), f(s))
    }

    /// Peak-to-peak amplitude of component `c`.
    pub fn amplitude(&self, c: usize) -> f64 {
        let (lo, hi) = self.range(c);
        hi - lo
    }

    /// L2 norm of the profile over one period (in scaled time).
    pub fn l2_norm(&self) -> f64 {
        let mut acc = 0.0;
        for (s, w) in self.mesh.quadrature() {
            acc += w * self.eval_scaled(s).iter().map(|v| v * v).sum::<f64>();
        }
        acc.sqrt()
    }

    /// Time of the maximum of component `c` in `[0, T)`.
    pub fn argmax(&self, c: usize) -> f64 {
        self.extremum(c, 1.0).0 * self.period
    }

    /// The same orbit shifted in time: `y(t) = x(t + dt)`.
    pub fn shifted(&self, dt: f64) -> Self {
        let mut out = self.clone();
        out.values = (0..self.node_count())
            .flat_map(|g| self.eval(self.period * self.mesh.node_time(g) + dt))
            .collect();
        out
    }

    /// Re-represents the orbit on another mesh.
    pub fn remeshed(&self, mesh: CollocationMesh) -> Self {
        let values = (0..mesh.periodic_nodes())
            .flat_map(|g| self.eval_scaled(mesh.node_time(g)))
            .collect();
        Self { mesh, values, ..self.clone() }
    }

    /// Sup-norm difference to `other`, sampled on a fine grid of physical time
    /// over one period of `self`.
    pub fn sup_distance(&self, other: &PeriodicOrbit) -> f64 {
        let samples = 10 * self.node_count().max(other.node_count());
        let mut d: f64 = 0.0;
        for k in 0..samples {
            let t = self.period * k as f64 / samples as f64;
            let a = self.eval(t);
            let b = other.eval(t);
            for c in 0..self.dim {
                d = d.max((a[c] - b[c]).abs());
            }
        }
        d
    }

    /// Collocation residual at the stored solution.
    pub fn residual(&self, model: &dyn DelayModel) -> Result<DVector<f64>> {
        collocation::orbit_residual(model, &self.mesh, &self.values, self.period, &self.params)
    }

    pub fn monodromy(&self, model: &dyn DelayModel) -> Result<Monodromy> {
        collocation::monodromy(model, &self.mesh, &self.values, self.period, &self.params)
    }

    /// Leading Floquet multipliers (at most `count`), by decreasing modulus.
    pub fn multipliers(&self, model: &dyn DelayModel, count: usize) -> Result<Vec<Complex64>> {
        let mut mu = self.monodromy(model)?.multipliers()?;
        truncate_closed(&mut mu, count);
        Ok(mu)
    }

    /// Relative defect `|x' - T f| / (T (1 + |x|))` at points between the
    /// collocation points, maximised over the period. Collocation makes it
    /// vanish only at the collocation points, so it measures the
    /// discretisation error.
    pub fn error_indicator(&self, model: &dyn DelayModel) -> Result<f64> {
        let (tau1, tau2) = model.delays(&self.params);
        let b = self.mesh.boundaries();
        let m = self.mesh.degree();
        let mut worst: f64 = 0.0;
        for i in 0..self.mesh.intervals() {
            let h = b[i + 1] - b[i];
            for k in 0..m {
                let s = b[i] + h * (k as f64 + 0.5) / m as f64;
                let x = self.eval_scaled(s);
                let x1 = self.eval_scaled(s - tau1 / self.period);
                let x2 = self.eval_scaled(s - tau2 / self.period);
                let f = eval_rhs(model, s * self.period, &x, &x1, &x2, &self.params)?;
                let dx = eval_periodic_deriv(&self.mesh, &self.values, self.dim, s);
                for c in 0..self.dim {
                    let d = (dx[c] - self.period * f[c]).abs() / (self.period * (1.0 + x[c].abs()));
                    worst = worst.max(d);
                }
            }
        }
        Ok(worst)
    }

    /// Monitor-based mesh: interval widths equidistribute the `degree`-th
    /// derivative, estimated from the node polynomial on each interval.
    pub fn adapted_mesh(&self, intervals: usize) -> Result<CollocationMesh> {
        let m = self.mesh.degree();
        let ni = self.mesh.intervals();
        let b = self.mesh.boundaries();
        let mut density = vec![0.0; ni];
        for (i, dens) in density.iter_mut().enumerate() {
            let h = b[i + 1] - b[i];
            // m-th finite difference of equispaced nodes gives h^m x^(m) / m^m
            let mut deriv: f64 = 0.0;
            for c in 0..self.dim {
                let mut acc = 0.0;
                for j in 0..=m {
                    let g = (i * m + j) % self.node_count();
                    acc += binom(m, j) * if (m - j) % 2 == 0 { 1.0 } else { -1.0 } * self.values[g * self.dim + c];
                }
                deriv = deriv.max((acc * (m as f64 / h).powi(m as i32)).abs());
            }
            *dens = deriv.powf(1.0 / (m as f64 + 1.0));
        }
        let max = density.iter().cloned().fold(0.0, f64::max);
        // floor keeps smooth stretches from collapsing to a single interval
        for d in density.iter_mut() {
            *d = d.max(0.05 * max).max(1e-12);
        }
        self.mesh.equidistributed(&density, intervals)
    }

    /// Writes `t,<state...>` rows over one period at the mesh nodes.
    pub fn write_profile_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let names: Vec<String> =
            if self.dim == 1 { vec!["h".into()] } else { (0..self.dim).map(|c| format!("x{c}")).collect() };
        writeln!(w, "t,{}", names.join(","))?;
        for g in 0..=self.node_count() {
            let s = self.mesh.node_time(g);
            let x = self.eval_scaled(s);
            let cols: Vec<String> = x.iter().map(|&v| fmt_num(v)).collect();
            writeln!(w, "{},{}", fmt_num(s * self.period), cols.join(","))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut orbit: Self = serde_json::from_str(text)?;
        orbit.mesh = orbit.mesh.rebuilt()?;
        if orbit.values.len() != orbit.mesh.periodic_nodes() * orbit.dim {
            return Err(Error::Config("orbit node count does not match its mesh".into()));
        }
        Ok(orbit)
    }
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Keeps the first `count` values without splitting a conjugate pair.
pub(crate) fn truncate_closed(mu: &mut Vec<Complex64>, count: usize) {
    if mu.len() <= count {
        return;
    }
    let mut keep = count;
    if keep > 0 && mu[keep - 1].im != 0.0 && mu[keep].im != 0.0 && (mu[keep] - mu[keep - 1].conj()).norm() < 1e-12 {
        keep += 1;
    }
    mu.truncate(keep);
}

/// Phase-condition row: `integral x_ref'(s)^T x(s) ds` as node coefficients.
pub(crate) fn phase_row(mesh: &CollocationMesh, reference: &[f64], dim: usize) -> Vec<f64> {
    let m = mesh.degree();
    let np = mesh.periodic_nodes();
    let mut row = vec![0.0; np * dim];
    let mut w = vec![0.0; m + 1];
    let mut dw = vec![0.0; m + 1];
    for (s, q) in mesh.quadrature() {
        let dref = eval_periodic_deriv(mesh, reference, dim, s);
        let i = mesh.basis(s, &mut w, &mut dw);
        for j in 0..=m {
            let g = (i * m + j) % np;
            for c in 0..dim {
                row[g * dim + c] += q * w[j] * dref[c];
            }
        }
    }
    row
}

/// Newton correction of a periodic orbit at fixed parameters.
///
/// Autonomous orbits have the period as an extra unknown and are pinned by
/// the integral phase condition against the initial guess.
pub fn solve_periodic(model: &dyn DelayModel, guess: &PeriodicOrbit, opts: &SolveOptions) -> Result<PeriodicOrbit> {
    model.validate(&guess.params)?;
    let mut orbit = newton_periodic(model, guess, opts)?;
    if opts.adapt {
        let mesh = orbit.adapted_mesh(orbit.mesh.intervals())?;
        orbit = newton_periodic(model, &orbit.remeshed(mesh), opts)?;
    }
    // refine until the defect is small, growing the mesh by half each time
    let max_intervals = opts.max_intervals.max(orbit.mesh.intervals());
    let mut indicator = orbit.error_indicator(model)?;
    while indicator > opts.remesh_threshold && orbit.mesh.intervals() < max_intervals {
        let n = (orbit.mesh.intervals() * 3 / 2).min(max_intervals);
        let mesh = orbit.adapted_mesh(n)?;
        orbit = newton_periodic(model, &orbit.remeshed(mesh), opts)?;
        indicator = orbit.error_indicator(model)?;
    }
    Ok(orbit)
}

fn newton_periodic(model: &dyn DelayModel, guess: &PeriodicOrbit, opts: &SolveOptions) -> Result<PeriodicOrbit> {
    let n = guess.dim;
    if n != model.dim() {
        return Err(Error::Domain("orbit dimension does not match the model".into()));
    }
    let autonomous = guess.autonomous;
    if !autonomous {
        if let Some(tf) = model.forcing_period(&guess.params) {
            let ratio = guess.period / tf;
            if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
                return Err(Error::Contract(format!(
                    "forced orbits need a period that is a multiple of the forcing period (got {ratio} periods)"
                )));
            }
        }
    } else if !model.is_autonomous(&guess.params) {
        return Err(Error::Contract("autonomous orbit requested for a forced system".into()));
    }
    let nx = guess.node_count() * n;
    let mut orbit = guess.clone();
    let phase = if autonomous { phase_row(&orbit.mesh, &guess.values, n) } else { Vec::new() };
    let phase_target: f64 = phase.iter().zip(&guess.values).map(|(a, b)| a * b).sum();
    let size = nx + usize::from(autonomous);
    let mut last_norm = f64::INFINITY;
    for it in 0..opts.max_iterations {
        let r = orbit.residual(model)?;
        let mut rhs = DVector::zeros(size);
        rhs.rows_mut(0, nx).copy_from(&r);
        if autonomous {
            rhs[nx] = phase.iter().zip(&orbit.values).map(|(a, b)| a * b).sum::<f64>() - phase_target;
        }
        let norm = rhs.amax();
        if !norm.is_finite() {
            return Err(Error::Numerical("non-finite residual in periodic solve".into()));
        }
        last_norm = norm;
        if norm <= opts.tolerance && it > 0 {
            break;
        }
        let mut jac = DMatrix::zeros(size, size);
        let jx = collocation::orbit_jacobian(model, &orbit.mesh, &orbit.values, orbit.period, &orbit.params)?;
        jac.view_mut((0, 0), (nx, nx)).copy_from(&jx);
        if autonomous {
            let h = 1e-7 * orbit.period;
            let rp = collocation::orbit_residual(model, &orbit.mesh, &orbit.values, orbit.period + h, &orbit.params)?;
            jac.view_mut((0, nx), (nx, 1)).copy_from(&((rp - &r) / h));
            for (k, v) in phase.iter().enumerate() {
                jac[(nx, k)] = *v;
            }
        }
        let du = jac
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular collocation Jacobian".into()))?;
        for k in 0..nx {
            orbit.values[k] -= du[k];
        }
        if autonomous {
            orbit.period -= du[nx];
            if !(orbit.period > 0.0) {
                return Err(Error::Numerical("period became non-positive during Newton".into()));
            }
        }
        if du.amax() <= 1e-13 * (1.0 + orbit.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))) && norm <= opts.tolerance {
            break;
        }
    }
    let r = orbit.residual(model)?.amax();
    if r > opts.tolerance.max(1e-12) {
        return Err(Error::NonConvergence { iterations: opts.max_iterations, residual: r.max(last_norm) });
    }
    if autonomous && orbit.amplitude_max() < 1e-8 {
        return Err(Error::Degenerate("autonomous orbit collapsed to an equilibrium".into()));
    }
    Ok(orbit)
}

impl PeriodicOrbit {
    fn amplitude_max(&self) -> f64 {
        (0..self.dim).map(|c| self.amplitude(c)).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Enso, FnModel, Parameters};

    #[test]
    fn json_round_trip() {
        let mesh = CollocationMesh::uniform(8, 4);
        let orbit = PeriodicOrbit::from_function(1, mesh, 12.0, vec![1.0], false, |t| vec![t.sin()]);
        let back = PeriodicOrbit::from_function(1, CollocationMesh::uniform(8, 4), 12.0, vec![1.0], false, |t| vec![t.sin()]);
        let parsed = PeriodicOrbit::from_json(&orbit.to_json().unwrap()).unwrap();
        assert_eq!(parsed, back);
    }

    #[test]
    fn forced_trivial_orbit_solves_immediately() {
        let p = Enso::parameters().with("d_k", 1.0).unwrap();
        let mesh = CollocationMesh::uniform(20, 4);
        let guess = PeriodicOrbit::from_function(1, mesh, 12.0, p.values().to_vec(), false, |_| vec![0.05]);
        let orbit = solve_periodic(&Enso, &guess, &SolveOptions::default()).unwrap();
        assert!(orbit.values.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn forced_orbit_rejects_incommensurate_period() {
        let p = Enso::parameters().with("d_k", 1.0).unwrap();
        let mesh = CollocationMesh::uniform(10, 4);
        let guess = PeriodicOrbit::from_function(1, mesh, 13.0, p.values().to_vec(), false, |_| vec![0.0]);
        assert!(matches!(solve_periodic(&Enso, &guess, &SolveOptions::default()), Err(Error::Contract(_))));
    }

    #[test]
    fn van_der_pol_like_delay_oscillator() {
        // x' = -x(t - 1) (1 + x): Wright-type equation with a periodic orbit near pi/2 * 4
        let model = FnModel::new(1, Parameters::new(["a"], vec![1.7]), |_, x, x1, _, p, out| {
            out[0] = -p[0] * x1[0] * (1.0 + x[0]);
        })
        .with_delays(1.0, 1.0);
        let mesh = CollocationMesh::uniform(40, 4);
        let guess = PeriodicOrbit::from_function(1, mesh, 4.0, vec![1.7], true, |t| {
            vec![0.84 * (2.0 * std::f64::consts::PI * t / 4.0).cos()]
        });
        let orbit = solve_periodic(&model, &guess, &SolveOptions::default()).unwrap();
        assert!(orbit.period > 4.0 && orbit.period < 5.0, "period {}", orbit.period);
        assert!(orbit.amplitude(0) > 0.1);
        // an adapted mesh still solves
        let adapted = solve_periodic(&model, &orbit, &SolveOptions { adapt: true, ..Default::default() }).unwrap();
        assert!((adapted.period - orbit.period).abs() < 1e-6);
    }
}
