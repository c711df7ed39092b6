//! Resonance surfaces of `k:l` locked periodic orbits, grown circle by
//! circle from a root point, and their projections onto the parameter plane
//! (resonance tongues).
//!
//! A locked orbit has period `l * T_f` and two free parameters `eta`. The
//! locked orbits form a surface; by the shift symmetry
//! `x(t) -> x(t + j / l)` only the angles `phi` in `[0, 2 pi / l)` of each
//! circle are computed.

use std::f64::consts::TAU;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_num;
use crate::linalg::{SparseLu, SparseMatrix};
use crate::model::DelayModel;
use crate::periodic::branch::gcd;
use crate::periodic::collocation::{eval_floquet, orbit_jacobian_entries, orbit_residual};
use crate::periodic::{CollocationMesh, PeriodicOrbit, DEFAULT_DEGREE};
use crate::pobif::TorusPoint;

pub const DEFAULT_RHO: f64 = 1e-2;
pub const DEFAULT_DELTA: f64 = 5e-2;
pub const DEFAULT_N_PHI: usize = 40;
/// Mesh intervals per forcing period of a locked orbit.
pub const DEFAULT_INTERVALS_PER_PERIOD: usize = 30;

const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX: usize = 12;
const POLISH_TOL: f64 = 1e-13;

/// How the initial circle was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    TorusPoint,
    Autonomous,
}

/// A locked periodic orbit on a resonance surface.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LockedOrbitPoint {
    /// Angle on the circle, in `[0, 2 pi / l)`.
    pub phi: f64,
    pub eta: [f64; 2],
    /// Node values on the surface's locked mesh.
    pub values: Vec<f64>,
    #[serde(default)]
    pub stable: Option<bool>,
}

/// One topological circle of locked orbits.
#[derive(Debug, Clone)]
pub struct SurfaceCircle {
    pub generation: usize,
    pub points: Vec<LockedOrbitPoint>,
    /// Tangent frames `(t1, t2)` per point: `t1` along the circle, `t2`
    /// outwards. Filled in when the circle is grown or projected.
    pub tangents: Vec<Option<(DVector<f64>, DVector<f64>)>>,
    outward: Vec<DVector<f64>>,
}

/// Data needed to re-solve the initial circle at any angle.
#[derive(Debug, Clone)]
enum Seed {
    /// Root orbit and the real and imaginary parts of the critical Floquet
    /// solution, sampled at `l t` on the locked mesh.
    Torus { gamma: Vec<f64>, z_re: Vec<f64>, z_im: Vec<f64>, eta: [f64; 2] },
    /// Autonomous orbit at zero forcing.
    Autonomous { orbit: PeriodicOrbit },
}

/// A resonance surface: circles of `k:l` locked orbits.
#[derive(Debug, Clone)]
pub struct ResonanceSurface {
    pub k: usize,
    pub l: usize,
    pub origin: Origin,
    pub rho: f64,
    /// Root point in the parameter plane.
    pub root: [f64; 2],
    pub param_names: Vec<String>,
    pub params: Vec<f64>,
    /// Indices of `eta`; the first is the forcing amplitude for surfaces
    /// rooted at zero forcing.
    pub free: (usize, usize),
    pub mesh: CollocationMesh,
    pub dim: usize,
    pub period: f64,
    /// `j` with `x_{phi + 2 pi / l}(t) = x_phi(t + j / l)`.
    pub shift: usize,
    pub circles: Vec<SurfaceCircle>,
    seed: Seed,
}

/// Options for the initial circle.
#[derive(Debug, Clone)]
pub struct CircleOptions {
    pub rho: f64,
    pub n_phi: usize,
    pub intervals_per_period: usize,
    pub degree: usize,
}

impl Default for CircleOptions {
    fn default() -> Self {
        Self {
            rho: DEFAULT_RHO,
            n_phi: DEFAULT_N_PHI,
            intervals_per_period: DEFAULT_INTERVALS_PER_PERIOD,
            degree: DEFAULT_DEGREE,
        }
    }
}

/// The locked BVP `x' = l T_f f(..)`, `x(0) = x(1)` in `u = (x, eta)`.
struct LockedSystem<'a> {
    model: &'a dyn DelayModel,
    mesh: &'a CollocationMesh,
    params: &'a [f64],
    free: (usize, usize),
    period: f64,
    weights: DVector<f64>,
}

impl<'a> LockedSystem<'a> {
    fn new(model: &'a dyn DelayModel, surface: &'a ResonanceSurface) -> Self {
        Self::with(model, &surface.mesh, &surface.params, surface.free, surface.period)
    }

    fn with(
        model: &'a dyn DelayModel,
        mesh: &'a CollocationMesh,
        params: &'a [f64],
        free: (usize, usize),
        period: f64,
    ) -> Self {
        let n = model.dim();
        let q = mesh.node_integral_weights();
        let mut w: Vec<f64> = q.iter().flat_map(|&qg| std::iter::repeat(qg).take(n)).collect();
        w.extend([1.0, 1.0]);
        Self { model, mesh, params, free, period, weights: DVector::from_vec(w) }
    }

    fn nx(&self) -> usize {
        self.mesh.periodic_nodes() * self.model.dim()
    }

    fn params_at(&self, u: &DVector<f64>) -> Vec<f64> {
        let mut p = self.params.to_vec();
        let nx = self.nx();
        p[self.free.0] = u[nx];
        p[self.free.1] = u[nx + 1];
        p
    }

    fn residual(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let nx = self.nx();
        orbit_residual(self.model, self.mesh, &u.as_slice()[..nx], self.period, &self.params_at(u))
    }

    /// Sparse LU of the BVP Jacobian bordered by two constraint rows.
    fn bordered(&self, u: &DVector<f64>, rows: [&DVector<f64>; 2]) -> Result<SparseLu> {
        let nx = self.nx();
        let p = self.params_at(u);
        let x = &u.as_slice()[..nx];
        let mut a = SparseMatrix::new(nx + 2);
        a.entries = orbit_jacobian_entries(self.model, self.mesh, x, self.period, &p)?;
        let r0 = orbit_residual(self.model, self.mesh, x, self.period, &p)?;
        for (col, idx) in [(nx, self.free.0), (nx + 1, self.free.1)] {
            let h = 1e-7 * (1.0 + p[idx].abs());
            let mut pv = p.clone();
            pv[idx] += h;
            let rv = orbit_residual(self.model, self.mesh, x, self.period, &pv)?;
            for r in 0..nx {
                a.push(r, col, (rv[r] - r0[r]) / h);
            }
        }
        for (k, row) in rows.iter().enumerate() {
            for c in 0..nx + 2 {
                a.push(nx + k, c, row[c]);
            }
        }
        a.lu()
    }

    fn dot(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        self.weights.iter().zip(a.iter()).zip(b.iter()).map(|((w, a), b)| w * a * b).sum()
    }

    fn norm(&self, a: &DVector<f64>) -> f64 {
        self.dot(a, a).sqrt()
    }

    /// Newton on the BVP plus `rows[k] . u = targets[k]`. Once converged,
    /// one extra step polishes the solution to rounding level.
    fn solve(&self, guess: &DVector<f64>, rows: [&DVector<f64>; 2], targets: [f64; 2]) -> Result<DVector<f64>> {
        let nx = self.nx();
        let mut u = guess.clone();
        let mut last = f64::INFINITY;
        let mut converged: Option<(DVector<f64>, f64)> = None;
        for it in 0..=NEWTON_MAX {
            let r = self.residual(&u)?;
            let c = [rows[0].dot(&u) - targets[0], rows[1].dot(&u) - targets[1]];
            let norm = r.amax().max(c[0].abs()).max(c[1].abs());
            if !norm.is_finite() {
                return Err(Error::Numerical("non-finite residual in locked-orbit Newton".into()));
            }
            if let Some((prev, prev_norm)) = converged {
                return Ok(if norm <= prev_norm { u } else { prev });
            }
            if norm <= NEWTON_TOL {
                if norm <= POLISH_TOL {
                    return Ok(u);
                }
                converged = Some((u.clone(), norm));
            } else if it == NEWTON_MAX || (it > 2 && norm > 10.0 * last) {
                return Err(Error::NonConvergence { iterations: it, residual: norm });
            }
            last = norm;
            let mut rhs = DVector::zeros(nx + 2);
            rhs.rows_mut(0, nx).copy_from(&r);
            rhs[nx] = c[0];
            rhs[nx + 1] = c[1];
            u -= self.bordered(&u, rows)?.solve_vec(&rhs)?;
        }
        unreachable!()
    }

    /// Orthonormal tangent frame at a surface point: `t1` closest to
    /// `along`, `t2` orthogonal to it and oriented like `outward`.
    fn frame(
        &self,
        u: &DVector<f64>,
        along: &DVector<f64>,
        outward: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        let nx = self.nx();
        let wa = self.weights.component_mul(along);
        let wo = self.weights.component_mul(outward);
        let mut rhs = DMatrix::zeros(nx + 2, 2);
        rhs[(nx, 0)] = 1.0;
        rhs[(nx + 1, 1)] = 1.0;
        let basis = self
            .bordered(u, [&wa, &wo])?
            .solve(&rhs)
            .map_err(|_| Error::Numerical("singular bordered system for the tangent plane".into()))?;
        let (v1, v2) = (basis.column(0).into_owned(), basis.column(1).into_owned());
        // orthonormalise the null space in the weighted metric, then pick the
        // in-plane projections of `along` and `outward`
        let e1 = &v1 / self.norm(&v1);
        let e2 = {
            let w = &v2 - &e1 * self.dot(&e1, &v2);
            &w / self.norm(&w)
        };
        let mut t1 = &e1 * self.dot(&e1, along) + &e2 * self.dot(&e2, along);
        t1 /= self.norm(&t1);
        let mut t2 = {
            let o = &e1 * self.dot(&e1, outward) + &e2 * self.dot(&e2, outward);
            let w = &o - &t1 * self.dot(&t1, &o);
            let n = self.norm(&w);
            if n > 0.0 {
                w / n
            } else {
                let w = &e2 - &t1 * self.dot(&t1, &e2);
                &w / self.norm(&w)
            }
        };
        if self.dot(&t2, outward) < 0.0 {
            t2 = -t2;
        }
        Ok((t1, t2))
    }
}

impl ResonanceSurface {
    fn system<'a>(&'a self, model: &'a dyn DelayModel) -> LockedSystem<'a> {
        LockedSystem::new(model, self)
    }

    fn nx(&self) -> usize {
        self.mesh.periodic_nodes() * self.dim
    }

    fn pack(&self, p: &LockedOrbitPoint) -> DVector<f64> {
        let mut u = DVector::zeros(self.nx() + 2);
        u.rows_mut(0, self.nx()).copy_from_slice(&p.values);
        u[self.nx()] = p.eta[0];
        u[self.nx() + 1] = p.eta[1];
        u
    }

    fn unpack(&self, u: &DVector<f64>, phi: f64) -> LockedOrbitPoint {
        let nx = self.nx();
        LockedOrbitPoint { phi, eta: [u[nx], u[nx + 1]], values: u.rows(0, nx).iter().copied().collect(), stable: None }
    }

    /// Applies the symmetry `phi -> phi + 2 pi times / l` to a vector
    /// `(x, eta)` (or a tangent): a rotation of the node values.
    pub fn shift_vector(&self, u: &DVector<f64>, times: i64) -> DVector<f64> {
        let np = self.mesh.periodic_nodes() as i64;
        let per = np / self.l as i64;
        let offset = (self.shift as i64 * times * per).rem_euclid(np);
        let n = self.dim;
        let mut out = u.clone();
        for g in 0..np {
            let src = ((g + offset).rem_euclid(np)) as usize;
            for c in 0..n {
                out[g as usize * n + c] = u[src * n + c];
            }
        }
        out
    }

    /// Locked orbit `i` of circle `c` as a periodic orbit.
    pub fn orbit(&self, c: usize, i: usize) -> PeriodicOrbit {
        let p = &self.circles[c].points[i];
        let mut params = self.params.clone();
        params[self.free.0] = p.eta[0];
        params[self.free.1] = p.eta[1];
        PeriodicOrbit {
            dim: self.dim,
            mesh: self.mesh.clone(),
            values: p.values.clone(),
            period: self.period,
            params,
            param_names: self.param_names.clone(),
            autonomous: false,
        }
    }

    /// Maximal collocation residual over all stored points.
    pub fn max_residual(&self, model: &dyn DelayModel) -> Result<f64> {
        let sys = self.system(model);
        let mut worst: f64 = 0.0;
        for circle in &self.circles {
            for p in &circle.points {
                worst = worst.max(sys.residual(&self.pack(p))?.amax());
            }
        }
        Ok(worst)
    }

    /// Initial-circle guess and its two constraints at angle `phi`.
    fn initial_problem(&self, phi: f64) -> (DVector<f64>, [DVector<f64>; 2], [f64; 2]) {
        let nx = self.nx();
        let q = self.mesh.node_integral_weights();
        let n = self.dim;
        match &self.seed {
            Seed::Torus { gamma, z_re, z_im, eta } => {
                let (c, s) = (phi.cos(), phi.sin());
                let mut u = DVector::zeros(nx + 2);
                for k in 0..nx {
                    u[k] = gamma[k] + self.rho * (c * z_re[k] + s * z_im[k]);
                }
                u[nx] = eta[0];
                u[nx + 1] = eta[1];
                let mut r1 = DVector::zeros(nx + 2);
                let mut r2 = DVector::zeros(nx + 2);
                for k in 0..nx {
                    r1[k] = q[k / n] * z_re[k];
                    r2[k] = q[k / n] * z_im[k];
                }
                let t = [r1.dot(&u), r2.dot(&u)];
                (u, [r1, r2], t)
            }
            Seed::Autonomous { orbit } => {
                let theta = phi / TAU;
                let k = self.k as f64;
                let mut u = DVector::zeros(nx + 2);
                let mut r1 = DVector::zeros(nx + 2);
                for g in 0..self.mesh.periodic_nodes() {
                    let t = self.mesh.node_time(g);
                    let x = orbit.eval_scaled(k * t + theta);
                    // derivative with respect to the locked time
                    let dx = crate::periodic::collocation::eval_periodic_deriv(
                        &orbit.mesh,
                        &orbit.values,
                        n,
                        (k * t + theta).rem_euclid(1.0),
                    );
                    for c in 0..n {
                        u[g * n + c] = x[c];
                        r1[g * n + c] = q[g] * k * dx[c];
                    }
                }
                u[nx] = self.rho;
                u[nx + 1] = self.root[1];
                let mut r2 = DVector::zeros(nx + 2);
                r2[nx] = 1.0;
                let t = [r1.dot(&u), self.rho];
                (u, [r1, r2], t)
            }
        }
    }

    /// Solves the initial circle at angle `phi`.
    pub fn solve_initial(&self, model: &dyn DelayModel, phi: f64) -> Result<LockedOrbitPoint> {
        let (guess, rows, targets) = self.initial_problem(phi);
        let u = self.system(model).solve(&guess, [&rows[0], &rows[1]], targets)?;
        Ok(self.unpack(&u, phi))
    }
}

fn check_resonance(k: usize, l: usize) -> Result<()> {
    if !(0 < k && k < l) || gcd(k, l) != 1 {
        return Err(Error::Contract(format!("resonance {k}:{l} needs coprime 0 < k < l")));
    }
    Ok(())
}

fn inverse_mod(a: usize, m: usize) -> usize {
    (1..m).find(|&j| (a * j) % m == 1).unwrap_or(0)
}

fn locked_mesh(l: usize, opts: &CircleOptions) -> CollocationMesh {
    CollocationMesh::uniform(l * opts.intervals_per_period, opts.degree)
}

/// Fills circle 0 of `surface`, halving `rho` up to three times.
fn fill_initial_circle(model: &dyn DelayModel, mut surface: ResonanceSurface, n_phi: usize) -> Result<ResonanceSurface> {
    let mut last_err = None;
    for _ in 0..4 {
        let phis: Vec<f64> = (0..n_phi).map(|i| TAU / surface.l as f64 * i as f64 / n_phi as f64).collect();
        let solved: Result<Vec<LockedOrbitPoint>> = phis.par_iter().map(|&phi| surface.solve_initial(model, phi)).collect();
        match solved {
            Ok(points) => {
                let n = points.len();
                let root = surface.root;
                let mut circle = SurfaceCircle {
                    generation: 0,
                    points,
                    tangents: vec![None; n],
                    outward: Vec::new(),
                };
                let nx = surface.nx();
                circle.outward = match &surface.seed {
                    Seed::Torus { gamma, .. } => circle
                        .points
                        .iter()
                        .map(|p| {
                            let mut u = surface.pack(p);
                            for k in 0..nx {
                                u[k] -= gamma[k];
                            }
                            u[nx] -= root[0];
                            u[nx + 1] -= root[1];
                            u
                        })
                        .collect(),
                    Seed::Autonomous { .. } => {
                        let mut e = DVector::zeros(nx + 2);
                        e[nx] = 1.0;
                        vec![e; n]
                    }
                };
                surface.circles = vec![circle];
                return Ok(surface);
            }
            Err(e) => {
                last_err = Some(e);
                surface.rho *= 0.5;
            }
        }
    }
    Err(Error::Degenerate(format!(
        "initial circle failed down to rho = {:.3e}: {}",
        surface.rho * 2.0,
        last_err.unwrap()
    )))
}

/// Initial circle of radius `rho` around a resonant point `alpha = k / l` of
/// a torus curve.
pub fn init_circle_from_torus(model: &dyn DelayModel, point: &TorusPoint, opts: &CircleOptions) -> Result<ResonanceSurface> {
    let (k, l) = (point.k, point.l);
    check_resonance(k, l)?;
    if (point.alpha - k as f64 / l as f64).abs() > 1e-9 {
        return Err(Error::Contract("torus point is not resonant".into()));
    }
    let orbit = &point.orbit;
    let n = orbit.dim;
    let tf = model
        .forcing_period(&orbit.params)
        .ok_or_else(|| Error::Contract("model has no forcing period".into()))?;
    if ((orbit.period / tf) - 1.0).abs() > 1e-9 {
        return Err(Error::Contract("resonant orbit must have the forcing period".into()));
    }
    let mesh = locked_mesh(l, opts);
    let mu = Complex64::from_polar(1.0, TAU * point.alpha);
    // normalise z to unit L2 norm over one period of the orbit
    let zq = orbit.mesh.quadrature();
    let zn: f64 = zq
        .iter()
        .map(|&(s, w)| w * eval_floquet(&orbit.mesh, &point.z, n, mu, s).iter().map(|v| v.norm_sqr()).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if !(zn > 0.0) {
        return Err(Error::Degenerate("zero Floquet solution".into()));
    }
    let np = mesh.periodic_nodes();
    let (mut gamma, mut z_re, mut z_im) = (vec![0.0; np * n], vec![0.0; np * n], vec![0.0; np * n]);
    for g in 0..np {
        let s = l as f64 * mesh.node_time(g);
        let x = orbit.eval_scaled(s.rem_euclid(1.0));
        let z = eval_floquet(&orbit.mesh, &point.z, n, mu, s);
        for c in 0..n {
            gamma[g * n + c] = x[c];
            z_re[g * n + c] = z[c].re / zn;
            z_im[g * n + c] = z[c].im / zn;
        }
    }
    let eta = [orbit.params[point.free.0], orbit.params[point.free.1]];
    let surface = ResonanceSurface {
        k,
        l,
        origin: Origin::TorusPoint,
        rho: opts.rho,
        root: eta,
        param_names: orbit.param_names.clone(),
        params: orbit.params.clone(),
        free: point.free,
        period: l as f64 * tf,
        dim: n,
        shift: (l - inverse_mod(k, l)) % l,
        circles: Vec::new(),
        seed: Seed::Torus { gamma, z_re, z_im, eta },
        mesh,
    };
    fill_initial_circle(model, surface, opts.n_phi)
}

/// Initial circle at forcing amplitude `rho` from an autonomous orbit whose
/// period satisfies `k T = l T_f` at zero forcing. `amplitude` names the
/// forcing-amplitude parameter and `other` the second free parameter.
pub fn init_circle_from_autonomous(
    model: &dyn DelayModel,
    orbit: &PeriodicOrbit,
    k: usize,
    l: usize,
    amplitude: usize,
    other: usize,
    opts: &CircleOptions,
) -> Result<ResonanceSurface> {
    check_resonance(k, l)?;
    if !orbit.autonomous || orbit.params[amplitude] != 0.0 {
        return Err(Error::Contract("autonomous root needs an autonomous orbit at zero forcing".into()));
    }
    let tf = model
        .forcing_period(&orbit.params)
        .ok_or_else(|| Error::Contract("model has no forcing period".into()))?;
    let locked = l as f64 * tf;
    if (k as f64 * orbit.period - locked).abs() > 1e-6 * locked {
        return Err(Error::Contract(format!(
            "orbit period {} is not {l}/{k} forcing periods",
            orbit.period
        )));
    }
    let surface = ResonanceSurface {
        k,
        l,
        origin: Origin::Autonomous,
        rho: opts.rho,
        root: [0.0, orbit.params[other]],
        param_names: orbit.param_names.clone(),
        params: orbit.params.clone(),
        free: (amplitude, other),
        period: locked,
        dim: orbit.dim,
        shift: inverse_mod(k, l),
        circles: Vec::new(),
        seed: Seed::Autonomous { orbit: orbit.clone() },
        mesh: locked_mesh(l, opts),
    };
    fill_initial_circle(model, surface, opts.n_phi)
}

/// Options for [`grow_surface`].
#[derive(Debug, Clone)]
pub struct GrowOptions {
    pub delta: f64,
    pub max_circles: usize,
    /// Parameter box for `eta`; growth stops once a circle leaves it.
    pub bounds: [(f64, f64); 2],
    pub max_halvings: usize,
    /// Largest tolerated fraction of failed points per circle.
    pub max_failures: f64,
}

impl Default for GrowOptions {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            max_circles: 20,
            bounds: [(f64::NEG_INFINITY, f64::INFINITY); 2],
            max_halvings: 4,
            max_failures: 0.2,
        }
    }
}

/// Why growth stopped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GrowStatus {
    MaxCircles,
    Boundary,
}

/// Neighbours of point `i` on the closed circle (using the shift symmetry
/// across the ends of the computed arc).
fn neighbours(surface: &ResonanceSurface, us: &[DVector<f64>], i: usize) -> (DVector<f64>, DVector<f64>) {
    let n = us.len();
    let prev = if i == 0 { surface.shift_vector(&us[n - 1], -1) } else { us[i - 1].clone() };
    let next = if i + 1 == n { surface.shift_vector(&us[0], 1) } else { us[i + 1].clone() };
    (prev, next)
}

/// Tangent frames of every point of circle `c`.
fn circle_frames(model: &dyn DelayModel, surface: &ResonanceSurface, c: usize) -> Result<Vec<(DVector<f64>, DVector<f64>)>> {
    let circle = &surface.circles[c];
    let sys = surface.system(model);
    let us: Vec<DVector<f64>> = circle.points.iter().map(|p| surface.pack(p)).collect();
    (0..us.len())
        .into_par_iter()
        .map(|i| {
            if let Some(t) = &circle.tangents[i] {
                return Ok(t.clone());
            }
            let (prev, next) = neighbours(surface, &us, i);
            sys.frame(&us[i], &(next - prev), &circle.outward[i])
        })
        .collect()
}

/// Grows `surface` circle by circle: every point steps by `delta` along the
/// outward tangent `t2` and is corrected with the two tangent constraints.
/// On a surface-front error the circles computed so far are kept.
pub fn grow_surface(model: &dyn DelayModel, surface: &mut ResonanceSurface, opts: &GrowOptions) -> Result<GrowStatus> {
    if surface.circles.is_empty() {
        return Err(Error::Contract("surface has no initial circle".into()));
    }
    while surface.circles.len() < opts.max_circles {
        let c = surface.circles.len() - 1;
        let frames = circle_frames(model, surface, c)?;
        surface.circles[c].tangents = frames.iter().cloned().map(Some).collect();
        let next = grow_circle(model, surface, &frames, opts)?;
        let outside = next.points.iter().any(|p| {
            (0..2).any(|k| p.eta[k] < opts.bounds[k].0 || p.eta[k] > opts.bounds[k].1)
        });
        surface.circles.push(next);
        if outside {
            return Ok(GrowStatus::Boundary);
        }
    }
    Ok(GrowStatus::MaxCircles)
}

fn grow_circle(
    model: &dyn DelayModel,
    surface: &ResonanceSurface,
    frames: &[(DVector<f64>, DVector<f64>)],
    opts: &GrowOptions,
) -> Result<SurfaceCircle> {
    let sys = surface.system(model);
    let old = &surface.circles[surface.circles.len() - 1];
    let bases: Vec<DVector<f64>> = old.points.iter().map(|p| surface.pack(p)).collect();
    let n = bases.len();
    let step = |base: &DVector<f64>, t1: &DVector<f64>, t2: &DVector<f64>, guess: Option<&DVector<f64>>, delta: f64| {
        let pred = base + t2 * delta;
        let r1 = sys.weights.component_mul(t1);
        let r2 = sys.weights.component_mul(t2);
        let targets = [r1.dot(&pred), r2.dot(&pred)];
        sys.solve(guess.unwrap_or(&pred), [&r1, &r2], targets)
    };
    let results: Vec<Option<(DVector<f64>, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut delta = opts.delta;
            for _ in 0..=opts.max_halvings {
                if let Ok(u) = step(&bases[i], &frames[i].0, &frames[i].1, None, delta) {
                    return Some((u, delta));
                }
                delta *= 0.5;
            }
            None
        })
        .collect();
    let failed = results.iter().filter(|r| r.is_none()).count();
    if failed as f64 > opts.max_failures * n as f64 {
        return Err(Error::SurfaceFront(format!(
            "{failed} of {n} points failed on circle {}",
            surface.circles.len()
        )));
    }
    // surviving points with their bases, frames and steps
    let kept: Vec<usize> = (0..n).filter(|&i| results[i].is_some()).collect();
    let new: Vec<DVector<f64>> = kept.iter().map(|&i| results[i].as_ref().unwrap().0.clone()).collect();
    let deltas: Vec<f64> = kept.iter().map(|&i| results[i].as_ref().unwrap().1).collect();

    // re-equidistribute in the metric |dx| + |d eta|
    let m = new.len();
    let nx = surface.nx();
    let dist = |a: &DVector<f64>, b: &DVector<f64>| {
        let d = a - b;
        let dx: f64 = (0..nx).map(|k| sys.weights[k] * d[k] * d[k]).sum::<f64>().sqrt();
        dx + (d[nx] * d[nx] + d[nx + 1] * d[nx + 1]).sqrt()
    };
    let at = |v: &[DVector<f64>], j: usize| -> DVector<f64> {
        if j < m {
            v[j].clone()
        } else {
            surface.shift_vector(&v[j - m], 1)
        }
    };
    let mut cum = vec![0.0; m + 1];
    for j in 0..m {
        cum[j + 1] = cum[j] + dist(&at(&new, j + 1), &new[j]);
    }
    let total = cum[m];
    let seg: Vec<f64> = cum.windows(2).map(|w| w[1] - w[0]).collect();
    let (lo, hi) = seg.iter().fold((f64::INFINITY, 0.0f64), |a, &s| (a.0.min(s), a.1.max(s)));
    let kept_bases: Vec<DVector<f64>> = kept.iter().map(|&i| bases[i].clone()).collect();
    let kept_t1: Vec<DVector<f64>> = kept.iter().map(|&i| frames[i].0.clone()).collect();
    let kept_t2: Vec<DVector<f64>> = kept.iter().map(|&i| frames[i].1.clone()).collect();
    let points: Vec<DVector<f64>> = if m == n && hi <= 1.25 * lo {
        new.clone()
    } else {
        let targets: Vec<f64> = (0..n).map(|j| total * j as f64 / n as f64).collect();
        let redistributed: Vec<Option<DVector<f64>>> = targets
            .par_iter()
            .map(|&s| {
                let j = cum.partition_point(|&c| c <= s).clamp(1, m) - 1;
                let f = if seg[j] > 0.0 { (s - cum[j]) / seg[j] } else { 0.0 };
                let lerp = |v: &[DVector<f64>]| at(v, j) * (1.0 - f) + at(v, j + 1) * f;
                let base = lerp(&kept_bases);
                let mut t1 = lerp(&kept_t1);
                t1 /= sys.norm(&t1);
                let mut t2 = lerp(&kept_t2);
                t2 /= sys.norm(&t2);
                let delta = deltas[j] * (1.0 - f) + deltas[(j + 1) % m] * f;
                step(&base, &t1, &t2, Some(&lerp(&new)), delta).ok()
            })
            .collect();
        if redistributed.iter().all(|r| r.is_some()) {
            redistributed.into_iter().map(|r| r.unwrap()).collect()
        } else {
            new.clone()
        }
    };
    let count = points.len();
    let outward: Vec<DVector<f64>> = points
        .iter()
        .enumerate()
        .map(|(j, u)| {
            // direction of growth from the nearest surviving base
            let jj = (j * m / count).min(m - 1);
            u - &kept_bases[jj]
        })
        .collect();
    Ok(SurfaceCircle {
        generation: old.generation + 1,
        points: points
            .iter()
            .enumerate()
            .map(|(j, u)| surface.unpack(u, TAU / surface.l as f64 * j as f64 / count as f64))
            .collect(),
        tangents: vec![None; count],
        outward,
    })
}

/// Largest deviation between the shift-symmetry image of a circle point and
/// a direct solve at the shifted angle (initial circle), or the collocation
/// residual of the shifted image (grown circles). Checks `samples` points.
pub fn shift_symmetry_defect(model: &dyn DelayModel, surface: &ResonanceSurface, c: usize, samples: usize) -> Result<f64> {
    let circle = &surface.circles[c];
    let sys = surface.system(model);
    let n = circle.points.len();
    let mut worst: f64 = 0.0;
    for s in 0..samples.min(n) {
        let i = s * n / samples.max(1);
        let p = &circle.points[i];
        let image = surface.shift_vector(&surface.pack(p), 1);
        if c == 0 {
            let direct = surface.solve_initial(model, p.phi + TAU / surface.l as f64)?;
            let d = (&image - surface.pack(&direct)).amax();
            worst = worst.max(d);
        } else {
            worst = worst.max(sys.residual(&image)?.amax());
        }
    }
    Ok(worst)
}

/// Side of a tongue boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn label(&self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

/// A fold point of the projection (saddle-node of locked orbits).
#[derive(Debug, Clone)]
pub struct FoldPoint {
    pub circle: usize,
    pub side: Side,
    pub point: LockedOrbitPoint,
}

/// Projection of a resonance surface onto the parameter plane.
#[derive(Debug, Clone)]
pub struct Tongue {
    pub k: usize,
    pub l: usize,
    pub param_names: [String; 2],
    /// `eta` of every surface point.
    pub cloud: Vec<[f64; 2]>,
    pub folds: Vec<FoldPoint>,
    /// Left and right boundary polylines, starting at the root.
    pub boundary: [Vec<[f64; 2]>; 2],
    /// Circles without a fold pair; the boundary is interpolated across them.
    pub flagged: Vec<usize>,
}

impl Tongue {
    /// Writes `<eta1>,<eta2>,side` rows of the two boundary polylines.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{},{},side", self.param_names[0], self.param_names[1])?;
        for (side, line) in [Side::Left, Side::Right].iter().zip(&self.boundary) {
            for p in line {
                writeln!(w, "{},{},{}", fmt_num(p[0]), fmt_num(p[1]), side.label())?;
            }
        }
        Ok(())
    }

    /// Distance between the two boundary points of circle `c`, if both
    /// exist.
    pub fn width_at_circle(&self, c: usize) -> Option<f64> {
        let l = self.folds.iter().find(|f| f.circle == c && f.side == Side::Left)?;
        let r = self.folds.iter().find(|f| f.circle == c && f.side == Side::Right)?;
        Some(((l.point.eta[0] - r.point.eta[0]).powi(2) + (l.point.eta[1] - r.point.eta[1]).powi(2)).sqrt())
    }
}

fn eta_det(nx: usize, t1: &DVector<f64>, t2: &DVector<f64>) -> f64 {
    t1[nx] * t2[nx + 1] - t1[nx + 1] * t2[nx]
}

/// Projects the surface: the tongue boundary is the fold locus of the
/// projection, where the parameter parts of `t1` and `t2` become
/// linearly dependent. Each sign change along a circle is refined by the
/// Illinois method on the circle.
pub fn project_tongue(model: &dyn DelayModel, surface: &mut ResonanceSurface) -> Result<Tongue> {
    if surface.circles.len() < 2 {
        return Err(Error::Contract("projecting a tongue needs at least two circles".into()));
    }
    let nx = surface.nx();
    let mut folds = Vec::new();
    let mut flagged = Vec::new();
    let last_center = center(&surface.circles[surface.circles.len() - 1]);
    let axis = [last_center[0] - surface.root[0], last_center[1] - surface.root[1]];
    for c in 0..surface.circles.len() {
        let frames = circle_frames(model, surface, c)?;
        surface.circles[c].tangents = frames.iter().cloned().map(Some).collect();
        let circle = &surface.circles[c];
        let n = circle.points.len();
        let dets: Vec<f64> = frames.iter().map(|(t1, t2)| eta_det(nx, t1, t2)).collect();
        let cen = center(circle);
        let mut found = Vec::new();
        for i in 0..n {
            let j = (i + 1) % n;
            if dets[i].signum() != dets[j].signum() {
                if let Ok(p) = refine_fold(model, surface, c, i, &frames, dets[i]) {
                    found.push(p);
                }
            }
        }
        if found.len() < 2 {
            flagged.push(c);
        }
        // keep the two most separated across the axis
        let cross = |p: &LockedOrbitPoint| axis[0] * (p.eta[1] - cen[1]) - axis[1] * (p.eta[0] - cen[0]);
        let left = found.iter().filter(|p| cross(p) > 0.0).max_by(|a, b| cross(a).total_cmp(&cross(b)));
        let right = found.iter().filter(|p| cross(p) <= 0.0).min_by(|a, b| cross(a).total_cmp(&cross(b)));
        if let Some(p) = left {
            folds.push(FoldPoint { circle: c, side: Side::Left, point: p.clone() });
        }
        if let Some(p) = right {
            folds.push(FoldPoint { circle: c, side: Side::Right, point: p.clone() });
        }
    }
    let mut boundary = [vec![surface.root], vec![surface.root]];
    for f in &folds {
        let k = if f.side == Side::Left { 0 } else { 1 };
        boundary[k].push(f.point.eta);
    }
    Ok(Tongue {
        k: surface.k,
        l: surface.l,
        param_names: [surface.param_names[surface.free.0].clone(), surface.param_names[surface.free.1].clone()],
        cloud: surface.circles.iter().flat_map(|c| c.points.iter().map(|p| p.eta)).collect(),
        folds,
        boundary,
        flagged,
    })
}

fn center(circle: &SurfaceCircle) -> [f64; 2] {
    let n = circle.points.len() as f64;
    let s = circle.points.iter().fold([0.0, 0.0], |a, p| [a[0] + p.eta[0], a[1] + p.eta[1]]);
    [s[0] / n, s[1] / n]
}

/// Fold between points `i` and `i + 1` of circle `c`: points on the circle
/// are parametrised by `f` in `[0, 1]` through the constraint
/// `t1_i . (u - u(f)) = 0`, `t2_i . (u - u_i) = 0`.
fn refine_fold(
    model: &dyn DelayModel,
    surface: &ResonanceSurface,
    c: usize,
    i: usize,
    frames: &[(DVector<f64>, DVector<f64>)],
    det_a: f64,
) -> Result<LockedOrbitPoint> {
    let sys = surface.system(model);
    let circle = &surface.circles[c];
    let n = circle.points.len();
    let nx = surface.nx();
    let a = surface.pack(&circle.points[i]);
    let b = if i + 1 == n { surface.shift_vector(&surface.pack(&circle.points[0]), 1) } else { surface.pack(&circle.points[i + 1]) };
    let (t1, t2) = &frames[i];
    let r1 = sys.weights.component_mul(t1);
    let r2 = sys.weights.component_mul(t2);
    let chord = &b - &a;
    let eval = |f: f64| -> Result<(DVector<f64>, f64)> {
        let guess = &a + &chord * f;
        let u = sys.solve(&guess, [&r1, &r2], [r1.dot(&guess), r2.dot(&a)])?;
        let (s1, s2) = sys.frame(&u, &chord, &circle.outward[i])?;
        Ok((u.clone(), eta_det(nx, &s1, &s2)))
    };
    let (mut f0, mut g0) = (0.0, det_a);
    let (mut f1, mut g1) = (1.0, eval(1.0)?.1);
    if g0.signum() == g1.signum() {
        return Err(Error::Localization("fold bracket lost".into()));
    }
    let mut best = (a.clone(), g0);
    let mut side = 0;
    for _ in 0..40 {
        let f = (f0 * g1 - f1 * g0) / (g1 - g0);
        let f = if f.is_finite() && f > f0 && f < f1 { f } else { 0.5 * (f0 + f1) };
        let (u, g) = eval(f)?;
        best = (u, g);
        if g.abs() < 1e-12 || f1 - f0 < 1e-10 {
            break;
        }
        if g.signum() == g1.signum() {
            f1 = f;
            g1 = g;
            if side == -1 {
                g0 *= 0.5;
            }
            side = -1;
        } else {
            f0 = f;
            g0 = g;
            if side == 1 {
                g1 *= 0.5;
            }
            side = 1;
        }
    }
    let phi = circle.points[i].phi + (TAU / surface.l as f64 / n as f64) * 0.5;
    Ok(surface.unpack(&best.0, phi))
}

/// Floquet stability of every surface point (stored in the points and
/// returned per circle).
pub fn stability_scan(model: &dyn DelayModel, surface: &mut ResonanceSurface, count: usize) -> Result<Vec<Vec<bool>>> {
    let mut out = Vec::new();
    for c in 0..surface.circles.len() {
        let labels: Result<Vec<bool>> = (0..surface.circles[c].points.len())
            .into_par_iter()
            .map(|i| {
                let mu = surface.orbit(c, i).multipliers(model, count)?;
                Ok(mu.iter().all(|z| z.norm() <= 1.0 + 1e-7))
            })
            .collect();
        let labels = labels?;
        for (p, &s) in surface.circles[c].points.iter_mut().zip(&labels) {
            p.stable = Some(s);
        }
        out.push(labels);
    }
    Ok(out)
}

/// Writes one JSON object per locked orbit.
pub fn write_surface_jsonl<W: Write>(surface: &ResonanceSurface, mut w: W) -> Result<()> {
    for circle in &surface.circles {
        for p in &circle.points {
            let line = serde_json::json!({
                "k": surface.k,
                "l": surface.l,
                "generation": circle.generation,
                "phi": p.phi,
                "eta": p.eta,
                "period": surface.period,
                "stable": p.stable,
                "profile": p.values,
            });
            writeln!(w, "{line}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn surface(l: usize, shift: usize, dim: usize) -> ResonanceSurface {
        ResonanceSurface {
            k: 1,
            l,
            origin: Origin::TorusPoint,
            rho: 0.0,
            root: [0.0; 2],
            param_names: Vec::new(),
            params: Vec::new(),
            free: (0, 1),
            mesh: CollocationMesh::uniform(l * 3, 2),
            dim,
            period: 12.0 * l as f64,
            shift,
            circles: Vec::new(),
            seed: Seed::Torus { gamma: Vec::new(), z_re: Vec::new(), z_im: Vec::new(), eta: [0.0; 2] },
        }
    }

    proptest! {
        #[test]
        fn shift_has_order_l(l in 1usize..12, j in 0usize..12, dim in 1usize..3, seed in any::<u64>()) {
            let s = surface(l, j % l, dim);
            let n = s.mesh.periodic_nodes() * dim + 2;
            let u = DVector::from_fn(n, |i, _| ((i as u64).wrapping_mul(seed | 1) % 1000) as f64);
            prop_assert_eq!(&s.shift_vector(&u, l as i64), &u);
            prop_assert_eq!(&s.shift_vector(&s.shift_vector(&u, 1), -1), &u);
            // parameters are invariant
            let v = s.shift_vector(&u, 1);
            prop_assert_eq!(v[n - 1], u[n - 1]);
            prop_assert_eq!(v[n - 2], u[n - 2]);
        }
    }
}
