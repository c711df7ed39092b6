//! Residuals and Jacobians of the collocation equations for periodic
//! orbits, their variational equation and the monodromy operator.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::mesh::CollocationMesh;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::DelayModel;

/// Evaluation stencil: global node indices with value and derivative weights.
#[derive(Debug, Clone)]
pub(crate) struct Stencil {
    pub nodes: Vec<usize>,
    pub w: Vec<f64>,
    pub dw: Vec<f64>,
}

impl Stencil {
    fn new(m: usize) -> Self {
        Self { nodes: vec![0; m + 1], w: vec![0.0; m + 1], dw: vec![0.0; m + 1] }
    }

    pub fn value(&self, x: &[f64], n: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (k, &g) in self.nodes.iter().enumerate() {
            for c in 0..n {
                out[c] += self.w[k] * x[g * n + c];
            }
        }
    }

    pub fn deriv(&self, x: &[f64], n: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (k, &g) in self.nodes.iter().enumerate() {
            for c in 0..n {
                out[c] += self.dw[k] * x[g * n + c];
            }
        }
    }

    fn value_c(&self, z: &[Complex64], n: usize, out: &mut [Complex64]) {
        out.iter_mut().for_each(|o| *o = Complex64::new(0.0, 0.0));
        for (k, &g) in self.nodes.iter().enumerate() {
            for c in 0..n {
                out[c] += z[g * n + c] * self.w[k];
            }
        }
    }

    fn deriv_c(&self, z: &[Complex64], n: usize, out: &mut [Complex64]) {
        out.iter_mut().for_each(|o| *o = Complex64::new(0.0, 0.0));
        for (k, &g) in self.nodes.iter().enumerate() {
            for c in 0..n {
                out[c] += z[g * n + c] * self.dw[k];
            }
        }
    }
}

/// Stencil of a 1-periodic profile at any real `s`.
pub(crate) fn periodic_stencil(mesh: &CollocationMesh, s: f64) -> Stencil {
    let m = mesh.degree();
    let np = mesh.periodic_nodes();
    let mut st = Stencil::new(m);
    let sigma = s - s.floor();
    let i = mesh.basis(sigma, &mut st.w, &mut st.dw);
    for j in 0..=m {
        st.nodes[j] = (i * m + j) % np;
    }
    st
}

/// Stencil on `[0, 1]` for a profile with `periodic_nodes() + 1` nodes.
fn open_stencil(mesh: &CollocationMesh, s: f64) -> Stencil {
    let m = mesh.degree();
    let mut st = Stencil::new(m);
    let i = mesh.basis(s.clamp(0.0, 1.0), &mut st.w, &mut st.dw);
    for j in 0..=m {
        st.nodes[j] = i * m + j;
    }
    st
}

/// Periodic profile sampled at `s`.
pub fn eval_periodic(mesh: &CollocationMesh, x: &[f64], n: usize, s: f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    periodic_stencil(mesh, s).value(x, n, &mut out);
    out
}

/// Derivative (w.r.t. the scaled time) of a periodic profile at `s`.
pub fn eval_periodic_deriv(mesh: &CollocationMesh, x: &[f64], n: usize, s: f64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    periodic_stencil(mesh, s).deriv(x, n, &mut out);
    out
}

/// Floquet solution `z(s)` for any real `s`, from its nodes on `[0, 1]`
/// and `z(s + 1) = mu z(s)`.
pub fn eval_floquet(mesh: &CollocationMesh, z: &[Complex64], n: usize, mu: Complex64, s: f64) -> Vec<Complex64> {
    let j = s.floor();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    open_stencil(mesh, s - j).value_c(z, n, &mut out);
    if j != 0.0 {
        let f = mu.powf(j);
        out.iter_mut().for_each(|v| *v *= f);
    }
    out
}

/// Orbit states needed at one collocation point.
struct PointStates {
    x: Vec<f64>,
    dx: Vec<f64>,
    x1: Vec<f64>,
    x2: Vec<f64>,
    st: Stencil,
    st1: Stencil,
    st2: Stencil,
}

fn point_states(mesh: &CollocationMesh, x: &[f64], n: usize, s: f64, d1: f64, d2: f64) -> PointStates {
    let st = periodic_stencil(mesh, s);
    let st1 = periodic_stencil(mesh, s - d1);
    let st2 = periodic_stencil(mesh, s - d2);
    let mut ps = PointStates {
        x: vec![0.0; n],
        dx: vec![0.0; n],
        x1: vec![0.0; n],
        x2: vec![0.0; n],
        st,
        st1,
        st2,
    };
    ps.st.value(x, n, &mut ps.x);
    ps.st.deriv(x, n, &mut ps.dx);
    ps.st1.value(x, n, &mut ps.x1);
    ps.st2.value(x, n, &mut ps.x2);
    ps
}

fn check_period(period: f64) -> Result<()> {
    if !(period.is_finite() && period > 0.0) {
        return Err(Error::Domain(format!("period must be positive (got {period})")));
    }
    Ok(())
}

/// Collocation residual `x'(c) - T f(T c, x(c), x(c - tau1/T), x(c - tau2/T))`
/// of a 1-periodic profile with `periodic_nodes()` nodes. Length
/// `periodic_nodes() * n`.
pub fn orbit_residual(
    model: &dyn DelayModel,
    mesh: &CollocationMesh,
    x: &[f64],
    period: f64,
    p: &[f64],
) -> Result<DVector<f64>> {
    check_period(period)?;
    let n = model.dim();
    let (tau1, tau2) = model.delays(p);
    let (d1, d2) = (tau1 / period, tau2 / period);
    let pts = mesh.collocation_points();
    let mut r = DVector::zeros(pts.len() * n);
    let mut f = vec![0.0; n];
    for (q, &(_, s)) in pts.iter().enumerate() {
        let ps = point_states(mesh, x, n, s, d1, d2);
        model.rhs(period * s, &ps.x, &ps.x1, &ps.x2, p, &mut f);
        for c in 0..n {
            r[q * n + c] = ps.dx[c] - period * f[c];
        }
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite collocation residual".into()));
    }
    Ok(r)
}

/// Analytic Jacobian of [`orbit_residual`] with respect to the node values.
pub fn orbit_jacobian(
    model: &dyn DelayModel,
    mesh: &CollocationMesh,
    x: &[f64],
    period: f64,
    p: &[f64],
) -> Result<DMatrix<f64>> {
    let size = mesh.periodic_nodes() * model.dim();
    let mut jac = DMatrix::zeros(size, size);
    for (r, c, v) in orbit_jacobian_entries(model, mesh, x, period, p)? {
        jac[(r, c)] += v;
    }
    Ok(jac)
}

/// Non-zero entries `(row, col, value)` of [`orbit_jacobian`]; duplicates
/// are to be summed.
pub fn orbit_jacobian_entries(
    model: &dyn DelayModel,
    mesh: &CollocationMesh,
    x: &[f64],
    period: f64,
    p: &[f64],
) -> Result<Vec<(usize, usize, f64)>> {
    check_period(period)?;
    let n = model.dim();
    let (tau1, tau2) = model.delays(p);
    let (d1, d2) = (tau1 / period, tau2 / period);
    let pts = mesh.collocation_points();
    let mut out = Vec::with_capacity(pts.len() * n * n * 3 * (mesh.degree() + 2));
    for (q, &(_, s)) in pts.iter().enumerate() {
        let ps = point_states(mesh, x, n, s, d1, d2);
        let d = model.partials(period * s, &ps.x, &ps.x1, &ps.x2, p);
        for (k, &g) in ps.st.nodes.iter().enumerate() {
            for a in 0..n {
                out.push((q * n + a, g * n + a, ps.st.dw[k]));
                for b in 0..n {
                    out.push((q * n + a, g * n + b, -period * ps.st.w[k] * d.dx[(a, b)]));
                }
            }
        }
        for (st, m) in [(&ps.st1, &d.dxd1), (&ps.st2, &d.dxd2)] {
            for (k, &g) in st.nodes.iter().enumerate() {
                for a in 0..n {
                    for b in 0..n {
                        out.push((q * n + a, g * n + b, -period * st.w[k] * m[(a, b)]));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Linearization of the orbit at every collocation point.
struct Linearization {
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
    c: Vec<DMatrix<f64>>,
}

fn linearize_orbit(model: &dyn DelayModel, mesh: &CollocationMesh, x: &[f64], period: f64, p: &[f64]) -> Linearization {
    let n = model.dim();
    let (tau1, tau2) = model.delays(p);
    let (d1, d2) = (tau1 / period, tau2 / period);
    let pts = mesh.collocation_points();
    let mut lin = Linearization { a: Vec::new(), b: Vec::new(), c: Vec::new() };
    for &(_, s) in &pts {
        let ps = point_states(mesh, x, n, s, d1, d2);
        let d = model.partials(period * s, &ps.x, &ps.x1, &ps.x2, p);
        lin.a.push(d.dx);
        lin.b.push(d.dxd1);
        lin.c.push(d.dxd2);
    }
    lin
}

/// Residual of the variational equation for a Floquet solution with
/// multiplier `mu`: `z` has `periodic_nodes() + 1` nodes on `[0, 1]` and is
/// extended to negative times by `z(s) = mu^{-j} z(s + j)`.
///
/// Returns `periodic_nodes() * n` collocation equations followed by the `n`
/// boundary equations `z(1) - mu z(0)`.
pub fn variational_residual(
    model: &dyn DelayModel,
    mesh: &CollocationMesh,
    x: &[f64],
    period: f64,
    p: &[f64],
    z: &[Complex64],
    mu: Complex64,
) -> Result<Vec<Complex64>> {
    check_period(period)?;
    let n = model.dim();
    let np = mesh.periodic_nodes();
    let (tau1, tau2) = model.delays(p);
    let (d1, d2) = (tau1 / period, tau2 / period);
    let lin = linearize_orbit(model, mesh, x, period, p);
    let pts = mesh.collocation_points();
    let mut out = vec![Complex64::new(0.0, 0.0); (np + 1) * n];
    let mut zc = vec![Complex64::new(0.0, 0.0); n];
    let mut dz = vec![Complex64::new(0.0, 0.0); n];
    let mut z1 = vec![Complex64::new(0.0, 0.0); n];
    let mut z2 = vec![Complex64::new(0.0, 0.0); n];
    let shifted = |s: f64, out: &mut [Complex64]| {
        if s >= 0.0 {
            open_stencil(mesh, s).value_c(z, n, out);
        } else {
            let j = (-s).ceil();
            open_stencil(mesh, s + j).value_c(z, n, out);
            let f = mu.powf(-j);
            out.iter_mut().for_each(|v| *v *= f);
        }
    };
    for (q, &(_, s)) in pts.iter().enumerate() {
        let st = open_stencil(mesh, s);
        st.value_c(z, n, &mut zc);
        st.deriv_c(z, n, &mut dz);
        shifted(s - d1, &mut z1);
        shifted(s - d2, &mut z2);
        for a in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for b in 0..n {
                acc += zc[b] * lin.a[q][(a, b)] + z1[b] * lin.b[q][(a, b)] + z2[b] * lin.c[q][(a, b)];
            }
            out[q * n + a] = dz[a] - acc * period;
        }
    }
    for a in 0..n {
        out[np * n + a] = z[np * n + a] - mu * z[a];
    }
    Ok(out)
}

/// Periodic nodes that each collocation point depends on through the
/// current and the delayed states.
pub fn point_dependencies(mesh: &CollocationMesh, period: f64, tau1: f64, tau2: f64) -> Vec<Vec<usize>> {
    let (d1, d2) = (tau1 / period, tau2 / period);
    mesh.collocation_points()
        .iter()
        .map(|&(_, s)| {
            let mut nodes: Vec<usize> = [s, s - d1, s - d2]
                .iter()
                .flat_map(|&t| periodic_stencil(mesh, t).nodes)
                .collect();
            nodes.sort_unstable();
            nodes.dedup();
            nodes
        })
        .collect()
}

/// Groups of periodic nodes no two of which influence the same collocation
/// point, for finite differences with one residual per group.
pub fn node_coloring(mesh: &CollocationMesh, period: f64, tau1: f64, tau2: f64) -> Vec<Vec<usize>> {
    let deps = point_dependencies(mesh, period, tau1, tau2);
    let np = mesh.periodic_nodes();
    let mut points_of = vec![Vec::new(); np];
    for (q, nodes) in deps.iter().enumerate() {
        for &g in nodes {
            points_of[g].push(q);
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut used: Vec<Vec<bool>> = Vec::new();
    for g in 0..np {
        let slot = (0..groups.len()).find(|&c| points_of[g].iter().all(|&q| !used[c][q]));
        let c = slot.unwrap_or_else(|| {
            groups.push(Vec::new());
            used.push(vec![false; deps.len()]);
            groups.len() - 1
        });
        groups[c].push(g);
        for &q in &points_of[g] {
            used[c][q] = true;
        }
    }
    groups
}

/// Matrix of the (linear) map `z -> variational_residual(.., z, mu)`.
pub fn variational_matrix(
    model: &dyn DelayModel,
    mesh: &CollocationMesh,
    x: &[f64],
    period: f64,
    p: &[f64],
    mu: Complex64,
) -> Result<DMatrix<Complex64>> {
    check_period(period)?;
    let n = model.dim();
    let np = mesh.periodic_nodes();
    let (tau1, tau2) = model.delays(p);
    let (d1, d2) = (tau1 / period, tau2 / period);
    let lin = linearize_orbit(model, mesh, x, period, p);
    let pts = mesh.collocation_points();
    let size = (np + 1) * n;
    let mut m = DMatrix::from_element(size, size, Complex64::new(0.0, 0.0));
    for (q, &(_, s)) in pts.iter().enumerate() {
        let st = open_stencil(mesh, s);
        for (k, &g) in st.nodes.iter().enumerate() {
            for a in 0..n {
                m[(q * n + a, g * n + a)] += st.dw[k];
                for b in 0..n {
                    m[(q * n + a, g * n + b)] -= period * st.w[k] * lin.a[q][(a, b)];
                }
            }
        }
        for (d, coef) in [(d1, &lin.b[q]), (d2, &lin.c[q])] {
            let sd = s - d;
            let (st, f) = if sd >= 0.0 {
                (open_stencil(mesh, sd), Complex64::new(1.0, 0.0))
            } else {
                let j = (-sd).ceil();
                (open_stencil(mesh, sd + j), mu.powf(-j))
            };
            for (k, &g) in st.nodes.iter().enumerate() {
                for a in 0..n {
                    for b in 0..n {
                        m[(q * n + a, g * n + b)] -= f * (period * st.w[k] * coef[(a, b)]);
                    }
                }
            }
        }
    }
    for a in 0..n {
        m[(np * n + a, np * n + a)] += 1.0;
        m[(np * n + a, a)] -= mu;
    }
    Ok(m)
}

/// Monodromy operator of a periodic orbit restricted to the history
/// segment that the delays can reach.
#[derive(Debug, Clone)]
pub struct Monodromy {
    /// Reduced operator acting on the history nodes in `[first_pos, 0]`.
    pub matrix: DMatrix<f64>,
    /// Map from a reduced history vector to the solution nodes on `[0, 1]`.
    pub solution_map: DMatrix<f64>,
    /// Number of whole periods of history stored.
    pub periods_back: usize,
}

/// Histories reaching more than this many periods back are rejected.
pub const MAX_HISTORY_PERIODS: usize = 50;

/// Builds the discretized monodromy operator of the orbit `x` (periodic
/// nodes) with period `period`.
pub fn monodromy(
    model: &dyn DelayModel,
    mesh: &CollocationMesh,
    x: &[f64],
    period: f64,
    p: &[f64],
) -> Result<Monodromy> {
    check_period(period)?;
    let n = model.dim();
    let m = mesh.degree();
    let np = mesh.periodic_nodes();
    let (tau1, tau2) = model.delays(p);
    let (d1, d2) = (tau1 / period, tau2 / period);
    let k_back = (d2.ceil() as usize).max(1);
    if k_back > MAX_HISTORY_PERIODS {
        return Err(Error::Resolution(format!(
            "delay spans {k_back} periods; at most {MAX_HISTORY_PERIODS} are supported"
        )));
    }
    let n_state = k_back * np + 1;
    let n_y = np + 1;
    let lin = linearize_orbit(model, mesh, x, period, p);

    // first history node that can influence the solution
    let s_min = -d2.max(d1);
    let first = {
        let shifted = s_min + k_back as f64;
        let k = (shifted.floor() as usize).min(k_back - 1);
        let sigma = shifted - k as f64;
        k * np + mesh.locate(sigma.clamp(0.0, 1.0)) * m
    };
    let h_nodes = n_state - first;

    let mut ly = DMatrix::zeros(n_y * n, n_y * n);
    let mut lh = DMatrix::zeros(n_y * n, h_nodes * n);
    // y(0) equals the history at 0
    for a in 0..n {
        ly[(a, a)] = 1.0;
        lh[(a, (n_state - 1 - first) * n + a)] = 1.0;
    }
    let history_stencil = |s: f64| -> Stencil {
        let shifted = s + k_back as f64;
        let k = (shifted.floor().max(0.0) as usize).min(k_back - 1);
        let sigma = (shifted - k as f64).clamp(0.0, 1.0);
        let mut st = Stencil::new(m);
        let i = mesh.basis(sigma, &mut st.w, &mut st.dw);
        for j in 0..=m {
            st.nodes[j] = k * np + i * m + j;
        }
        st
    };
    for (q, &(_, s)) in mesh.collocation_points().iter().enumerate() {
        let row = (q + 1) * n;
        let st = open_stencil(mesh, s);
        for (k, &g) in st.nodes.iter().enumerate() {
            for a in 0..n {
                ly[(row + a, g * n + a)] += st.dw[k];
                for b in 0..n {
                    ly[(row + a, g * n + b)] -= period * st.w[k] * lin.a[q][(a, b)];
                }
            }
        }
        for (d, mat) in [(d1, &lin.b[q]), (d2, &lin.c[q])] {
            let sd = s - d;
            if sd >= 0.0 {
                let st = open_stencil(mesh, sd);
                for (k, &g) in st.nodes.iter().enumerate() {
                    for a in 0..n {
                        for b in 0..n {
                            ly[(row + a, g * n + b)] -= period * st.w[k] * mat[(a, b)];
                        }
                    }
                }
            } else {
                let st = history_stencil(sd);
                for (k, &g) in st.nodes.iter().enumerate() {
                    if g < first {
                        if st.w[k] != 0.0 {
                            return Err(Error::Numerical("history stencil below reduced range".into()));
                        }
                        continue;
                    }
                    for a in 0..n {
                        for b in 0..n {
                            lh[(row + a, (g - first) * n + b)] += period * st.w[k] * mat[(a, b)];
                        }
                    }
                }
            }
        }
    }
    let lu = ly.lu();
    let solution_map = lu
        .solve(&lh)
        .ok_or_else(|| Error::Numerical("singular variational collocation system".into()))?;

    let mut matrix = DMatrix::zeros(h_nodes * n, h_nodes * n);
    for hn in 0..h_nodes {
        let q = first + hn;
        if q + np < n_state {
            let src = q + np - first;
            for a in 0..n {
                matrix[(hn * n + a, src * n + a)] = 1.0;
            }
        } else {
            let g = q - (k_back - 1) * np;
            for a in 0..n {
                matrix.row_mut(hn * n + a).copy_from(&solution_map.row(g * n + a));
            }
        }
    }
    Ok(Monodromy { matrix, solution_map, periods_back: k_back })
}

impl Monodromy {
    /// Multipliers sorted by decreasing modulus, closed under conjugation.
    pub fn multipliers(&self) -> Result<Vec<Complex64>> {
        let mut ev = linalg::eigenvalues(&self.matrix)?;
        linalg::sort_by_modulus_desc(&mut ev);
        let mut ev = linalg::conjugate_close(&ev, 1e-10);
        linalg::sort_by_modulus_desc(&mut ev);
        Ok(ev)
    }

    /// Floquet solution on `[0, 1]` (nodes `0..=periodic_nodes()`) for the
    /// multiplier `mu`.
    pub fn eigenfunction(&self, mu: Complex64) -> Result<Vec<Complex64>> {
        let v = linalg::eigenvector(&self.matrix, mu)?;
        let map = self.solution_map.map(|x| Complex64::new(x, 0.0));
        let z = map * v;
        Ok(z.iter().copied().collect())
    }
}
