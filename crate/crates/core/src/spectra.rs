//! Stability spectra: characteristic roots of equilibria and Floquet
//! multipliers of periodic orbits.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_spectrum_csv;
use crate::linalg;
use crate::model::DelayModel;
use crate::periodic::PeriodicOrbit;

/// Linear DDE `x' = A x + B x(t - tau1) + C x(t - tau2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedDde {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub tau1: f64,
    pub tau2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpectrumKind {
    /// Roots `lambda` of the characteristic equation of an equilibrium.
    Characteristic,
    /// Floquet multipliers of a periodic orbit.
    Floquet,
}

impl SpectrumKind {
    pub fn label(&self) -> &'static str {
        match self {
            SpectrumKind::Characteristic => "root",
            SpectrumKind::Floquet => "multiplier",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub kind: SpectrumKind,
    pub values: Vec<Complex64>,
}

impl Spectrum {
    /// Number of values in the unstable half plane (roots) or outside the
    /// unit circle (multipliers), with a small dead band.
    pub fn unstable_count(&self) -> usize {
        match self.kind {
            SpectrumKind::Characteristic => self.values.iter().filter(|z| z.re > 1e-9).count(),
            SpectrumKind::Floquet => self.values.iter().filter(|z| z.norm() > 1.0 + 1e-7).count(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_spectrum_csv(w, &self.values, self.kind.label())
    }
}

impl LinearizedDde {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// `Delta(lambda) = lambda I - A - B e^{-lambda tau1} - C e^{-lambda tau2}`.
    pub fn char_matrix(&self, lambda: Complex64) -> DMatrix<Complex64> {
        let n = self.dim();
        let e1 = (-lambda * self.tau1).exp();
        let e2 = (-lambda * self.tau2).exp();
        DMatrix::from_fn(n, n, |i, j| {
            let diag = if i == j { lambda } else { Complex64::new(0.0, 0.0) };
            diag - self.a[(i, j)] - e1 * self.b[(i, j)] - e2 * self.c[(i, j)]
        })
    }

    fn char_matrix_deriv(&self, lambda: Complex64) -> DMatrix<Complex64> {
        let n = self.dim();
        let e1 = (-lambda * self.tau1).exp() * self.tau1;
        let e2 = (-lambda * self.tau2).exp() * self.tau2;
        DMatrix::from_fn(n, n, |i, j| {
            let diag = if i == j { 1.0 } else { 0.0 };
            Complex64::new(diag, 0.0) + e1 * self.b[(i, j)] + e2 * self.c[(i, j)]
        })
    }

    /// Characteristic function `chi(lambda) = det Delta(lambda)`.
    pub fn char_value(&self, lambda: Complex64) -> Complex64 {
        self.char_matrix(lambda).determinant()
    }

    /// Newton refinement of a root of `chi` using `chi'/chi = tr(Delta^{-1} Delta')`.
    pub fn refine_root(&self, guess: Complex64, max_iter: usize) -> Option<Complex64> {
        let mut lam = guess;
        for _ in 0..max_iter {
            let m = self.char_matrix(lam);
            let dm = self.char_matrix_deriv(lam);
            let step = match m.clone().lu().solve(&dm) {
                Some(x) => {
                    let tr = x.trace();
                    if tr.norm() == 0.0 {
                        return None;
                    }
                    Complex64::new(1.0, 0.0) / tr
                }
                // exactly singular: already on a root
                None => return Some(lam),
            };
            lam -= step;
            if !lam.re.is_finite() || !lam.im.is_finite() {
                return None;
            }
            if step.norm() <= 1e-14 * (1.0 + lam.norm()) {
                break;
            }
        }
        let scale = (1.0 + lam.norm()).powi(self.dim() as i32);
        let chi = self.char_value(lam).norm();
        (chi <= 1e-10 * scale).then_some(lam)
    }

    /// Pseudospectral approximation of the infinitesimal generator on
    /// `[-tau2, 0]` with `nodes + 1` Chebyshev points.
    pub fn generator_matrix(&self, nodes: usize) -> DMatrix<f64> {
        let n = self.dim();
        let big = nodes + 1;
        let tau = self.tau2.max(self.tau1).max(1e-12);
        // Chebyshev extremal points mapped to [-tau, 0]; theta_0 = 0
        let x: Vec<f64> = (0..big).map(|j| (std::f64::consts::PI * j as f64 / nodes as f64).cos()).collect();
        let theta: Vec<f64> = x.iter().map(|xj| tau * (xj - 1.0) / 2.0).collect();
        let cw: Vec<f64> = (0..big)
            .map(|j| {
                let c = if j == 0 || j == nodes { 2.0 } else { 1.0 };
                c * if j % 2 == 0 { 1.0 } else { -1.0 }
            })
            .collect();
        let mut d = DMatrix::zeros(big, big);
        for i in 0..big {
            for j in 0..big {
                if i != j {
                    d[(i, j)] = cw[i] / cw[j] / (x[i] - x[j]);
                }
            }
            let s: f64 = (0..big).filter(|&j| j != i).map(|j| d[(i, j)]).sum();
            d[(i, i)] = -s;
        }
        let d = d * (2.0 / tau);
        // barycentric interpolation weights at a delay
        let bary = |t: f64| -> Vec<f64> {
            if let Some(k) = theta.iter().position(|&th| (th - t).abs() < 1e-14 * (1.0 + tau)) {
                let mut e = vec![0.0; big];
                e[k] = 1.0;
                return e;
            }
            let bw: Vec<f64> = (0..big)
                .map(|j| {
                    let h = if j == 0 || j == nodes { 0.5 } else { 1.0 };
                    h * if j % 2 == 0 { 1.0 } else { -1.0 }
                })
                .collect();
            let terms: Vec<f64> = (0..big).map(|j| bw[j] / (t - theta[j])).collect();
            let s: f64 = terms.iter().sum();
            terms.iter().map(|v| v / s).collect()
        };
        let l1 = bary(-self.tau1);
        let l2 = bary(-self.tau2);
        let mut g = DMatrix::zeros(big * n, big * n);
        for a in 0..n {
            for b in 0..n {
                g[(a, b)] += self.a[(a, b)];
                for j in 0..big {
                    g[(a, j * n + b)] += self.b[(a, b)] * l1[j] + self.c[(a, b)] * l2[j];
                }
            }
        }
        for i in 1..big {
            for j in 0..big {
                for a in 0..n {
                    g[(i * n + a, j * n + a)] = d[(i, j)];
                }
            }
        }
        g
    }

    /// Characteristic roots with real part at least `floor`, refined by
    /// Newton's method, sorted by decreasing real part and closed under
    /// conjugation. The discretization is doubled until the leading six
    /// roots agree to `1e-8`.
    ///
    /// Only roots the discretization resolves are returned; for delay
    /// equations with neutral-like root chains this is a subset of all
    /// roots right of `floor`.
    pub fn leading_roots(&self, floor: f64) -> Result<Vec<Complex64>> {
        if self.dim() == 0 {
            return Ok(Vec::new());
        }
        if self.tau2 <= 0.0 {
            let m = &self.a + &self.b + &self.c;
            let mut ev = linalg::conjugate_close(&linalg::eigenvalues(&m)?, 1e-12);
            ev.retain(|z| z.re >= floor);
            linalg::sort_by_real_desc(&mut ev);
            return Ok(ev);
        }
        let mut nodes = 40;
        let mut prev: Option<Vec<Complex64>> = None;
        loop {
            let roots = self.roots_at_resolution(nodes, floor)?;
            if let Some(p) = &prev {
                let k = p.len().min(roots.len()).min(6);
                let stable = p.len() >= k
                    && roots.len() >= k
                    && (0..k).all(|i| (p[i] - roots[i]).norm() < 1e-8);
                if stable {
                    return Ok(roots);
                }
            }
            if nodes >= 640 {
                return Err(Error::Resolution("characteristic roots did not stabilize under refinement".into()));
            }
            prev = Some(roots);
            nodes *= 2;
        }
    }

    fn roots_at_resolution(&self, nodes: usize, floor: f64) -> Result<Vec<Complex64>> {
        let ev = linalg::eigenvalues(&self.generator_matrix(nodes))?;
        let mut roots: Vec<Complex64> = Vec::new();
        for z in ev {
            if z.re < floor - 1.0 || z.im < -1e-12 {
                continue;
            }
            let Some(r) = self.refine_root(z, 50) else { continue };
            if r.re < floor || r.im < -1e-9 {
                continue;
            }
            let r = if r.im.abs() < 1e-9 * (1.0 + r.norm()) { Complex64::new(r.re, 0.0) } else { r };
            if roots.iter().all(|q| (q - r).norm() > 1e-8 * (1.0 + r.norm())) {
                roots.push(r);
            }
        }
        let mut out = linalg::conjugate_close(&roots, 0.0);
        linalg::sort_by_real_desc(&mut out);
        Ok(out)
    }
}

/// Default floor for characteristic roots.
pub const DEFAULT_ROOT_FLOOR: f64 = -2.0;
/// Default number of Floquet multipliers reported.
pub const DEFAULT_MULTIPLIER_COUNT: usize = 12;

/// Damped Newton for `f(x, x, x, eta) = 0` from `guess`.
pub fn find_equilibrium(model: &dyn DelayModel, guess: &[f64], p: &[f64]) -> Result<Vec<f64>> {
    let n = model.dim();
    if guess.len() != n {
        return Err(Error::Domain("state dimension mismatch".into()));
    }
    model.validate(p)?;
    let mut x = DVector::from_column_slice(guess);
    let mut f = vec![0.0; n];
    let eval = |x: &DVector<f64>, f: &mut [f64]| {
        model.rhs(0.0, x.as_slice(), x.as_slice(), x.as_slice(), p, f);
    };
    eval(&x, &mut f);
    let mut norm = DVector::from_column_slice(&f).norm();
    for _ in 0..50 {
        if !norm.is_finite() {
            break;
        }
        if norm <= 1e-10 {
            return Ok(x.iter().copied().collect());
        }
        let d = model.partials(0.0, x.as_slice(), x.as_slice(), x.as_slice(), p);
        let j = d.dx + d.dxd1 + d.dxd2;
        let Some(dx) = j.lu().solve(&DVector::from_column_slice(&f)) else { break };
        let mut lambda = 1.0;
        loop {
            let trial = &x - &dx * lambda;
            eval(&trial, &mut f);
            let tn = DVector::from_column_slice(&f).norm();
            if tn.is_finite() && tn < norm * (1.0 - 1e-4 * lambda) {
                x = trial;
                norm = tn;
                break;
            }
            lambda *= 0.5;
            if lambda < 1e-6 {
                x = trial;
                norm = tn;
                break;
            }
        }
    }
    Err(Error::NonConvergence { iterations: 50, residual: norm })
}

/// Characteristic roots of the equilibrium `x0`.
pub fn equilibrium_spectrum(model: &dyn DelayModel, x0: &[f64], p: &[f64], floor: f64) -> Result<Spectrum> {
    let lin = crate::model::linearize_at_constant(model, x0, p)?;
    Ok(Spectrum { kind: SpectrumKind::Characteristic, values: lin.leading_roots(floor)? })
}

/// Leading Floquet multipliers of `orbit`.
pub fn floquet_multipliers(model: &dyn DelayModel, orbit: &PeriodicOrbit, count: usize) -> Result<Spectrum> {
    Ok(Spectrum { kind: SpectrumKind::Floquet, values: orbit.multipliers(model, count)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{linearize_at_constant, Enso};

    fn enso_lin(k0: f64) -> LinearizedDde {
        let p = Enso::parameters().with("k0", k0).unwrap().with("d_k", 0.0).unwrap();
        linearize_at_constant(&Enso, &[0.0], p.values()).unwrap()
    }

    #[test]
    fn roots_satisfy_characteristic_equation() {
        let lin = enso_lin(1.8);
        let roots = lin.leading_roots(DEFAULT_ROOT_FLOOR).unwrap();
        assert!(roots.len() >= 6);
        for r in &roots {
            assert!(lin.char_value(*r).norm() < 1e-10 * (1.0 + r.norm()));
        }
        // leading pair is complex and unstable at k0 = 1.8
        assert!(roots[0].re > 0.0 && roots[0].im.abs() > 0.0);
        assert_eq!(Spectrum { kind: SpectrumKind::Characteristic, values: roots }.unstable_count(), 2);
    }

    #[test]
    fn refinement_is_idempotent() {
        let lin = enso_lin(1.5);
        let r = lin.leading_roots(-1.0).unwrap()[0];
        let again = lin.refine_root(r, 50).unwrap();
        assert!((again - r).norm() < 1e-12);
    }

    #[test]
    fn ode_case_falls_back_to_matrix_eigenvalues() {
        let lin = LinearizedDde {
            a: DMatrix::from_row_slice(1, 1, &[-0.5]),
            b: DMatrix::zeros(1, 1),
            c: DMatrix::zeros(1, 1),
            tau1: 0.0,
            tau2: 0.0,
        };
        assert_eq!(lin.leading_roots(-2.0).unwrap(), vec![Complex64::new(-0.5, 0.0)]);
    }

    #[test]
    fn equilibrium_newton_finds_trivial_state() {
        let p = Enso::parameters().with("d_k", 0.0).unwrap();
        let x = find_equilibrium(&Enso, &[0.3], p.values()).unwrap();
        assert!(x[0].abs() < 1e-10);
    }
}
