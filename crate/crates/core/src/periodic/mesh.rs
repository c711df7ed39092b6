use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-polynomial mesh on `[0, 1]`.
///
/// Each interval carries `degree + 1` equispaced representation nodes (the
/// end node is shared with the next interval) and `degree` Gauss-Legendre
/// collocation points. Global node `g` of interval `i`, local `j` is
/// `i * degree + j`; there are `intervals * degree + 1` nodes in total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollocationMesh {
    boundaries: Vec<f64>,
    degree: usize,
    #[serde(skip)]
    gauss: GaussRule,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct GaussRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(m, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(m, x);
        nodes[m - 1 - i] = 0.5 * (1.0 + x);
        weights[m - 1 - i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre(m: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if m == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=m {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Lagrange weights (values and derivatives w.r.t. the local coordinate)
/// for equispaced nodes `j / m` at `xi` in `[0, 1]`.
pub fn lagrange_weights(m: usize, xi: f64, w: &mut [f64], dw: &mut [f64]) {
    for j in 0..=m {
        let xj = j as f64 / m as f64;
        let mut val = 1.0;
        let mut der = 0.0;
        for k in 0..=m {
            if k == j {
                continue;
            }
            let xk = k as f64 / m as f64;
            let factor = (xi - xk) / (xj - xk);
            // product rule: d/dxi of prod over k of factor_k
            der = der * factor + val / (xj - xk);
            val *= factor;
        }
        w[j] = val;
        dw[j] = der;
    }
}

impl CollocationMesh {
    pub fn uniform(intervals: usize, degree: usize) -> Self {
        let boundaries = (0..=intervals).map(|i| i as f64 / intervals as f64).collect();
        Self::from_boundaries(boundaries, degree).expect("uniform mesh is valid")
    }

    pub fn from_boundaries(boundaries: Vec<f64>, degree: usize) -> Result<Self> {
        if degree < 2 {
            return Err(Error::Config("collocation degree must be at least 2".into()));
        }
        if boundaries.len() < 2
            || boundaries[0] != 0.0
            || *boundaries.last().unwrap() != 1.0
            || boundaries.windows(2).any(|w| !(w[1] > w[0]))
        {
            return Err(Error::Config("mesh boundaries must increase strictly from 0 to 1".into()));
        }
        let (nodes, weights) = gauss_legendre(degree);
        Ok(Self { boundaries, degree, gauss: GaussRule { nodes, weights } })
    }

    /// Restores the quadrature rule after deserialization.
    pub fn rebuilt(&self) -> Result<Self> {
        Self::from_boundaries(self.boundaries.clone(), self.degree)
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn intervals(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// Number of distinct nodes of a periodic profile.
    pub fn periodic_nodes(&self) -> usize {
        self.intervals() * self.degree
    }

    pub fn node_time(&self, g: usize) -> f64 {
        let m = self.degree;
        let i = g / m;
        if i >= self.intervals() {
            return 1.0;
        }
        let j = g % m;
        let (a, b) = (self.boundaries[i], self.boundaries[i + 1]);
        a + (b - a) * j as f64 / m as f64
    }

    pub fn is_uniform(&self) -> bool {
        let n = self.intervals() as f64;
        self.boundaries
            .iter()
            .enumerate()
            .all(|(i, &b)| (b - i as f64 / n).abs() < 1e-14)
    }

    /// Collocation points as `(interval, time)`.
    pub fn collocation_points(&self) -> Vec<(usize, f64)> {
        let mut out = Vec::with_capacity(self.intervals() * self.degree);
        for i in 0..self.intervals() {
            let (a, b) = (self.boundaries[i], self.boundaries[i + 1]);
            for &c in &self.gauss.nodes {
                out.push((i, a + (b - a) * c));
            }
        }
        out
    }

    /// Quadrature points and weights for integrals over `[0, 1]`.
    pub fn quadrature(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.intervals() * self.degree);
        for i in 0..self.intervals() {
            let (a, b) = (self.boundaries[i], self.boundaries[i + 1]);
            for (c, w) in self.gauss.nodes.iter().zip(&self.gauss.weights) {
                out.push((a + (b - a) * c, (b - a) * w));
            }
        }
        out
    }

    /// Interval containing `t` in `[0, 1]` (the last one for `t = 1`).
    pub fn locate(&self, t: f64) -> usize {
        let n = self.intervals();
        let k = self.boundaries.partition_point(|&b| b <= t);
        k.clamp(1, n) - 1
    }

    /// Lagrange data at `t` in `[0, 1]`: interval, value weights and
    /// derivative weights (w.r.t. `t`).
    pub fn basis(&self, t: f64, w: &mut [f64], dw: &mut [f64]) -> usize {
        let i = self.locate(t);
        let (a, b) = (self.boundaries[i], self.boundaries[i + 1]);
        let h = b - a;
        lagrange_weights(self.degree, (t - a) / h, w, dw);
        for d in dw.iter_mut() {
            *d /= h;
        }
        i
    }

    /// Per-node weights approximating `integral_0^1 x(t) dt` for a periodic
    /// profile (length `periodic_nodes()`).
    pub fn node_integral_weights(&self) -> Vec<f64> {
        let m = self.degree;
        let np = self.periodic_nodes();
        let mut out = vec![0.0; np];
        let mut w = vec![0.0; m + 1];
        let mut dw = vec![0.0; m + 1];
        for (t, q) in self.quadrature() {
            let i = self.basis(t, &mut w, &mut dw);
            for j in 0..=m {
                out[(i * m + j) % np] += q * w[j];
            }
        }
        out
    }

    /// Equidistributes `monitor` (one non-negative value per interval,
    /// already divided by interval length) into `intervals` new intervals.
    /// Mesh with every interval split in half.
    pub fn doubled(&self) -> Self {
        let mut b = Vec::with_capacity(2 * self.boundaries.len());
        for w in self.boundaries.windows(2) {
            b.push(w[0]);
            b.push(0.5 * (w[0] + w[1]));
        }
        b.push(1.0);
        Self::from_boundaries(b, self.degree).expect("splitting preserves mesh validity")
    }

    pub fn equidistributed(&self, density: &[f64], intervals: usize) -> Result<Self> {
        let n = self.intervals();
        let mut cum = vec![0.0; n + 1];
        for i in 0..n {
            let h = self.boundaries[i + 1] - self.boundaries[i];
            cum[i + 1] = cum[i] + density[i] * h;
        }
        let total = cum[n];
        let mut b = vec![0.0; intervals + 1];
        for (k, slot) in b.iter_mut().enumerate().take(intervals).skip(1) {
            let target = total * k as f64 / intervals as f64;
            let i = cum.partition_point(|&c| c < target).clamp(1, n) - 1;
            let frac = if cum[i + 1] > cum[i] { (target - cum[i]) / (cum[i + 1] - cum[i]) } else { 0.0 };
            *slot = self.boundaries[i] + frac * (self.boundaries[i + 1] - self.boundaries[i]);
        }
        b[intervals] = 1.0;
        Self::from_boundaries(b, self.degree)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_rule_integrates_polynomials_exactly() {
        for m in 2..7 {
            let (x, w) = gauss_legendre(m);
            for p in 0..(2 * m) {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p as i32)).sum();
                assert!((q - 1.0 / (p as f64 + 1.0)).abs() < 1e-14, "m={m} p={p}");
            }
        }
    }

    #[test]
    fn lagrange_reproduces_polynomials() {
        let m = 4;
        let mut w = vec![0.0; 5];
        let mut dw = vec![0.0; 5];
        lagrange_weights(m, 0.37, &mut w, &mut dw);
        let f = |x: f64| 1.0 - 2.0 * x + 3.0 * x.powi(3) + x.powi(4);
        let df = |x: f64| -2.0 + 9.0 * x * x + 4.0 * x.powi(3);
        let v: f64 = (0..=m).map(|j| w[j] * f(j as f64 / 4.0)).sum();
        let d: f64 = (0..=m).map(|j| dw[j] * f(j as f64 / 4.0)).sum();
        assert!((v - f(0.37)).abs() < 1e-13);
        assert!((d - df(0.37)).abs() < 1e-12);
    }

    #[test]
    fn mesh_validation() {
        assert!(CollocationMesh::from_boundaries(vec![0.0, 0.5, 0.5, 1.0], 4).is_err());
        assert!(CollocationMesh::from_boundaries(vec![0.0, 1.0], 1).is_err());
        let m = CollocationMesh::uniform(10, 4);
        assert_eq!(m.periodic_nodes(), 40);
        assert!((m.node_time(5) - 0.125).abs() < 1e-15);
        assert_eq!(m.locate(1.0), 9);
        let s: f64 = m.node_integral_weights().iter().sum();
        assert!((s - 1.0).abs() < 1e-14);
    }
}
