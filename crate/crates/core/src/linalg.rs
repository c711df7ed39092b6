//! Linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Forward-difference Jacobian of `f` at `u` (`m` outputs).
pub fn fd_jacobian<F>(f: F, u: &DVector<f64>, f0: &DVector<f64>) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut jac = DMatrix::zeros(f0.len(), u.len());
    let mut v = u.clone();
    for j in 0..u.len() {
        let h = 1e-7 * (1.0 + u[j].abs());
        v[j] = u[j] + h;
        let fj = f(&v)?;
        v[j] = u[j];
        jac.set_column(j, &((fj - f0) / h));
    }
    Ok(jac)
}

/// Finite-difference derivative of `f` in the direction of a subset of
/// components. Returns the columns for `indices` only.
pub fn fd_columns<F>(
    f: F,
    u: &DVector<f64>,
    f0: &DVector<f64>,
    indices: &[usize],
) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut cols = DMatrix::zeros(f0.len(), indices.len());
    let mut v = u.clone();
    for (c, &j) in indices.iter().enumerate() {
        let h = 1e-7 * (1.0 + u[j].abs());
        v[j] = u[j] + h;
        let fj = f(&v)?;
        v[j] = u[j];
        cols.set_column(c, &((fj - f0) / h));
    }
    Ok(cols)
}

/// Solves `a x = b` by partial-pivoting LU.
pub fn solve(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    a.lu()
        .solve(b)
        .ok_or_else(|| Error::Numerical("singular linear system".into()))
}

/// Square sparse matrix assembled from `(row, col, value)` entries;
/// duplicates are summed.
#[derive(Debug, Clone, Default)]
pub struct SparseMatrix {
    pub n: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn new(n: usize) -> Self {
        Self { n, entries: Vec::new() }
    }

    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        if val != 0.0 {
            self.entries.push((row, col, val));
        }
    }

    /// Sparse LU factorization.
    pub fn lu(&self) -> Result<SparseLu> {
        use faer::sparse::{SparseColMat, Triplet};
        if self.entries.iter().any(|e| !e.2.is_finite()) {
            return Err(Error::Numerical("non-finite matrix entry".into()));
        }
        let trip: Vec<_> = self.entries.iter().map(|&(r, c, v)| Triplet::new(r, c, v)).collect();
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(self.n, self.n, &trip)
            .map_err(|e| Error::Numerical(format!("sparse assembly failed: {e:?}")))?;
        let lu = mat.sp_lu().map_err(|e| Error::Numerical(format!("sparse LU failed: {e:?}")))?;
        Ok(SparseLu { n: self.n, lu })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for &(r, c, v) in &self.entries {
            a[(r, c)] += v;
        }
        a
    }
}

/// Factorized sparse matrix.
pub struct SparseLu {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl SparseLu {
    /// Solves for every column of `b`; fails on a non-finite result
    /// (numerically singular matrix).
    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        use faer::linalg::solvers::Solve;
        let rhs = faer::Mat::<f64>::from_fn(self.n, b.ncols(), |i, j| b[(i, j)]);
        let x = self.lu.solve(&rhs);
        let out = DMatrix::from_fn(self.n, b.ncols(), |i, j| x[(i, j)]);
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(Error::Numerical("singular sparse system".into()))
        }
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.solve(&DMatrix::from_column_slice(self.n, 1, b.as_slice()))?.column(0).into_owned())
    }
}

/// Eigenvalues of a real square matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite matrix entries in eigensolve".into()));
    }
    let ev = m.clone().complex_eigenvalues();
    let out: Vec<Complex64> = ev.iter().map(|z| Complex64::new(z.re, z.im)).collect();
    if out.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numerical("eigensolver produced non-finite values".into()));
    }
    Ok(out)
}

/// Eigenvector of `m` for an (approximate) eigenvalue `mu`, by inverse
/// iteration. The result has unit Euclidean norm.
pub fn eigenvector(m: &DMatrix<f64>, mu: Complex64) -> Result<DVector<Complex64>> {
    let n = m.nrows();
    let scale = m.norm().max(1.0);
    let shift = mu + Complex64::new(1e-10 * scale, 1e-10 * scale);
    let mut a: DMatrix<Complex64> = m.map(|x| Complex64::new(x, 0.0));
    for i in 0..n {
        a[(i, i)] -= shift;
    }
    let lu = a.lu();
    let mut v = DVector::from_fn(n, |i, _| Complex64::new(1.0 + 0.1 * i as f64, 0.3));
    for _ in 0..4 {
        v = lu
            .solve(&v)
            .ok_or_else(|| Error::Numerical("inverse iteration hit a singular shift".into()))?;
        let nrm = v.norm();
        if !nrm.is_finite() || nrm == 0.0 {
            return Err(Error::Numerical("inverse iteration diverged".into()));
        }
        v /= Complex64::new(nrm, 0.0);
    }
    Ok(v)
}

/// Sign of `det(a)` (`0.0` for an exactly singular factorization).
pub fn det_sign(a: DMatrix<f64>) -> f64 {
    let lu = a.lu();
    let mut sign: f64 = lu.p().determinant();
    let u = lu.u();
    for i in 0..u.nrows() {
        let d = u[(i, i)];
        if d == 0.0 {
            return 0.0;
        }
        sign *= d.signum();
    }
    sign
}

/// Unit null vector of an `(n-1) x n` matrix, oriented to have a positive
/// inner product with `hint`.
pub fn null_vector(j: &DMatrix<f64>, hint: &DVector<f64>) -> Result<DVector<f64>> {
    let n = j.ncols();
    debug_assert_eq!(j.nrows() + 1, n);
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, 0), (n - 1, n)).copy_from(j);
    a.row_mut(n - 1).copy_from(&hint.transpose());
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let v = match a.clone().lu().solve(&rhs) {
        Some(v) if v.iter().all(|x| x.is_finite()) => v,
        _ => {
            let svd = j.clone().svd(false, true);
            let vt = svd.v_t.ok_or_else(|| Error::Numerical("svd failed".into()))?;
            let (imin, _) = svd
                .singular_values
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
            // a wide matrix has one more right singular vector than singular values
            let idx = if vt.nrows() > svd.singular_values.len() { vt.nrows() - 1 } else { imin };
            vt.row(idx).transpose()
        }
    };
    let mut v = v.clone() / v.norm();
    if v.dot(hint) < 0.0 {
        v = -v;
    }
    Ok(v)
}

/// Sorts complex values by decreasing real part, ties broken by imaginary part.
pub fn sort_by_real_desc(v: &mut [Complex64]) {
    v.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
}

/// Sorts complex values by decreasing modulus, ties broken by imaginary part.
pub fn sort_by_modulus_desc(v: &mut [Complex64]) {
    v.sort_by(|a, b| b.norm().total_cmp(&a.norm()).then(b.im.total_cmp(&a.im)));
}

/// Makes a list of eigenvalues of a real operator exactly closed under
/// conjugation: values with `|im| <= tol_real` become real, and each
/// complex value is paired with its conjugate.
pub fn conjugate_close(values: &[Complex64], tol_real: f64) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(values.len());
    for z in values {
        if z.im.abs() <= tol_real * (1.0 + z.norm()) {
            out.push(Complex64::new(z.re, 0.0));
        } else if z.im > 0.0 {
            out.push(*z);
            out.push(z.conj());
        }
    }
    out
}
