//! Pseudo-arclength continuation of solution curves of `R(u) = 0`,
//! `R: R^n -> R^(n-1)`, with event localization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// A continuation problem: `dim()` unknowns and `dim() - 1` equations.
pub trait ContinuationProblem {
    fn dim(&self) -> usize;

    fn residual(&self, u: &DVector<f64>) -> Result<DVector<f64>>;

    fn jacobian(&self, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        let r0 = self.residual(u)?;
        linalg::fd_jacobian(|v| self.residual(v), u, &r0)
    }

    /// Weights of the inner product used for step lengths and tangents.
    fn weights(&self) -> DVector<f64> {
        DVector::from_element(self.dim(), 1.0)
    }

    /// Component of `u` that the first step should increase.
    fn primary_index(&self) -> usize;

    /// Called for each accepted point (updates of phase references etc.).
    fn accept(&mut self, _u: &DVector<f64>) -> Result<()> {
        Ok(())
    }

    /// A reason to stop the branch at `u`, if any.
    fn stop_reason(&self, _u: &DVector<f64>) -> Option<String> {
        None
    }
}

/// Step control and termination settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuationSettings {
    pub initial_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub max_points: usize,
    pub max_newton: usize,
    pub tolerance: f64,
    /// `(component, lower, upper)` box limits.
    pub bounds: Vec<(usize, f64, f64)>,
}

impl Default for ContinuationSettings {
    fn default() -> Self {
        Self {
            initial_step: 0.02,
            min_step: 1e-8,
            max_step: 0.2,
            max_points: 400,
            max_newton: 8,
            tolerance: 1e-9,
            bounds: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BranchStatus {
    /// Left the parameter box; the last point lies on the boundary.
    Boundary,
    MaxPoints,
    /// The problem requested termination.
    Terminated(String),
    /// Step size underflow; the branch is partial.
    Stalled(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchPoint {
    pub u: Vec<f64>,
    pub tangent: Vec<f64>,
    pub step: f64,
    pub newton_iterations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    pub status: BranchStatus,
}

impl Branch {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn u(&self, i: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.points[i].u)
    }

    pub fn last_u(&self) -> DVector<f64> {
        self.u(self.points.len() - 1)
    }

    pub fn is_partial(&self) -> bool {
        matches!(self.status, BranchStatus::Stalled(_))
    }
}

fn wdot(w: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    w.iter().zip(a.iter()).zip(b.iter()).map(|((w, a), b)| w * a * b).sum()
}

fn wnormalize(w: &DVector<f64>, v: DVector<f64>) -> DVector<f64> {
    let n = wdot(w, &v, &v).sqrt();
    v / n
}

/// Newton solve of `R(u) = 0` augmented by the linear condition
/// `row . (u - anchor) = 0`. Returns the solution and the iteration count.
pub fn correct<P: ContinuationProblem + ?Sized>(
    problem: &P,
    start: &DVector<f64>,
    row: &DVector<f64>,
    anchor: &DVector<f64>,
    max_iter: usize,
    tol: f64,
) -> Result<(DVector<f64>, usize)> {
    let n = problem.dim();
    let mut u = start.clone();
    let mut last = f64::INFINITY;
    for it in 0..=max_iter {
        let r = problem.residual(&u)?;
        let extra = row.dot(&(&u - anchor));
        let norm = r.amax().max(extra.abs());
        if !norm.is_finite() {
            return Err(Error::Numerical("non-finite residual in corrector".into()));
        }
        if norm <= tol {
            return Ok((u, it));
        }
        if it == max_iter || (it > 2 && norm > 1e3 * last) {
            return Err(Error::NonConvergence { iterations: it, residual: norm });
        }
        last = norm;
        let j = problem.jacobian(&u)?;
        let mut a = DMatrix::zeros(n, n);
        a.view_mut((0, 0), (n - 1, n)).copy_from(&j);
        a.row_mut(n - 1).copy_from(&row.transpose());
        let mut rhs = DVector::zeros(n);
        rhs.rows_mut(0, n - 1).copy_from(&r);
        rhs[n - 1] = extra;
        let du = linalg::solve(a, &rhs)?;
        u -= du;
    }
    unreachable!()
}

fn tangent_at<P: ContinuationProblem + ?Sized>(
    problem: &P,
    u: &DVector<f64>,
    hint: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    let j = problem.jacobian(u)?;
    let whint = w.component_mul(hint);
    let t = linalg::null_vector(&j, &whint)?;
    Ok(wnormalize(w, t))
}

/// Continues the branch through `start` (corrected first with the primary
/// parameter fixed). `direction` is `+1.0` or `-1.0` relative to the primary
/// parameter.
pub fn continue_branch<P: ContinuationProblem + ?Sized>(
    problem: &mut P,
    start: &DVector<f64>,
    direction: f64,
    settings: &ContinuationSettings,
) -> Result<Branch> {
    continue_branch_with(problem, start, None, direction, settings, |_, _, _| Ok(()))
}

/// As [`continue_branch`], with an optional initial tangent and a callback
/// invoked after every accepted point (before the problem's `accept` hook)
/// with the problem, the branch so far and the new point's index.
pub fn continue_branch_with<P, F>(
    problem: &mut P,
    start: &DVector<f64>,
    initial_tangent: Option<&DVector<f64>>,
    direction: f64,
    settings: &ContinuationSettings,
    mut on_point: F,
) -> Result<Branch>
where
    P: ContinuationProblem + ?Sized,
    F: FnMut(&mut P, &Branch, usize) -> Result<()>,
{
    let n = problem.dim();
    if start.len() != n {
        return Err(Error::Domain(format!("start vector has {} entries, expected {n}", start.len())));
    }
    let w = problem.weights();
    let ip = problem.primary_index();
    for &(k, lo, hi) in &settings.bounds {
        if start[k] < lo - 1e-12 || start[k] > hi + 1e-12 {
            return Err(Error::Domain(format!("start point lies outside the box in component {k}")));
        }
    }
    let mut e = DVector::zeros(n);
    e[ip] = 1.0;
    let (u0, it0) = match initial_tangent {
        // a seed from branch switching must not be pulled back onto the old branch
        Some(t) => correct(&*problem, start, &w.component_mul(t), start, settings.max_newton * 2, settings.tolerance)?,
        None => correct(&*problem, start, &e, start, settings.max_newton * 2, settings.tolerance)?,
    };
    let hint = match initial_tangent {
        Some(t) => t.clone(),
        None => &e * direction.signum() / w[ip].max(1e-300),
    };
    let mut t = tangent_at(&*problem, &u0, &hint, &w)?;
    if initial_tangent.is_none() && t[ip] * direction < 0.0 {
        t = -t;
    }
    let mut branch = Branch {
        points: vec![BranchPoint {
            u: u0.iter().copied().collect(),
            tangent: t.iter().copied().collect(),
            step: settings.initial_step,
            newton_iterations: it0,
        }],
        status: BranchStatus::MaxPoints,
    };
    on_point(problem, &branch, 0)?;
    problem.accept(&u0)?;
    if let Some(reason) = problem.stop_reason(&u0) {
        branch.status = BranchStatus::Terminated(reason);
        return Ok(branch);
    }
    let mut u = u0;
    let mut h = settings.initial_step;
    let mut streak = 0;
    while branch.points.len() < settings.max_points {
        let pred = &u + &t * h;
        let row = w.component_mul(&t);
        let attempt = correct(&*problem, &pred, &row, &pred, settings.max_newton, settings.tolerance)
            .and_then(|(un, it)| {
                let tn = tangent_at(&*problem, &un, &t, &w)?;
                let dist = wdot(&w, &(&un - &u), &(&un - &u)).sqrt();
                // reject jumps to another part of the curve
                if wdot(&w, &tn, &t) < 0.5 || dist > 3.0 * h.abs() {
                    return Err(Error::NonConvergence { iterations: it, residual: f64::NAN });
                }
                Ok((un, tn, it))
            });
        match attempt {
            Ok((un, tn, it)) => {
                // box exit: place the last point on the boundary
                let exit = settings.bounds.iter().find_map(|&(k, lo, hi)| {
                    if un[k] > hi {
                        Some((k, hi))
                    } else if un[k] < lo {
                        Some((k, lo))
                    } else {
                        None
                    }
                });
                if let Some((k, value)) = exit {
                    let ub = locate_value(&*problem, &u, &un, k, value, settings)?;
                    let tb = tangent_at(&*problem, &ub, &t, &w)?;
                    branch.points.push(BranchPoint {
                        u: ub.iter().copied().collect(),
                        tangent: tb.iter().copied().collect(),
                        step: h,
                        newton_iterations: it,
                    });
                    let idx = branch.points.len() - 1;
                    on_point(problem, &branch, idx)?;
                    problem.accept(&ub)?;
                    branch.status = BranchStatus::Boundary;
                    return Ok(branch);
                }
                branch.points.push(BranchPoint {
                    u: un.iter().copied().collect(),
                    tangent: tn.iter().copied().collect(),
                    step: h,
                    newton_iterations: it,
                });
                let idx = branch.points.len() - 1;
                on_point(problem, &branch, idx)?;
                problem.accept(&un)?;
                if let Some(reason) = problem.stop_reason(&un) {
                    branch.status = BranchStatus::Terminated(reason);
                    return Ok(branch);
                }
                u = un;
                t = tn;
                if it <= 3 {
                    streak += 1;
                    if streak >= 3 {
                        h = (h * 1.3).min(settings.max_step);
                        streak = 0;
                    }
                } else {
                    streak = 0;
                }
            }
            Err(err) => {
                streak = 0;
                h *= 0.5;
                if h < settings.min_step {
                    branch.status = BranchStatus::Stalled(format!("step size underflow: {err}"));
                    return Ok(branch);
                }
            }
        }
    }
    Ok(branch)
}

/// Point on the curve between `a` and `b` where component `k` equals `value`.
pub fn locate_value<P: ContinuationProblem + ?Sized>(
    problem: &P,
    a: &DVector<f64>,
    b: &DVector<f64>,
    k: usize,
    value: f64,
    settings: &ContinuationSettings,
) -> Result<DVector<f64>> {
    let denom = b[k] - a[k];
    let s = if denom.abs() > 0.0 { ((value - a[k]) / denom).clamp(0.0, 1.0) } else { 0.5 };
    let mut start = a + (b - a) * s;
    start[k] = value;
    let mut row = DVector::zeros(a.len());
    row[k] = 1.0;
    let (u, _) = correct(problem, &start, &row, &start, settings.max_newton * 3, settings.tolerance)
        .map_err(|e| Error::Localization(format!("could not place point at component {k} = {value}: {e}")))?;
    Ok(u)
}

/// Zero of a scalar test function on the curve segment `[a, b]`, located by
/// the Illinois variant of regula falsi over the chord parameter. Points are
/// corrected onto the curve on hyperplanes orthogonal to the chord.
pub fn locate_event<P, G>(
    problem: &P,
    a: &DVector<f64>,
    b: &DVector<f64>,
    mut test: G,
    tol: f64,
    settings: &ContinuationSettings,
) -> Result<DVector<f64>>
where
    P: ContinuationProblem + ?Sized,
    G: FnMut(&DVector<f64>) -> Result<f64>,
{
    let w = problem.weights();
    let chord = b - a;
    let row = w.component_mul(&chord);
    let point = |s: f64| -> Result<DVector<f64>> {
        let anchor = a + &chord * s;
        let (u, _) = correct(problem, &anchor, &row, &anchor, settings.max_newton * 3, settings.tolerance)?;
        Ok(u)
    };
    let (mut s0, mut s1) = (0.0, 1.0);
    let mut g0 = test(a)?;
    let mut g1 = test(b)?;
    if g0 == 0.0 {
        return Ok(a.clone());
    }
    if g1 == 0.0 {
        return Ok(b.clone());
    }
    if g0.signum() == g1.signum() {
        return Err(Error::Localization("test function does not change sign on the segment".into()));
    }
    let mut side = 0;
    let mut best = if g0.abs() < g1.abs() { a.clone() } else { b.clone() };
    for _ in 0..80 {
        let s = (s0 * g1 - s1 * g0) / (g1 - g0);
        let s = if s.is_finite() && s > s0 && s < s1 { s } else { 0.5 * (s0 + s1) };
        let u = point(s)?;
        let g = test(&u)?;
        best = u;
        if g.abs() <= tol || (s1 - s0) < 1e-13 {
            return Ok(best);
        }
        if g.signum() == g1.signum() {
            s1 = s;
            g1 = g;
            if side == -1 {
                g0 *= 0.5;
            }
            side = -1;
        } else {
            s0 = s;
            g0 = g;
            if side == 1 {
                g1 *= 0.5;
            }
            side = 1;
        }
    }
    let _ = best;
    Err(Error::Localization("event localization did not converge".into()))
}

/// Bisection for the switch of a boolean predicate on the segment `[a, b]`
/// (`pred(a) != pred(b)`), to chord-parameter resolution `tol_s`.
pub fn locate_switch<P, G>(
    problem: &P,
    a: &DVector<f64>,
    b: &DVector<f64>,
    mut pred: G,
    tol_s: f64,
    settings: &ContinuationSettings,
) -> Result<DVector<f64>>
where
    P: ContinuationProblem + ?Sized,
    G: FnMut(&DVector<f64>) -> Result<bool>,
{
    let w = problem.weights();
    let chord = b - a;
    let row = w.component_mul(&chord);
    let pa = pred(a)?;
    if pa == pred(b)? {
        return Err(Error::Localization("predicate does not switch on the segment".into()));
    }
    let (mut s0, mut s1) = (0.0, 1.0);
    let mut last = a.clone();
    while s1 - s0 > tol_s {
        let s = 0.5 * (s0 + s1);
        let anchor = a + &chord * s;
        let (u, _) = correct(problem, &anchor, &row, &anchor, settings.max_newton * 3, settings.tolerance)?;
        if pred(&u)? == pa {
            s0 = s;
        } else {
            s1 = s;
        }
        last = u;
    }
    Ok(last)
}

/// Kinds of detected bifurcation events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Hopf,
    Fold,
    BranchPoint,
    Torus,
    PeriodDoubling,
    /// Branch point crossed a rational rotation/period ratio.
    Resonance,
}

impl EventKind {
    pub fn label(&self) -> &'static str {
        match self {
            EventKind::Hopf => "hopf",
            EventKind::Fold => "fold",
            EventKind::BranchPoint => "branch-point",
            EventKind::Torus => "torus",
            EventKind::PeriodDoubling => "period-doubling",
            EventKind::Resonance => "resonance",
        }
    }
}

/// A localized event on a branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    /// Index of the branch point that starts the bracketing segment.
    pub segment: usize,
    /// Localized solution vector of the continuation problem.
    pub u: Vec<f64>,
    /// Value of the free parameter at the event.
    pub value: f64,
    /// Kind-specific data: `[omega]` for Hopf, `[alpha]` for torus,
    /// `[k, l]` for resonances.
    pub data: Vec<f64>,
    /// Set when the classification was ambiguous within tolerance.
    pub degenerate: bool,
}

impl Event {
    /// Label used in CSV `event` columns, e.g. `torus@1.659`.
    pub fn tag(&self) -> String {
        let label = match self.kind {
            EventKind::Resonance if self.data.len() == 2 => {
                format!("resonance-{}:{}", self.data[0] as i64, self.data[1] as i64)
            }
            _ => self.kind.label().to_string(),
        };
        format!("{label}@{:.3}", self.value)
    }
}

/// One row of a branch CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchRow {
    pub params: Vec<f64>,
    pub norm: f64,
    /// `None` for equilibria.
    pub period: Option<f64>,
    pub unstable_count: Option<usize>,
    pub tests: Vec<f64>,
    pub event: String,
}

/// Writes `index,<params>,norm,period,unstable_count,<tests>,event`.
pub fn write_branch_csv<W: std::io::Write>(
    mut w: W,
    param_names: &[String],
    test_names: &[String],
    rows: &[BranchRow],
) -> std::io::Result<()> {
    use crate::io::fmt_num;
    let mut header = vec!["index".to_string()];
    header.extend(param_names.iter().cloned());
    header.extend(["norm", "period", "unstable_count"].map(String::from));
    header.extend(test_names.iter().cloned());
    header.push("event".into());
    writeln!(w, "{}", header.join(","))?;
    for (i, r) in rows.iter().enumerate() {
        let mut cols = vec![i.to_string()];
        cols.extend(r.params.iter().map(|&v| fmt_num(v)));
        cols.push(fmt_num(r.norm));
        cols.push(r.period.map(fmt_num).unwrap_or_default());
        cols.push(r.unstable_count.map(|c| c.to_string()).unwrap_or_default());
        cols.extend(r.tests.iter().map(|&v| fmt_num(v)));
        cols.push(r.event.clone());
        writeln!(w, "{}", cols.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Unit circle in the plane, parametrized by its second coordinate.
    struct Circle;

    impl ContinuationProblem for Circle {
        fn dim(&self) -> usize {
            2
        }
        fn residual(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_vec(vec![u[0] * u[0] + u[1] * u[1] - 1.0]))
        }
        fn primary_index(&self) -> usize {
            1
        }
    }

    #[test]
    fn follows_circle_around_fold() {
        let settings = ContinuationSettings {
            initial_step: 0.05,
            max_step: 0.1,
            max_points: 200,
            bounds: vec![(0, -0.5, 2.0)],
            ..Default::default()
        };
        let start = DVector::from_vec(vec![1.0, 0.0]);
        let br = continue_branch(&mut Circle, &start, 1.0, &settings).unwrap();
        assert_eq!(br.status, BranchStatus::Boundary);
        // passes the fold at (0, 1) and stops at x = -0.5 on the upper arc
        let last = br.last_u();
        assert!((last[0] + 0.5).abs() < 1e-9);
        assert!(last[1] > 0.8);
        for p in &br.points {
            assert!((p.u[0] * p.u[0] + p.u[1] * p.u[1] - 1.0).abs() < 1e-9);
        }
        assert!(br.points[1].u[1] > 0.0);
    }

    #[test]
    fn event_location_on_circle() {
        let settings = ContinuationSettings::default();
        let a = DVector::from_vec(vec![1.0, 0.0]);
        let b = DVector::from_vec(vec![0.0, 1.0]);
        let u = locate_event(&Circle, &a, &b, |u| Ok(u[0] - u[1]), 1e-12, &settings).unwrap();
        assert!((u[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-10);
        let v = locate_value(&Circle, &a, &b, 1, 0.6, &settings).unwrap();
        assert!((v[0] - 0.8).abs() < 1e-10);
        let s = locate_switch(&Circle, &a, &b, |u| Ok(u[1] > 0.5), 1e-10, &settings).unwrap();
        assert!((s[1] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn stalls_on_singular_problem() {
        struct Bad;
        impl ContinuationProblem for Bad {
            fn dim(&self) -> usize {
                2
            }
            fn residual(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
                // solution set ends abruptly at u1 = 0.3
                if u[1] > 0.3 {
                    return Err(Error::Numerical("outside domain".into()));
                }
                Ok(DVector::from_vec(vec![u[0] - u[1]]))
            }
            fn primary_index(&self) -> usize {
                1
            }
        }
        let br = continue_branch(&mut Bad, &DVector::from_vec(vec![0.0, 0.0]), 1.0, &ContinuationSettings::default()).unwrap();
        assert!(br.is_partial());
        assert!(br.last_u()[1] <= 0.3);
    }
}
