//! Two-delay, periodically forced DDE models.
//!
//! Every solver in this crate consumes a [`DelayModel`]: a right-hand side
//! `f(t, x(t), x(t - tau1), x(t - tau2), eta)` together with its first
//! partial derivatives. The delayed-oscillator ENSO model is provided as
//! [`Enso`]; arbitrary user systems can be assembled with [`FnModel`].

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectra::LinearizedDde;

/// Ordered list of named real parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    names: Vec<String>,
    values: Vec<f64>,
}

impl Parameters {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>, values: Vec<f64>) -> Self {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        assert_eq!(names.len(), values.len(), "parameter names and values differ in length");
        Self { names, values }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn index_or_err(&self, name: &str) -> Result<usize> {
        self.index(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.values[i])
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let i = self.index_or_err(name)?;
        self.values[i] = value;
        Ok(())
    }

    pub fn with(mut self, name: &str, value: f64) -> Result<Self> {
        self.set(name, value)?;
        Ok(self)
    }

    /// Applies comma-separated `name=value` overrides, e.g. `k0=1.8,d_k=0`.
    pub fn apply_overrides(&mut self, spec: &str) -> Result<()> {
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = parse_assignment(item)?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Applies a `key=value` configuration text. Blank lines and `#` comments
    /// are skipped; unknown keys are rejected.
    pub fn apply_config(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = parse_assignment(line)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }
}

impl fmt::Display for Parameters {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (n, v)) in self.names.iter().zip(&self.values).enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{n}={v}")?;
        }
        Ok(())
    }
}

fn parse_assignment(item: &str) -> Result<(&str, f64)> {
    let (k, v) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected key=value, got `{item}`")))?;
    let v: f64 = v
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid number in `{item}`")))?;
    if !v.is_finite() {
        return Err(Error::Config(format!("non-finite value in `{item}`")));
    }
    Ok((k.trim(), v))
}

/// Jacobians of the right-hand side with respect to the current and the two
/// delayed states.
#[derive(Debug, Clone)]
pub struct StatePartials {
    pub dx: DMatrix<f64>,
    pub dxd1: DMatrix<f64>,
    pub dxd2: DMatrix<f64>,
}

/// Relative step of the central finite-difference fallback.
pub const FD_STEP: f64 = 1e-6;

/// A DDE `x'(t) = f(t, x(t), x(t - tau1), x(t - tau2), eta)` with
/// `0 <= tau1 <= tau2`.
///
/// Implementations must be pure: solvers call them from several threads.
pub trait DelayModel: Send + Sync {
    fn dim(&self) -> usize;

    fn default_parameters(&self) -> Parameters;

    fn delays(&self, p: &[f64]) -> (f64, f64);

    /// Forcing period `T_f`, or `None` for models without time dependence.
    fn forcing_period(&self, p: &[f64]) -> Option<f64>;

    /// Index of the parameter that scales the forcing. Zero there means the
    /// system is autonomous.
    fn forcing_amplitude_index(&self) -> Option<usize>;

    fn rhs(&self, t: f64, x: &[f64], xd1: &[f64], xd2: &[f64], p: &[f64], out: &mut [f64]);

    fn partials(&self, t: f64, x: &[f64], xd1: &[f64], xd2: &[f64], p: &[f64]) -> StatePartials {
        fd_state_partials(self, t, x, xd1, xd2, p)
    }

    /// `df/d eta_j`, written into `out`.
    fn param_partial(
        &self,
        t: f64,
        x: &[f64],
        xd1: &[f64],
        xd2: &[f64],
        p: &[f64],
        j: usize,
        out: &mut [f64],
    ) {
        fd_param_partial(self, t, x, xd1, xd2, p, j, out)
    }

    fn is_autonomous(&self, p: &[f64]) -> bool {
        match (self.forcing_period(p), self.forcing_amplitude_index()) {
            (None, _) => true,
            (Some(_), Some(i)) => p[i] == 0.0,
            (Some(_), None) => false,
        }
    }

    /// Checks the delay ordering and forcing-period invariants.
    fn validate(&self, p: &[f64]) -> Result<()> {
        let (t1, t2) = self.delays(p);
        if !(t1 >= 0.0 && t2 >= t1) {
            return Err(Error::Config(format!(
                "delays must satisfy 0 <= tau1 <= tau2 (got {t1}, {t2})"
            )));
        }
        if let Some(tf) = self.forcing_period(p) {
            if !(tf > 0.0) {
                return Err(Error::Config(format!("forcing period must be positive (got {tf})")));
            }
        }
        Ok(())
    }
}

pub(crate) fn fd_state_partials<M: DelayModel + ?Sized>(
    model: &M,
    t: f64,
    x: &[f64],
    xd1: &[f64],
    xd2: &[f64],
    p: &[f64],
) -> StatePartials {
    let n = model.dim();
    let mut out = StatePartials {
        dx: DMatrix::zeros(n, n),
        dxd1: DMatrix::zeros(n, n),
        dxd2: DMatrix::zeros(n, n),
    };
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    let mut work = [x.to_vec(), xd1.to_vec(), xd2.to_vec()];
    for slot in 0..3 {
        for j in 0..n {
            let base = work[slot][j];
            let h = FD_STEP * (1.0 + base.abs());
            work[slot][j] = base + h;
            model.rhs(t, &work[0], &work[1], &work[2], p, &mut fp);
            work[slot][j] = base - h;
            model.rhs(t, &work[0], &work[1], &work[2], p, &mut fm);
            work[slot][j] = base;
            let target = match slot {
                0 => &mut out.dx,
                1 => &mut out.dxd1,
                _ => &mut out.dxd2,
            };
            for i in 0..n {
                target[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn fd_param_partial<M: DelayModel + ?Sized>(
    model: &M,
    t: f64,
    x: &[f64],
    xd1: &[f64],
    xd2: &[f64],
    p: &[f64],
    j: usize,
    out: &mut [f64],
) {
    let n = model.dim();
    let mut q = p.to_vec();
    let h = FD_STEP * (1.0 + p[j].abs());
    let mut fm = vec![0.0; n];
    q[j] = p[j] + h;
    model.rhs(t, x, xd1, xd2, &q, out);
    q[j] = p[j] - h;
    model.rhs(t, x, xd1, xd2, &q, &mut fm);
    for i in 0..n {
        out[i] = (out[i] - fm[i]) / (2.0 * h);
    }
}

/// Evaluates the right-hand side with dimension and finiteness checks.
pub fn eval_rhs(
    model: &dyn DelayModel,
    t: f64,
    x: &[f64],
    xd1: &[f64],
    xd2: &[f64],
    p: &[f64],
) -> Result<Vec<f64>> {
    let n = model.dim();
    if x.len() != n || xd1.len() != n || xd2.len() != n {
        return Err(Error::Domain(format!("state vectors must have dimension {n}")));
    }
    let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
    if !t.is_finite() || !finite(x) || !finite(xd1) || !finite(xd2) || !finite(p) {
        return Err(Error::Domain("non-finite input to right-hand side".into()));
    }
    let mut out = vec![0.0; n];
    model.rhs(t, x, xd1, xd2, p, &mut out);
    Ok(out)
}

/// Linearization `A x + B x(t - tau1) + C x(t - tau2)` at the constant state
/// `x0` of an autonomous model.
pub fn linearize_at_constant(model: &dyn DelayModel, x0: &[f64], p: &[f64]) -> Result<LinearizedDde> {
    if !model.is_autonomous(p) {
        return Err(Error::Contract(
            "linearization at a constant state requires zero forcing amplitude".into(),
        ));
    }
    if x0.len() != model.dim() {
        return Err(Error::Domain("state dimension mismatch".into()));
    }
    let d = model.partials(0.0, x0, x0, x0, p);
    let (tau1, tau2) = model.delays(p);
    Ok(LinearizedDde { a: d.dx, b: d.dxd1, c: d.dxd2, tau1, tau2 })
}

/// Saturating, asymmetric ocean-atmosphere coupling.
///
/// Continuous with unit slope at the origin; twice (but not three times)
/// differentiable there.
#[inline]
pub fn coupling_g(x: f64, b_plus: f64, b_minus: f64) -> f64 {
    if x >= 0.0 {
        b_plus * (x / b_plus).tanh()
    } else {
        b_minus * (x / b_minus).tanh()
    }
}

#[inline]
fn coupling_g_prime(x: f64, b_plus: f64, b_minus: f64) -> f64 {
    let s = if x >= 0.0 { b_plus } else { b_minus };
    let th = (x / s).tanh();
    1.0 - th * th
}

/// `(dG/db_plus, dG/db_minus)`.
#[inline]
fn coupling_g_dbounds(x: f64, b_plus: f64, b_minus: f64) -> (f64, f64) {
    let part = |s: f64| {
        let th = (x / s).tanh();
        th - (x / s) * (1.0 - th * th)
    };
    if x >= 0.0 {
        (part(b_plus), 0.0)
    } else {
        (0.0, part(b_minus))
    }
}

/// Annually varying coupling slope `k0 + d_k sin(2 pi t / T_f)`.
#[inline]
pub fn kappa(t: f64, k0: f64, d_k: f64, t_f: f64) -> f64 {
    k0 + d_k * (2.0 * PI * t / t_f).sin()
}

/// Days per month used to convert the per-day rates of the original model.
pub const DAYS_PER_MONTH: f64 = 30.42;

/// The delayed-oscillator ENSO model for the eastern-boundary thermocline
/// anomaly `h`, in months.
#[derive(Debug, Clone, Copy, Default)]
pub struct Enso;

impl Enso {
    pub const K0: usize = 0;
    pub const D_K: usize = 1;
    pub const B: usize = 2;
    pub const C: usize = 3;
    pub const D: usize = 4;
    pub const TAU1: usize = 5;
    pub const TAU2: usize = 6;
    pub const B_PLUS: usize = 7;
    pub const B_MINUS: usize = 8;
    pub const T_F: usize = 9;

    pub const NAMES: [&'static str; 10] =
        ["k0", "d_k", "b", "c", "d", "tau1", "tau2", "b_plus", "b_minus", "t_f"];

    pub fn parameters() -> Parameters {
        Parameters::new(
            Self::NAMES,
            vec![
                1.8,
                0.0,
                DAYS_PER_MONTH / 120.0,
                DAYS_PER_MONTH / 160.0,
                DAYS_PER_MONTH / 190.0,
                1.15,
                5.75,
                3.0,
                -1.0,
                12.0,
            ],
        )
    }

    /// Parameters read from `key=value` text on top of the defaults.
    pub fn parameters_from_config(text: &str) -> Result<Parameters> {
        let mut p = Self::parameters();
        p.apply_config(text)?;
        Enso.validate(p.values())?;
        Ok(p)
    }

    #[inline]
    fn kappas(t: f64, p: &[f64]) -> (f64, f64) {
        let (k0, dk, tf) = (p[Self::K0], p[Self::D_K], p[Self::T_F]);
        (kappa(t - p[Self::TAU1], k0, dk, tf), kappa(t - p[Self::TAU2], k0, dk, tf))
    }
}

impl DelayModel for Enso {
    fn dim(&self) -> usize {
        1
    }

    fn default_parameters(&self) -> Parameters {
        Self::parameters()
    }

    fn delays(&self, p: &[f64]) -> (f64, f64) {
        (p[Self::TAU1], p[Self::TAU2])
    }

    fn forcing_period(&self, p: &[f64]) -> Option<f64> {
        Some(p[Self::T_F])
    }

    fn forcing_amplitude_index(&self) -> Option<usize> {
        Some(Self::D_K)
    }

    fn validate(&self, p: &[f64]) -> Result<()> {
        let (t1, t2) = self.delays(p);
        if !(t1 >= 0.0 && t2 >= t1) {
            return Err(Error::Config(format!(
                "delays must satisfy 0 <= tau1 <= tau2 (got {t1}, {t2})"
            )));
        }
        if !(p[Self::T_F] > 0.0) {
            return Err(Error::Config("forcing period t_f must be positive".into()));
        }
        if !(p[Self::B_PLUS] > 0.0 && p[Self::B_MINUS] < 0.0) {
            return Err(Error::Config("coupling bounds need b_plus > 0 > b_minus".into()));
        }
        Ok(())
    }

    fn rhs(&self, t: f64, x: &[f64], xd1: &[f64], xd2: &[f64], p: &[f64], out: &mut [f64]) {
        let (k1, k2) = Self::kappas(t, p);
        let (bp, bm) = (p[Self::B_PLUS], p[Self::B_MINUS]);
        out[0] = p[Self::B] * coupling_g(k1 * xd1[0], bp, bm)
            - p[Self::C] * coupling_g(k2 * xd2[0], bp, bm)
            - p[Self::D] * x[0];
    }

    fn partials(&self, t: f64, _x: &[f64], xd1: &[f64], xd2: &[f64], p: &[f64]) -> StatePartials {
        let (k1, k2) = Self::kappas(t, p);
        let (bp, bm) = (p[Self::B_PLUS], p[Self::B_MINUS]);
        StatePartials {
            dx: DMatrix::from_element(1, 1, -p[Self::D]),
            dxd1: DMatrix::from_element(1, 1, p[Self::B] * coupling_g_prime(k1 * xd1[0], bp, bm) * k1),
            dxd2: DMatrix::from_element(1, 1, -p[Self::C] * coupling_g_prime(k2 * xd2[0], bp, bm) * k2),
        }
    }

    fn param_partial(
        &self,
        t: f64,
        x: &[f64],
        xd1: &[f64],
        xd2: &[f64],
        p: &[f64],
        j: usize,
        out: &mut [f64],
    ) {
        let (k1, k2) = Self::kappas(t, p);
        let (bp, bm) = (p[Self::B_PLUS], p[Self::B_MINUS]);
        let (a1, a2) = (k1 * xd1[0], k2 * xd2[0]);
        let (g1p, g2p) = (coupling_g_prime(a1, bp, bm), coupling_g_prime(a2, bp, bm));
        let (b, c) = (p[Self::B], p[Self::C]);
        let (tau1, tau2, tf, dk) = (p[Self::TAU1], p[Self::TAU2], p[Self::T_F], p[Self::D_K]);
        let w = 2.0 * PI / tf;
        out[0] = match j {
            Self::K0 => b * g1p * xd1[0] - c * g2p * xd2[0],
            Self::D_K => {
                b * g1p * (w * (t - tau1)).sin() * xd1[0] - c * g2p * (w * (t - tau2)).sin() * xd2[0]
            }
            Self::B => coupling_g(a1, bp, bm),
            Self::C => -coupling_g(a2, bp, bm),
            Self::D => -x[0],
            Self::TAU1 => b * g1p * xd1[0] * (-dk * w * (w * (t - tau1)).cos()),
            Self::TAU2 => -c * g2p * xd2[0] * (-dk * w * (w * (t - tau2)).cos()),
            Self::B_PLUS | Self::B_MINUS => {
                let (d1p, d1m) = coupling_g_dbounds(a1, bp, bm);
                let (d2p, d2m) = coupling_g_dbounds(a2, bp, bm);
                if j == Self::B_PLUS {
                    b * d1p - c * d2p
                } else {
                    b * d1m - c * d2m
                }
            }
            Self::T_F => {
                let dkappa = |s: f64| dk * (w * s).cos() * (-w * s / tf);
                b * g1p * xd1[0] * dkappa(t - tau1) - c * g2p * xd2[0] * dkappa(t - tau2)
            }
            _ => 0.0,
        };
    }
}

type RhsFn = dyn Fn(f64, &[f64], &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync;
type PartialsFn = dyn Fn(f64, &[f64], &[f64], &[f64], &[f64]) -> StatePartials + Send + Sync;

#[derive(Clone, Copy, Debug)]
enum DelaySource {
    Constant(f64, f64),
    Params(usize, usize),
}

#[derive(Clone, Copy, Debug)]
enum PeriodSource {
    Constant(f64),
    Param(usize),
}

/// A model assembled from closures. Missing partials fall back to central
/// finite differences.
#[derive(Clone)]
pub struct FnModel {
    dim: usize,
    params: Parameters,
    delays: DelaySource,
    forcing: Option<(PeriodSource, usize)>,
    rhs: Arc<RhsFn>,
    partials: Option<Arc<PartialsFn>>,
}

impl fmt::Debug for FnModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnModel")
            .field("dim", &self.dim)
            .field("params", &self.params)
            .field("delays", &self.delays)
            .field("forcing", &self.forcing)
            .finish()
    }
}

impl FnModel {
    pub fn new<F>(dim: usize, params: Parameters, rhs: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            dim,
            params,
            delays: DelaySource::Constant(0.0, 0.0),
            forcing: None,
            rhs: Arc::new(rhs),
            partials: None,
        }
    }

    pub fn with_delays(mut self, tau1: f64, tau2: f64) -> Self {
        self.delays = DelaySource::Constant(tau1, tau2);
        self
    }

    /// Delays read from parameters `i1` and `i2`.
    pub fn with_delay_params(mut self, i1: usize, i2: usize) -> Self {
        self.delays = DelaySource::Params(i1, i2);
        self
    }

    pub fn with_forcing(mut self, period: f64, amplitude_index: usize) -> Self {
        self.forcing = Some((PeriodSource::Constant(period), amplitude_index));
        self
    }

    pub fn with_forcing_period_param(mut self, period_index: usize, amplitude_index: usize) -> Self {
        self.forcing = Some((PeriodSource::Param(period_index), amplitude_index));
        self
    }

    pub fn with_partials<F>(mut self, partials: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64], &[f64], &[f64]) -> StatePartials + Send + Sync + 'static,
    {
        self.partials = Some(Arc::new(partials));
        self
    }
}

impl DelayModel for FnModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn default_parameters(&self) -> Parameters {
        self.params.clone()
    }

    fn delays(&self, p: &[f64]) -> (f64, f64) {
        match self.delays {
            DelaySource::Constant(a, b) => (a, b),
            DelaySource::Params(i, j) => (p[i], p[j]),
        }
    }

    fn forcing_period(&self, p: &[f64]) -> Option<f64> {
        self.forcing.map(|(src, _)| match src {
            PeriodSource::Constant(t) => t,
            PeriodSource::Param(i) => p[i],
        })
    }

    fn forcing_amplitude_index(&self) -> Option<usize> {
        self.forcing.map(|(_, i)| i)
    }

    fn rhs(&self, t: f64, x: &[f64], xd1: &[f64], xd2: &[f64], p: &[f64], out: &mut [f64]) {
        (self.rhs)(t, x, xd1, xd2, p, out)
    }

    fn partials(&self, t: f64, x: &[f64], xd1: &[f64], xd2: &[f64], p: &[f64]) -> StatePartials {
        match &self.partials {
            Some(f) => f(t, x, xd1, xd2, p),
            None => fd_state_partials(self, t, x, xd1, xd2, p),
        }
    }
}

/// Initial function on `[-tau2, 0]`.
#[derive(Clone)]
pub enum History {
    Constant(Vec<f64>),
    Function(Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>),
}

impl fmt::Debug for History {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            History::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            History::Function(_) => f.write_str("Function(..)"),
        }
    }
}

impl History {
    pub fn function<F>(f: F) -> Self
    where
        F: Fn(f64, &mut [f64]) + Send + Sync + 'static,
    {
        History::Function(Arc::new(f))
    }

    pub fn eval(&self, s: f64, out: &mut [f64]) {
        match self {
            History::Constant(v) => out.copy_from_slice(v),
            History::Function(f) => f(s, out),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn coupling_values() {
        assert_eq!(coupling_g(0.0, 3.0, -1.0), 0.0);
        assert!((coupling_g(1.0, 3.0, -1.0) - 0.964_538_212_594_903).abs() < 1e-12);
        assert!((coupling_g(-1.0, 3.0, -1.0) + 0.761_594_155_955_765).abs() < 1e-12);
        assert!((coupling_g(100.0, 3.0, -1.0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn coupling_bounds_and_monotonicity() {
        let mut prev = f64::NEG_INFINITY;
        for i in 0..10_000 {
            let x = -50.0 + 100.0 * i as f64 / 9_999.0;
            let g = coupling_g(x, 3.0, -1.0);
            assert!(g > -1.0 - 1e-15 && g < 3.0 + 1e-15);
            assert!(g >= prev);
            assert!(g.abs() <= x.abs() + 1e-15);
            prev = g;
        }
    }

    #[test]
    fn kappa_quarter_and_full_period() {
        assert_eq!(kappa(0.0, 1.8, 1.0, 12.0), 1.8);
        assert!((kappa(3.0, 1.8, 1.0, 12.0) - 2.8).abs() < 1e-14);
        assert!((kappa(12.0, 1.8, 1.0, 12.0) - 1.8).abs() < 1e-14);
    }

    #[test]
    fn enso_rhs_examples() {
        let mut p = Enso::parameters();
        p.set("k0", 1.0).unwrap();
        let v = p.values();
        let f = eval_rhs(&Enso, 5.0, &[0.0], &[0.0], &[0.0], v).unwrap();
        assert_eq!(f[0], 0.0);
        let f = eval_rhs(&Enso, 0.0, &[0.0], &[1.0], &[0.0], v).unwrap();
        // 0.2535 * 3 tanh(1/3)
        assert!((f[0] - 0.244_510_436_892_808).abs() < 1e-10, "{}", f[0]);
        assert!(eval_rhs(&Enso, f64::NAN, &[0.0], &[1.0], &[0.0], v).is_err());
    }

    #[test]
    fn enso_kappa_enters_first_argument() {
        let p = Enso::parameters().with("k0", 1.8).unwrap().with("d_k", 1.0).unwrap();
        let v = p.values();
        // t - tau1 = 3 gives kappa = 2.8 for the first term
        let t = 3.0 + v[Enso::TAU1];
        let f = eval_rhs(&Enso, t, &[0.0], &[0.5], &[0.0], v).unwrap();
        assert!((f[0] - v[Enso::B] * coupling_g(1.4, 3.0, -1.0)).abs() < 1e-14);
    }

    #[test]
    fn trivial_solution_is_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let p = Enso::parameters()
                .with("k0", rng.gen_range(0.0..3.0))
                .unwrap()
                .with("d_k", rng.gen_range(0.0..2.5))
                .unwrap();
            let t = rng.gen_range(-20.0..20.0);
            let f = eval_rhs(&Enso, t, &[0.0], &[0.0], &[0.0], p.values()).unwrap();
            assert_eq!(f[0], 0.0);
        }
    }

    #[test]
    fn linearization_at_zero() {
        let p = Enso::parameters().with("k0", 1.3).unwrap();
        let v = p.values();
        let lin = linearize_at_constant(&Enso, &[0.0], v).unwrap();
        assert!((lin.a[(0, 0)] + v[Enso::D]).abs() < 1e-15);
        assert!((lin.b[(0, 0)] - v[Enso::B] * 1.3).abs() < 1e-15);
        assert!((lin.c[(0, 0)] + v[Enso::C] * 1.3).abs() < 1e-15);

        let q = p.clone().with("b", 0.0).unwrap().with("c", 0.0).unwrap();
        let lin = linearize_at_constant(&Enso, &[0.0], q.values()).unwrap();
        assert_eq!(lin.b[(0, 0)], 0.0);
        assert_eq!(lin.c[(0, 0)], 0.0);

        let forced = p.with("d_k", 0.5).unwrap();
        assert!(matches!(
            linearize_at_constant(&Enso, &[0.0], forced.values()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn analytic_partials_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-5 * (1.0 + a.abs().max(b.abs()));
        for _ in 0..100 {
            let mut p = Enso::parameters();
            p.set("k0", rng.gen_range(0.0..3.0)).unwrap();
            p.set("d_k", rng.gen_range(0.0..2.5)).unwrap();
            let v = p.values().to_vec();
            let t = rng.gen_range(0.0..24.0);
            let x = [rng.gen_range(-2.0..2.0)];
            let x1 = [rng.gen_range(-2.0..2.0)];
            let x2 = [rng.gen_range(-2.0..2.0)];
            let an = Enso.partials(t, &x, &x1, &x2, &v);
            let fd = fd_state_partials(&Enso, t, &x, &x1, &x2, &v);
            assert!(close(an.dx[(0, 0)], fd.dx[(0, 0)]));
            assert!(close(an.dxd1[(0, 0)], fd.dxd1[(0, 0)]));
            assert!(close(an.dxd2[(0, 0)], fd.dxd2[(0, 0)]));
            for j in 0..v.len() {
                let mut a = [0.0];
                let mut b = [0.0];
                Enso.param_partial(t, &x, &x1, &x2, &v, j, &mut a);
                fd_param_partial(&Enso, t, &x, &x1, &x2, &v, j, &mut b);
                assert!(close(a[0], b[0]), "param {j}: {} vs {}", a[0], b[0]);
            }
        }
    }

    #[test]
    fn config_parsing() {
        let p = Enso::parameters_from_config("# comment\nk0 = 2.0\n\nd_k=0.5 # trailing\n").unwrap();
        assert_eq!(p.get("k0"), Some(2.0));
        assert_eq!(p.get("d_k"), Some(0.5));
        assert_eq!(p.get("tau2"), Some(5.75));
        assert!(Enso::parameters_from_config("bogus=1").is_err());
        assert!(Enso::parameters_from_config("k0").is_err());
        assert!(Enso::parameters_from_config("tau1=7").is_err());
    }

    #[test]
    fn canonical_rates_round_to_published_monthly_values() {
        let p = Enso::parameters();
        assert!((p.get("b").unwrap() - 0.2535).abs() < 5e-5);
        assert!((p.get("c").unwrap() - 0.1901).abs() < 5e-5);
        assert!((p.get("d").unwrap() - 0.1601).abs() < 5e-5);
    }
}
