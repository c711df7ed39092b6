//! Method-of-steps integration with cubic Hermite dense output.
//!
//! Fixed-step classical RK4; delayed values are read from the dense output
//! of already computed steps, which requires `step <= tau1`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::io::fmt_num;
use crate::model::{DelayModel, History};

/// Samples on `[t0, t_end]` plus the history used before `t0`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    dim: usize,
    t0: f64,
    tau2: f64,
    times: Vec<f64>,
    states: Vec<f64>,
    derivs: Vec<f64>,
    history: History,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap_or(&self.t0)
    }

    /// Component `c` of all stored samples.
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.states.iter().skip(c).step_by(self.dim).copied().collect()
    }

    /// Dense-output evaluation on `[t0 - tau2, t_end]`.
    pub fn eval(&self, s: f64, out: &mut [f64]) -> Result<()> {
        let t_end = self.t_end();
        let slack = 1e-12 * (1.0 + s.abs());
        if s < self.t0 - self.tau2 - slack || s > t_end + slack {
            return Err(Error::Domain(format!(
                "t = {s} outside trajectory domain [{}, {t_end}]",
                self.t0 - self.tau2
            )));
        }
        if s < self.t0 {
            self.history.eval(s - self.t0, out);
            return Ok(());
        }
        self.interpolate(s.min(t_end), out);
        Ok(())
    }

    fn interpolate(&self, s: f64, out: &mut [f64]) {
        let n = self.dim;
        let k = match self.times.binary_search_by(|t| t.total_cmp(&s)) {
            Ok(k) => {
                out.copy_from_slice(self.state(k));
                return;
            }
            Err(k) => k.clamp(1, self.times.len() - 1) - 1,
        };
        let (ta, tb) = (self.times[k], self.times[k + 1]);
        let h = tb - ta;
        let th = (s - ta) / h;
        let h00 = (1.0 + 2.0 * th) * (1.0 - th) * (1.0 - th);
        let h10 = th * (1.0 - th) * (1.0 - th);
        let h01 = th * th * (3.0 - 2.0 * th);
        let h11 = th * th * (th - 1.0);
        for i in 0..n {
            let ya = self.states[k * n + i];
            let yb = self.states[(k + 1) * n + i];
            let da = self.derivs[k * n + i];
            let db = self.derivs[(k + 1) * n + i];
            out[i] = h00 * ya + h10 * h * da + h01 * yb + h11 * h * db;
        }
    }

    /// Writes `t,h` (first component) as CSV.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,h")?;
        for k in 0..self.len() {
            writeln!(w, "{},{}", fmt_num(self.times[k]), fmt_num(self.state(k)[0]))?;
        }
        Ok(())
    }
}

/// Integrates from `t = 0` to `t_end` with a step no larger than `step`.
pub fn integrate(
    model: &dyn DelayModel,
    p: &[f64],
    history: &History,
    t_end: f64,
    step: f64,
) -> Result<Trajectory> {
    integrate_from(model, p, history, 0.0, t_end, step)
}

/// Integrates from `t0` to `t_end`; the history is evaluated at `s - t0`.
pub fn integrate_from(
    model: &dyn DelayModel,
    p: &[f64],
    history: &History,
    t0: f64,
    t_end: f64,
    step: f64,
) -> Result<Trajectory> {
    let (tau1, tau2) = model.delays(p);
    if !(step > 0.0) {
        return Err(Error::Config("step must be positive".into()));
    }
    if step > tau1 {
        return Err(Error::Config(format!("step {step} exceeds the shortest delay {tau1}")));
    }
    if !(t_end > t0) {
        return Err(Error::Config("t_end must exceed the start time".into()));
    }
    let n = model.dim();
    let nsteps = ((t_end - t0) / step - 1e-9).ceil().max(1.0) as usize;
    let h = (t_end - t0) / nsteps as f64;

    let mut traj = Trajectory {
        dim: n,
        t0,
        tau2,
        times: Vec::with_capacity(nsteps + 1),
        states: Vec::with_capacity(n * (nsteps + 1)),
        derivs: Vec::with_capacity(n * (nsteps + 1)),
        history: history.clone(),
    };

    let mut x = vec![0.0; n];
    history.eval(0.0, &mut x);
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    let mut f = vec![0.0; n];
    let delayed = |traj: &Trajectory, s: f64, out: &mut [f64]| {
        if s < t0 {
            history.eval(s - t0, out);
        } else {
            traj.interpolate(s.min(traj.t_end()), out);
        }
    };

    traj.times.push(t0);
    traj.states.extend_from_slice(&x);
    delayed(&traj, t0 - tau1, &mut d1);
    delayed(&traj, t0 - tau2, &mut d2);
    model.rhs(t0, &x, &d1, &d2, p, &mut f);
    traj.derivs.extend_from_slice(&f);

    let mut stage = vec![0.0; n];
    let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for step_i in 0..nsteps {
        let t = t0 + step_i as f64 * h;
        k[0].copy_from_slice(&traj.derivs[step_i * n..(step_i + 1) * n]);
        for (si, (c, prev)) in [(0.5, 0usize), (0.5, 1), (1.0, 2)].into_iter().enumerate() {
            for i in 0..n {
                stage[i] = x[i] + c * h * k[prev][i];
            }
            let ts = t + c * h;
            delayed(&traj, ts - tau1, &mut d1);
            delayed(&traj, ts - tau2, &mut d2);
            let (_, tail) = k.split_at_mut(si + 1);
            model.rhs(ts, &stage, &d1, &d2, p, &mut tail[0]);
        }
        for i in 0..n {
            x[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { last_valid_time: t });
        }
        let tn = if step_i + 1 == nsteps { t_end } else { t0 + (step_i + 1) as f64 * h };
        traj.times.push(tn);
        traj.states.extend_from_slice(&x);
        // derivative at the new node needs delayed values strictly in the past
        delayed(&traj, tn - tau1, &mut d1);
        delayed(&traj, tn - tau2, &mut d2);
        model.rhs(tn, &x, &d1, &d2, p, &mut f);
        traj.derivs.extend_from_slice(&f);
    }
    Ok(traj)
}

/// Parabolic-refined maxima of component 0, one per excursion above the
/// mean level, after `transient`.
fn excursion_peaks(traj: &Trajectory, transient: f64) -> Vec<f64> {
    let t = traj.times();
    let h = traj.component(0);
    let start = t.partition_point(|&s| s < transient);
    if t.len() < start + 3 {
        return Vec::new();
    }
    let window = &h[start..];
    let (lo, hi) = window
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi - lo > 1e-6) {
        return Vec::new();
    }
    let mean = window.iter().sum::<f64>() / window.len() as f64;

    let mut peaks = Vec::new();
    // (time, value) of the best maximum in the current above-mean excursion
    let mut current: Option<(f64, f64)> = None;
    let mut seen_below = false;
    for k in (start + 1)..(t.len() - 1) {
        if h[k] < mean {
            if let Some((tp, _)) = current.take() {
                peaks.push(tp);
            }
            seen_below = true;
            continue;
        }
        if !seen_below {
            // the excursion in progress at the transient cut is incomplete
            continue;
        }
        if h[k] > h[k - 1] && h[k] >= h[k + 1] {
            let (y0, y1, y2) = (h[k - 1], h[k], h[k + 1]);
            let denom = y0 - 2.0 * y1 + y2;
            let dt = t[k + 1] - t[k];
            let (off, val) = if denom.abs() > 0.0 {
                let o = 0.5 * (y0 - y2) / denom;
                (o, y1 - 0.25 * (y0 - y2) * o)
            } else {
                (0.0, y1)
            };
            let tp = t[k] + off * dt;
            if current.map_or(true, |(_, v)| val > v) {
                current = Some((tp, val));
            }
        }
    }
    peaks
}

/// Rotation number `T_f / (mean interval between peaks)`, reduced to `[0, 1)`.
pub fn rotation_number(traj: &Trajectory, t_f: f64, transient: f64) -> Result<f64> {
    if traj.t_end() < transient + 50.0 * t_f {
        return Err(Error::InsufficientData(format!(
            "trajectory must cover transient + 50 forcing periods ({} < {})",
            traj.t_end(),
            transient + 50.0 * t_f
        )));
    }
    let peaks = excursion_peaks(traj, transient);
    if peaks.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "only {} peaks after the transient",
            peaks.len()
        )));
    }
    let mean_interval = (peaks[peaks.len() - 1] - peaks[0]) / (peaks.len() - 1) as f64;
    let alpha = t_f / mean_interval;
    Ok(alpha - alpha.floor())
}

/// Times of the maxima of `h` modulo `T_f`, after `transient`.
pub fn peak_phases(traj: &Trajectory, t_f: f64, transient: f64) -> Result<Vec<f64>> {
    if traj.t_end() <= transient {
        return Err(Error::InsufficientData("trajectory shorter than transient".into()));
    }
    Ok(excursion_peaks(traj, transient)
        .into_iter()
        .map(|tp| tp.rem_euclid(t_f))
        .collect())
}
