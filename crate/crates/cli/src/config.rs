//! Run configuration: model parameters, solver settings and output location.

use std::collections::BTreeMap;
use std::path::PathBuf;

use delaycont::{Enso, Parameters};
use serde::Serialize;

use crate::error::CliError;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_VAR: &str = "DELAYCONT_OUT";
const DEFAULT_OUTPUT_ROOT: &str = "delaycont-out";

/// Solver and run settings with their defaults. Every key can be set in a
/// config file (`key=value`) or with `--set key=value`.
pub const SETTINGS: &[(&str, f64, &str)] = &[
    ("step", 0.02, "initial continuation step"),
    ("max_step", 0.1, "largest continuation step"),
    ("max_points", 400.0, "maximal number of branch points"),
    ("tolerance", 1e-9, "Newton tolerance of the continuation corrector"),
    ("intervals", 60.0, "collocation intervals of periodic orbits"),
    ("degree", 4.0, "collocation polynomial degree"),
    ("multipliers", 12.0, "number of Floquet multipliers computed"),
    ("max_denominator", 11.0, "largest denominator of flagged resonances"),
    ("hopf_amplitude", 0.05, "amplitude of the first orbit off a Hopf point"),
    ("rho", 1e-2, "radius of the initial resonance circle"),
    ("delta", 5e-2, "growth step of resonance surfaces"),
    ("n_phi", 40.0, "points per resonance circle"),
    ("circles", 14.0, "maximal number of resonance circles"),
    ("t_end", 1200.0, "simulation length in months"),
    ("dt", 0.01, "integration step in months"),
    ("transient", 240.0, "discarded transient in months"),
    ("samples", 50.0, "parameter samples of a staircase"),
    ("seed", 0.0, "random seed for probe histories"),
];

/// Effective configuration of one run; echoed into the output directory.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub model: String,
    pub params: Vec<(String, f64)>,
    pub settings: BTreeMap<String, f64>,
    pub out: PathBuf,
    /// Command-specific options in the order given.
    pub options: Vec<(String, String)>,
    /// Text of the config file, if one was read.
    #[serde(skip)]
    pub file_text: Option<String>,
}

impl RunConfig {
    pub fn new(command: &str, model: &str) -> Result<Self, CliError> {
        if model != "enso" {
            return Err(CliError::config(format!("unknown model '{model}' (available: enso)")));
        }
        let params = Enso::parameters();
        Ok(Self {
            command: command.into(),
            model: model.into(),
            params: params.names().iter().cloned().zip(params.values().iter().copied()).collect(),
            settings: SETTINGS.iter().map(|(k, v, _)| (k.to_string(), *v)).collect(),
            out: PathBuf::new(),
            options: Vec::new(),
            file_text: None,
        })
    }

    /// Applies one `key=value` assignment to a parameter or a setting.
    pub fn assign(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| CliError::config(format!("value of '{key}' is not a number: '{value}'")))?;
        if let Some(p) = self.params.iter_mut().find(|(n, _)| n == key) {
            p.1 = v;
        } else if let Some(s) = self.settings.get_mut(key) {
            *s = v;
        } else {
            return Err(CliError::config(format!("unknown key '{key}'")));
        }
        Ok(())
    }

    /// Reads a config file of `key=value` lines with `#` comments.
    pub fn apply_file(&mut self, text: &str) -> Result<(), CliError> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("config line {}: expected key=value", no + 1)))?;
            self.assign(k.trim(), v)?;
        }
        self.file_text = Some(text.to_string());
        Ok(())
    }

    /// Applies comma-separated `key=value` assignments.
    pub fn apply_list(&mut self, spec: &str) -> Result<(), CliError> {
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("expected key=value, got '{item}'")))?;
            self.assign(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn parameters(&self) -> Parameters {
        Parameters::new(self.params.iter().map(|p| p.0.clone()), self.params.iter().map(|p| p.1).collect())
    }

    pub fn param(&self, name: &str) -> Result<f64, CliError> {
        self.params
            .iter()
            .find(|p| p.0 == name)
            .map(|p| p.1)
            .ok_or_else(|| CliError::config(format!("unknown parameter '{name}'")))
    }

    pub fn setting(&self, key: &str) -> f64 {
        self.settings[key]
    }

    /// A setting that must be a positive integer.
    pub fn count(&self, key: &str) -> Result<usize, CliError> {
        let v = self.settings[key];
        if v >= 1.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(CliError::config(format!("'{key}' must be a positive integer, got {v}")))
        }
    }

    pub fn option(&mut self, key: &str, value: impl ToString) {
        self.options.push((key.into(), value.to_string()));
    }

    /// Resolves the output directory: `--out`, else `$DELAYCONT_OUT/<command>`.
    pub fn resolve_out(&mut self, out: Option<PathBuf>) {
        self.out = out.unwrap_or_else(|| {
            let root = std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| DEFAULT_OUTPUT_ROOT.into());
            root.join(&self.command)
        });
    }

    /// `config.echo`: the effective configuration as re-readable
    /// `key=value` lines, preceded by the command line and file text.
    pub fn echo(&self, argv: &[String]) -> String {
        let mut s = String::new();
        s.push_str(&format!("# command: {}\n", argv.join(" ")));
        s.push_str(&format!("# model: {}\n", self.model));
        for (k, v) in &self.options {
            s.push_str(&format!("# option {k}: {v}\n"));
        }
        if let Some(text) = &self.file_text {
            s.push_str("# config file:\n");
            for line in text.lines() {
                s.push_str(&format!("#   {line}\n"));
            }
        }
        for (k, v) in &self.params {
            s.push_str(&format!("{k}={v:?}\n"));
        }
        for (k, v) in &self.settings {
            s.push_str(&format!("{k}={v:?}\n"));
        }
        s
    }
}

/// Parses `a:b` into an interval.
pub fn parse_range(text: &str) -> Result<(f64, f64), CliError> {
    let (a, b) = text
        .split_once(':')
        .ok_or_else(|| CliError::config(format!("range must be a:b, got '{text}'")))?;
    let a: f64 = a.trim().parse().map_err(|_| CliError::config(format!("bad range start '{a}'")))?;
    let b: f64 = b.trim().parse().map_err(|_| CliError::config(format!("bad range end '{b}'")))?;
    if !(a < b) {
        return Err(CliError::config(format!("empty range {a}:{b}")));
    }
    Ok((a, b))
}

/// Parses `k:l` into a resonance.
pub fn parse_resonance(text: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::config(format!("resonance must be k:l, got '{text}'"));
    let (k, l) = text.split_once(':').ok_or_else(bad)?;
    Ok((k.trim().parse().map_err(|_| bad())?, l.trim().parse().map_err(|_| bad())?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignments_and_unknown_keys() {
        let mut c = RunConfig::new("simulate", "enso").unwrap();
        c.apply_list("k0=1.8, d_k=0,dt=0.05").unwrap();
        assert_eq!(c.param("k0").unwrap(), 1.8);
        assert_eq!(c.setting("dt"), 0.05);
        assert!(c.apply_list("nope=1").is_err());
        assert!(c.apply_list("k0").is_err());
        assert!(c.apply_file("# comment\nk0 = 2.0 # trailing\n\nrho=0.02\n").is_ok());
        assert_eq!(c.param("k0").unwrap(), 2.0);
        assert!(RunConfig::new("simulate", "lorenz").is_err());
    }

    #[test]
    fn echo_is_rereadable() {
        let mut c = RunConfig::new("eq-branch", "enso").unwrap();
        c.apply_list("k0=0.3333333333333333").unwrap();
        let echo = c.echo(&["delaycont".into()]);
        let mut d = RunConfig::new("eq-branch", "enso").unwrap();
        d.apply_file(&echo).unwrap();
        assert_eq!(d.params, c.params);
        assert_eq!(d.settings, c.settings);
    }

    #[test]
    fn ranges() {
        assert_eq!(parse_range("0:3").unwrap(), (0.0, 3.0));
        assert!(parse_range("3:0").is_err());
        assert!(parse_range("x").is_err());
        assert_eq!(parse_resonance("1:3").unwrap(), (1, 3));
    }
}
