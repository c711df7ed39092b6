//! Numerical bifurcation analysis of delay differential equations with two
//! discrete delays and optional periodic forcing.

pub mod engine;
pub mod eqbif;
pub mod error;
pub mod integrate;
pub mod io;
pub mod linalg;
pub mod model;
pub mod periodic;
pub mod pobif;
pub mod resonance;
pub mod spectra;

pub use error::{Error, Result};
pub use model::{DelayModel, Enso, FnModel, History, Parameters};
pub use periodic::{CollocationMesh, PeriodicOrbit};
pub use spectra::{LinearizedDde, Spectrum, SpectrumKind};
