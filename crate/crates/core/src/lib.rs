//! Spectral solver and continuation suite for positive ground states of
//! `(-Δ)^s u + |x|^2 u = λu + |u|^{q-2}u` on `ℝ^N`.

pub mod continuation;
pub mod error;
pub mod evolution;
pub mod groundstate;
pub mod io;
pub mod linalg;
pub mod linear_spectrum;
pub mod model;
pub mod spectral;

pub use error::{Error, Result};
pub use model::{Model, ModelParams};
pub use spectral::{Field, FieldKind, Grid};
