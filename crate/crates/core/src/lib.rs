//! Coded-aperture snapshot spectral imaging: forward model, back-projection
//! fidelity, a learned proximal network with frequency-aware fusion, a
//! deep unfolding engine and its trajectory-supervised training.

pub mod bp;
pub mod cassi;
pub mod check;
pub mod config;
pub mod cube;
pub mod dense;
pub mod error;
pub mod exec;
pub mod fusion;
pub mod io;
pub mod layout;
pub mod metrics;
mod nn;
pub mod prox;
pub mod summary;
pub mod synth;
pub mod train;
pub mod tv;
pub mod unfold;

pub use bp::{compute_aat_diag, AAtDiag, BpOutcome, CassiSystem, FidelityParams, WeightMode};
pub use cube::{CodedMask, DispersionSpec, HsiCube, Measurement, NoiseSpec, Plane, ShiftedCube};
pub use error::{Error, Result};
pub use nn::Scope;
