//! Relativistic Vlasov-Maxwell dynamics with a radiation reaction force.
//!
//! The crate traces characteristics in prescribed fields, runs a full-f
//! particle-in-cell solve in 1D3V, certifies the explicit light-cone kernel
//! bounds, integrates the doubly logarithmic envelope ODEs, and bundles all
//! of it into a deterministic verification report.

pub mod characteristics;
pub mod error;
pub mod fields;
pub mod force;
pub mod kinematics;
pub mod kinetic;
pub mod lightcone;
pub mod moments;
pub mod ode;
pub mod orchestrator;

pub use error::{Error, Result};
pub use force::{FieldSample, ForceParams};
pub use kinematics::Vec3;
