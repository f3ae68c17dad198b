//! Prescribed space-time fields for 3D tracing and the periodic 1D3V Maxwell solver.

mod prescribed;
mod yee;

pub use prescribed::*;
pub use yee::*;
