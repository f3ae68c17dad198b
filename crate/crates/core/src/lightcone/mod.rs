//! Light-cone machinery: explicit momentum kernels and their bounds, the
//! cone-adapted differential operators, and the retarded integral.

mod kernels;
mod operators;
mod retarded;

pub use kernels::*;
pub use operators::*;
pub use retarded::*;
