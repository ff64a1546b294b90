//! Autonomic control loop: the building mode and the commissioning
//! processes that drive it.

mod commission;
mod mode;

pub use commission::*;
pub use mode::*;
