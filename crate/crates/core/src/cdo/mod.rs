//! Continuous diagnostics and optimization: change detection over the
//! assembled state, setpoint search against the twin, and the export of
//! real-time data into the historical zone.

mod detect;
mod etl;
mod optimize;

pub use detect::*;
pub use etl::*;
pub use optimize::*;
