//! The building's interface to people and external systems: rule-driven
//! dispatch of tickets and direct commands to actor stubs, the ticket
//! lifecycle, and the adapter that brings a legacy automation system onto
//! the broker together with an offline replay of its exports.

mod actors;
mod dispatch;
mod legacy;
mod replay;
mod tickets;

pub use actors::*;
pub use dispatch::*;
pub use legacy::*;
pub use replay::*;
pub use tickets::*;
