//! Autonomic building-management core: a building simulator, a durable
//! message broker, the stream engine, the knowledge repository, discovery
//! and classification, change detection, the autonomic state machine and
//! legacy BAS interfacing, wired together by the runtime.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autonomic;
pub mod bkr;
pub mod broker;
pub mod cdo;
pub mod dnc;
pub mod interfacing;
pub mod jsonl;
pub mod runtime;
pub mod simulator;
pub mod stream;
pub mod types;

#[cfg(test)]
pub(crate) mod testutil;
