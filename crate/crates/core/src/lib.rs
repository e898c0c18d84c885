//! Emergency-vehicle signal preemption on a signalized corridor: network
//! description, a seeded microsimulator with preempt-capable controllers,
//! call-timing strategies, learned call timing and evaluation.

pub mod clock;
pub mod control;
pub mod error;
pub mod eval;
pub mod learn;
pub mod net;
pub mod par;
pub mod pipeline;
pub mod sim;
pub mod strategies;

pub use error::{Error, Result};
