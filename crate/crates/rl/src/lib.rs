//! Learning components for the portfolio allocator.
//!
//! - [`neural`]: dense networks with reverse-mode gradients, Adam and
//!   Polyak averaging.
//! - [`replay`]: the transition ring buffer.
//! - [`td3`]: the TD3 agent, its training loop and frozen-policy evaluation.

pub mod error;
pub mod neural;
pub mod replay;
pub mod td3;

pub use error::{Error, Result};
