//! Exact solver and verification harness for finite decentralized
//! stochastic control problems with partial history sharing.

#![allow(clippy::needless_range_loop)]

pub mod coordinator;
pub mod dp;
pub mod error;
pub mod instances;
pub mod model;
pub mod oracle;
pub mod sim;

pub use error::{Error, Result};
