//! Characteristic-function tests of conditional independence with proxy variables.

pub mod bootstrap;
pub mod bridge_continuous;
pub mod bridge_discrete;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod scenarios;
pub mod teststats;

pub use error::{Error, Result};
