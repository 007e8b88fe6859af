//! Learning in-distribution barrier functions from safe image demonstrations
//! and using them as a minimally invasive safety filter.

pub mod bcpolicy;
pub mod bundle;
pub mod config;
pub mod dataset;
pub mod diffnet;
pub mod envnav;
pub mod error;
pub mod evalcli;
pub mod filter;
pub mod idbf;
pub mod latentdyn;
pub mod pipeline;
pub mod rng;

pub use config::Config;
pub use error::{Error, Result};
