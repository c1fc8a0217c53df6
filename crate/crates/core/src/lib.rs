#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod agent;
pub mod dist;
pub mod envs;
pub mod error;
pub mod flops;
pub mod math;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod srlambda;
pub mod tabular;

pub use error::{Error, Result};
