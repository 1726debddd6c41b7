pub mod agent;
pub mod arena;
pub mod controller;
pub mod error;
pub mod experiment;
pub mod immune;
pub mod net;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};
