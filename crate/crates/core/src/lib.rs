pub mod bases;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod finance;
pub mod forward;
pub mod numkit;
pub mod seed;
pub mod solver;

pub use error::{Error, Result};
pub use exec::Execution;
