pub mod blr;
pub mod error;
pub mod harness;
pub mod latent;
pub mod numkit;
pub mod rff;
pub mod synthgen;
pub mod uq;

pub use error::{Error, Result};
