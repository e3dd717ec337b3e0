//! Stage plumbing, run persistence and the HTTP review service behind the
//! `moundline` binary.

pub mod config;
pub mod error;
pub mod review;
pub mod server;
pub mod stages;
pub mod store;

pub use config::RunConfig;
pub use error::{PipelineError, Result};
pub use store::{RunStore, DATA_DIR_ENV};
