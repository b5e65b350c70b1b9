//! File formats, dataset loaders and the `invauto` command line on top of
//! [`invauto_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod export;
pub mod idx;
pub mod netpbm;

pub use error::{IoError, Result};
