//! File formats, parallel drivers and the command line on top of
//! `gsmooth-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod idx;
pub mod manifest;
pub mod pipeline;
pub mod pnm;
pub mod report;

pub use error::{Error, Result};
