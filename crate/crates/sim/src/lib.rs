//! Experiment drivers and file formats.

pub mod analysis;
pub mod config;
pub mod experiment;
pub mod io;
pub mod sweep;
