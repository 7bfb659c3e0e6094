//! Cycle-level model of a DRAM channel that can refresh two rows of one
//! bank concurrently (or refresh one row while another is being accessed),
//! a refresh-aware memory controller built around that operation, and the
//! analysis that sizes the probabilistic RowHammer defense it serves.
//!
//! The crate is `no_std` and needs only `alloc`. File formats, CLI and
//! experiment drivers live in the `hira-sim` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod characterization;
pub mod dram;
pub mod geometry;
pub mod hira;
pub mod isolation;
pub mod mc;
pub mod para;
pub mod system;
pub mod time;
pub mod timing;
pub mod workload;

pub use dram::{BankState, Chip, ChipConfig, Command, CommandError, HiraOutcome, IssueMode};
pub use geometry::{AddressMapping, DecodedAddress, Geometry};
pub use isolation::IsolationMap;
pub use time::Ps;
pub use timing::TimingParams;
