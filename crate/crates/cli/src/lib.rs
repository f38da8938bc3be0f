//! Command layer for the FlashMHF crates: config files, the parameter
//! container, the property suite, benchmarks, toy training and reports.

pub mod bench;
pub mod check;
pub mod commands;
pub mod config;
pub mod container;
pub mod error;
pub mod report;
pub mod train;
