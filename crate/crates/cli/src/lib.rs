//! Library surface of the `snn` command-line harness: config parsing and
//! run orchestration, reused by the binary and by integration tests.

pub mod config;
pub mod runner;
