//! Configuration, orchestration and persistence behind the `ocfl` binary.

pub mod config;
pub mod generate;
pub mod output;
pub mod report;
pub mod run;
pub mod xai;
