//! Configuration, dataset export and the command implementations behind the
//! `afem` binary.

pub mod commands;
pub mod config;
pub mod mlfd;
pub mod study;

pub use config::RunConfig;
