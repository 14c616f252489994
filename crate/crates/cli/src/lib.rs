//! Configuration, presets and the experiment runner behind the `bilayer` binary.

pub mod config;
pub mod export;
pub mod oracle;
pub mod presets;
pub mod runner;
