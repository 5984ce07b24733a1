//! File formats and the command-line driver for `isacnet-core` campaigns.

pub mod app;
pub mod export;
pub mod files;
