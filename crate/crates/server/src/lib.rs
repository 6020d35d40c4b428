//! HTTP service and command-line tooling around `semgate-core`.

pub mod api;
pub mod commands;
pub mod config;
