//! Library surface of the workbench CLI: configuration parsing, report
//! envelopes, SVG rendering, and the command implementations. The binary in
//! `main.rs` is a thin dispatcher over these modules.

pub mod commands;
pub mod config;
pub mod envelope;
pub mod svg;
