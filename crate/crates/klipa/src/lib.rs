//! Command-line driver and HTTP service for the klipa pipeline.
//!
//! [`engine`] moves artifacts between the core stages, [`cli`] maps
//! subcommands onto it and [`api`] serves a loaded engine over HTTP.

pub mod api;
pub mod cli;
pub mod config;
pub mod engine;
pub mod error;

pub use config::EngineConfig;
pub use engine::Engine;
pub use error::EngineError;
