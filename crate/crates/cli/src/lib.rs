//! Configuration-driven driver for `leibenson_pinn`: training runs, error
//! tables, eps sweeps and field exports. The `leibenson` binary is a thin
//! argument parser over [`commands`].

pub mod commands;
pub mod config;
pub mod manifest;

pub use config::RunConfig;
pub use manifest::RunManifest;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
pub struct CliGuide;
