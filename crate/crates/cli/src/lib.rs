//! Command-line driver around `gsr_core`: configuration files, multi-seed
//! experiment grids, checkpoints and SVG plots.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod experiment;
pub mod svg;
