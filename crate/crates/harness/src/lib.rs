//! Experiment pipelines and reports for multi-fidelity placement optimization.
//!
//! [`pipeline`] and [`eval`] work on in-memory artifacts; [`commands`] wraps
//! them with the on-disk layout of [`workspace::Workspace`] and backs the
//! `mdeopt` binary.

pub mod commands;
pub mod config;
pub mod eval;
pub mod pipeline;
pub mod report;
pub mod svg;
pub mod workspace;

pub use config::{Baseline, ExperimentConfig};
