//! File formats, the training driver and the `dclust` command line around
//! the `dclust-core` numerics.

pub mod commands;
pub mod config;
pub mod container;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod selfcheck;
pub mod train;
pub mod wav;
