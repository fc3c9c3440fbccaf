//! Filesystem, format and execution layer for the palm mapping pipeline.
pub mod config;
pub mod exec;
pub mod fsutil;
pub mod geotiff;
pub mod manifest;
pub mod pipeline;
pub mod provenance;
pub mod stages;
