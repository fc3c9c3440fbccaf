//! Core algorithms for mapping closed-canopy oil palm from annual radar
//! composites and dating canopy closure from optical bare-soil time series.
//!
//! The crate is `no_std` and only needs an allocator. Everything that touches
//! the filesystem, threads, or the command line lives in the `palmscan`
//! crate; kernels here take a [`TileWindow`] so callers can split work
//! across tiles and stitch results without changing any output bit.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod age;
pub mod classify;
pub mod composite;
mod error;
pub mod optical;
pub mod postproc;
pub mod raster;
pub mod stats;
pub mod synth;
pub mod texture;
pub mod validate;

pub use error::{Error, Result};
pub use raster::{iter_tiles, GridGeometry, RasterBand, TileWindow, Unit};
