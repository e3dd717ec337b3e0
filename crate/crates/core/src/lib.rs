//! Toolkit for detecting mound sites in georeferenced imagery.
//!
//! The stages are independent modules over shared types from [`geo`]:
//!
//! - [`catalog`]: site catalog curation and stratified splits
//! - [`tiles`]: window extraction, mask rasterization, crops and augmentation
//! - [`model`]: segmenter adapter, losses and the built-in baseline segmenter
//! - [`postproc`]: blur, threshold, polygonize and simplify probability rasters
//! - [`evals`]: IoU statistics and detection outcomes with adjudication ledgers
//! - [`mosaic`]: region sweeps stitched into averaged heatmaps
//! - [`synth`]: deterministic synthetic scenes used as a test oracle
//!
//! Hot loops go through [`par`], which uses rayon when the `parallel`
//! feature is enabled (the default) and plain iterators otherwise.

pub mod catalog;
pub mod evals;
pub mod formats;
pub mod geo;
pub mod model;
pub mod mosaic;
pub mod par;
pub mod postproc;
pub mod seeds;
pub mod synth;
pub mod tiles;
