//! Market-data pipeline and command-line surface over the copula-PDE core:
//! CSV return tables, rolling-window estimation, residual series with event
//! flags, driver selection, implied solves, and reproducible run manifests.

pub mod cli;
pub mod manifest;
pub mod rolling;
pub mod select;
pub mod series;
pub mod table;

pub use copula_pde_core as core;
