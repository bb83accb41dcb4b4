//! File formats, image IO, plots and the `texsg` command line on top of
//! [`texsg_core`].

pub mod cli;
pub mod formats;
pub mod imageio;
pub mod manifest;
pub mod obj;
pub mod plot;

pub use texsg_core as core;
