//! Dataset ingestion, file formats, run manifests and the command line
//! for the object-prompted captioning pipeline in [`opcap_core`].

pub mod cli;
pub mod coco;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod io;
pub mod manifest;
pub mod toy;

pub use error::{Error, Result};
