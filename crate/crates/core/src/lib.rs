pub mod autoencoder;
pub mod cli;
pub mod clustering;
pub mod config;
pub mod detector;
pub mod error;
pub mod ingest;
pub mod pipeline;
pub mod profile;
pub mod rootcause;
pub mod synthgen;

pub use error::{Error, ErrorKind, Result};
