//! Transfer-learning workbench for osteosarcoma histology tiles.
//!
//! The crate is organised along the experiment's data flow:
//!
//! * [`manifest`], [`split`] and [`task`] ingest labelled tiles, partition
//!   them and derive the five classification tasks;
//! * [`pipeline`] turns decoded rasters into fixed-shape model inputs and
//!   streams (optionally augmented) batches;
//! * [`model`] builds backbone-plus-head networks and handles checkpoints;
//! * [`train`] runs a training job with early stopping and prediction;
//! * [`metrics`] is the pure evaluation engine;
//! * [`experiment`] ties everything into the prepare/run/report matrix.

pub mod error;
pub mod experiment;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod split;
pub mod task;
pub mod train;

pub use error::{Error, Result};
