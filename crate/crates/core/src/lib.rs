//! Contrastive pre-training of spatial-temporal trajectory embeddings.
//!
//! The crate is organised bottom-up:
//!
//! * [`numcore`] – dense f64 arrays, a single-use reverse-mode tape, Adam, and
//!   the binary parameter container.
//! * [`trajdata`] – trajectory model, CSV ingestion, resampling, grid
//!   discretisation, chronological splits.
//! * [`augment`] – query/positive sample construction and in-batch negatives.
//! * [`encoder`] – the spatial-temporal encoding layer and stacked induced
//!   attentive layers.
//! * [`pretrain`] – InfoNCE loss, the training loop, early stopping, checkpoints.
//! * [`downstream`] – similar-trajectory search and destination prediction
//!   with the DTW, Markov-chain and Mean baselines.
//! * [`synthgen`] – synthetic trajectories with known underlying paths.
//! * [`config`] / [`pipeline`] – the run configuration and the commands the
//!   CLI exposes.

pub mod augment;
pub mod config;
pub mod downstream;
pub mod encoder;
mod error;
pub mod exec;
pub mod numcore;
pub mod pipeline;
pub mod pretrain;
pub mod rng;
pub mod synthgen;
pub mod trajdata;

pub use error::{Error, Result};
