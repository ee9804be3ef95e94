//! Minimal dense-array numerics: arrays, a reverse-mode tape over exactly the
//! operators the encoder and losses need, Adam, and checkpoint containers.

mod adam;
mod array;
pub mod container;
pub mod gradcheck;
pub mod nn;
mod tape;

pub use adam::AdamState;
pub use array::{DiffArray, ParamSet};
pub use tape::{Bound, Segment, Tape, Var};

#[cfg(test)]
mod tests;
