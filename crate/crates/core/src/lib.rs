//! End-to-end table recognition: a convolutional encoder with global
//! context blocks, a structure decoder trained in both reading directions,
//! a multi-cell content decoder, and tree-edit-distance evaluation.

pub mod data;
pub mod error;
pub mod losses;
pub mod model;
pub mod nn;
pub mod optim;
pub mod teds;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
