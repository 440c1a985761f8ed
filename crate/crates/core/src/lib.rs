//! Spiking semantic communication of split-classifier features over a binary
//! symmetric channel, with a learned semantic-similarity HARQ protocol.

pub mod backbone;
pub mod baseline;
pub mod bench;
pub mod channel;
pub mod checkpoint;
pub mod codec;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod harq;
pub mod layers;
pub mod neuron;
pub mod optim;
pub mod simnet;
pub mod tensor;

pub use error::{Error, Result};
