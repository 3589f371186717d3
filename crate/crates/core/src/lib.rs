//! Call-graph malware classifier built on a monotone graph convolutional
//! network, with tooling to generate corpora, train, evaluate and attack it.

pub mod cli;
pub mod digest;
pub mod error;
pub mod fcg;
pub mod featurize;
pub mod gcn;
pub mod metrics;
pub mod robustness;
pub mod synth;

pub use error::{Error, Result};
