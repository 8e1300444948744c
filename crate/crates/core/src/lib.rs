//! Domain-adaptive hashing: a shared encoder trained across a labelled
//! source domain and an unlabelled target domain, whose binarized outputs
//! feed a Hamming-distance retrieval index.

pub mod data;
pub mod diffcore;
pub mod error;
mod fsutil;
pub mod hashindex;
pub mod losses;
pub mod nets;
pub mod pseudo;
pub mod trainer;

pub use error::{Error, Result};
pub use fsutil::atomic_write;
