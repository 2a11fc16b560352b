//! Graph data augmentation through graphon descriptors and convex clusterpaths.
//!
//! The pipeline converts each graph to a block graphon, traces a
//! label-weighted convex clustering path through descriptor space, collapses
//! it into one branch per class, and samples new graphs with soft labels from
//! points along the branches. Linear, sigmoid and logit mixup baselines are
//! included.

pub mod cli;
pub mod cvxclust;
pub mod error;
pub mod graph_io;
pub mod graphon;
pub mod mixpath;
pub mod mixup;

pub use error::{Error, Result};
