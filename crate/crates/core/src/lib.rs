//! Slice-wise segmentation with an adversarial term and a learned shape
//! prior, with the synthetic benchmark and leave-one-out harness used to
//! compare them. The guide in `book/` walks through each module.

pub mod binio;
pub mod data;
pub mod harness;
mod error;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod postproc;
pub mod rng;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/data.md")]
    struct Data;
    #[doc = include_str!("../../../book/src/losses.md")]
    struct Losses;
    #[doc = include_str!("../../../book/src/networks.md")]
    struct Networks;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/evaluation.md")]
    struct Evaluation;
    #[doc = include_str!("../../../book/src/experiments.md")]
    struct Experiments;
}
