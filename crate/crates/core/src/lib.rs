//! Layered image transmission over a simulated block-error channel.
//!
//! A coarse base layer (CompNet + FineNet refinement) is assumed to arrive
//! intact. The residual between the image and that estimate is coded by a
//! small convolutional codec into a fixed number of bits, interleaved, sent
//! through a block erasure or block symmetric channel, and recombined at the
//! receiver by SumNet.

pub mod binarizer;
mod error;
pub mod imaging;
pub mod link;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod seeds;

pub use ds2c2_autodiff as autodiff;
pub use error::{Error, Result};
