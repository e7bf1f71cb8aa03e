//! Transmission chain: domain transitions, interleaving, block channel, framing.

mod channel;
mod domain;
mod frame;
mod interleave;

pub use channel::{apply_channel, apply_channel_bits, apply_footprint, erasure_footprint, ChannelConfig, ChannelModel, ErrorReport, DEFAULT_BLOCK_BYTES};
pub use domain::{to_image_domain, to_tensor_domain};
pub use frame::{frame_decode, frame_encode, FrameError, FrameHeader, FRAME_HEADER_LEN, FRAME_VERSION};
pub use interleave::{deinterleave, interleave, InterleaverSpec, Scheme};
