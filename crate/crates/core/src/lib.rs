//! Adversarial intensity attack for domain-generalizable image segmentation.
//!
//! This crate is the allocation-only algorithmic core: image and mask types,
//! the binary tensor container codec, a reproducible RNG, the monotone
//! intensity mapper and its Jacobian, k-means region splitting, a small
//! segmentation network with hand-written reverse-mode gradients, the
//! one-step adversarial attacker, synthetic multi-domain data, segmentation
//! metrics and the min-max training loop.
//!
//! Everything here is `#![no_std]`; file IO, the experiment harness and the
//! command-line tool live in the `adverin` crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attack;
pub mod container;
pub mod error;
pub mod gradcheck;
pub mod intensity;
pub mod metrics;
pub mod region;
pub mod rng;
pub mod segnet;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{BinaryMask, Image2D, MaskChannels, Sample};
