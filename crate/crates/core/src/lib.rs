//! Deformable line attention (DLA) and a desk-scale line detector built on it.
//!
//! Everything in this crate is pure computation over `f64` buffers and works
//! under `no_std` with `alloc`. File formats, the training driver, timing and
//! the command-line front end live in the companion `dla-lab` crate.
//!
//! Module map:
//!
//! * [`numerics`]: tensors, bilinear sampling, convolution, softmax, dense
//!   layers and the central-difference gradient oracle.
//! * [`geometry`]: line segments, logit-space anchors and top-k anchor
//!   generation.
//! * [`dla`]: the deformable line attention operator with analytic backward
//!   and its FLOP model.
//! * [`encoder`]: channel projection, self-attention on the coarsest map and
//!   the GELAN fusion block with branch fusion for deployment.
//! * [`detector`]: backbone, query selection, decoder, matching, losses,
//!   optimizer and presets.
//! * [`evaluation`]: structural AP and precision/recall curves.
//! * [`data`]: synthetic line images with exact annotations.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod detector;
pub mod dla;
pub mod encoder;
mod error;
pub mod evaluation;
pub mod geometry;
pub mod numerics;
pub mod params;
pub mod rng;

pub use error::{Error, Result};
