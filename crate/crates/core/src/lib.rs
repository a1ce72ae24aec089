//! Core numerics for geolocation-based MIMO-OFDM channel representation.
//!
//! Everything in this crate is `no_std` + `alloc`: channel synthesis from
//! multipath parameters, SVD precoding and water-filling, the small
//! reverse-mode autodiff used by the encoder/decoder/noise networks, the
//! contrastive trainer, and the latent diffusion model. File formats, the
//! CLI and the evaluation harness live in the `chanrep` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod chanmodel;
pub mod error;
pub mod latentgen;
pub mod linalg;
pub mod nn;
pub mod pca;
pub mod precode;
pub mod repr;
pub mod rng;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
