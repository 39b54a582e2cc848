//! Numerical core for forward and inverse structure-property modelling of
//! two-phase microstructures.
//!
//! The crate is `no_std` with `alloc`; all IO lives in the companion
//! `strucprop` crate. Modules, roughly in dependency order:
//!
//! - [`microgen`]: Gaussian-filtered random fields thresholded to binary grids.
//! - [`homogenize`]: FFT fixed-point elastic homogenization and Voigt/Reuss/Hill bounds.
//! - [`autodiff`]: a small reverse-mode tape with the layers the model needs, plus Adam.
//! - [`statfeat`]: Gram-matrix texture loss over a fixed random convolution bank.
//! - [`vaereg`]: the joint VAE-regression model with a conditional mixture prior.
//! - [`inference`]: forward prediction, inverse inference, metrics, baselines, PCA.
//! - [`latentopt`]: simulated annealing in the latent space.
#![no_std]
// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
mod error;
pub mod fft;
pub mod grid;
pub mod homogenize;
pub mod inference;
pub mod latentopt;
pub mod linalg;
pub mod math;
pub mod microgen;
pub mod rng;
pub mod statfeat;
pub mod vaereg;

pub use error::{Error, Result};
pub use grid::{Shape, VoxelGrid};
