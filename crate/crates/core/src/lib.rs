//! Principal component autoencoder (PCAE).
//!
//! A nonlinear autoencoder whose latent coordinates come out ordered by
//! variance, the way principal components are. Training combines the usual
//! reconstruction loss with a weighted latent-variance penalty (strictly
//! increasing weights below 2) and an isometry penalty that ties latent
//! distances to approximate geodesic distances on the data manifold. The
//! intrinsic dimension is then read off the latent variances with a
//! cumulative-variance threshold.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod analysis;
pub mod datasets;
pub mod error;
pub mod geodesic;
pub mod linalg;
pub mod network;
pub mod objective;
pub mod scheduler;
pub mod theory;
pub mod train;

mod io;
mod neighbors;

pub use error::{Error, Result};
pub use linalg::Matrix;
