//! Reverse-mode differentiation over per-sample computation graphs.
//!
//! A [`Graph`] records operations on [`Tensor`]s as they are evaluated;
//! [`Graph::backward`] then walks the tape in reverse. Parameters live in a
//! [`ParamStore`] and enter a graph by copy, so one store can feed many
//! independent graphs (one per batch item) whose gradients are summed in a
//! fixed order.

mod adam;
mod conv;
pub mod gradcheck;
mod graph;
mod init;
mod params;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use conv::ConvGeom;
pub use graph::{Activation, Gradients, Graph, Var};
pub use init::he_normal;
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
