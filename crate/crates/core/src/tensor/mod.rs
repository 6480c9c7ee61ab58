//! Dense tensors and a tape-based reverse-mode differentiation engine.
//!
//! Values live on a [`Graph`]; every operation appends a node holding its
//! result and enough saved state to replay the adjoint. Shapes never
//! broadcast implicitly: binary ops need equal shapes, and the row-wise
//! variants ([`Graph::add_row`], [`Graph::mul_row`]) name the one broadcast
//! they perform.

mod graph;
mod params;
mod value;

pub use graph::{Graph, OpKind, Precision, Var};
pub use params::{Param, ParamId, ParamStore};
pub use value::Tensor;

#[cfg(test)]
mod tests;
