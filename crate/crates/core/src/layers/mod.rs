//! Neural building blocks over the [`Graph`](crate::tensor::Graph) engine.
//!
//! Every layer owns only [`ParamId`](crate::tensor::ParamId) handles; the
//! tensors live in a shared [`ParamStore`](crate::tensor::ParamStore) so a
//! whole model can be checkpointed and updated as one flat list.

mod attention;
mod conv;
mod gru;
mod init;
mod linear;
mod lvc;
mod norm;

pub use attention::{Attention, AttentionOutput};
pub use conv::Conv1d;
pub use gru::Gru;
pub use init::Initializer;
pub use linear::Linear;
pub use lvc::{Lvc, LvcOutput};
pub use norm::{FeedForward, LayerNorm};
