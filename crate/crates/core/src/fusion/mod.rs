//! The fusion network: auxiliary branch encoders, the shallow/deep
//! transformer stack over the audio stream, gated cross-modal attention,
//! the shared encoder and the classifier head.

pub mod checkpoint;
mod config;
mod model;

pub use config::{FusionMode, GateInput, GatePlacement, Modality, ModalityMask, ModelConfig};
pub use model::{
    argmax, cross_modal_attention, gated_fuse, CrossOutput, DeepLayer, DeepTrace, FusionTrace, PerModality,
    ShallowLayer, TextBranch, TextOutput, VisualBranch, VisualOutput, WavFusionModel,
};
