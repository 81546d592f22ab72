//! Desk-scale networks: trajectory autoencoder, velocity field and visibility head.

mod layers;
pub mod vae;
pub mod velocity;
pub mod visibility;

pub use vae::{reparameterize, reparameterize_var, Vae, VaeConfig};
pub use velocity::{
    fuse_history, slice_batch, FlowCondition, FlowNetConfig, FusionParams, VelocityNet,
};
pub use visibility::{pool_visibility, threshold_logits, VisConfig, VisibilityHead};
