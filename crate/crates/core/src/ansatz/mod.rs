//! Material parameterisations for the indicator field.
//!
//! [`ConstantAnsatz`] assigns one coefficient per voxel of nodes.
//! [`GeneratorNetwork`] upsamples a fixed random latent tensor through
//! convolution blocks into a field in `(ε, 1)`; its reverse pass is written
//! by hand in [`ops`].

mod constant;
mod network;
pub mod ops;

pub use constant::ConstantAnsatz;
pub use network::{ForwardCache, GeneratorNetwork, NetworkConfig, NetworkGradient, ParamBlock};
pub use ops::Tensor;
