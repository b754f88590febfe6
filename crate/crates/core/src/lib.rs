//! On/off center-surround kernels, image filtering, a small CNN framework and
//! the graph transform that splits a network into on and off pathways.

pub mod builder;
pub mod data;
pub mod error;
pub mod imageops;
pub mod kernels;
pub mod nn;

pub use builder::{
    build_oocs_network, mnist_base, mnist_oocs, mnist_oocs_config, validate_equivalence,
    EquivalenceReport, OocsConfig, ResponseSource,
};
pub use data::{BatchPlan, Dataset, SpotPolarity, SpotShape};
pub use error::{OocsError, Result};
pub use imageops::{ImageTensor, Padding, ResponsePair};
pub use kernels::{BalanceReport, DogParams, KernelMatrix, KernelProfile, Polarity};
pub use nn::{Graph, LayerKind, Mode, NetworkSpec, Params, Tensor};
