//! Architecture grammar, named networks, builder and training loss.

pub mod build;
pub mod loss;
pub mod registry;
pub mod spec;

pub use build::{build, build_spec};
pub use loss::{aam_softmax_loss, class_weight_shape, AamConfig, AamOutput};
pub use spec::{toy_spec, NetworkSpec, PoolMethod, RevType, SpecSummary, Stage};
