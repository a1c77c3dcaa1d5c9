//! Residual-learning networks (sub-Net 1 for the joint state, sub-Net 2
//! for scatterers) and the estimators built on them.

pub mod estimators;
pub mod mlp;
pub mod norm;
pub mod train;

pub use estimators::{
    estimate_scatterer_net, fp_estimate, lsnet_estimate, mapping_residual_target, residual_target, subnet2_input, wlsnet_estimate,
    WlsNetConfig,
};
pub use mlp::MlpParams;
pub use norm::{MinMax, NormalizationSpec};
pub use train::{train_net, Split, TrainConfig, TrainHistory, TrainedNet, TrainingSet};
