//! Learned velocity prediction: complex-valued building blocks and the
//! decoupled dual network with training and inference.

mod conv;
mod net;
mod train;

pub use conv::{complex_conv, conv_out_dims, crelu, ComplexPlanes, Planes};
pub use net::{
    forward, forward_complex_reference, ConvLayer, DualNetWeights, LayerSpec, NetArch,
};
pub use train::{
    backward, loss, predict, train, velocity_loss, DualNetGradients, Optimizer, PredictOutcome,
    TrainConfig, TrainHistory, TrainingExample,
};
