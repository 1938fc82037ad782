//! A small CNN engine: valid 2D convolution, ReLU, dense layers, MSE loss,
//! backpropagation and momentum SGD, all in `f64`.

pub mod arch;
pub mod io;
pub mod layers;
pub mod network;
pub mod tensor;
pub mod train;

pub use arch::{ConvLayer, NetworkConfig};
pub use io::{load_model, load_model_expecting, save_model};
pub use layers::{
    conv2d_backward, conv2d_forward, fc_backward, fc_forward, mse_loss, relu_backward,
    relu_forward,
};
pub use network::{init_weights, LayerSpec, Network, Params};
pub use tensor::Tensor;
pub use train::{
    batch_indices, loss_csv, Dataset, LossRecord, LossScale, Sgd, StepDecay, TrainConfig, Trainer,
};
