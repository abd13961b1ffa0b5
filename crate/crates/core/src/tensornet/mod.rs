//! A small convolutional network stack with analytic gradients and ADAM.
//!
//! Tensors are `(batch, channels, rows, cols)` in row-major order.

mod adam;
mod gradcheck;
mod io;
mod layers;
mod model;
mod train;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{gradcheck, GradcheckReport};
pub use io::{load_model, read_model, save_model, write_model, FORMAT_VERSION, MAGIC};
pub use layers::{LayerSpec, Padding, ParamTensor};
pub use model::{denoiser_architecture, surrogate_architecture, Architecture, Gradients, Mode, NetworkModel, SkipLink};
pub use train::{mse_loss, train, LrSchedule, TrainConfig, TrainReport};

pub type Tensor = ndarray::Array4<f64>;
