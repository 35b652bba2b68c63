//! Quantized dense layers, the model container and its frozen deployment form.

mod deploy;
mod model;

pub use deploy::{DeployLayer, DeployModel};
pub use model::{Bindings, ModelConfig, ParamKind, QDense, QModel};
