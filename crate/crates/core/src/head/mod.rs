//! The trainable CNN-MLP classifier head.

mod adam;
mod config;
mod io;
mod model;
mod params;
mod train;

pub use adam::AdamState;
pub use config::{
    backbone_info, count_params, BackboneInfo, HeadConfig, LayerCount, ParamCount, Precision,
    TrainConfig, BACKBONES,
};
pub use io::{AnyHead, HEAD_MAGIC, HEAD_VERSION};
pub use model::{
    argmax, cross_entropy, loss, stack_inputs, ForwardCache, Mode, PreparedBatch, Prediction,
    PROB_FLOOR,
};
pub use params::{DenseLayer, Gradients, HeadParams};
pub use train::{train_head, TrainedHead};
