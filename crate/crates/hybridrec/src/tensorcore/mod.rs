//! Minimal dense-tensor engine: exactly the layer set the hybrid network
//! needs, each with forward and backward passes, plus Adam, gradient
//! checking and a text snapshot format.

pub mod adam;
pub mod conv;
pub mod embedding;
pub mod gradcheck;
pub mod layers;
pub mod lstm;
pub mod snapshot;
pub mod tensor;

pub use adam::Adam;
pub use conv::{BatchNorm2d, Conv2d, MaxPool2d};
pub use embedding::EmbeddingLookup;
pub use layers::{
    concat_cols, split_cols, Dense, DotProduct, Dropout, Flatten, GlobalMaxPool1d, LambdaRange,
    LeakyRelu, Relu, Reshape, Sigmoid, Softmax,
};
pub use lstm::Lstm;
pub use tensor::{Mode, Param, ParamVisitor, Tensor};
