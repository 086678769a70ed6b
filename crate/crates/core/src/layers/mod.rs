//! Forward and backward passes of the layer primitives shared by both
//! architectures.

mod activation;
mod concat;
mod conv;
mod pool;

pub use activation::{relu, relu_backward, softmax_backward, softmax_channels};
pub use concat::{concat_channels, split_channels};
pub use conv::{
    conv2d, conv2d_backward, same_padding, transposed_conv2d, transposed_conv2d_backward,
    transposed_padding, ConvGrads, ConvParams,
};
pub use pool::{maxpool2, maxpool2_backward, PoolIndices};
