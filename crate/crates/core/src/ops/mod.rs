//! Forward and backward passes for every layer kind in the network.

mod activation;
mod conv;
mod dense;
mod pool;

pub use activation::{
    cross_entropy, cross_entropy_backward, relu, relu_backward, softmax, softmax_backward,
    softmax_cross_entropy_backward, validate_one_hot, PROB_FLOOR,
};
pub use conv::{conv2d_backward, conv2d_forward, conv_output_extent, conv_param_count, ConvImpl, ConvSpec};
pub use dense::{dense_backward, dense_forward, DenseSpec};
pub use pool::{maxpool_backward, maxpool_forward, pool_output_extent, PoolArgmax};

pub(crate) use conv::conv2d_backward_parts;

use crate::tensor::Tensor;

/// Gradients produced by a layer's backward pass. Each tensor has the shape of
/// the value it differentiates.
#[derive(Clone, Debug)]
pub struct LayerGrads<T> {
    pub d_input: Tensor<T>,
    pub d_weights: Option<Tensor<T>>,
    pub d_bias: Option<Tensor<T>>,
}
