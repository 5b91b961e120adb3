//! Neural-network primitives: convolution, batch norm, activation, pooling,
//! fully-connected, and the softmax cross-entropy loss.
//!
//! Every op comes as a pure forward function plus an explicit backward that
//! maps (inputs, upstream gradient) to (input gradient, parameter gradients).
//! Nothing here builds graphs; callers wire the chain rule by hand, which is
//! easy because all the networks in this crate are simple DAGs.
//!
//! Determinism: ops may parallelize over the batch (or output channels), but
//! every floating-point reduction runs in a fixed order, so results are
//! bitwise identical regardless of thread count.

mod bn;
mod conv;
mod head;

pub use bn::{batch_norm_backward, batch_norm_forward, BatchNormParams};
pub use conv::{
    conv2d_backward, conv2d_forward, conv2d_forward_counted, conv2d_forward_direct, conv_out_hw,
    ConvKind, ConvParams,
};
pub use head::{
    fully_connected, fully_connected_backward, global_avg_pool, global_avg_pool_backward, relu,
    relu_backward, softmax, softmax_cross_entropy,
};
