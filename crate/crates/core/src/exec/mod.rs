//! Runtime for contraction paths and the direct convolution kernels.

mod contract;
mod conv;
mod operator;

pub use contract::{contract_pair, execute_path, execute_path_adjoint, Execution, Operand};
pub use conv::{spatial_conv2d, spatial_out_extent, temporal_conv, temporal_conv_mode, SpatialLayout, SpatialWeights};
pub use operator::ConvOperator;
