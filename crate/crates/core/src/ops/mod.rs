//! Differentiable tensor operations. Every op takes the tape first, reads its
//! inputs immutably, and registers a backward closure when the tape is live.

pub mod conv;
pub mod elementwise;
pub mod gemm;
pub mod linear;
pub mod norm;
pub mod reduce;
pub mod shape;
pub mod softmax;

pub use conv::{conv2d, conv_transpose2d, max_pool2d};
pub use elementwise::{add, affine, gelu, mul, relu, sigmoid};
pub use linear::{linear, matmul};
pub use norm::{batch_norm2d, layer_norm, Mode};
pub use reduce::{global_avg_pool2d, mean_all, sum_all};
pub use shape::{concat, permute, reshape};
pub use softmax::{softmax, softmax_owned};
