//! Primitive operators with their vector-Jacobian products.

pub mod act;
pub mod bn;
pub mod channel;
pub mod conv;
#[doc(hidden)]
pub mod fault;
pub mod linear;
pub mod pool;
#[cfg(test)]
pub(crate) mod testing;

pub use act::{relu, relu_backward};
pub use bn::{batch_stats, batchnorm2d, batchnorm2d_backward, batchnorm2d_with_stats, BnStats};
pub use channel::{channel_split, concat_channels, pixel_shuffle, pixel_unshuffle, split_channels};
pub use conv::{conv2d, conv2d_backward, depthwise_conv2d, depthwise_conv2d_backward, out_dim};
pub use linear::{linear, linear_backward};
pub use pool::{gsp, gsp_backward};
