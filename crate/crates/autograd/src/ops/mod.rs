mod conv;
mod elementwise;
mod norm;
mod temporal;

pub use conv::{conv2d, slice_channels, upsample_nearest2x};
pub use elementwise::{sigmoid_scalar, softplus_scalar};
pub use norm::group_norm;
pub use temporal::{temporal_attention, temporal_conv};
