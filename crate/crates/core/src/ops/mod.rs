//! Forward kernels and their exact adjoints as pure functions over [`Tensor`].
//!
//! [`Tape`](crate::tape::Tape) records calls to these; tests and oracles may also
//! call them directly.
//!
//! [`Tensor`]: crate::tensor::Tensor

pub mod activation;
pub mod conv;
pub mod elementwise;
pub mod linear;
pub mod norm;
pub mod pool;

pub use activation::{activation, activation_backward, ActivationKind};
pub use conv::{conv2d, conv2d_backward, conv2d_output_dims, ConvGeometry, ConvGrads};
pub use elementwise::{concat_channels, elementwise, elementwise_backward, BinaryKind};
pub use linear::{fully_connected, fully_connected_backward, LinearGrads};
pub use norm::{batch_norm_backward, batch_norm_eval, batch_norm_train, BnCache, BnState, BN_EPSILON, BN_MOMENTUM};
pub use pool::{global_pool, global_pool_backward, max_pool2d, PoolKind};
