//! Network building blocks: fully connected networks for the nominal
//! dynamics and input-convex networks for the Lyapunov function.

mod activation;
mod icnn;
mod init;
mod mlp;
mod params;

pub use activation::{smoothed_relu, smoothed_relu_prime, Activation};
pub use icnn::{icnn_forward, IcnnParams};
pub use init::{kaiming_bias, kaiming_init, kaiming_uniform};
pub use mlp::{mlp_forward, Linear, MlpParams};
pub use params::Parameterized;

pub(crate) use activation::check_width;
pub(crate) use params::LeafCursor;
