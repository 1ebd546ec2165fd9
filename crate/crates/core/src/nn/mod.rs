//! From-scratch dense network substrate: parameter storage, feed-forward
//! stacks with analytic backprop, ADAM, the cosine schedule and the special
//! functions the evidential loss needs.
//!
//! Everything here is generic over [`crate::scalar::Scalar`] and exercised at
//! f64 by the pipeline; gradient checks in [`gradcheck`] are the correctness
//! authority for every layer and loss.

mod gradcheck;
mod layer;
mod schedule;
mod special;
mod store;

pub use gradcheck::{finite_difference_check, GradCheckReport, ProbePoint};
pub use layer::{Activation, LayerSpec, Mlp, MlpCache};
pub use schedule::cosine_lr;
pub use special::{digamma, log_gamma, sigmoid, softplus};
pub use store::{Adam, GradBuffer, ParamId, ParamStore, Tensor};
