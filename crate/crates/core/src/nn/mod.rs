//! Minimal neural-network kernel: dense tensors, a reverse-mode tape,
//! Adam, min-max scaling and finite-difference gradient checks.

mod adam;
pub mod gradcheck;
mod params;
mod scaler;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{check_gradients, relative_error, resolution_floor, GradCheckReport};
pub use params::{init_bounded, init_uniform, ParamId, ParamStore, Parameter};
pub use scaler::MinMaxScaler;
pub use tape::{canonical_weighted_sum, leaky_relu, relu, order_independent_sum, sigmoid, softmax_in_place, Tape, Var};
pub use tensor::{affine, Tensor};
pub(crate) use tensor::matmul_into;
