//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, check_param_gradients, RELATIVE_FLOOR};
pub use optim::{sgd_step, Optimizer, OptimizerKind};
pub use params::{Gradients, Param, ParamGroup, ParamId, ParamStore};
pub use tape::{sigmoid, CustomBackward, Tape, Var};
pub use tensor::{logsumexp, softmax, Tensor};
