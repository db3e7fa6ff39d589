//! Dense tensors, scalar primitives, reverse-mode gradients, SGD and the
//! finite-difference oracle used to check them.

pub mod finite_diff;
pub mod ops;
pub mod sgd;
pub mod tape;
pub mod tensor;

pub use finite_diff::{finite_diff_grad, grads_match};
pub use ops::{argmax, cosine_sim, cross_entropy, softmax};
pub use sgd::{sgd_step, SgdConfig, SgdState};
pub use tape::{eval_with_gradients, ParamId, Tape, Var};
pub use tensor::Tensor;
