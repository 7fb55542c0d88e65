//! Dense tensors, reverse-mode differentiation, optimization, and the
//! checkpoint container.

pub mod autodiff;
pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod tensor;

pub use autodiff::{BatchStats, Gradients, Tape, Var};
pub use checkpoint::{Checkpoint, TensorKind};
pub use optim::{clip_global_norm, global_norm, Adadelta, AdadeltaConfig, AdadeltaState, GradMap};
pub use tensor::{log_add, log_sum_exp, Tensor};
