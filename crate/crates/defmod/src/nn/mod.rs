//! Minimal numeric substrate: 64-bit parameter tensors, an LSTM cell,
//! softmax cross-entropy, Adam, and a finite-difference gradient checker.
//!
//! Everything here is deliberately scalar f64 code. Model sizes in this
//! crate are small enough that clarity and checkable gradients beat raw
//! throughput.

pub mod adam;
pub mod gradcheck;
pub mod lstm;
pub mod ops;
pub mod tensor;

pub use adam::{adam_step, clip_global_norm, AdamConfig};
pub use gradcheck::{grad_check, GradCheckOpts, GradCheckReport};
pub use lstm::{LstmCache, LstmCell};
pub use ops::{
    axpy, cosine, dot, log_sigmoid, log_softmax, logsumexp, matvec, matvec_t_acc, outer_acc,
    sigmoid, softmax_inplace, softmax_xent,
};
pub use tensor::{ParamTensor, Parameterized, TensorSet};
