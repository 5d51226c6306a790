//! Dense tensors, a reverse-mode tape, the layer set used by the models,
//! Adam, and a finite-difference gradient checker.

mod adam;
mod graph;
mod gradcheck;
mod kernels;
mod layers;
mod param;
mod tensor;

pub use adam::Adam;
pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckReport, ParamCheck};
pub use graph::{Gradients, Graph, Route, Var, CE_EPS};
pub use layers::{ConvBlock, Dense, SelfAttention};
pub use param::{ParamBuilder, ParamId, ParamStore, Parameter};
pub use tensor::{Scalar, Tensor};
