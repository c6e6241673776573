//! Tensors, reverse-mode differentiation and the small dense linear algebra
//! the engine needs.

pub mod autodiff;
pub mod linalg;
pub mod mvn;
pub mod rng;
pub mod tensor;

pub use autodiff::{Gradients, Tape, Var};
pub use linalg::{cholesky, cholesky_jittered, svd_topk, symmetric_eigen};
pub use mvn::{sample_mvn, CovFactor, CovarianceRepr};
pub use rng::{Rng, RngState};
pub use tensor::{argmax, Tensor};
