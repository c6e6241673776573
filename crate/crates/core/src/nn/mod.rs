//! Backbone, growing head, parameter groups and the SGD optimizer.

pub mod checkpoint;
pub mod groups;
pub mod head_fit;
pub mod model;
pub mod sgd;

pub use checkpoint::Checkpoint;
pub use head_fit::{fit_linear_head, HeadLoss};
pub use groups::{make_groups, GroupSet, LearningRates, ParamGroup, Subset, TuningMode};
pub use model::{init_seed, Activation, Forward, Head, LayerNorm, Linear, Model, ParamRef};
pub use sgd::{Sgd, SgdConfig};
