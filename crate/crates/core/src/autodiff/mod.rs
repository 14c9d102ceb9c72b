//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Build a [`Graph`] by pushing parameter leaves and ops, then call
//! [`Graph::backward`] on a scalar node. Parameters are identified by
//! [`ParamId`] so a loss can mix trainable leaves from several [`ParamSet`]s
//! with detached constants.

mod gradcheck;
mod graph;
mod optim;
mod params;

pub use gradcheck::{check_gradients, finite_diff_grad, GradCheck};
pub(crate) use graph::softplus;
pub use graph::{sq_dist_matrix, GradMap, Gradients, Graph, Var, DOMAIN_FLOOR};
pub use optim::{sgd_step, Optimizer, OptimizerConfig, OptimizerKind};
pub use params::{ParamId, ParamSet};
