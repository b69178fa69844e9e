//! Inverse linear optimization by unrolled differentiable solving.
//!
//! The crate learns the parameters of a linear program (cost vector,
//! constraint matrix, right-hand side, or parametric weights) from observed
//! optimal solutions. The forward problem is solved by a barrier
//! interior-point method recorded on an autodiff tape; gradient descent on a
//! loss between solver output and observations then updates the parameters.
//!
//! Modules:
//! - [`tape`]: reverse-mode autodiff tape with exact adjoints.
//! - [`ipm`]: differentiable barrier interior-point LP solver.
//! - [`losses`]: absolute-duality-gap and squared-error training losses.
//! - [`models`]: parametric model families mapping (u, w) to (c, A, b).
//! - [`instances`]: convex-hull baseline polytopes and learning-task targets.
//! - [`learner`]: gradient descent with safe-step line search and
//!   hyperparameter search.
//! - [`files`]: instance JSON and result CSV persistence.
//! - [`surface`] / [`report`]: loss-surface grids and batch summaries.

pub mod error;
pub mod files;
pub mod instances;
pub mod ipm;
pub mod learner;
pub mod losses;
pub mod models;
pub mod report;
pub mod surface;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tape::{grad_check, GradientMap, OpKind, Tape, VarId};
pub use tensor::Tensor;
