//! Training two-layer ReLU classifiers under data-dependent, non-convex
//! constraints.
//!
//! The constrained problem is written as a three-player game over the network
//! weights, auxiliary rate bounds and Lagrange multipliers. Each player runs
//! projected stochastic gradient steps ([`lagrangian`]); the iterates are
//! turned into a randomized classifier ([`stochastic`]) which can be
//! compressed to a handful of snapshots with a small LP ([`simplex`]).
//!
//! [`linearization`] and [`online`] hold Monte Carlo experiments that check the
//! width-scaling and regret behaviour the training procedure relies on.

pub mod data;
pub mod error;
pub mod fit;
pub mod lagrangian;
pub mod linearization;
pub mod losses;
pub mod model;
pub mod online;
pub mod problem;
pub mod rng;
pub mod simplex;
pub mod stochastic;

pub use data::{Dataset, Group, Label};
pub use error::{Error, Result};
pub use lagrangian::{GameState, MetricsTrace, StepSizes, TrainConfig, TrainOutput};
pub use losses::{LossKind, OuterConstraint, OuterKind, ScalarLoss};
pub use model::TwoLayerNet;
pub use problem::{ConstraintProblem, ProblemConfig};
pub use stochastic::{ShrinkInstance, StochasticClassifier};
