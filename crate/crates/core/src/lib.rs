//! Riesz occupation kernel (ROCK) learners for ODE vector fields and
//! evolution PDEs.
//!
//! The ODE learner fits `ẋ = f(x)` in a vector-valued RKHS by testing the
//! residual against Legendre polynomials on every trajectory and solving a
//! single `np × np` regularized system. The PDE learner fits
//! `∂ₜu = αᵀφ(u, ∂ₓu, …)` with an explicit feature map.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dynamics;
pub mod error;
pub mod evaluation;
pub mod integrate;
pub mod io;
pub mod kernels;
pub mod ode;
pub mod pde;
pub mod representer;
pub mod selection;
pub mod test_space;

pub use error::{Error, Result};
pub use integrate::{integrate, FnField, Integrator, VectorField};
pub use kernels::{KernelFamily, KernelSpec, RffConfig};
pub use ode::{train, RockModel, Trajectory, TrajectorySet};
pub use representer::{solve_regularized, RegularizedSystem, RidgeRegression};
pub use test_space::TestBlock;
pub use dynamics::{generate, Dataset, Generator, SystemName, SystemSpec};
pub use evaluation::{count_parameters, evaluate, evaluate_pde, EvalReport};
pub use pde::{forecast_pde, train_pde, FeatureSpec, FieldGrid, PdeModel};
pub use selection::{cut_trajectories, split_dataset, two_stage_search, SearchOutcome, SearchSpace};
