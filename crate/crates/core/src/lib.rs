//! System level synthesis controllers with memory.

pub mod adaptation;
pub mod artifact;
pub mod baselines;
pub mod blt;
pub mod cost;
pub mod error;
pub mod experiments;
pub mod isls;
pub mod linalg;
pub mod plant;
pub mod scenario;
pub mod sim;
pub mod sls;
pub mod stacked;

pub use blt::{blt_invert_unit_diagonal, BlockLowerTriangular};
pub use error::{Error, Result};
pub use stacked::{achievability_residual, build_stacked, NoiseModel, StackedSystem, TimeVaryingLinearSystem};
pub use adaptation::{adapt_feedforward, precompute_gain_maps, AdaptationMaps, FeedforwardCell, SharedController};
pub use baselines::{batch_lqt, dp_lqt, mpc_lqt_rollout, DpPolicy};
pub use cost::{add_correlation, build_viapoint_cost, CorrelationSpec, CostSpec, QuadraticCost, StateCostFunction, Viapoint};
pub use isls::{isls_optimize, IslsConfig, IslsCost, IslsOutcome, TraceRow};
pub use plant::{DoubleIntegrator, LinearPlant, PlanarArm, Plant};
pub use scenario::{Problem, Scenario, SolverKind};
pub use sim::{rollout, simulate, Perturbation, Trajectory};
pub use sls::{extract_controller, solve_esls, Controller, Nominal, SystemResponse};
