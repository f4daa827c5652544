//! Kernel EDMD surrogate models of control-affine systems, empirical error
//! certificates, terminal ingredient design and constraint-tightened MPC.

pub mod bounds;
pub mod dataset;
pub mod error;
pub mod kernel;
pub(crate) mod matrix_serde;
pub mod mpc;
pub mod padua;
pub mod plant;
pub mod points;
pub mod sets;
pub mod sim;
pub mod surrogate;
pub mod terminal;
pub mod tightening;

pub use bounds::{BoundsConfig, CertifiedBounds};
pub use dataset::{build_cluster_dataset, Cluster, ClusterDataset, Triplet};
pub use error::{Error, Result};
pub use kernel::{KernelMatrixFactorization, KernelSpec};
pub use plant::{ControlAffine, DifferentiableDynamics, Dynamics, LinearPlant, Plant, VanDerPol};
pub use points::Points;
pub use sets::AxisBox;
pub use surrogate::{fit_autonomous, fit_control_affine, ModelDocument, SurrogateModel};
pub use mpc::{solve_ocp, MpcConfig, MpcController, OcpSolution, OcpStatus, SolverSettings};
pub use terminal::{design_terminal, TerminalConfig, TerminalIngredients};
pub use sim::{run_closed_loop, trace_metrics, ClosedLoopTrace, TraceMetrics};
