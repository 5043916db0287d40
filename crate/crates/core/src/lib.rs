//! Detectability and estimation of leaks and sensor faults on
//! tree-structured flow-sensor networks.
//!
//! The network is a directed tree of metered zones. Each sensor contributes
//! a residual (measured minus predicted flow). Leaks and sensor faults are
//! unknown edges added to that tree; a set of unknowns is solvable exactly
//! when every weakly connected component of the fault graph is a directed
//! tree. Estimation enumerates every solvable structure of maximal size once
//! per topology, then solves each one per time window and keeps the valid
//! solutions of smallest ℓ1 norm. A regularized QP estimator is provided as
//! a baseline.
//!
//! Matrix code is generic over [`Scalar`] (`f32`, `f64`, [`Rational`]);
//! estimation is generic over [`Real`]. The aliases below fix the common
//! `f64` instantiations.

pub mod detectability;
pub mod enumeration;
pub mod error;
pub mod estimation;
pub mod graph;
pub mod linalg;
pub mod qp;
pub mod residuals;
pub mod sample_networks;
pub mod scalar;
pub mod simulator;

pub use error::{Error, Result};
pub use graph::{FaultEdge, FaultKind, FaultStructure, NodeId, Topology};
pub use scalar::{Real, Scalar};

/// Exact rational scalar for rank and solvability checks.
pub type Rational = num_rational::Ratio<i64>;

pub type Matrix = linalg::DenseMatrix<f64>;
pub type ExactMatrix = linalg::DenseMatrix<Rational>;
pub type IncidenceMatrix = graph::IncidenceMatrix<f64>;
pub type LinearSystem = graph::LinearSystem<f64>;
pub type DetectableCatalog = enumeration::DetectableCatalog<f64>;
pub type ResidualVector = residuals::ResidualVector<f64>;
pub type StructureSolution = estimation::StructureSolution<f64>;
pub type EstimationReport = estimation::EstimationReport<f64>;
pub type QpSolution = qp::QpSolution<f64>;
