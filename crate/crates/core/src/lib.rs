//! Gaussian belief propagation for DC power-flow state estimation.
//!
//! Line flows are the only variables. Every line carries a flow-measurement
//! factor and every bus an injection-measurement factor; a missing measurement
//! is a factor with infinite variance. [`bp::run_bp`] computes marginal beliefs,
//! [`wls`] provides the exact least-squares oracle, [`experiments`] the
//! Monte-Carlo statistics and [`coarse_grain`] inter-area flows with their
//! covariance.

pub mod bp;
pub mod cases;
pub mod coarse_grain;
pub mod experiments;
pub mod factor_graph;
pub mod gaussian;
pub mod grid;
pub mod scenarios;
pub mod wls;

pub use bp::{run_bp, BpOptions, BpResult};
pub use factor_graph::{build_factor_graph, FactorGraph};
pub use gaussian::Gaussian1D;
pub use grid::{GridCase, GridError};
pub use scenarios::{MeasurementSet, MissingMask};
