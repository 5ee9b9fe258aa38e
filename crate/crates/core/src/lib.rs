//! Density-matching optimization under uncertainty.
//!
//! A design is judged by how closely the probability density of its quantity
//! of interest (qoi) matches a designer-supplied target density. The squared
//! L2 distance between the two is discretized on an equispaced trapezoid grid
//! and minimized over the design variables with analytic gradients.
//!
//! Two formulations of the design density are provided:
//!
//! * [`kde_matching`]: a Gaussian kernel density estimate over `M` frozen
//!   uncertainty samples, with the gradient assembled from kernel derivatives
//!   and the per-sample design jacobian.
//! * [`monotonic_matching`]: for responses monotonic in a scalar uncertainty,
//!   a linear surrogate fitted through two model evaluations at the bounding
//!   uncertainty states, pushed through the input density by the
//!   change-of-variables rule. Only two model (and adjoint) evaluations are
//!   needed per design.
//!
//! [`models`] hosts the uncertain-model interface and the shipped analytic
//! models, [`optimizer`] the projected quasi-Newton driver, and [`oracle`] the
//! Monte-Carlo and finite-difference checks used to verify all of the above.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod densities;
pub mod error;
pub mod kde_matching;
pub mod models;
pub mod monotonic_matching;
pub mod optimizer;
pub mod oracle;
pub mod output;
pub mod quadrature;
pub mod verify;

pub use densities::{ScaledBeta, TargetDensity};
pub use error::{Error, Result};
pub use quadrature::{DensityVector, QuadratureGrid};
