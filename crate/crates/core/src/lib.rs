//! Signed-distance reconstruction from unoriented point clouds.
//!
//! A small sine-activated MLP is fitted to the input points under a loss that
//! keeps the field zero on the samples, non-zero elsewhere, with a gradient
//! that does not vanish on the data, and with a near-singular Hessian in a
//! thin shell around the surface. Exact spatial jets (value, gradient,
//! Hessian) flow through the network and are differentiated again with
//! respect to the parameters.
//!
//! Module map:
//! - [`geometry`]: containers, normalization, file formats
//! - [`spatial`]: exact kd-tree nearest neighbors
//! - [`field`], [`sinenet`]: jets, analytic fields, the network
//! - [`losses`], [`graddiff`]: loss terms and parameter gradients
//! - [`sampler`], [`trainer`]: per-iteration batches, Adam, the fit loop
//! - [`contour`]: grid evaluation, marching squares and cubes
//! - [`metrics`]: Chamfer-L1, F-score, normal consistency
//! - [`morse`]: critical points and shell statistics
//! - [`config`]: the TOML run configuration

pub mod config;
pub mod contour;
pub mod error;
pub mod field;
pub mod geometry;
pub mod graddiff;
pub mod losses;
pub mod metrics;
pub mod morse;
pub mod sampler;
pub mod sinenet;
pub mod spatial;
pub mod trainer;

pub use error::{Error, Result};
pub use field::{AnalyticField, Jet, JetOrder, ScalarField};
pub use geometry::{NormalizationTransform, PointCloud, Polyline2D, ScalarGrid, TriangleMesh};
pub use sinenet::{Activation, Architecture, SineNetwork};
