//! Physics-informed neural networks for the two-dimensional vector
//! Kuramoto–Sivashinsky equation
//!
//! ```text
//! u_t + (u·∇)u + λΔu + Δ²u = f   on [0,2]² × [0,T], periodic in space
//! ```
//!
//! together with the machinery needed to certify a trained network: an exact
//! higher-order derivative tape, midpoint quadrature, the a-posteriori L²
//! error bound, a pseudo-spectral reference solver and Littlewood–Paley /
//! Besov diagnostics for solver trajectories.
//!
//! Module map:
//!
//! - [`network`]: tanh MLPs, initialization, Cⁿ-norm bounds, checkpoints
//! - [`autodiff`]: input jets up to order four and parameter gradients
//! - [`physics`]: manufactured solution, forcing and the six residuals
//! - [`quadrature`]: midpoint rules and compensated integration
//! - [`loss`]: training loss, generalization error and L² error
//! - [`optim`]: Adam, L-BFGS and the staged training schedule
//! - [`bounds`]: the computable error bound and its constants
//! - [`spectral`]: FFT, Sobolev norms and the ETDRK4 reference solver
//! - [`besov`]: Littlewood–Paley blocks, Besov norms, regularity monitors
//! - [`cli`]: experiment configuration and the command implementations

pub mod autodiff;
pub mod besov;
pub mod bounds;
pub mod cli;
pub mod error;
pub mod logreal;
pub mod loss;
pub mod network;
pub mod optim;
pub mod physics;
pub mod quadrature;
pub mod spectral;

pub use error::{Error, Result};
