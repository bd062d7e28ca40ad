//! Variable selection for sparse additive signals observed in a Gaussian
//! sequence model.
//!
//! Each of `d` univariate components is observed through its Fourier
//! coefficients, `X[j,k] = eta_j * theta[j,k] + eps * xi[j,k]`, and only `s`
//! of the components are active. The crate provides:
//!
//! - [`ellipsoids`]: the quartic extreme problem on Sobolev and analytic
//!   ellipsoids, the function `u_eps(r)` and its inverse (detection boundaries).
//! - [`signal`]: sparsity patterns, extremal signals and noisy observations.
//! - [`selectors`]: almost-full and exact thresholding selectors, the Lepski
//!   adaptive selector and the max-over-grid adaptive exact selector.
//! - [`risk`]: Monte Carlo Hamming risk, phase sweeps, the Bayes lower-bound
//!   simulator and tail diagnostics.

pub mod ellipsoids;
pub mod error;
pub mod risk;
pub mod seeding;
pub mod selectors;
pub mod signal;

pub use ellipsoids::{ExtremalProfile, FunctionSpace, SpaceKind};
pub use error::{Error, Result};
pub use risk::{ExperimentSpec, RiskReport, SelectorKind};
pub use selectors::{Grid, SelectionResult, SelectorConfig};
pub use signal::{ObservationMatrix, SignMode, SignalMatrix, SparsityPattern};

/// Version of this library, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
