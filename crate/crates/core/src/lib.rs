//! Numerical laboratory for deep residual networks at initialization.
//!
//! The recurrence studied throughout is
//!
//! ```text
//! h_0 = A x,   h_{k+1} = h_k + α_L V_{k+1} g(h_k, θ_{k+1}),   F(x) = B h_L
//! ```
//!
//! with `α_L = L^{-β}`. Modules are layered bottom-up:
//!
//! - [`rng`]: seed derivation and the deterministic random stream.
//! - [`init`]: i.i.d., smooth Gaussian-process and fractional-Gaussian-noise
//!   weight families, plus the [`init::LayerSource`] abstraction used to feed
//!   layers to the network without always materializing the full tape.
//! - [`model`]: the three residual architectures and the forward pass.
//! - [`sensitivity`]: forward-mode and reverse-mode gradient recursions.
//! - [`continuum`]: Euler–Maruyama / Euler integrators and convergence fits.
//! - [`stats`]: Monte Carlo drivers, bound checks, tests and the heatmap sweep.

pub mod continuum;
pub mod error;
pub mod init;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod sensitivity;
pub mod stats;

pub use error::{Error, Result};
pub use init::{
    build_weight_tape, weight_source, Distribution, DistributionSpec, FbmNormalization, FbmSpec,
    GpSpec, InitScheme, LayerParams, LayerSource, WeightSource, WeightTape,
};
pub use model::{forward, Activation, Arch, ModelSpec, Projections, ScalingRule, Trajectory};
pub use rng::{derive_seed, Stream};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
