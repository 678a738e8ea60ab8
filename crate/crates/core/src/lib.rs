//! Physics-informed diffusion in a scaled spectral latent space.
//!
//! PDE fields are encoded into truncated spectral coefficients divided by
//! data-driven per-mode standard deviations. A denoiser is trained on those
//! latents and sampling is steered towards observations and PDE consistency
//! by gradient guidance applied through a persistent, frequency-aware Adam
//! state.
//!
//! Module map:
//! - [`spectral`]: bases, transforms, truncation sets, scaling, encode/decode
//!   and spectral differential operators.
//! - [`residuals`]: Poisson, Helmholtz and Navier–Stokes residual functionals
//!   with exact gradients.
//! - [`datagen`]: Gaussian random fields, spectral solvers, a pseudo-spectral
//!   Navier–Stokes integrator and dataset files.
//! - [`denoiser`]: preconditioned residual MLP with hand-written reverse mode.
//! - [`training`]: latent caching and the denoising training loop.
//! - [`sampler`]: noise schedules, Euler steps, guidance and sampling runs.

pub mod datagen;
pub mod denoiser;
mod error;
pub mod field;
pub mod io;
mod linalg;
pub mod residuals;
pub mod sampler;
pub mod spectral;
pub mod training;

pub use error::{Error, Result};
pub use field::{Domain, FieldGrid};
