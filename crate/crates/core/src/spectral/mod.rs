//! Spectral bases, transforms, truncation sets, data-driven scaling and the
//! encode/decode pair between fields and latents.

mod basis;
mod codec;
mod ops;
mod transform;
mod truncation;

pub use basis::{BasisDescriptor, BasisKind, Mode};
pub use codec::{fit_scales, ChannelSpec, Codec, ScaleVector, SpectralLatent, DEFAULT_EPS_FLOOR};
pub use ops::{
    biot_savart, extend_to_zero_boundary, gradient_multiplier, lemma1_check, restrict_interior,
    spectral_laplacian, Lemma1Report,
};
pub use transform::{
    forward_transform, inverse_transform, Coefficients, FourierTransform, SineTransform,
    SpectralTransform,
};
pub use truncation::{TruncationKind, TruncationSet};
