//! Truncated-spectrum field types and frequency-domain operators.

mod field;
mod ops;
mod smoothing;
mod transform;

pub use field::{
    hermitian_inner, BandSpec, FreqScalarField, FreqTensorField, FreqVectorField,
};
pub use ops::{
    correlate, divergence, jacobian, matvec_convolve, tensor_product, truncated_convolve,
};
pub use smoothing::{make_operator, SmoothingOperator};
pub use transform::{
    band_to_spatial, band_vector_to_spatial, spatial_to_band, spatial_vector_to_band,
};
