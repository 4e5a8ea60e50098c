//! Bridges between spatial grids and the truncated spectrum.
//!
//! DC convention: the forward transform carries the `1/N` factor, the inverse
//! carries none, so a constant spatial field `c` has DC coefficient `c` and
//! the convolution identity is the DC-only field of value 1.

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::freq::field::{BandSpec, FreqScalarField, FreqVectorField};
use crate::spatial::SpatialImage;

thread_local! {
    // rustfft caches plans per length inside the planner
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// In-place complex FFT along every axis of a row-major buffer.
pub(crate) fn fft_nd(data: &mut [Complex64], dims: &[usize], inverse: bool) {
    let d = dims.len();
    let total: usize = dims.iter().product();
    debug_assert_eq!(data.len(), total);
    for axis in 0..d {
        let n = dims[axis];
        let fft = PLANNER.with(|p| {
            let mut planner = p.borrow_mut();
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        });
        // stride of the axis and size of the blocks it spans
        let inner: usize = dims[axis + 1..].iter().product();
        let outer: usize = dims[..axis].iter().product();
        if inner == 1 {
            // contiguous lines: rustfft processes the buffer in chunks of n
            for block in 0..outer {
                let start = block * n;
                fft.process(&mut data[start..start + n]);
            }
        } else {
            let mut line = vec![Complex64::ZERO; n];
            for block in 0..outer {
                for offset in 0..inner {
                    let base = block * n * inner + offset;
                    for (i, slot) in line.iter_mut().enumerate() {
                        *slot = data[base + i * inner];
                    }
                    fft.process(&mut line);
                    for (i, slot) in line.iter().enumerate() {
                        data[base + i * inner] = *slot;
                    }
                }
            }
        }
    }
}

/// Map a signed band frequency to the full-spectrum FFT index.
fn full_index(xi: i64, n: usize) -> usize {
    xi.rem_euclid(n as i64) as usize
}

/// Forward transform and truncation to the centered band.
///
/// The output is symmetrized exactly, so real inputs give bit-exact Hermitian
/// coefficient blocks.
pub fn spatial_to_band(img: &SpatialImage, spec: &BandSpec) -> Result<FreqScalarField> {
    if img.dims() != spec.grid() {
        return Err(Error::GridMismatch(format!(
            "image {:?} vs spec grid {:?}",
            img.dims(),
            spec.grid()
        )));
    }
    let mut buf: Vec<Complex64> = img.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_nd(&mut buf, spec.grid(), false);
    let scale = 1.0 / spec.grid_len() as f64;

    let d = spec.dim();
    let mut coeffs = vec![Complex64::ZERO; spec.band_len()];
    let mut idx = vec![0usize; d];
    for (flat, c) in coeffs.iter_mut().enumerate() {
        spec.decode(flat, &mut idx);
        let mut full = 0usize;
        for axis in 0..d {
            let xi = spec.frequency(axis, idx[axis]);
            full = full * spec.grid()[axis] + full_index(xi, spec.grid()[axis]);
        }
        *c = buf[full] * scale;
    }
    Ok(FreqScalarField::from_coeffs(spec, coeffs)?.symmetrize())
}

/// Forward transform of a `d`-component spatial vector field.
pub fn spatial_vector_to_band(
    components: &[SpatialImage],
    spec: &BandSpec,
) -> Result<FreqVectorField> {
    if components.len() != spec.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{} spatial components for dimension {}",
            components.len(),
            spec.dim()
        )));
    }
    let fields = components
        .iter()
        .map(|c| spatial_to_band(c, spec))
        .collect::<Result<Vec<_>>>()?;
    FreqVectorField::from_components(fields)
}

/// Zero-pad the band into a full spectrum on `grid` and invert.
///
/// For Hermitian inputs the imaginary residue of the inverse transform is at
/// rounding level; it is discarded.
pub fn band_to_spatial(field: &FreqScalarField, grid: &[usize]) -> Result<SpatialImage> {
    let spec = field.spec();
    let d = spec.dim();
    if grid.len() != d {
        return Err(Error::GridMismatch(format!(
            "target grid rank {} vs dimension {d}",
            grid.len()
        )));
    }
    for axis in 0..d {
        if grid[axis] < spec.band()[axis] {
            return Err(Error::GridMismatch(format!(
                "target grid {} smaller than band {} on axis {axis}",
                grid[axis],
                spec.band()[axis]
            )));
        }
    }
    let total: usize = grid.iter().product();
    let mut buf = vec![Complex64::ZERO; total];
    let mut idx = vec![0usize; d];
    for (flat, &c) in field.coeffs().iter().enumerate() {
        spec.decode(flat, &mut idx);
        let mut full = 0usize;
        for axis in 0..d {
            let xi = spec.frequency(axis, idx[axis]);
            full = full * grid[axis] + full_index(xi, grid[axis]);
        }
        buf[full] = c;
    }
    fft_nd(&mut buf, grid, true);
    SpatialImage::from_data(grid, buf.into_iter().map(|c| c.re).collect())
}

/// Inverse transform of every component of a vector field.
pub fn band_vector_to_spatial(field: &FreqVectorField, grid: &[usize]) -> Result<Vec<SpatialImage>> {
    field
        .components()
        .iter()
        .map(|c| band_to_spatial(c, grid))
        .collect()
}
