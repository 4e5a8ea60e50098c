//! Truncated-spectrum field types.
//!
//! A field stores the centered low-frequency block of a discrete Fourier
//! transform: per axis the signed integer frequencies `{-band/2, ..,
//! band/2 - 1}`, laid out row-major with storage index `i = xi + band/2`.
//! The `-band/2` hyperplanes have no conjugate mirror inside the block, so
//! they are forced to zero on construction; every operator in this crate
//! preserves that convention, which keeps Hermitian symmetry exact.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Band and grid geometry shared by all frequency-domain values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandSpec {
    band: Vec<usize>,
    grid: Vec<usize>,
}

impl BandSpec {
    /// Per-axis band and grid sizes. Bands must be even, at least 2, and no
    /// larger than the grid; 2 and 3 spatial dimensions are supported.
    pub fn new(band: &[usize], grid: &[usize]) -> Result<Self> {
        let d = band.len();
        if d != grid.len() {
            return Err(Error::InvalidParameter(format!(
                "band rank {} != grid rank {}",
                d,
                grid.len()
            )));
        }
        if !(2..=3).contains(&d) {
            return Err(Error::InvalidParameter(format!(
                "spatial dimension must be 2 or 3, got {d}"
            )));
        }
        for axis in 0..d {
            let (b, g) = (band[axis], grid[axis]);
            if b < 2 || b % 2 != 0 {
                return Err(Error::InvalidParameter(format!(
                    "band size must be even and >= 2, got {b} on axis {axis}"
                )));
            }
            if b > g {
                return Err(Error::InvalidParameter(format!(
                    "band {b} exceeds grid {g} on axis {axis}"
                )));
            }
        }
        Ok(BandSpec {
            band: band.to_vec(),
            grid: grid.to_vec(),
        })
    }

    /// Isotropic spec: the same band and grid size on every axis.
    pub fn square(dim: usize, band: usize, grid: usize) -> Result<Self> {
        BandSpec::new(&vec![band; dim], &vec![grid; dim])
    }

    pub fn dim(&self) -> usize {
        self.band.len()
    }

    pub fn band(&self) -> &[usize] {
        &self.band
    }

    pub fn grid(&self) -> &[usize] {
        &self.grid
    }

    /// Number of retained coefficients, `prod(band)`.
    pub fn band_len(&self) -> usize {
        self.band.iter().product()
    }

    /// Number of spatial voxels, `prod(grid)`.
    pub fn grid_len(&self) -> usize {
        self.grid.iter().product()
    }

    /// Decode a flat storage index into per-axis indices (row-major).
    pub fn decode(&self, mut flat: usize, out: &mut [usize]) {
        for axis in (0..self.dim()).rev() {
            out[axis] = flat % self.band[axis];
            flat /= self.band[axis];
        }
    }

    /// Encode per-axis indices into the flat storage index.
    pub fn encode(&self, idx: &[usize]) -> usize {
        let mut flat = 0;
        for axis in 0..self.dim() {
            flat = flat * self.band[axis] + idx[axis];
        }
        flat
    }

    /// Signed frequency on `axis` for storage index `i`: `xi = i - band/2`.
    pub fn frequency(&self, axis: usize, i: usize) -> i64 {
        i as i64 - (self.band[axis] / 2) as i64
    }

    /// True when the storage index touches an unpaired `-band/2` hyperplane.
    pub fn is_forced_zero(&self, idx: &[usize]) -> bool {
        idx.iter().any(|&i| i == 0)
    }

    /// Index of the conjugate partner (`xi -> -xi`), or `None` on a forced
    /// hyperplane.
    pub fn mirror(&self, idx: &[usize], out: &mut [usize]) -> bool {
        for axis in 0..self.dim() {
            if idx[axis] == 0 {
                return false;
            }
            out[axis] = self.band[axis] - idx[axis];
        }
        true
    }

    /// Flat index of the DC (zero-frequency) coefficient.
    pub fn dc_index(&self) -> usize {
        let idx: Vec<usize> = self.band.iter().map(|b| b / 2).collect();
        self.encode(&idx)
    }

    pub(crate) fn ensure_matches(&self, other: &BandSpec, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::SpecMismatch(format!(
                "{what}: {:?}/{:?} vs {:?}/{:?}",
                self.band, self.grid, other.band, other.grid
            )));
        }
        Ok(())
    }
}

/// One scalar channel of truncated Fourier coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqScalarField {
    spec: BandSpec,
    coeffs: Vec<Complex64>,
}

impl FreqScalarField {
    pub fn zeros(spec: &BandSpec) -> Self {
        FreqScalarField {
            spec: spec.clone(),
            coeffs: vec![Complex64::ZERO; spec.band_len()],
        }
    }

    /// Wrap raw coefficients, zeroing the forced hyperplanes.
    pub fn from_coeffs(spec: &BandSpec, mut coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != spec.band_len() {
            return Err(Error::ShapeMismatch(format!(
                "coefficient count {} != band volume {}",
                coeffs.len(),
                spec.band_len()
            )));
        }
        project_forced_zero(spec, &mut coeffs);
        Ok(FreqScalarField {
            spec: spec.clone(),
            coeffs,
        })
    }

    pub fn spec(&self) -> &BandSpec {
        &self.spec
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Project onto the exactly-Hermitian subspace:
    /// `c(xi) <- (c(xi) + conj(c(-xi))) / 2`, forced hyperplanes zeroed.
    pub fn symmetrize(&self) -> Self {
        let spec = &self.spec;
        let d = spec.dim();
        let mut out = vec![Complex64::ZERO; self.coeffs.len()];
        let mut idx = vec![0usize; d];
        let mut mir = vec![0usize; d];
        for flat in 0..self.coeffs.len() {
            spec.decode(flat, &mut idx);
            if spec.mirror(&idx, &mut mir) {
                let m = spec.encode(&mir);
                out[flat] = (self.coeffs[flat] + self.coeffs[m].conj()) * 0.5;
            }
        }
        FreqScalarField {
            spec: spec.clone(),
            coeffs: out,
        }
    }

    /// Max |c(xi) - conj(c(-xi))| over all retained pairs.
    pub fn hermitian_residual(&self) -> f64 {
        let spec = &self.spec;
        let d = spec.dim();
        let mut idx = vec![0usize; d];
        let mut mir = vec![0usize; d];
        let mut worst: f64 = 0.0;
        for flat in 0..self.coeffs.len() {
            spec.decode(flat, &mut idx);
            if spec.mirror(&idx, &mut mir) {
                let m = spec.encode(&mir);
                worst = worst.max((self.coeffs[flat] - self.coeffs[m].conj()).norm());
            } else {
                worst = worst.max(self.coeffs[flat].norm());
            }
        }
        worst
    }

    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn scale(&mut self, s: f64) {
        for c in &mut self.coeffs {
            *c *= s;
        }
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &FreqScalarField) {
        debug_assert_eq!(self.spec, other.spec);
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += s * b;
        }
    }
}

pub(crate) fn project_forced_zero(spec: &BandSpec, coeffs: &mut [Complex64]) {
    let d = spec.dim();
    let mut idx = vec![0usize; d];
    for (flat, c) in coeffs.iter_mut().enumerate() {
        spec.decode(flat, &mut idx);
        if spec.is_forced_zero(&idx) {
            *c = Complex64::ZERO;
        }
    }
}

/// A velocity/displacement field: one scalar channel per spatial axis.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqVectorField {
    components: Vec<FreqScalarField>,
}

impl FreqVectorField {
    pub fn zeros(spec: &BandSpec) -> Self {
        FreqVectorField {
            components: (0..spec.dim()).map(|_| FreqScalarField::zeros(spec)).collect(),
        }
    }

    pub fn from_components(components: Vec<FreqScalarField>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::ShapeMismatch("vector field with no components".into()));
        }
        let spec = components[0].spec().clone();
        if components.len() != spec.dim() {
            return Err(Error::ShapeMismatch(format!(
                "{} components for a {}-dimensional spec",
                components.len(),
                spec.dim()
            )));
        }
        for c in &components[1..] {
            spec.ensure_matches(c.spec(), "vector field components")?;
        }
        Ok(FreqVectorField { components })
    }

    pub fn spec(&self) -> &BandSpec {
        self.components[0].spec()
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, j: usize) -> &FreqScalarField {
        &self.components[j]
    }

    pub fn component_mut(&mut self, j: usize) -> &mut FreqScalarField {
        &mut self.components[j]
    }

    pub fn components(&self) -> &[FreqScalarField] {
        &self.components
    }

    pub fn symmetrize(&self) -> Self {
        FreqVectorField {
            components: self.components.iter().map(|c| c.symmetrize()).collect(),
        }
    }

    pub fn hermitian_residual(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.hermitian_residual())
            .fold(0.0, f64::max)
    }

    pub fn norm_sq(&self) -> f64 {
        self.components.iter().map(|c| c.norm_sq()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().all(|c| c.is_finite())
    }

    pub fn scale(&mut self, s: f64) {
        for c in &mut self.components {
            c.scale(s);
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.scale(s);
        out
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &FreqVectorField) {
        for (a, b) in self.components.iter_mut().zip(&other.components) {
            a.axpy(s, b);
        }
    }

    pub fn add(&self, other: &FreqVectorField) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &FreqVectorField) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }
}

/// Real part of the Hermitian inner product `sum_j sum_xi a conj(b)` over the
/// full retained band of every component.
pub fn hermitian_inner(a: &FreqVectorField, b: &FreqVectorField) -> f64 {
    a.components()
        .iter()
        .zip(b.components())
        .map(|(ca, cb)| {
            ca.coeffs()
                .iter()
                .zip(cb.coeffs())
                .map(|(x, y)| (x * y.conj()).re)
                .sum::<f64>()
        })
        .sum()
}

/// A `d x d` matrix of scalar fields, entry `(j, k)` at row `j`, column `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqTensorField {
    dim: usize,
    entries: Vec<FreqScalarField>,
}

impl FreqTensorField {
    pub fn zeros(spec: &BandSpec) -> Self {
        let d = spec.dim();
        FreqTensorField {
            dim: d,
            entries: (0..d * d).map(|_| FreqScalarField::zeros(spec)).collect(),
        }
    }

    pub fn spec(&self) -> &BandSpec {
        self.entries[0].spec()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, row: usize, col: usize) -> &FreqScalarField {
        &self.entries[row * self.dim + col]
    }

    pub fn entry_mut(&mut self, row: usize, col: usize) -> &mut FreqScalarField {
        &mut self.entries[row * self.dim + col]
    }

    pub fn hermitian_residual(&self) -> f64 {
        self.entries
            .iter()
            .map(|c| c.hermitian_residual())
            .fold(0.0, f64::max)
    }
}
