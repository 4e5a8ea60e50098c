//! Frequency-domain operators on truncated spectra.
//!
//! The differential operators are diagonal multipliers: the central difference
//! `(f(x+1) - f(x-1)) / 2` on the unit-spacing periodic grid has frequency
//! response `i sin(2 pi xi / n)`. Products of spatial fields become
//! convolutions of coefficient blocks; these are evaluated as direct sums over
//! the band, which is a zero-padded linear convolution by construction (no
//! wrap-around can occur), truncated back to the retained set.

use num_complex::Complex64;

use crate::error::Result;
use crate::freq::field::{BandSpec, FreqScalarField, FreqTensorField, FreqVectorField};

/// Central-difference multipliers `i sin(2 pi xi / grid)` for one axis,
/// indexed by the storage index on that axis.
fn diff_multipliers(spec: &BandSpec, axis: usize) -> Vec<f64> {
    let b = spec.band()[axis];
    let n = spec.grid()[axis] as f64;
    (0..b)
        .map(|i| (std::f64::consts::TAU * spec.frequency(axis, i) as f64 / n).sin())
        .collect()
}

fn decode_table(spec: &BandSpec) -> Vec<[usize; 3]> {
    let d = spec.dim();
    let mut idx = vec![0usize; d];
    let mut table = vec![[0usize; 3]; spec.band_len()];
    for (flat, row) in table.iter_mut().enumerate() {
        spec.decode(flat, &mut idx);
        row[..d].copy_from_slice(&idx);
    }
    table
}

/// Truncated convolution of two coefficient blocks:
/// `c(xi) = sum_eta a(eta) b(xi - eta)` over retained indices, output
/// restricted to the band with the forced hyperplanes zeroed. Equals the
/// band-truncation of the transform of the pointwise spatial product.
pub fn truncated_convolve(
    a: &FreqScalarField,
    b: &FreqScalarField,
) -> Result<FreqScalarField> {
    a.spec().ensure_matches(b.spec(), "truncated_convolve")?;
    let spec = a.spec();
    convolve_into(spec, &decode_table(spec), a, b, 1.0)
}

/// Shared direct-sum kernel; `scale` premultiplies the accumulated sum.
fn convolve_into(
    spec: &BandSpec,
    table: &[[usize; 3]],
    a: &FreqScalarField,
    b: &FreqScalarField,
    scale: f64,
) -> Result<FreqScalarField> {
    let d = spec.dim();
    let band = spec.band();
    let mut half = [0i64; 3];
    for axis in 0..d {
        half[axis] = (band[axis] / 2) as i64;
    }
    let n = spec.band_len();
    let mut out = vec![Complex64::ZERO; n];

    // per-axis summation range: j such that the difference index
    // m = o - j + band/2 stays inside [1, band) (row 0 of either operand is
    // forced zero, so it never contributes)
    let range = |o: usize, axis: usize| -> (usize, usize) {
        let lo = (o as i64 + half[axis] + 1 - band[axis] as i64).max(1) as usize;
        let hi = ((o as i64 + half[axis] - 1).min(band[axis] as i64 - 1) + 1) as usize;
        (lo, hi.max(lo))
    };

    match d {
        2 => {
            let (b0, b1) = (band[0], band[1]);
            let ac = a.coeffs();
            let bc = b.coeffs();
            for o0 in 1..b0 {
                let (lo0, hi0) = range(o0, 0);
                for o1 in 1..b1 {
                    let (lo1, hi1) = range(o1, 1);
                    let mut acc = Complex64::ZERO;
                    for j0 in lo0..hi0 {
                        let m0 = (o0 as i64 - j0 as i64 + half[0]) as usize;
                        let arow = j0 * b1;
                        let brow = m0 * b1;
                        for j1 in lo1..hi1 {
                            let aj = ac[arow + j1];
                            if aj != Complex64::ZERO {
                                let m1 = (o1 as i64 - j1 as i64 + half[1]) as usize;
                                acc += aj * bc[brow + m1];
                            }
                        }
                    }
                    out[o0 * b1 + o1] = acc * scale;
                }
            }
        }
        _ => {
            for (oflat, oidx) in table.iter().enumerate() {
                // outputs on forced hyperplanes stay zero
                if oidx[..d].iter().any(|&i| i == 0) {
                    continue;
                }
                let mut acc = Complex64::ZERO;
                'inner: for (jflat, jidx) in table.iter().enumerate() {
                    let aj = a.coeffs()[jflat];
                    if aj == Complex64::ZERO {
                        continue;
                    }
                    // storage index of (xi - eta): o - j + band/2 per axis
                    let mut mflat = 0usize;
                    for axis in 0..d {
                        let m = oidx[axis] as i64 - jidx[axis] as i64 + half[axis];
                        if m < 0 || m >= band[axis] as i64 {
                            continue 'inner;
                        }
                        mflat = mflat * band[axis] + m as usize;
                    }
                    acc += aj * b.coeffs()[mflat];
                }
                out[oflat] = acc * scale;
            }
        }
    }
    FreqScalarField::from_coeffs(spec, out)
}

/// `(j, k)` entry is the axis-`k` central difference of component `j`.
pub fn jacobian(v: &FreqVectorField) -> FreqTensorField {
    let spec = v.spec();
    let d = spec.dim();
    let mults: Vec<Vec<f64>> = (0..d).map(|axis| diff_multipliers(spec, axis)).collect();
    let table = decode_table(spec);

    let mut out = FreqTensorField::zeros(spec);
    for j in 0..d {
        for k in 0..d {
            let entry = out.entry_mut(j, k);
            for (flat, idx) in table.iter().enumerate() {
                let m = mults[k][idx[k]];
                entry.coeffs_mut()[flat] =
                    v.component(j).coeffs()[flat] * Complex64::new(0.0, m);
            }
        }
    }
    out
}

/// Contraction `sum_k D_k M(j, k)`: the divergence of each row of `M`.
pub fn divergence(m: &FreqTensorField) -> FreqVectorField {
    let spec = m.spec().clone();
    let d = spec.dim();
    let mults: Vec<Vec<f64>> = (0..d).map(|axis| diff_multipliers(&spec, axis)).collect();
    let table = decode_table(&spec);

    let mut out = FreqVectorField::zeros(&spec);
    for j in 0..d {
        let comp = out.component_mut(j);
        for k in 0..d {
            let entry = m.entry(j, k);
            for (flat, idx) in table.iter().enumerate() {
                let mul = mults[k][idx[k]];
                comp.coeffs_mut()[flat] += entry.coeffs()[flat] * Complex64::new(0.0, mul);
            }
        }
    }
    out
}

/// Frequency form of the outer product `(m ⊗ v)(j, k) = m_j v_k`.
pub fn tensor_product(m: &FreqVectorField, v: &FreqVectorField) -> Result<FreqTensorField> {
    m.spec().ensure_matches(v.spec(), "tensor_product")?;
    let spec = m.spec();
    let table = decode_table(spec);
    let d = spec.dim();
    let mut out = FreqTensorField::zeros(spec);
    for j in 0..d {
        for k in 0..d {
            *out.entry_mut(j, k) =
                convolve_into(spec, &table, m.component(j), v.component(k), 1.0)?;
        }
    }
    Ok(out)
}

/// Frequency realization of the transposed pointwise product `A(x)^T m(x)`:
/// component `j` is `sum_k conv(A(k, j), m_k)`.
///
/// For coefficient blocks of real spatial fields this coincides with the
/// conjugate auto-correlation of `A` with `m`, since `conj(A(eta)) =
/// A(-eta)` turns the correlation sum into the convolution above.
pub fn correlate(a: &FreqTensorField, m: &FreqVectorField) -> Result<FreqVectorField> {
    a.spec().ensure_matches(m.spec(), "correlate")?;
    let spec = m.spec().clone();
    let table = decode_table(&spec);
    let d = spec.dim();
    let mut out = FreqVectorField::zeros(&spec);
    for j in 0..d {
        for k in 0..d {
            let term = convolve_into(&spec, &table, a.entry(k, j), m.component(k), 1.0)?;
            out.component_mut(j).axpy(1.0, &term);
        }
    }
    Ok(out)
}

/// Matrix-vector contraction with plain (untransposed) entries:
/// component `j` is `sum_k conv(M(j, k), v_k)`. Used by the flow equation's
/// `Du * v` term.
pub fn matvec_convolve(m: &FreqTensorField, v: &FreqVectorField) -> Result<FreqVectorField> {
    m.spec().ensure_matches(v.spec(), "matvec_convolve")?;
    let spec = v.spec().clone();
    let table = decode_table(&spec);
    let d = spec.dim();
    let mut out = FreqVectorField::zeros(&spec);
    for j in 0..d {
        for k in 0..d {
            let term = convolve_into(&spec, &table, m.entry(j, k), v.component(k), 1.0)?;
            out.component_mut(j).axpy(1.0, &term);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::freq::field::BandSpec;
    use num_complex::Complex64;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian_scalar(spec: &BandSpec, rng: &mut ChaCha8Rng) -> FreqScalarField {
        let coeffs: Vec<Complex64> = (0..spec.band_len())
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        FreqScalarField::from_coeffs(spec, coeffs).unwrap().symmetrize()
    }

    fn dc_only(spec: &BandSpec, value: f64) -> FreqScalarField {
        let mut f = FreqScalarField::zeros(spec);
        f.coeffs_mut()[spec.dc_index()] = Complex64::new(value, 0.0);
        f
    }

    #[test]
    fn dc_unit_is_convolution_identity() {
        let spec = BandSpec::square(2, 8, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_hermitian_scalar(&spec, &mut rng);
        let one = dc_only(&spec, 1.0);
        let c = truncated_convolve(&a, &one).unwrap();
        for (x, y) in c.coeffs().iter().zip(a.coeffs()) {
            assert!((x - y).norm() < 1e-14);
        }
    }

    #[test]
    fn zero_operand_gives_zero() {
        let spec = BandSpec::square(2, 8, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_hermitian_scalar(&spec, &mut rng);
        let zero = FreqScalarField::zeros(&spec);
        let c = truncated_convolve(&zero, &a).unwrap();
        assert_eq!(c.norm_sq(), 0.0);
    }

    #[test]
    fn convolve_spec_mismatch_rejected() {
        let s1 = BandSpec::square(2, 8, 32).unwrap();
        let s2 = BandSpec::square(2, 8, 16).unwrap();
        let a = FreqScalarField::zeros(&s1);
        let b = FreqScalarField::zeros(&s2);
        assert!(truncated_convolve(&a, &b).is_err());
    }

    #[test]
    fn jacobian_of_constant_vanishes() {
        let spec = BandSpec::square(2, 8, 16).unwrap();
        let mut v = FreqVectorField::zeros(&spec);
        v.component_mut(0).coeffs_mut()[spec.dc_index()] = Complex64::new(2.0, 0.0);
        v.component_mut(1).coeffs_mut()[spec.dc_index()] = Complex64::new(-1.0, 0.0);
        let j = jacobian(&v);
        for r in 0..2 {
            for c in 0..2 {
                assert_eq!(j.entry(r, c).norm_sq(), 0.0);
            }
        }
    }

    #[test]
    fn jacobian_multiplier_on_single_harmonic() {
        // component 0 carries the (1, 0) harmonic on a 16-grid
        let spec = BandSpec::square(2, 8, 16).unwrap();
        let mut v = FreqVectorField::zeros(&spec);
        let plus = spec.encode(&[5, 4]);
        let minus = spec.encode(&[3, 4]);
        v.component_mut(0).coeffs_mut()[plus] = Complex64::new(0.5, 0.0);
        v.component_mut(0).coeffs_mut()[minus] = Complex64::new(0.5, 0.0);
        let j = jacobian(&v);
        let want = (std::f64::consts::TAU / 16.0).sin();
        let got = j.entry(0, 0).coeffs()[plus];
        assert!((got - Complex64::new(0.0, 0.5 * want)).norm() < 1e-15);
        // axis-1 derivative is zero for this harmonic
        assert_eq!(j.entry(0, 1).norm_sq(), 0.0);
    }

    #[test]
    fn divergence_of_dc_tensor_vanishes() {
        let spec = BandSpec::square(2, 8, 16).unwrap();
        let mut m = FreqTensorField::zeros(&spec);
        for r in 0..2 {
            for c in 0..2 {
                m.entry_mut(r, c).coeffs_mut()[spec.dc_index()] = Complex64::new(1.0, 0.0);
            }
        }
        let div = divergence(&m);
        assert_eq!(div.norm_sq(), 0.0);
    }

    #[test]
    fn tensor_product_with_dc_ones_copies_columns() {
        let spec = BandSpec::square(2, 8, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let v = FreqVectorField::from_components(vec![
            random_hermitian_scalar(&spec, &mut rng),
            random_hermitian_scalar(&spec, &mut rng),
        ])
        .unwrap();
        let m = FreqVectorField::from_components(vec![dc_only(&spec, 1.0), dc_only(&spec, 1.0)])
            .unwrap();
        let t = tensor_product(&m, &v).unwrap();
        for j in 0..2 {
            for k in 0..2 {
                for (x, y) in t.entry(j, k).coeffs().iter().zip(v.component(k).coeffs()) {
                    assert!((x - y).norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn correlate_with_zeros() {
        let spec = BandSpec::square(2, 8, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let v = FreqVectorField::from_components(vec![
            random_hermitian_scalar(&spec, &mut rng),
            random_hermitian_scalar(&spec, &mut rng),
        ])
        .unwrap();
        let zero_t = FreqTensorField::zeros(&spec);
        assert_eq!(correlate(&zero_t, &v).unwrap().norm_sq(), 0.0);
        let t = jacobian(&v);
        let zero_v = FreqVectorField::zeros(&spec);
        assert_eq!(correlate(&t, &zero_v).unwrap().norm_sq(), 0.0);
    }

    #[test]
    fn operators_preserve_hermitian_symmetry() {
        let spec = BandSpec::square(2, 8, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = random_hermitian_scalar(&spec, &mut rng);
        let b = random_hermitian_scalar(&spec, &mut rng);
        let c = truncated_convolve(&a, &b).unwrap();
        assert!(c.hermitian_residual() < 1e-14);

        let v = FreqVectorField::from_components(vec![a, b]).unwrap();
        assert!(jacobian(&v).hermitian_residual() < 1e-14);
        let t = tensor_product(&v, &v).unwrap();
        assert!(t.hermitian_residual() < 1e-14);
        assert!(divergence(&t).hermitian_residual() < 1e-14);
        assert!(correlate(&t, &v).unwrap().hermitian_residual() < 1e-14);
    }
}
