//! Geodesic shooting: forward Euler integration of the bandlimited EPDiff
//! equation and the displacement flow, plus the spatial realization used for
//! warping and Jacobian analysis.

use crate::error::{Error, Result};
use crate::freq::{
    band_vector_to_spatial, correlate, divergence, jacobian, matvec_convolve, tensor_product,
    FreqVectorField, SmoothingOperator,
};
use crate::spatial::{LabelMask, SpatialImage};

/// Velocities along a geodesic, sampled at `steps + 1` uniform times on [0, 1].
#[derive(Debug, Clone)]
pub struct GeodesicPath {
    steps: usize,
    velocities: Vec<FreqVectorField>,
}

impl GeodesicPath {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps as f64
    }

    pub fn velocities(&self) -> &[FreqVectorField] {
        &self.velocities
    }

    pub fn initial(&self) -> &FreqVectorField {
        &self.velocities[0]
    }

    pub fn terminal(&self) -> &FreqVectorField {
        &self.velocities[self.steps]
    }
}

/// Right-hand side of the bandlimited EPDiff equation:
/// `-K [ (Dv)^T ⋆ m + div(m ⊗ v) ]` with momentum `m = L v`.
pub fn epdiff_rhs(v: &FreqVectorField, op: &SmoothingOperator) -> Result<FreqVectorField> {
    op.spec().ensure_matches(v.spec(), "epdiff_rhs")?;
    let m = op.apply_l(v)?;
    let transport = correlate(&jacobian(v), &m)?;
    let compress = divergence(&tensor_product(&m, v)?);
    let sum = transport.add(&compress);
    Ok(op.apply_k(&sum)?.scaled(-1.0))
}

/// Forward Euler integration of EPDiff from `v0`, keeping every intermediate
/// velocity.
pub fn integrate_epdiff(
    v0: &FreqVectorField,
    op: &SmoothingOperator,
    steps: usize,
) -> Result<GeodesicPath> {
    if steps < 1 {
        return Err(Error::InvalidParameter("steps must be >= 1".into()));
    }
    let dt = 1.0 / steps as f64;
    let mut velocities = Vec::with_capacity(steps + 1);
    velocities.push(v0.clone());
    for step in 0..steps {
        let rhs = epdiff_rhs(&velocities[step], op)?;
        let mut next = velocities[step].clone();
        next.axpy(dt, &rhs);
        if !next.is_finite() {
            return Err(Error::IntegrationDiverged {
                step,
                context: "EPDiff velocity became non-finite".into(),
            });
        }
        velocities.push(next);
    }
    Ok(GeodesicPath { steps, velocities })
}

/// Forward Euler integration of the displacement flow
/// `du/dt = -v - (Du) * v` from `u(0) = 0`; returns `u(1)`.
pub fn integrate_diffeo(path: &GeodesicPath) -> Result<FreqVectorField> {
    let spec = path.initial().spec().clone();
    let dt = path.dt();
    let mut u = FreqVectorField::zeros(&spec);
    for step in 0..path.steps() {
        let v = &path.velocities()[step];
        let advect = matvec_convolve(&jacobian(&u), v)?;
        u.axpy(-dt, v);
        u.axpy(-dt, &advect);
        if !u.is_finite() {
            return Err(Error::IntegrationDiverged {
                step,
                context: "displacement became non-finite".into(),
            });
        }
    }
    Ok(u)
}

/// Spatial transformation `psi(x) = x + u(x)`, displacement in voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    dims: Vec<usize>,
    displacement: Vec<SpatialImage>,
}

impl DeformationField {
    pub fn identity(dims: &[usize]) -> Self {
        DeformationField {
            dims: dims.to_vec(),
            displacement: (0..dims.len()).map(|_| SpatialImage::zeros(dims)).collect(),
        }
    }

    pub fn from_displacement(displacement: Vec<SpatialImage>) -> Result<Self> {
        if displacement.is_empty() {
            return Err(Error::ShapeMismatch("empty displacement".into()));
        }
        let dims = displacement[0].dims().to_vec();
        if displacement.len() != dims.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} displacement channels for a {}-dimensional grid",
                displacement.len(),
                dims.len()
            )));
        }
        for c in &displacement {
            if c.dims() != dims {
                return Err(Error::ShapeMismatch("displacement channel grids differ".into()));
            }
        }
        Ok(DeformationField { dims, displacement })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn displacement(&self) -> &[SpatialImage] {
        &self.displacement
    }

    /// Map a voxel through the transformation.
    pub fn apply(&self, idx: &[usize], out: &mut [f64]) {
        let flat = {
            let mut f = 0usize;
            for axis in 0..self.dims.len() {
                f = f * self.dims[axis] + idx[axis];
            }
            f
        };
        for axis in 0..self.dims.len() {
            out[axis] = idx[axis] as f64 + self.displacement[axis].data()[flat];
        }
    }

    /// Largest displacement magnitude, for diagnostics.
    pub fn max_displacement(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for flat in 0..self.displacement[0].len() {
            let mut sq = 0.0;
            for c in &self.displacement {
                sq += c.data()[flat] * c.data()[flat];
            }
            worst = worst.max(sq);
        }
        worst.sqrt()
    }

    /// Numerical inverse displacement by fixed-point iteration
    /// `u_inv <- -u(x + u_inv)`, 20 sweeps. A verification utility, not part
    /// of the registration path.
    pub fn invert(&self) -> DeformationField {
        let d = self.dims.len();
        let mut inv: Vec<SpatialImage> =
            (0..d).map(|_| SpatialImage::zeros(&self.dims)).collect();
        let mut idx = vec![0usize; d];
        let mut pos = vec![0.0f64; d];
        for _ in 0..20 {
            let mut next: Vec<SpatialImage> =
                (0..d).map(|_| SpatialImage::zeros(&self.dims)).collect();
            for flat in 0..self.displacement[0].len() {
                crate::spatial::decode(&self.dims, flat, &mut idx);
                for axis in 0..d {
                    pos[axis] = idx[axis] as f64 + inv[axis].data()[flat];
                }
                for axis in 0..d {
                    next[axis].data_mut()[flat] = -self.displacement[axis].sample_linear(&pos);
                }
            }
            inv = next;
        }
        DeformationField {
            dims: self.dims.clone(),
            displacement: inv,
        }
    }
}

/// Realize a bandlimited displacement as a spatial transformation on `grid`.
pub fn to_deformation(u: &FreqVectorField, grid: &[usize]) -> Result<DeformationField> {
    let displacement = band_vector_to_spatial(u, grid)?;
    DeformationField::from_displacement(displacement)
}

/// Deform an image: `out(x) = img(psi(x))`, multilinear interpolation with
/// periodic wrap.
pub fn warp(img: &SpatialImage, psi: &DeformationField) -> Result<SpatialImage> {
    if img.dims() != psi.dims() {
        return Err(Error::ShapeMismatch(format!(
            "warp of image {:?} by transformation on {:?}",
            img.dims(),
            psi.dims()
        )));
    }
    let d = psi.dim();
    let mut out = SpatialImage::zeros(img.dims());
    let mut idx = vec![0usize; d];
    let mut pos = vec![0.0f64; d];
    for flat in 0..out.len() {
        crate::spatial::decode(img.dims(), flat, &mut idx);
        psi.apply(&idx, &mut pos);
        out.data_mut()[flat] = img.sample_linear(&pos);
    }
    Ok(out)
}

/// Deform a label mask with nearest-neighbour sampling.
pub fn warp_mask(mask: &LabelMask, psi: &DeformationField) -> Result<LabelMask> {
    if mask.dims() != psi.dims() {
        return Err(Error::ShapeMismatch(format!(
            "warp of mask {:?} by transformation on {:?}",
            mask.dims(),
            psi.dims()
        )));
    }
    let d = psi.dim();
    let mut out = LabelMask::zeros(mask.dims());
    let mut idx = vec![0usize; d];
    let mut pos = vec![0.0f64; d];
    for flat in 0..mask.labels().len() {
        crate::spatial::decode(mask.dims(), flat, &mut idx);
        psi.apply(&idx, &mut pos);
        out.labels_mut()[flat] = mask.at_rounded(&pos);
    }
    Ok(out)
}

/// Pointwise determinant of the central-difference Jacobian of `psi`.
/// Exactly 1 everywhere for the identity map.
pub fn det_jacobian(psi: &DeformationField) -> SpatialImage {
    let d = psi.dim();
    let dims = psi.dims();
    let mut out = SpatialImage::zeros(dims);
    let mut idx = vec![0usize; d];
    let mut probe = vec![0i64; d];
    let mut jac = [[0.0f64; 3]; 3];
    for flat in 0..out.len() {
        crate::spatial::decode(dims, flat, &mut idx);
        for row in 0..d {
            for col in 0..d {
                for (axis, &i) in idx.iter().enumerate() {
                    probe[axis] = i as i64;
                }
                probe[col] = idx[col] as i64 + 1;
                let fwd = psi.displacement()[row].at_wrapped(&probe);
                probe[col] = idx[col] as i64 - 1;
                let bwd = psi.displacement()[row].at_wrapped(&probe);
                jac[row][col] = 0.5 * (fwd - bwd) + if row == col { 1.0 } else { 0.0 };
            }
        }
        out.data_mut()[flat] = match d {
            2 => jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0],
            3 => {
                jac[0][0] * (jac[1][1] * jac[2][2] - jac[1][2] * jac[2][1])
                    - jac[0][1] * (jac[1][0] * jac[2][2] - jac[1][2] * jac[2][0])
                    + jac[0][2] * (jac[1][0] * jac[2][1] - jac[1][1] * jac[2][0])
            }
            _ => unreachable!("dimension checked at construction"),
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::freq::{make_operator, BandSpec};
    use num_complex::Complex64;

    fn spec8() -> BandSpec {
        BandSpec::square(2, 8, 32).unwrap()
    }

    #[test]
    fn zero_velocity_is_fixed_point() {
        let spec = spec8();
        let op = make_operator(3.0, 6, &spec).unwrap();
        let v0 = FreqVectorField::zeros(&spec);
        let rhs = epdiff_rhs(&v0, &op).unwrap();
        assert_eq!(rhs.norm_sq(), 0.0);
        let path = integrate_epdiff(&v0, &op, 10).unwrap();
        assert_eq!(path.velocities().len(), 11);
        for v in path.velocities() {
            assert_eq!(v.norm_sq(), 0.0);
        }
        let u = integrate_diffeo(&path).unwrap();
        assert_eq!(u.norm_sq(), 0.0);
    }

    #[test]
    fn dc_velocity_has_zero_rhs_and_translates() {
        let spec = spec8();
        let op = make_operator(3.0, 6, &spec).unwrap();
        let mut v0 = FreqVectorField::zeros(&spec);
        v0.component_mut(0).coeffs_mut()[spec.dc_index()] = Complex64::new(0.75, 0.0);
        let rhs = epdiff_rhs(&v0, &op).unwrap();
        assert!(rhs.norm_sq() < 1e-28);

        // constant-in-time DC velocity integrates to u(1) = -v exactly under Euler
        let path = integrate_epdiff(&v0, &op, 10).unwrap();
        let u = integrate_diffeo(&path).unwrap();
        let got = u.component(0).coeffs()[spec.dc_index()];
        assert!((got - Complex64::new(-0.75, 0.0)).norm() < 1e-12);
        // and realizes as a uniform voxel shift
        let psi = to_deformation(&u, &[32, 32]).unwrap();
        for &v in psi.displacement()[0].data() {
            assert!((v + 0.75).abs() < 1e-12);
        }
        for &v in psi.displacement()[1].data() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn steps_zero_rejected() {
        let spec = spec8();
        let op = make_operator(3.0, 6, &spec).unwrap();
        let v0 = FreqVectorField::zeros(&spec);
        assert!(integrate_epdiff(&v0, &op, 0).is_err());
    }

    #[test]
    fn identity_warp_and_unit_detjac() {
        let img = SpatialImage::from_fn(&[16, 16], |idx| (idx[0] as f64 * 0.3).sin() + 1.0);
        let psi = DeformationField::identity(&[16, 16]);
        let warped = warp(&img, &psi).unwrap();
        assert_eq!(warped, img);
        let dj = det_jacobian(&psi);
        for &v in dj.data() {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn integer_shift_warps_exactly_and_keeps_unit_detjac() {
        let img = SpatialImage::from_fn(&[8, 8], |idx| (idx[0] * 8 + idx[1]) as f64);
        let shift = DeformationField::from_displacement(vec![
            SpatialImage::from_fn(&[8, 8], |_| 2.0),
            SpatialImage::from_fn(&[8, 8], |_| 0.0),
        ])
        .unwrap();
        let warped = warp(&img, &shift).unwrap();
        let mut idx = [0usize; 2];
        for flat in 0..warped.len() {
            crate::spatial::decode(&[8, 8], flat, &mut idx);
            let want = img.at_wrapped(&[(idx[0] as i64) + 2, idx[1] as i64]);
            assert_eq!(warped.data()[flat], want);
        }
        let dj = det_jacobian(&shift);
        for &v in dj.data() {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn warp_shape_mismatch_rejected() {
        let img = SpatialImage::zeros(&[8, 8]);
        let psi = DeformationField::identity(&[16, 16]);
        assert!(warp(&img, &psi).is_err());
    }

    #[test]
    fn mask_warp_by_integer_shift_is_exact() {
        let mut mask = LabelMask::zeros(&[8, 8]);
        mask.labels_mut()[3 * 8 + 4] = 2;
        let shift = DeformationField::from_displacement(vec![
            SpatialImage::from_fn(&[8, 8], |_| 1.0),
            SpatialImage::from_fn(&[8, 8], |_| 0.0),
        ])
        .unwrap();
        let warped = warp_mask(&mask, &shift).unwrap();
        assert_eq!(warped.labels()[2 * 8 + 4], 2);
        assert_eq!(warped.labels()[3 * 8 + 4], 0);
    }
}
