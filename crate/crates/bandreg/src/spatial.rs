//! Real-valued scalar fields and label masks on a regular periodic grid.

use crate::error::{Error, Result};

/// Row-major real scalar field (image, DetJac map, displacement channel).
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialImage {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl SpatialImage {
    pub fn zeros(dims: &[usize]) -> Self {
        SpatialImage {
            dims: dims.to_vec(),
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn from_data(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "image payload {} != grid volume {n}",
                data.len()
            )));
        }
        Ok(SpatialImage {
            dims: dims.to_vec(),
            data,
        })
    }

    /// Build by evaluating `f` at every voxel (indices in row-major order).
    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut img = SpatialImage::zeros(dims);
        let d = dims.len();
        let mut idx = vec![0usize; d];
        for flat in 0..img.data.len() {
            decode(dims, flat, &mut idx);
            img.data[flat] = f(&idx);
        }
        img
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Periodic sample at integer indices (wrapped per axis).
    pub fn at_wrapped(&self, idx: &[i64]) -> f64 {
        let mut flat = 0usize;
        for axis in 0..self.dims.len() {
            let n = self.dims[axis] as i64;
            let i = idx[axis].rem_euclid(n) as usize;
            flat = flat * self.dims[axis] + i;
        }
        self.data[flat]
    }

    /// Multilinear interpolation at a real-valued position, periodic wrap.
    pub fn sample_linear(&self, pos: &[f64]) -> f64 {
        let d = self.dims.len();
        debug_assert!(d <= 3);
        let mut base = [0i64; 3];
        let mut frac = [0.0f64; 3];
        for axis in 0..d {
            let f = pos[axis].floor();
            base[axis] = f as i64;
            frac[axis] = pos[axis] - f;
        }
        let mut acc = 0.0;
        let mut corner = [0i64; 3];
        for mask in 0..(1usize << d) {
            let mut w = 1.0;
            for axis in 0..d {
                if mask & (1 << axis) != 0 {
                    corner[axis] = base[axis] + 1;
                    w *= frac[axis];
                } else {
                    corner[axis] = base[axis];
                    w *= 1.0 - frac[axis];
                }
            }
            if w != 0.0 {
                acc += w * self.at_wrapped(&corner[..d]);
            }
        }
        acc
    }

    /// Separable periodic Gaussian blur, kernel truncated at three sigma.
    pub fn gaussian_blur(&self, sigma: f64) -> SpatialImage {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil() as i64;
        let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
        for r in -radius..=radius {
            kernel.push((-0.5 * (r as f64 / sigma).powi(2)).exp());
        }
        let norm: f64 = kernel.iter().sum();
        for k in &mut kernel {
            *k /= norm;
        }

        let d = self.dims.len();
        let mut cur = self.clone();
        let mut idx = vec![0usize; d];
        for axis in 0..d {
            let mut next = SpatialImage::zeros(&self.dims);
            let n = self.dims[axis] as i64;
            let mut probe = vec![0i64; d];
            for flat in 0..cur.data.len() {
                decode(&self.dims, flat, &mut idx);
                for (a, &i) in idx.iter().enumerate() {
                    probe[a] = i as i64;
                }
                let mut acc = 0.0;
                for (ki, &w) in kernel.iter().enumerate() {
                    probe[axis] = idx[axis] as i64 + ki as i64 - radius;
                    probe[axis] = probe[axis].rem_euclid(n);
                    acc += w * cur.at_wrapped(&probe);
                }
                next.data[flat] = acc;
            }
            cur = next;
        }
        cur
    }
}

/// Mean squared intensity difference over voxels.
pub fn mean_ssd(a: &SpatialImage, b: &SpatialImage) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!(
            "ssd over {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let n = a.len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// Integer label map on the same grids as [`SpatialImage`] (0 = background).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    dims: Vec<usize>,
    labels: Vec<u16>,
}

impl LabelMask {
    pub fn zeros(dims: &[usize]) -> Self {
        LabelMask {
            dims: dims.to_vec(),
            labels: vec![0; dims.iter().product()],
        }
    }

    pub fn from_labels(dims: &[usize], labels: Vec<u16>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if labels.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "mask payload {} != grid volume {n}",
                labels.len()
            )));
        }
        Ok(LabelMask {
            dims: dims.to_vec(),
            labels,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u16] {
        &mut self.labels
    }

    /// Nearest-neighbour periodic sample.
    pub fn at_rounded(&self, pos: &[f64]) -> u16 {
        let mut flat = 0usize;
        for axis in 0..self.dims.len() {
            let n = self.dims[axis] as i64;
            let i = (pos[axis].round() as i64).rem_euclid(n) as usize;
            flat = flat * self.dims[axis] + i;
        }
        self.labels[flat]
    }
}

pub(crate) fn decode(dims: &[usize], mut flat: usize, out: &mut [usize]) {
    for axis in (0..dims.len()).rev() {
        out[axis] = flat % dims[axis];
        flat /= dims[axis];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrapped_sampling_is_periodic() {
        let img = SpatialImage::from_fn(&[4, 4], |idx| (idx[0] * 4 + idx[1]) as f64);
        assert_eq!(img.at_wrapped(&[-1, 0]), img.at_wrapped(&[3, 0]));
        assert_eq!(img.at_wrapped(&[4, 5]), img.at_wrapped(&[0, 1]));
    }

    #[test]
    fn linear_sampling_matches_grid_points() {
        let img = SpatialImage::from_fn(&[5, 3], |idx| (idx[0] as f64) - 2.0 * idx[1] as f64);
        assert!((img.sample_linear(&[2.0, 1.0]) - img.at_wrapped(&[2, 1])).abs() < 1e-15);
        // midpoint of two neighbours
        let mid = img.sample_linear(&[2.5, 1.0]);
        let want = 0.5 * (img.at_wrapped(&[2, 1]) + img.at_wrapped(&[3, 1]));
        assert!((mid - want).abs() < 1e-15);
    }

    #[test]
    fn blur_preserves_mean_and_range() {
        let img = SpatialImage::from_fn(&[16, 16], |idx| {
            if idx[0] > 4 && idx[0] < 10 && idx[1] > 4 && idx[1] < 10 {
                1.0
            } else {
                0.0
            }
        });
        let blurred = img.gaussian_blur(1.0);
        let mean_in: f64 = img.data().iter().sum::<f64>() / img.len() as f64;
        let mean_out: f64 = blurred.data().iter().sum::<f64>() / blurred.len() as f64;
        assert!((mean_in - mean_out).abs() < 1e-12);
        assert!(blurred.min() >= -1e-12 && blurred.max() <= 1.0 + 1e-12);
    }

    #[test]
    fn ssd_shape_mismatch_is_rejected() {
        let a = SpatialImage::zeros(&[4, 4]);
        let b = SpatialImage::zeros(&[4, 5]);
        assert!(mean_ssd(&a, &b).is_err());
    }
}
