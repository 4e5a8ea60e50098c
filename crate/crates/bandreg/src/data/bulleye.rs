//! Synthetic bull-eye corpus: two nested ellipses per image.
//!
//! Semi-axes are drawn per axis from N(4, 2^2) for the inner ellipse and
//! N(13, 4^2) for the outer one (independent draws for width and height),
//! rejection-resampled until `0.5 <= inner < outer <= grid/2 - 2` so the
//! figure is visible and fits the grid at desk-scale resolutions. The ring
//! between the ellipses has intensity 1.0, the inner disk 0.5, background 0,
//! softened by a sigma-1 Gaussian blur so the matching term has usable
//! gradients. Unblurred two-region label masks (1 = inner disk, 2 = ring)
//! accompany every image.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{LabelMask, SpatialImage};

pub const LABEL_INNER: u16 = 1;
pub const LABEL_RING: u16 = 2;

/// Semi-axes (voxels) of the nested ellipses, centered at grid/2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BullEyeParams {
    pub a_in: f64,
    pub b_in: f64,
    pub a_out: f64,
    pub b_out: f64,
}

/// One synthesized image with its label mask and generating parameters.
#[derive(Debug, Clone)]
pub struct BullEye {
    pub image: SpatialImage,
    pub mask: LabelMask,
    pub params: BullEyeParams,
}

fn draw_params(rng: &mut ChaCha8Rng, grid: usize) -> BullEyeParams {
    let inner = Normal::new(4.0, 2.0).expect("valid normal");
    let outer = Normal::new(13.0, 4.0).expect("valid normal");
    let limit = grid as f64 / 2.0 - 2.0;
    let mut axis = || loop {
        let i: f64 = inner.sample(rng);
        let o: f64 = outer.sample(rng);
        if 0.5 <= i && i < o && o <= limit {
            return (i, o);
        }
    };
    let (a_in, a_out) = axis();
    let (b_in, b_out) = axis();
    BullEyeParams {
        a_in,
        b_in,
        a_out,
        b_out,
    }
}

/// Rasterize one bull-eye on a `grid x grid` image with its mask.
pub fn render_bulleye(params: &BullEyeParams, grid: usize) -> (SpatialImage, LabelMask) {
    let c = grid as f64 / 2.0;
    let inside = |x: f64, y: f64, a: f64, b: f64| {
        let dx = (x - c) / a;
        let dy = (y - c) / b;
        dx * dx + dy * dy <= 1.0
    };
    let mut mask = LabelMask::zeros(&[grid, grid]);
    let raw = SpatialImage::from_fn(&[grid, grid], |idx| {
        let (x, y) = (idx[0] as f64, idx[1] as f64);
        if inside(x, y, params.a_in, params.b_in) {
            0.5
        } else if inside(x, y, params.a_out, params.b_out) {
            1.0
        } else {
            0.0
        }
    });
    for (flat, v) in raw.data().iter().enumerate() {
        mask.labels_mut()[flat] = if *v == 0.5 {
            LABEL_INNER
        } else if *v == 1.0 {
            LABEL_RING
        } else {
            0
        };
    }
    let mut image = raw.gaussian_blur(1.0);
    for v in image.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    (image, mask)
}

/// Generate `n` seeded bull-eye images on a square `grid`.
pub fn gen_bulleye(n: usize, seed: u64, grid: usize) -> Result<Vec<BullEye>> {
    if n < 1 {
        return Err(Error::InvalidParameter("need at least one image".into()));
    }
    if grid < 16 {
        return Err(Error::InvalidParameter(format!(
            "grid {grid} too small for the bull-eye geometry"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let params = draw_params(&mut rng, grid);
        let (image, mask) = render_bulleye(&params, grid);
        out.push(BullEye {
            image,
            mask,
            params,
        });
    }
    Ok(out)
}

/// Random disjoint pairing of `count` items: a seeded shuffle chunked in
/// twos (an odd leftover is dropped).
pub fn pair_indices(count: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order.chunks_exact(2).map(|c| (c[0], c[1])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_reproducible_and_in_range() {
        let a = gen_bulleye(4, 11, 32).unwrap();
        let b = gen_bulleye(4, 11, 32).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.mask, y.mask);
        }
        for be in &a {
            assert!(be.image.min() >= 0.0 && be.image.max() <= 1.0);
            assert!(0.5 <= be.params.a_in && be.params.a_in < be.params.a_out);
            assert!(0.5 <= be.params.b_in && be.params.b_in < be.params.b_out);
            assert!(be.params.a_out <= 14.0 && be.params.b_out <= 14.0);
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a = gen_bulleye(1, 1, 32).unwrap();
        let b = gen_bulleye(1, 2, 32).unwrap();
        assert_ne!(a[0].image, b[0].image);
    }

    #[test]
    fn masks_label_inner_and_ring_disjointly() {
        let be = &gen_bulleye(1, 5, 64).unwrap()[0];
        let inner = be.mask.labels().iter().filter(|&&l| l == LABEL_INNER).count();
        let ring = be.mask.labels().iter().filter(|&&l| l == LABEL_RING).count();
        assert!(inner > 0 && ring > 0);
        // single label map: regions are disjoint by construction; the ring
        // should dominate the inner disk in area
        assert!(ring > inner);
    }

    #[test]
    fn circular_params_give_fourfold_symmetry() {
        let params = BullEyeParams {
            a_in: 3.0,
            b_in: 3.0,
            a_out: 9.0,
            b_out: 9.0,
        };
        let grid = 32usize;
        let (img, _) = render_bulleye(&params, grid);
        // rotate by 90 degrees about the (periodic) center: (x, y) -> (y, grid - x)
        for x in 0..grid {
            for y in 0..grid {
                let rx = y;
                let ry = (grid - x) % grid;
                let a = img.data()[x * grid + y];
                let b = img.data()[rx * grid + ry];
                assert!(
                    (a - b).abs() < 1e-12,
                    "asymmetry at ({x},{y}): {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn pairing_is_disjoint_and_seeded() {
        let p1 = pair_indices(10, 3);
        let p2 = pair_indices(10, 3);
        assert_eq!(p1, p2);
        assert_eq!(p1.len(), 5);
        let mut seen = std::collections::HashSet::new();
        for (a, b) in p1 {
            assert!(seen.insert(a));
            assert!(seen.insert(b));
        }
    }

    #[test]
    fn invalid_counts_are_rejected() {
        assert!(gen_bulleye(0, 1, 32).is_err());
    }
}
